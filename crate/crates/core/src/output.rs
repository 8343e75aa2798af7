//! Output formats: the diagnostic CSV and the `CSIM1` binary snapshot.
//!
//! Snapshot layout, all little-endian:
//!
//! ```text
//! "CSIM1"  u32 d  u32 N  f64 L  f64 t  u32 count
//! count × { 16-byte space-padded name, N^d f64 samples (row-major) }
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::fmt_f64;
use crate::diagnostics::DiagnosticRecord;
use crate::error::{Error, Result};
use crate::integrator::SimHistory;
use crate::model::State;
use crate::spectral::{Grid, ScalarField};

/// Columns of the diagnostic time series, in file order.
pub const COLUMNS: [&str; 20] = [
    "t",
    "m_e",
    "m_s",
    "m_c",
    "mass_diff",
    "L1_e",
    "L2_e",
    "L4_e",
    "Linf_e",
    "L1_s",
    "L2_s",
    "L4_s",
    "Linf_s",
    "grad_c_Linf",
    "entropy_s",
    "enstrophy",
    "H1_e",
    "H1_s",
    "min_e",
    "min_s",
];

const MAGIC: &[u8; 5] = b"CSIM1";
const NAME_LEN: usize = 16;

fn csv_row(record: &DiagnosticRecord) -> String {
    COLUMNS
        .iter()
        .map(|c| record.column(c).map(fmt_f64).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(",")
}

/// CSV text of a list of records: header, then one row per record.
pub fn timeseries_csv(records: &[DiagnosticRecord]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

pub fn write_timeseries(path: &Path, history: &SimHistory) -> Result<()> {
    write_text(path, &timeseries_csv(&history.records))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generic table with a header row; `None` cells are left empty.
pub fn table_csv(header: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.map(fmt_f64).unwrap_or_default()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `(t, value)` pairs of one column of a CSV with a `t` column; empty cells
/// are skipped.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Csv {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let t_col = header
        .iter()
        .position(|&h| h == "t")
        .ok_or_else(|| bad("no `t` column".into()))?;
    let v_col = header
        .iter()
        .position(|&h| h == column)
        .ok_or_else(|| bad(format!("no `{column}` column")))?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} cells", i + 2, cells.len())));
        }
        let num = |s: &str| -> Result<f64> {
            crate::config::parse_number(s).map_err(|m| bad(format!("row {}: {m}", i + 2)))
        };
        if cells[v_col].is_empty() {
            continue;
        }
        out.push((num(cells[t_col])?, num(cells[v_col])?));
    }
    Ok(out)
}

/// Writes named fields sharing one grid.
pub fn write_fields(path: &Path, grid: &Grid, t: f64, fields: &[(&str, &ScalarField)]) -> Result<()> {
    let mut bytes = Vec::with_capacity(29 + fields.len() * (NAME_LEN + 8 * grid.len()));
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    bytes.extend_from_slice(&grid.length().to_le_bytes());
    bytes.extend_from_slice(&t.to_le_bytes());
    bytes.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for (name, field) in fields {
        if name.len() > NAME_LEN || !name.is_ascii() {
            return Err(Error::Snapshot {
                path: path.to_path_buf(),
                reason: format!("field name `{name}` exceeds {NAME_LEN} ASCII bytes"),
            });
        }
        if field.grid() != grid {
            return Err(Error::GridMismatch(format!("snapshot field `{name}`")));
        }
        let mut padded = [b' '; NAME_LEN];
        padded[..name.len()].copy_from_slice(name.as_bytes());
        bytes.extend_from_slice(&padded);
        for v in field.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes every evolved field of `state` at its time.
pub fn write_snapshot(path: &Path, state: &State) -> Result<()> {
    write_fields(path, state.grid(), state.t, &state.named_fields())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub t: f64,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a PathBuf,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Snapshot {
                path: self.path.clone(),
                reason: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    let bad = |reason: &str| Error::Snapshot {
        path: owned.clone(),
        reason: reason.to_string(),
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &owned,
    };
    if r.take(5)? != MAGIC {
        return Err(bad("missing CSIM1 magic"));
    }
    let dim = r.u32()? as usize;
    let n = r.u32()? as usize;
    let length = r.f64()?;
    let t = r.f64()?;
    let count = r.u32()? as usize;
    if !(dim == 2 || dim == 3) {
        return Err(bad("dimension must be 2 or 3"));
    }
    let len = n.checked_pow(dim as u32).ok_or_else(|| bad("grid too large"))?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let name = std::str::from_utf8(r.take(NAME_LEN)?)
            .map_err(|_| bad("field name is not ASCII"))?
            .trim_end_matches(' ')
            .to_string();
        let raw = r.take(8 * len)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        fields.push((name, values));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Snapshot {
        dim,
        n,
        length,
        t,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::State;

    #[test]
    fn header_only_for_empty_history() {
        let csv = timeseries_csv(&[]);
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end().split(',').count(), 20);
    }

    #[test]
    fn single_record_has_empty_cells_for_absent_fields() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let state = State::single(ScalarField::constant(&g, 2.0));
        let csv = timeseries_csv(&[DiagnosticRecord::from_state(&state)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 20);
        assert_eq!(cells[0], "0.0");
        assert_eq!(cells[1], "2.0");
        assert_eq!(cells[2], "");
        assert_eq!(cells[8], "2.0");
    }

    #[test]
    fn snapshot_size_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.csim");
        let g = Grid::new(2, 8, 1.0).unwrap();
        let z = ScalarField::zeros(&g);
        write_fields(&path, &g, 0.0, &[("e", &z)]).unwrap();
        let size = fs::metadata(&path).unwrap().len();
        assert_eq!(size, 5 + 4 + 4 + 8 + 8 + 4 + 16 + 512);

        let f = ScalarField::from_fn(&g, |x| (x[0] * 7.0).sin() + 1e-300 * x[1]);
        let h = ScalarField::from_fn(&g, |x| x[1].exp());
        write_fields(&path, &g, 1.25, &[("f", &f), ("omega", &h)]).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!((snap.dim, snap.n, snap.length, snap.t), (2, 8, 1.0, 1.25));
        assert_eq!(snap.field("f").unwrap(), f.values());
        assert_eq!(snap.field("omega").unwrap(), h.values());
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csim");
        fs::write(&path, b"CSIM2xxxx").unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Snapshot { .. })));
        let g = Grid::new(2, 8, 1.0).unwrap();
        write_fields(&path, &g, 0.0, &[("e", &ScalarField::zeros(&g))]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Snapshot { .. })));
        let long = "a_really_long_field_name";
        assert!(write_fields(&path, &g, 0.0, &[(long, &ScalarField::zeros(&g))]).is_err());
    }

    #[test]
    fn csv_column_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "t,a,b\n1,2,\n2,4,5\n").unwrap();
        assert_eq!(read_csv_column(&path, "a").unwrap(), vec![(1.0, 2.0), (2.0, 4.0)]);
        assert_eq!(read_csv_column(&path, "b").unwrap(), vec![(2.0, 5.0)]);
        assert!(read_csv_column(&path, "c").is_err());
    }
}
