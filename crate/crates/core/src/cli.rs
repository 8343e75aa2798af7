//! Command-line front end: `run`, `verify`, `sweep` and `fit`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::config::{fmt_f64, load_config, parse_number, parse_window, RunConfig};
use crate::diagnostics::decay_fit;
use crate::error::{Error, Result};
use crate::integrator::{run, SimHistory};
use crate::output::{read_csv_column, table_csv, write_text, write_timeseries};
use crate::presets::{run_suite, Suite, SuiteOptions};
use crate::verification::{chi_sweep, run_experiment, ExperimentReport, ExperimentSpec};

#[derive(Parser, Debug)]
#[command(name = "coralsim", version, about = "Spectral simulator for egg-sperm chemotaxis models")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized test fields.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a configuration, or run its experiment if one is set.
    Run { config: PathBuf },
    /// Run a verification suite.
    Verify {
        /// heat, scaling, convergence, decay, plateau, chi_sweep, small_data,
        /// conservation, oracle, determinism or all.
        suite: String,
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Run a configuration once per χ value.
    Sweep {
        config: PathBuf,
        /// Comma-separated increasing χ values.
        #[arg(long)]
        chi: String,
    },
    /// Power-law fit of one CSV column over a time window.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        column: String,
        /// `t0:t1`
        #[arg(long)]
        window: String,
    },
}

/// What `run` produced.
#[derive(Debug)]
pub struct RunOutput {
    pub history: Option<SimHistory>,
    pub report: Option<ExperimentReport>,
}

fn summary_block(report: &ExperimentReport) -> String {
    let mut out = String::new();
    if let Some(kind) = report.kind {
        out.push_str(&format!("experiment = {kind}\n"));
    }
    for (k, v) in &report.metrics {
        out.push_str(&format!("{k} = {}\n", fmt_f64(*v)));
    }
    for (k, v) in &report.flags {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// Runs `config` with all output in `out`: `manifest.cfg`,
/// `timeseries.csv`, snapshots, and for experiments `summary.txt` plus
/// `report.csv` when the experiment produces a table.
pub fn execute_run(config: &RunConfig, out: &Path) -> Result<RunOutput> {
    let mut cfg = config.clone();
    cfg.output = Some(out.to_path_buf());
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("manifest.cfg"), &cfg.manifest())?;
    if cfg.experiment.is_some() {
        let spec = ExperimentSpec::from_config(&cfg)?;
        let mut report = run_experiment(&spec)?;
        let history = report.history.take();
        if let Some(h) = &history {
            write_timeseries(&out.join("timeseries.csv"), h)?;
        }
        if let Some(table) = &report.table {
            write_text(&out.join("report.csv"), table)?;
        }
        write_text(&out.join("summary.txt"), &summary_block(&report))?;
        Ok(RunOutput {
            history,
            report: Some(report),
        })
    } else {
        let history = run(&cfg)?;
        write_timeseries(&out.join("timeseries.csv"), &history)?;
        Ok(RunOutput {
            history: Some(history),
            report: None,
        })
    }
}

fn result_key(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// `RESULT k=v ...` with keys normalized to lowercase and underscores.
pub fn result_line(pairs: &[(String, String)]) -> String {
    let mut line = String::from("RESULT");
    for (k, v) in pairs {
        line.push_str(&format!(" {}={}", result_key(k), v.replace(' ', "_")));
    }
    line
}

fn num(key: &str, v: f64) -> (String, String) {
    (key.to_string(), fmt_f64(v))
}

fn text(key: &str, v: impl ToString) -> (String, String) {
    (key.to_string(), v.to_string())
}

fn history_pairs(h: &SimHistory) -> Vec<(String, String)> {
    let mut pairs = vec![text("steps", h.steps), text("records", h.records.len())];
    if let Some(last) = h.records.last() {
        pairs.push(num("t", last.t));
        pairs.push(num("m_e", last.m_e));
        if let Some(ms) = last.m_s {
            pairs.push(num("m_s", ms));
        }
        if let Some(mc) = last.m_c {
            pairs.push(num("m_c", mc));
        }
    }
    pairs.push(text("breaches", h.breach_count));
    pairs
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> Result<(i32, String)> {
    let cfg = load_config(path)?;
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    info!("running {} into {}", path.display(), dir.display());
    let result = execute_run(&cfg, &dir)?;
    let mut pairs = vec![text("status", "ok")];
    if let Some(report) = &result.report {
        if let Some(kind) = report.kind {
            pairs.push(text("experiment", kind));
        }
        pairs.extend(report.metrics.iter().map(|(k, v)| num(k, *v)));
        pairs.extend(report.flags.iter().map(|(k, v)| text(k, v)));
    }
    if let Some(h) = &result.history {
        pairs.extend(history_pairs(h));
    }
    pairs.push(text("out", dir.display()));
    Ok((0, result_line(&pairs)))
}

fn cmd_verify(suite: &str, filter: Option<String>, seed: u64, out: Option<PathBuf>) -> Result<(i32, String)> {
    let suite: Suite = suite.parse()?;
    let opts = SuiteOptions {
        seed,
        filter,
        scratch: out.unwrap_or_else(|| SuiteOptions::default().scratch),
    };
    let outcomes = run_suite(suite, &opts, |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let mut pairs = vec![
        text("suite", suite),
        text("checks", outcomes.len()),
        text("passed", outcomes.len() - failed),
        text("failed", failed),
    ];
    for o in &outcomes {
        pairs.extend(o.metrics.iter().map(|(k, v)| num(k, *v)));
    }
    let code = if failed == 0 && !outcomes.is_empty() { 0 } else { 2 };
    Ok((code, result_line(&pairs)))
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| parse_number(t.trim()).map_err(|reason| Error::param("chi", reason)))
        .collect()
}

fn cmd_sweep(path: &Path, chi: &str, out: Option<PathBuf>) -> Result<(i32, String)> {
    let cfg = load_config(path)?;
    let chi_list = parse_list(chi)?;
    let rows = chi_sweep(&cfg, &chi_list)?;
    let table: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| {
            vec![
                Some(r.chi),
                Some(r.m_s0),
                Some(r.m_e0),
                Some(r.m_s),
                Some(r.m_e),
                Some(f64::from(u8::from(r.plateau))),
                Some(r.diff_drift),
                Some(f64::from(u8::from(r.flagged))),
            ]
        })
        .collect();
    let csv = table_csv(
        &["chi", "m_s0", "m_e0", "m_s", "m_e", "plateau", "diff_drift", "flagged"],
        &table,
    );
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("sweep.csv"), &csv)?;
    let mut pairs = vec![text("runs", rows.len())];
    for r in &rows {
        let tag = fmt_f64(r.chi).replace('.', "p");
        pairs.push(num(&format!("m_e_chi{tag}"), r.m_e));
        pairs.push(num(&format!("m_s_chi{tag}"), r.m_s));
    }
    pairs.push(text(
        "m_e_nonincreasing",
        rows.windows(2).all(|w| w[1].m_e <= w[0].m_e + 1e-6),
    ));
    pairs.push(num("max_diff_drift", rows.iter().map(|r| r.diff_drift).fold(0.0, f64::max)));
    Ok((0, result_line(&pairs)))
}

fn cmd_fit(csv: &Path, column: &str, window: &str) -> Result<(i32, String)> {
    let (t0, t1) = parse_window(window).map_err(|reason| Error::param("window", reason))?;
    let series = read_csv_column(csv, column)?;
    let fit = decay_fit(&series, t0, t1)?;
    let pairs = vec![
        num("exponent", fit.exponent),
        num("constant", fit.constant),
        num("residual", fit.residual),
        num("t0", fit.window.0),
        num("t1", fit.window.1),
        text("column", column),
    ];
    Ok((0, result_line(&pairs)))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config, cli.out),
        Command::Verify { suite, filter } => cmd_verify(&suite, filter, cli.seed, cli.out),
        Command::Sweep { config, chi } => cmd_sweep(&config, &chi, cli.out),
        Command::Fit { csv, column, window } => cmd_fit(&csv, &column, &window),
    };
    match result {
        Ok((code, line)) => {
            println!("{line}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_validation() { 1 } else { 2 };
            println!("{}", result_line(&[text("status", "error"), text("exit", code)]));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_keys_are_normalized() {
        let line = result_line(&[num("exponent_L2_e", -0.5), text("name", "a b")]);
        assert_eq!(line, "RESULT exponent_l2_e=-0.5 name=a_b");
    }

    #[test]
    fn bad_usage_is_a_validation_error() {
        assert_eq!(run_cli(["coralsim", "frobnicate"]), 1);
        assert_eq!(run_cli(["coralsim", "verify", "nope"]), 1);
        assert_eq!(run_cli(["coralsim", "fit", "x.csv", "--column", "t", "--window", "3"]), 1);
    }

    #[test]
    fn chi_lists_parse() {
        assert_eq!(parse_list("0, 5,20").unwrap(), vec![0.0, 5.0, 20.0]);
        assert!(parse_list("0,,1").is_err());
    }
}
