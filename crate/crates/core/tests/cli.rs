use std::path::Path;
use std::process::{Command, Output};

fn coralsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coralsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn result_value(stdout: &str, key: &str) -> Option<String> {
    let line = stdout.lines().find(|l| l.starts_with("RESULT "))?;
    line.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.to_string())
}

const SMALL_RUN: &str = "\
# tiny variant-B run
variant = b
d = 2
N = 32
L = 2*pi
t_end = 0.1
phi_amplitude = 1
dt = 0.01
record_interval = 0.02
snapshot_interval = 0.05
";

#[test]
fn fit_recovers_synthetic_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t,L2_e\n");
    for i in 1..=40 {
        let t = i as f64 * 0.5;
        csv.push_str(&format!("{t},{}\n", 3.0 * t.powf(-0.5)));
    }
    std::fs::write(dir.path().join("series.csv"), csv).unwrap();
    let out = coralsim(&["fit", "series.csv", "--column", "L2_e", "--window", "1:10"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let exponent: f64 = result_value(&stdout, "exponent").unwrap().parse().unwrap();
    assert!((exponent + 0.5).abs() < 1e-12, "{stdout}");
    let constant: f64 = result_value(&stdout, "constant").unwrap().parse().unwrap();
    assert!((constant - 3.0).abs() < 1e-10);
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = coralsim(&["run", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "variant = a\nd = 2\nN = 16\nL = 1\nt_end = 1\nchi = -1\n").unwrap();
    let out = coralsim(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("chi") && err.contains('6'), "{err}");
}

#[test]
fn verify_heat_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = coralsim(&["verify", "heat"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS heat_oracle"));
    let dev: f64 = result_value(&stdout, "max_deviation").unwrap().parse().unwrap();
    assert!(dev <= 1e-10);
}

#[test]
fn verify_filter_can_select_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = coralsim(&["verify", "heat", "--filter", "scaling"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(result_value(&String::from_utf8_lossy(&out.stdout), "checks").as_deref(), Some("0"));
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL_RUN).unwrap();
    let out = coralsim(&["--out", "res", "--threads", "2", "run", "small.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(result_value(&stdout, "status").as_deref(), Some("ok"));
    assert_eq!(result_value(&stdout, "steps").as_deref(), Some("10"));
    let res = dir.path().join("res");
    let csv = std::fs::read_to_string(res.join("timeseries.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(res.join("snapshot_00000.csim").exists());
    assert!(res.join("snapshot_00002.csim").exists());
    let manifest = std::fs::read_to_string(res.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("chi = 1"));
}

#[test]
fn run_executes_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "variant = a\nd = 2\nN = 16\nL = 2*pi\nt_end = 0.2\nchi = 0\neps = 0\n\
               experiment = convergence\ndt_list = 0.05, 0.025, 0.0125\n";
    std::fs::write(dir.path().join("conv.cfg"), cfg).unwrap();
    let out = coralsim(&["--out", "res", "run", "conv.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(result_value(&stdout, "experiment").as_deref(), Some("convergence"));
    assert_eq!(result_value(&stdout, "exact").as_deref(), Some("true"));
    let res = dir.path().join("res");
    assert!(std::fs::read_to_string(res.join("report.csv")).unwrap().starts_with("dt,difference,order"));
    assert!(std::fs::read_to_string(res.join("summary.txt")).unwrap().contains("experiment = convergence"));
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "variant = a\nd = 3\nN = 12\nL = 12\nt_end = 0.4\ndt = 0.05\nrecord_interval = 0.1\n";
    std::fs::write(dir.path().join("sweep.cfg"), cfg).unwrap();
    let out = coralsim(&["--out", "res", "sweep", "sweep.cfg", "--chi", "0,2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(result_value(&stdout, "runs").as_deref(), Some("2"));
    let table = std::fs::read_to_string(dir.path().join("res/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let out = coralsim(&["sweep", "sweep.cfg", "--chi", "2,0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_runs_are_repeatable_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL_RUN).unwrap();
    for (threads, out) in [("1", "a"), ("3", "b")] {
        let status = coralsim(&["--threads", threads, "--out", out, "run", "small.cfg"], dir.path()).status;
        assert!(status.success());
    }
    for name in ["timeseries.csv", "snapshot_00000.csim", "snapshot_00001.csim", "snapshot_00002.csim"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}
