use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncr_isac::config::SystemConfig;
use ncr_isac_cli::{aggregate_path, exit, resolve_workers, AGGREGATE_HEADER, TRIAL_HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ncr-isac"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("NCR_ISAC_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find(|l| l.starts_with(key))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .parse()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut ncr_isac::config::ConfigParams)) -> PathBuf {
    let cfg = SystemConfig::reference().with(edit).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_config_text()).unwrap();
    path
}

fn small(dir: &Path) -> PathBuf {
    write_config(dir, "small.conf", |p| {
        p.num_antennas = 4;
        p.num_subcarriers = 8;
    })
}

#[test]
fn crb_matched_reference_agrees_with_direct() {
    let o = run(&["crb", "--precoder", "matched", "--alpha", "1"]);
    assert_eq!(o.status.code(), Some(exit::OK));
    let r = stdout(&o);
    assert!(field(&r, "closed_vs_direct") <= 1e-9);
    let closed = field(&r, "crb_d_m2");
    let direct = field(&r, "crb_d_direct_m2");
    assert!(((closed - direct) / direct).abs() <= 1e-9);
    assert!(field(&r, "crb_d_unit_diag_m2") < 0.0);
}

#[test]
fn crb_reference_file_matches_builtin() {
    let file = run(&["crb", "--config", concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.conf")]);
    let builtin = run(&["crb"]);
    assert_eq!(file.status.code(), Some(exit::OK));
    assert_eq!(stdout(&file), stdout(&builtin));
}

#[test]
fn crb_zero_distance_is_config_error() {
    let o = run(&["crb", "--distance", "0"]);
    assert_eq!(o.status.code(), Some(exit::USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target_distance_m"));
}

#[test]
fn single_subcarrier_is_not_identifiable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ns1.conf", |p| p.num_subcarriers = 1);
    let cfg = cfg.to_str().unwrap();
    for args in [vec!["crb", "--config", cfg], vec!["optimize", "--config", cfg]] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(exit::NOT_IDENTIFIABLE), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("sub-carriers"));
    }
}

#[test]
fn missing_config_file_is_usage_error() {
    let o = run(&["crb", "--config", "/nonexistent/none.conf"]);
    assert_eq!(o.status.code(), Some(exit::USAGE));
}

#[test]
fn optimize_fixed_is_deterministic() {
    let args = ["optimize", "--arm", "fixed", "--fixed-alpha-db", "18.5", "--seed", "5"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(exit::OK));
    assert_eq!(a.stdout, b.stdout);
    let alpha = field(&stdout(&a), "alpha");
    assert!((alpha - 10f64.powf(1.85)).abs() < 1e-9 * alpha);
}

#[test]
fn optimize_tiny_channel_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.conf", |p| p.composite_chan_var_db = -300.0);
    let o = run(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::INFEASIBLE));
    assert!(stdout(&o).contains("infeasible"));
}

#[test]
fn optimize_without_floor_steers_at_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "free.conf", |p| {
        p.num_antennas = 8;
        p.num_subcarriers = 16;
        p.min_user_sinr_db = -200.0;
    });
    let csv = dir.path().join("one.csv");
    let o = run(&["optimize", "--config", cfg.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK));
    assert!(field(&stdout(&o), "beam_alignment") >= 0.999);
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], TRIAL_HEADER.join(","));
    assert!(lines[1].starts_with("none,NA,0,joint,"));
}

#[test]
fn sweep_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = dir.path().join("power.csv");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "max_power",
        "--grid",
        "1e6,2e6,5e6",
        "--trials",
        "4",
        "--arms",
        "joint,fixed",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&o.stderr));

    let trials = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = trials.lines().collect();
    assert_eq!(lines[0], TRIAL_HEADER.join(","));
    assert_eq!(lines.len(), 1 + 3 * 4 * 2);
    assert!(!trials.contains('\r'));
    for l in &lines[1..] {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), TRIAL_HEADER.len());
        assert_eq!(cols[0], "max_power");
        let crb: f64 = cols[5].parse().unwrap();
        let root: f64 = cols[6].parse().unwrap();
        assert_eq!(root, crb.sqrt());
    }

    let agg_path = aggregate_path(&out);
    assert_eq!(agg_path, dir.path().join("power.aggregate.csv"));
    let agg = std::fs::read_to_string(agg_path).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], AGGREGATE_HEADER.join(","));
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("max_power,1.0000000000000000e6,joint,"));
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let go = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = bin()
            .args(["sweep", "--config", cfg.to_str().unwrap(), "--variable", "rcs_var_db"])
            .args(["--grid", "5,10,15", "--trials", "3", "--seed", "17", "--out"])
            .arg(&out)
            .env("NCR_ISAC_WORKERS", workers)
            .output()
            .unwrap();
        assert!(o.status.success());
        (std::fs::read(&out).unwrap(), std::fs::read(aggregate_path(&out)).unwrap())
    };
    let a = go("a.csv", "1");
    assert_eq!(a, go("b.csv", "1"));
    assert_eq!(a, go("c.csv", "4"));
}

#[test]
fn sweep_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    let unordered = run(&["sweep", "--variable", "max_power", "--grid", "2e6,1e6,3e6", "--out", out]);
    assert_eq!(unordered.status.code(), Some(exit::USAGE));
    let negative = run(&["sweep", "--variable", "max_power", "--grid", "-1", "--out", out]);
    assert_eq!(negative.status.code(), Some(exit::USAGE));
    let unwritable = run(&[
        "sweep", "--variable", "min_user_sinr_db", "--grid", "0", "--trials", "1", "--out",
        "/nonexistent/dir/x.csv",
    ]);
    assert_eq!(unwritable.status.code(), Some(exit::USAGE));
    let bad_env = bin()
        .args(["sweep", "--variable", "min_user_sinr_db", "--grid", "0", "--trials", "1", "--out", out])
        .env("NCR_ISAC_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(exit::USAGE));
}

#[test]
fn validate_passes_and_fault_injection_fails() {
    let ok = run(&["validate", "--trials", "1", "--seed", "3"]);
    assert_eq!(ok.status.code(), Some(exit::OK));
    let r = stdout(&ok);
    assert_eq!(r.lines().filter(|l| l.starts_with("PASS")).count(), 10);
    let oracle = r.lines().find(|l| l.contains("closed form vs direct")).unwrap();
    let max: f64 = oracle.split_whitespace().skip_while(|w| *w != "max").nth(1).unwrap().parse().unwrap();
    assert!(max <= 1e-9);

    let bad = run(&["validate", "--trials", "2", "--inject-unit-diagonal"]);
    assert_eq!(bad.status.code(), Some(exit::VALIDATION_FAILED));
    let r = stdout(&bad);
    assert!(r.lines().any(|l| l.starts_with("FAIL") && l.contains("semidefinite")));
}

#[test]
fn usage_and_help_exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(exit::OK));
    assert_eq!(run(&["--version"]).status.code(), Some(exit::OK));
    assert_eq!(run(&[]).status.code(), Some(exit::USAGE));
    assert_eq!(run(&["crb", "--precoder", "random"]).status.code(), Some(exit::USAGE));
}

#[test]
fn worker_resolution() {
    assert_eq!(resolve_workers(Some(3), Some("8")).unwrap(), Some(3));
    assert_eq!(resolve_workers(None, Some("2")).unwrap(), Some(2));
    assert_eq!(resolve_workers(None, None).unwrap(), None);
    assert_eq!(resolve_workers(None, Some(" ")).unwrap(), None);
    assert!(resolve_workers(None, Some("0")).is_err());
    assert!(resolve_workers(Some(0), None).is_err());
    assert!(resolve_workers(None, Some("x")).is_err());
}
