//! Drives the `wfbm` binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_wfbm");

fn wfbm(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("WFBM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `(identity, verdict)` per data row of a verify CSV.
fn verdicts(csv: &str) -> Vec<(String, String)> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("identity,"))
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let id = cols[0].split('[').next().unwrap();
            (id.to_string(), cols[cols.len() - 1].to_string())
        })
        .collect()
}

#[test]
fn sample_is_byte_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["sample", "--a", "-0.3", "--b", "-0.4", "--step", "0.0625", "--n", "5", "--seed", "9"];
    assert!(wfbm(d1.path(), &args).status.success());
    assert!(wfbm(d2.path(), &args).status.success());
    assert_eq!(read(d1.path(), "paths.csv"), read(d2.path(), "paths.csv"));
    let csv = read(d1.path(), "paths.csv");
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with("# wfbm ") && first.contains("config_hash=") && first.ends_with("seed=9"), "{first}");
    assert!(csv.lines().any(|l| l == "path_id,t,value"));
    let meta = read(d1.path(), "paths.meta.toml");
    assert!(meta.contains("config_hash") && meta.contains("jitter"));
}

#[test]
fn bad_input_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let o = wfbm(d.path(), &["sample", "--a", "-0.5", "--b", "0.6"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("|b| < 1 + a"));
    assert_eq!(wfbm(d.path(), &["verify", "--identity", "nope"]).status.code(), Some(2));
    assert_eq!(wfbm(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(wfbm(d.path(), &["sample", "--n", "0"]).status.code(), Some(2));
    assert_eq!(wfbm(d.path(), &["sample", "--threads", "0"]).status.code(), Some(2));
}

#[test]
fn tanaka_at_zero_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = wfbm(d.path(), &["verify", "--identity", "tanaka", "--x", "0"]);
    let csv = read(d.path(), "verify.csv");
    let v = verdicts(&csv);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0], ("tanaka".to_string(), "pass".to_string()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn exit_code_matches_written_verdicts() {
    let d = tempfile::tempdir().unwrap();
    let o = wfbm(d.path(), &["verify", "--identity", "qvar", "--n", "200"]);
    let v = verdicts(&read(d.path(), "verify.csv"));
    assert_eq!(v.len(), 3);
    let all_pass = v.iter().all(|(_, r)| r == "pass");
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
}

#[test]
fn brownian_classical_identities() {
    let d = tempfile::tempdir().unwrap();
    let o = wfbm(d.path(), &["verify", "--identity", "all", "--a", "0", "--b", "0", "--n", "500"]);
    let v = verdicts(&read(d.path(), "verify.csv"));
    for (id, verdict) in &v {
        if id == "qvar" || id == "ito" || id == "tanaka" {
            assert_eq!(verdict, "pass", "{id}");
        }
    }
    let any_fail = v.iter().any(|(_, r)| r == "fail");
    assert_eq!(o.status.code(), Some(if any_fail { 1 } else { 0 }));
}

#[test]
fn config_file_with_overrides_and_env_dir() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "[params]\na = -0.3\nb = -0.4\n[mc]\nn_paths = 3\nseed = 4\n[grid]\nstep = 0.125\n").unwrap();
    let out = d.path().join("from_env");
    let o = Command::new(BIN)
        .args(["sample", "--config", cfg.to_str().unwrap(), "--seed", "5", "--pad", "0"])
        .env("WFBM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out, "paths.csv");
    assert!(csv.lines().next().unwrap().ends_with("seed=5"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 8);
    // Unknown keys are rejected rather than ignored.
    std::fs::write(&cfg, "[params]\nalpha = 1\n").unwrap();
    let o = wfbm(d.path(), &["sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn other_subcommands_write_their_csvs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let small = ["--step", "0.0078125", "--n", "20", "--emit-plot-script"];
    let run = |cmd: &[&str]| {
        let args: Vec<&str> = cmd.iter().chain(small.iter()).copied().collect();
        let o = wfbm(p, &args);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["qcov", "--f", "x^3"]);
    assert!(read(p, "qcov.csv").lines().any(|l| l.starts_with("# eps=")));
    run(&["local-time", "--t", "0.5,1"]);
    assert!(read(p, "local_time.csv").contains("# bandwidth="));
    run(&["hnorm", "--f", "bump:0,1", "--f", "x"]);
    assert_eq!(read(p, "hnorm.csv").lines().filter(|l| !l.starts_with('#')).count(), 3);
    run(&["scan", "--lemma", "L3_3", "--points", "6"]);
    let scans: Vec<String> = std::fs::read_dir(p)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("scan_L3_3"))
        .collect();
    assert_eq!(scans.len(), 2, "{scans:?}");
    let plot = read(p, "plot.py");
    assert!(plot.contains("matplotlib") && plot.contains("scan_L3_3"));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["verify", "--identity", "chain", "--step", "0.00390625", "--n", "64"];
    let mut a1 = args.to_vec();
    a1.extend(["--threads", "1"]);
    let mut a2 = args.to_vec();
    a2.extend(["--threads", "3"]);
    wfbm(d1.path(), &a1);
    wfbm(d2.path(), &a2);
    assert_eq!(read(d1.path(), "verify.csv"), read(d2.path(), "verify.csv"));
}
