use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn adp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adp")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows after the schema comment and the header.
fn data_rows(csv: &str) -> Vec<&str> {
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# schema"));
    lines.next().unwrap();
    lines.collect()
}

const TINY: &str = "instance.preset = tiny\ntrainer.iterations = 10\ntrainer.eval_interval = 0\n";

#[test]
fn ten_iterations_give_ten_log_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", TINY);
    let out = dir.path().join("out");
    let o = adp(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("training_log.csv")).unwrap();
    assert_eq!(data_rows(&log).len(), 10);
    assert!(out.join("vfa_10.txt").exists());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("# fingerprint"));
    assert!(manifest.contains("trainer.iterations = 10"));
}

#[test]
fn same_config_gives_identical_csvs() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", &format!("{TINY}vfa.kind = nn:10\n"));
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = adp(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(fs::read(out.join("training_log.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn manifest_echo_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", TINY);
    let first = dir.path().join("first");
    assert!(adp(&["train", "--config", &cfg, "--out", first.to_str().unwrap()]).status.success());
    let echo = config(dir.path(), "echo.cfg", &fs::read_to_string(first.join("manifest.txt")).unwrap());
    let second = dir.path().join("second");
    let o = adp(&["train", "--config", &echo, "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(first.join("training_log.csv")).unwrap(),
        fs::read(second.join("training_log.csv")).unwrap()
    );
}

#[test]
fn bad_configs_are_reported_by_name() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "eta.cfg", "trainer.eta = 1.5\n");
    let o = adp(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("eta out of (0,1]"), "{}", stderr(&o));

    let cfg = config(dir.path(), "typo.cfg", "trainer.iteratons = 5\n");
    let o = adp(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("trainer.iteratons"), "{}", stderr(&o));
}

#[test]
fn evaluation_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", TINY);
    let out = dir.path().join("out");
    assert!(adp(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let weights = out.join("vfa_10.txt");
    let run = |name: &str| {
        let o = adp(&[
            "evaluate",
            "--config",
            &cfg,
            "--weights",
            weights.to_str().unwrap(),
            "--iterations",
            "50",
            "--seed",
            "3",
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (o.stdout, fs::read(dir.path().join(name).join("evaluation.csv")).unwrap())
    };
    assert_eq!(run("e1"), run("e2"));
}

#[test]
fn zero_weight_shuttle_evaluation_is_myopic() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", "instance.preset = shuttle\n");
    // Eight features, all weights zero.
    let zeros = vec!["0"; 8].join(" ");
    let w = config(dir.path(), "zero.txt", &format!("vfa-format v1 poly 0 8\n{zeros}\n"));
    let o = adp(&["evaluate", "--config", &cfg, "--weights", &w, "--iterations", "10", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Rewards 0.5 then nine epochs of 10: mean 9.05.
    let csv = fs::read_to_string(dir.path().join("evaluation.csv")).unwrap();
    let row = data_rows(&csv)[0].split(',').collect::<Vec<_>>();
    assert_eq!(row[2].parse::<f64>().unwrap(), 9.05);
}

#[test]
fn grid_normalizes_against_its_baseline() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "grid.cfg",
        "instance.preset = tiny\ntrainer.iterations = 20\ntrainer.eval_interval = 20\ntrainer.eval_length = 20\n\
         grid.vfas = pl; nn:10\ngrid.etas = 0.01\ngrid.seeds = 1\ngrid.baseline = PL\n",
    );
    let out = dir.path().join("out");
    let o = adp(&["grid", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("grid_results.csv")).unwrap();
    let header: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "normalized").unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 2);
    let pl: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(pl[0], "PL");
    assert_eq!(pl[col].parse::<f64>().unwrap(), 1.0);
    assert!(rows[1].starts_with("\"NN(1,10)\","));
}

#[test]
fn oracle_check_passes_and_catches_a_perturbed_big_m() {
    let o = adp(&["oracle-check", "--iterations", "500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2000 checks, 2000 passed, 0 failed"));

    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "bad.cfg", "instance.preset = tiny\nsolver.big_m_scale = 0.05\n");
    let o = adp(&["oracle-check", "--config", &cfg]);
    assert!(!o.status.success());
}

#[test]
fn lp_dump_is_written_on_request() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "run.cfg", TINY);
    let out = dir.path().join("out");
    let o = adp(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--debug-dump-lp", "--iterations", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lp = fs::read_to_string(out.join("decision.lp")).unwrap();
    assert!(lp.to_lowercase().contains("maximize"));
}
