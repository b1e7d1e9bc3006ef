use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use adp_core::config::ExperimentConfig;
use adp_core::features::FeatureSpec;
use adp_core::oracle::{keystone_check, tiny_instance};
use adp_core::solver::write_lp;
use adp_core::trainer::{
    evaluate_offline, first_decision_model, fmt_sig, grid_csv, run_grid, timing_csv, train, training_log_csv, PolicySnapshot,
};
use adp_core::{Instance, VfaSpec};

#[derive(Parser)]
#[command(name = "adp", version, about = "ADP with MILP-embedded value function approximations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a VFA and write the training log, snapshots and manifest.
    Train(Common),
    /// Evaluate a weight file offline with frozen weights.
    Evaluate(Common),
    /// Run an experiment grid and write grid_results.csv.
    Grid(Common),
    /// MILP against brute-force enumeration on a tiny instance.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the training seed (train, grid), the evaluation seed
    /// (evaluate) or the state-sampling seed (oracle-check).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Training iterations, evaluation length or number of oracle states.
    #[arg(long)]
    iterations: Option<usize>,
    /// Writes the first decision model in LP text format.
    #[arg(long)]
    debug_dump_lp: bool,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn manifest(cfg: &ExperimentConfig, inst: &Instance, started: u64, extra: &[(&str, String)]) -> String {
    let t = &cfg.trainer;
    let mut s = String::new();
    s.push_str(&format!("# adp {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("# fingerprint {}\n", inst.fingerprint()));
    s.push_str(&format!(
        "# seeds instance={} train={} eval={}\n",
        inst.config.seed, t.train_seed, t.eval_seed
    ));
    for (k, v) in extra {
        s.push_str(&format!("# {k} {v}\n"));
    }
    s.push_str(&format!("# started {started}\n"));
    s.push_str(&format!("# finished {}\n", unix_now()));
    s.push_str(&cfg.to_text());
    s
}

fn dump_lp(cfg: &ExperimentConfig, inst: &Instance, out: &Path) -> Result<()> {
    let m = first_decision_model(inst, &cfg.trainer)?;
    write(out, "decision.lp", &write_lp(&m.problem))
}

fn cmd_train(a: &Common) -> Result<ExitCode> {
    let started = unix_now();
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.trainer.train_seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.trainer.iterations = n;
    }
    cfg.validate()?;
    let inst = cfg.build_instance()?;
    fs::create_dir_all(&a.out)?;
    if a.debug_dump_lp {
        dump_lp(&cfg, &inst, &a.out)?;
    }
    let run = train(&inst, &cfg.trainer)?;
    write(&a.out, "training_log.csv", &training_log_csv(&run.log))?;
    write(&a.out, "timing.csv", &timing_csv(&run.log))?;
    for snap in &run.snapshots {
        write(&a.out, &format!("vfa_{}.txt", snap.iteration), &snap.to_text())?;
    }
    let done = run.log.records.len();
    let spec = FeatureSpec::new(&inst.config, cfg.trainer.next_hop);
    let last = PolicySnapshot::new(&inst, spec, run.vfa.clone(), done);
    write(&a.out, &format!("vfa_{done}.txt"), &last.to_text())?;
    let status = match run.log.diverged_at {
        Some(n) => format!("diverged at {n}"),
        None => "completed".into(),
    };
    write(
        &a.out,
        "manifest.txt",
        &manifest(&cfg, &inst, started, &[("command", "train".into()), ("status", status.clone())]),
    )?;
    println!("{done} iterations, {status}");
    if let Some(c) = run.log.checkpoints.last() {
        println!("last checkpoint {}: mean {} std {}", c.iteration, fmt_sig(c.mean), fmt_sig(c.std_dev));
    }
    Ok(if run.log.diverged() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_evaluate(a: &Common) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let inst = cfg.build_instance()?;
    let t = &cfg.trainer;
    let spec = FeatureSpec::new(&inst.config, t.next_hop);
    let Some(w) = &a.weights else {
        bail!("evaluate needs --weights");
    };
    let text = fs::read_to_string(w).with_context(|| format!("reading {}", w.display()))?;
    let snap = PolicySnapshot::from_text(&text, &inst, spec)?;
    let length = a.iterations.unwrap_or(t.eval_length);
    let seed = a.seed.unwrap_or(t.eval_seed);
    let (mean, std) = evaluate_offline(&inst, &snap, length, seed, t)?;
    let line = format!("{},{},{},{}", length, seed, fmt_sig(mean), fmt_sig(std));
    println!("mean {} std {}", fmt_sig(mean), fmt_sig(std));
    fs::create_dir_all(&a.out)?;
    write(
        &a.out,
        "evaluation.csv",
        &format!("# schema evaluation v1\niterations,seed,mean_reward,std_reward\n{line}\n"),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(a: &Common) -> Result<ExitCode> {
    let started = unix_now();
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.trainer.iterations = n;
    }
    let mut grid = cfg.grid.clone().context("grid needs grid.* keys in the config")?;
    if let Some(s) = a.seed {
        grid.seeds = vec![s];
        cfg.grid = Some(grid.clone());
    }
    cfg.validate()?;
    let inst = cfg.build_instance()?;
    fs::create_dir_all(&a.out)?;
    let rows = run_grid(&inst, &cfg.trainer, &grid)?;
    write(&a.out, "grid_results.csv", &grid_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    write(
        &a.out,
        "manifest.txt",
        &manifest(
            &cfg,
            &inst,
            started,
            &[("command", "grid".into()), ("rows", rows.len().to_string()), ("failed_rows", failed.to_string())],
        ),
    )?;
    println!("{} rows, {failed} failed", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_check(a: &Common) -> Result<ExitCode> {
    let (inst, opts) = match &a.config {
        Some(p) => {
            let cfg = load_config(Some(p))?;
            (cfg.build_instance()?, cfg.trainer.decision)
        }
        None => (tiny_instance()?, Default::default()),
    };
    let specs = [VfaSpec::Poly, VfaSpec::Neural { hidden: vec![10] }];
    let states = a.iterations.unwrap_or(200);
    let rep = keystone_check(&inst, &specs, states, a.seed.unwrap_or(1), &opts, 1e-6)?;
    println!(
        "{} checks, {} passed, {} failed, max gap {:e}",
        rep.checks,
        rep.checks - rep.failures,
        rep.failures,
        rep.max_gap
    );
    Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Grid(a) => cmd_grid(a),
        Cmd::OracleCheck(a) => cmd_oracle_check(a),
    };
    match r {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
