//! `temple`: train, evaluate, trace and sweep gated hierarchical policies on FetchTheKey.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use temple::analysis::{
    active_dimensions, color_trajectory, gate_change_alignment, sweep, switch_consistency_error, trace_episode,
    write_trace, SweepOptions, ACTIVE_THRESHOLD, EVAL_SEED_OFFSET,
};
use temple::env::{optimal_return_oracle, EnvConfig, FetchTheKey};
use temple::policy::ActMode;
use temple::trainer::{evaluate, load_policy, train, EvalOptions, ExperimentConfig, TrainError};

#[derive(Debug, Parser)]
#[command(name = "temple", version, about = "Temporally gated hierarchical policies on FetchTheKey")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy from a JSON experiment config.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Record one episode of a checkpoint as CSV.
    Trace(TraceArgs),
    /// Train over a grid of internal-action sizes and unroll lengths.
    Sweep(SweepArgs),
    /// Print the best achievable return of a layout.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct RunDir {
    /// Output directory (default: runs/<timestamp>_<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parent of generated run directories.
    #[arg(long, default_value = "runs")]
    runs_root: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.gamma=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dir: RunDir,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take the most likely action instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Evaluate under this config's policy architecture and environment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    dir: RunDir,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-step RED/GREEN labels comparing two dimensions, e.g. `--color 1,3`.
    #[arg(long, value_delimiter = ',')]
    color: Option<Vec<usize>>,
    /// Environment override (e.g. `key=2`); defaults to the checkpoint's.
    #[arg(long)]
    env: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    lens: Vec<usize>,
    /// Training seeds per cell (default: the config's seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dir: RunDir,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Environment spec: `key=K[,steps=N]`.
    #[arg(long)]
    env: String,
    /// Layout seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Usage(_) | TrainError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

fn parse_env(spec: &str, mut base: EnvConfig) -> Result<EnvConfig, Failure> {
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("environment spec {part:?} is not key=value")))?;
        let bad = |_| Failure::Usage(format!("invalid value in {part:?}"));
        match k.trim() {
            "key" | "keys" => base.num_keys = v.trim().parse().map_err(bad)?,
            "steps" => base.max_episode_steps = v.trim().parse().map_err(bad)?,
            "seed" => base.seed = v.trim().parse().map_err(bad)?,
            other => return Err(Failure::Usage(format!("unknown environment field {other:?}"))),
        }
    }
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(base)
}

fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", path.display())));
    }
    let mut cfg = ExperimentConfig::from_file(path)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

fn run_dir(dir: &RunDir, fingerprint: &str) -> anyhow::Result<PathBuf> {
    let path = match &dir.out {
        Some(p) => p.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            dir.runs_root.join(format!("{stamp}_{}", config_hash(fingerprint)))
        }
    };
    fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let cfg = load_config(&args.config, &args.overrides, args.seed)?;
    let dir = run_dir(&args.dir, &cfg.to_json())?;
    let run = train::<f64>(&cfg, Some(&dir))?;
    let arch = temple::Policy64::new(cfg.policy);
    let eval = evaluate(
        &arch,
        &run.params,
        &cfg.env,
        &EvalOptions {
            episodes: cfg.logging.eval_episodes,
            seed: cfg.train.seed + EVAL_SEED_OFFSET,
            mode: cfg.logging.eval_mode,
            keep_traces: false,
        },
    )?;
    write_json(
        &dir.join("eval.json"),
        &serde_json::json!({
            "episodes": eval.returns.len(),
            "seed": cfg.train.seed + EVAL_SEED_OFFSET,
            "mean_return": eval.mean_return,
            "std_return": eval.std_return,
            "returns": eval.returns,
            "training_episodes": run.episodes,
            "env_steps": run.env_steps,
            "updates": run.metrics.len(),
        }),
    )?;
    println!("run directory: {}", dir.display());
    println!(
        "trained {} updates, {} episodes, {} steps; final return {:.3} ± {:.3}",
        run.metrics.len(),
        run.episodes,
        run.env_steps,
        eval.mean_return,
        eval.std_return
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    if args.episodes == 0 {
        return Err(Failure::Usage("--episodes must be at least 1".into()));
    }
    let expected = match &args.config {
        Some(p) => Some(load_config(p, &[], None)?),
        None => None,
    };
    let (stored, arch, params) = load_policy::<f64>(&args.checkpoint, expected.as_ref().map(|c| &c.policy))?;
    let env = expected.map_or(stored.env, |c| c.env);
    let opts = EvalOptions {
        episodes: args.episodes,
        seed: args.seed,
        mode: if args.greedy { ActMode::Greedy } else { ActMode::Sample },
        keep_traces: false,
    };
    let eval = evaluate(&arch, &params, &env, &opts)?;
    let fingerprint = format!("{}|{}|{}|{}", args.checkpoint.display(), args.episodes, args.seed, args.greedy);
    let dir = run_dir(&args.dir, &fingerprint)?;
    write_json(
        &dir.join("eval.json"),
        &serde_json::json!({
            "checkpoint": args.checkpoint,
            "episodes": args.episodes,
            "seed": args.seed,
            "mode": opts.mode,
            "mean_return": eval.mean_return,
            "std_return": eval.std_return,
            "returns": eval.returns,
            "lengths": eval.lengths,
        }),
    )?;
    println!("{:.3} ± {:.3}", eval.mean_return, eval.std_return);
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Outcome {
    let (stored, arch, params) = load_policy::<f64>(&args.checkpoint, None)?;
    let env = match &args.env {
        Some(spec) => parse_env(spec, stored.env)?,
        None => stored.env,
    };
    if arch.skill_dim() == 0 {
        return Err(Failure::Usage("the flat policy has no internal action to trace".into()));
    }
    if let Some(dims) = &args.color {
        if dims.len() != 2 || dims[0] == dims[1] || dims.iter().any(|&j| j >= arch.skill_dim()) {
            return Err(Failure::Usage(format!(
                "--color needs two different dimensions below {}",
                arch.skill_dim()
            )));
        }
    }
    let trace = trace_episode(&arch, &params, &env, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_trace(file, &trace).context("writing trace")?;
    if let Some(dims) = &args.color {
        let labels = color_trajectory(&trace, dims[0], dims[1]).map_err(|e| Failure::Usage(e.to_string()))?;
        let path = args.out.with_extension("colors.csv");
        let mut text = String::from("t,row,col,color\n");
        for s in labels {
            text.push_str(&format!("{},{},{},{:?}\n", s.t, s.row, s.col, s.color).to_uppercase());
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let active = active_dimensions(&trace, ACTIVE_THRESHOLD).map_err(anyhow::Error::from)?;
    println!("steps {}  return {}", trace.len(), trace.total_return());
    println!("active dimensions (> {ACTIVE_THRESHOLD}): {active:?}");
    match gate_change_alignment(&trace) {
        Ok(a) => println!(
            "gate/change correlation: {} over {} pairs{}",
            a.correlation.map_or("undefined".to_string(), |c| format!("{c:.4}")),
            a.n_pairs,
            if a.low_sample { " (low sample)" } else { "" }
        ),
        Err(e) => println!("gate/change correlation: {e}"),
    }
    println!("switch recomputation error: {:e}", switch_consistency_error(&trace));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Outcome {
    let cfg = load_config(&args.config, &args.overrides, args.seed)?;
    if args.dims.contains(&0) || args.lens.contains(&0) {
        return Err(Failure::Usage("--dims and --lens must be positive".into()));
    }
    let seeds = if args.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        args.seeds.clone()
    };
    let opts = SweepOptions {
        dims: args.dims.clone(),
        lens: args.lens.clone(),
        seeds,
    };
    let fingerprint = format!("{}|{:?}", cfg.to_json(), opts);
    let dir = run_dir(&args.dir, &fingerprint)?;
    fs::write(dir.join("config.json"), cfg.to_json()).context("writing config")?;
    let cells = sweep::<f64>(&cfg, &opts, Some(&dir))?;
    println!("run directory: {}", dir.display());
    println!("d\tl\tmedian_final_return");
    for c in &cells {
        println!("{}\t{}\t{:.3}", c.skill_dim, c.unroll_length, c.median());
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Outcome {
    let cfg = parse_env(&args.env, EnvConfig::default())?;
    let mut env = FetchTheKey::new(cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    env.reset(args.seed);
    println!("{}", optimal_return_oracle(env.config(), env.state()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
