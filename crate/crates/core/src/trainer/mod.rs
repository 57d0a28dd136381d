//! Experiment orchestration: configuration, rollouts, the update loop, metrics,
//! checkpoints and evaluation.

mod eval;
mod rollout;

pub use eval::{episode_rng, episode_seeds, evaluate, evaluate_oracle, mean_std, run_episode, EvalOptions, EvalResult};
pub use rollout::{collect_rollout, high_values, state_values, EnvPool, EpisodeSummary};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{load_checkpoint, read_manifest, save_checkpoint, AutodiffError, CheckpointError, ParameterVector, Partition};
use crate::env::{EnvConfig, EnvError};
use crate::policy::{ActMode, Architecture, PolicyConfig};
use crate::ppo::{Learner, PpoError, TrainConfig, UpdateStats};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("training diverged at update {update}: {source}; diagnostics in {dump:?}")]
    Diverged {
        update: u64,
        source: PpoError,
        dump: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoggingConfig {
    /// Episodes of the final evaluation.
    pub eval_episodes: usize,
    pub eval_mode: ActMode,
    /// Print a progress line to stderr every this many updates (0 = silent).
    pub progress_every: u64,
    /// Record elapsed seconds in the metrics; when off the column is written as 0 so
    /// repeated runs give byte-identical files.
    pub wall_time: bool,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self {
            eval_episodes: 100,
            eval_mode: ActMode::Sample,
            progress_every: 0,
            wall_time: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub logging: LoggingConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        self.policy.validate().map_err(TrainError::Config)?;
        self.train.validate().map_err(TrainError::Config)
    }

    /// Applies `section.field=value`; the value is parsed as JSON and falls back to a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), TrainError> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| TrainError::Usage(format!("override {assignment:?} is not key=value")))?;
        let mut root = serde_json::to_value(*self).expect("config serializes");
        let mut node = &mut root;
        for part in path.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| TrainError::Usage(format!("unknown config field {path:?}")))?;
        }
        *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(root).map_err(|e| TrainError::Usage(format!("{path}: {e}")))?;
        Ok(())
    }

    /// Episodes to train for: the configured budget or a per-difficulty default.
    pub fn episode_budget(&self) -> u64 {
        self.train.episode_budget.unwrap_or(match self.env.num_keys {
            1 => 3_000,
            2 => 8_000,
            3 => 20_000,
            _ => 40_000,
        })
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Undiscounted return of the episodes that finished during this update's rollout.
    pub mean_return: f64,
    pub std_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "update",
    "env_steps",
    "episodes",
    "mean_return",
    "std_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_frac",
    "grad_norm",
    "wall_time_s",
];

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub struct TrainOutcome<T> {
    pub config: ExperimentConfig,
    pub params: ParameterVector<T>,
    pub metrics: Vec<MetricsRow>,
    pub episodes: u64,
    pub env_steps: u64,
    pub final_checkpoint: Option<PathBuf>,
}

fn checkpoint_meta(config: &ExperimentConfig, update: u64, episodes: u64) -> Value {
    serde_json::json!({ "config": config, "update": update, "episodes": episodes })
}

/// Writes `<stem>.json`/`<stem>.bin` with the experiment configuration attached.
pub fn save_policy<T: Scalar>(
    stem: &Path,
    params: &ParameterVector<T>,
    config: &ExperimentConfig,
    update: u64,
    episodes: u64,
) -> Result<PathBuf, TrainError> {
    Ok(save_checkpoint(stem, params, checkpoint_meta(config, update, episodes))?)
}

/// Loads a checkpoint written by [`save_policy`]. When `expected` is given the stored
/// parameters must fit that architecture.
pub fn load_policy<T: Scalar>(
    path: &Path,
    expected: Option<&PolicyConfig>,
) -> Result<(ExperimentConfig, Architecture<T>, ParameterVector<T>), TrainError> {
    let manifest = read_manifest(path)?;
    let config: ExperimentConfig = serde_json::from_value(manifest.meta["config"].clone())
        .map_err(|e| TrainError::Config(format!("checkpoint carries no usable config: {e}")))?;
    let policy = expected.copied().unwrap_or(config.policy);
    let arch = Architecture::new(policy);
    let (params, _) = load_checkpoint(path, arch.layout().clone())?;
    Ok((config, arch, params))
}

fn dump_diagnostics<T: Scalar>(
    dir: &Path,
    config: &ExperimentConfig,
    params: &ParameterVector<T>,
    update: u64,
    last: Option<&UpdateStats>,
    error: &PpoError,
) -> Result<PathBuf, TrainError> {
    let path = dir.join("diagnostic.json");
    let norms: serde_json::Map<String, Value> = [Partition::High, Partition::Sub, Partition::Value]
        .into_iter()
        .map(|p| (format!("{p:?}").to_lowercase(), Value::from(params.norm_in(p).as_f64())))
        .collect();
    let report = serde_json::json!({
        "update": update,
        "error": error.to_string(),
        "last_stats": last,
        "param_norms": norms,
        "params_finite": params.all_finite(),
        "config": config,
    });
    fs::write(&path, serde_json::to_string_pretty(&report).expect("json")).map_err(io_err(&path))?;
    save_policy(&dir.join("diagnostic_params"), params, config, update, 0)?;
    Ok(path)
}

/// Alternates rollouts and updates until the episode budget (or `max_updates`) is spent.
///
/// With `out_dir` set, writes `config.json`, `metrics.csv`, periodic checkpoints under
/// `checkpoints/` and the final parameters as `final.{json,bin}`.
pub fn train<T: Scalar>(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let arch = Architecture::<T>::new(config.policy);
    let tc = config.train;
    let mut params = arch.init_params(&mut ChaCha8Rng::seed_from_u64(tc.seed));
    let mut pool = EnvPool::new(config.env, tc.num_envs, tc.seed, arch.skill_dim())?;
    let mut learner = Learner::new(&arch, tc);
    let budget = config.episode_budget();
    let steps_per_env = tc.steps_per_env();

    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, config.to_json()).map_err(io_err(&cfg_path))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("metrics.csv"))?;
            w.write_record(METRICS_HEADER)?;
            w.flush().map_err(io_err(dir))?;
            Some(w)
        }
        None => None,
    };

    let start = Instant::now();
    let mut metrics = Vec::new();
    let (mut episodes, mut env_steps, mut update) = (0u64, 0u64, 0u64);
    let mut last_stats = None;
    while episodes < budget && tc.max_updates.map_or(true, |m| update < m) {
        let (batch, finished) = collect_rollout(&arch, &params, &mut pool, steps_per_env, tc.workers)?;
        env_steps += batch.len() as u64;
        episodes += finished.len() as u64;
        let stats = match learner.update(&arch, &mut params, &batch) {
            Ok(s) => s,
            Err(e @ PpoError::NonFinite { .. }) => {
                let dump = match out_dir {
                    Some(dir) => Some(dump_diagnostics(dir, config, &params, update, last_stats.as_ref(), &e)?),
                    None => None,
                };
                return Err(TrainError::Diverged {
                    update,
                    source: e,
                    dump,
                });
            }
            Err(e) => return Err(e.into()),
        };
        update += 1;
        let returns: Vec<f64> = finished.iter().map(|e| e.ret).collect();
        let (mean_return, std_return) = mean_std(&returns);
        let row = MetricsRow {
            update,
            env_steps,
            episodes,
            mean_return,
            std_return,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            grad_norm: stats.grad_norm,
            wall_time_s: if config.logging.wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(row)?;
            w.flush().map_err(io_err(Path::new("metrics.csv")))?;
        }
        if config.logging.progress_every > 0 && update % config.logging.progress_every == 0 {
            eprintln!(
                "update {update:>5}  episodes {episodes:>7}  return {mean_return:>7.3} ± {std_return:.3}  entropy {:.3}",
                stats.entropy
            );
        }
        if let (Some(dir), true) = (out_dir, tc.checkpoint_every > 0 && update % tc.checkpoint_every == 0) {
            let ck = dir.join("checkpoints");
            fs::create_dir_all(&ck).map_err(io_err(&ck))?;
            save_policy(&ck.join(format!("update_{update:06}")), &params, config, update, episodes)?;
        }
        metrics.push(row);
        last_stats = Some(stats);
    }

    let final_checkpoint = match out_dir {
        Some(dir) => Some(save_policy(&dir.join("final"), &params, config, update, episodes)?),
        None => None,
    };
    Ok(TrainOutcome {
        config: *config,
        params,
        metrics,
        episodes,
        env_steps,
        final_checkpoint,
    })
}
