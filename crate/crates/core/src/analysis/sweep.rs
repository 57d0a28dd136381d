use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::trainer::{evaluate, train, EvalOptions, ExperimentConfig, TrainError};

/// Offset between a run's training seed and the seed of its final evaluation.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub dims: Vec<usize>,
    pub lens: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// Final evaluation returns of one `(d, l)` cell, one per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub skill_dim: usize,
    pub unroll_length: usize,
    pub seeds: Vec<u64>,
    pub final_returns: Vec<f64>,
    pub run_dirs: Vec<PathBuf>,
}

impl SweepCell {
    pub fn median(&self) -> f64 {
        median(&self.final_returns)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Trains every `(d, l)` combination with every seed and evaluates the final parameters.
///
/// With `out_dir` set each run writes into `d{d}_l{l}/seed{s}/` and a `summary.csv`
/// with one row per cell is written at the top.
pub fn sweep<T: Scalar>(
    base: &ExperimentConfig,
    opts: &SweepOptions,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepCell>, TrainError> {
    if opts.dims.is_empty() || opts.lens.is_empty() || opts.seeds.is_empty() {
        return Err(TrainError::Usage("sweep needs at least one dimension, length and seed".into()));
    }
    let mut cells = Vec::new();
    for &d in &opts.dims {
        for &l in &opts.lens {
            let mut cell = SweepCell {
                skill_dim: d,
                unroll_length: l,
                seeds: opts.seeds.clone(),
                final_returns: Vec::new(),
                run_dirs: Vec::new(),
            };
            for &seed in &opts.seeds {
                let mut cfg = *base;
                cfg.policy.skill_dim = d;
                cfg.train.unroll_length = l;
                cfg.train.seed = seed;
                let dir = out_dir.map(|o| o.join(format!("d{d}_l{l}")).join(format!("seed{seed}")));
                let run = train::<T>(&cfg, dir.as_deref())?;
                let arch = crate::policy::Architecture::<T>::new(cfg.policy);
                let eval = evaluate(
                    &arch,
                    &run.params,
                    &cfg.env,
                    &EvalOptions {
                        episodes: cfg.logging.eval_episodes,
                        seed: seed + EVAL_SEED_OFFSET,
                        mode: cfg.logging.eval_mode,
                        keep_traces: false,
                    },
                )?;
                cell.final_returns.push(eval.mean_return);
                if let Some(dir) = dir {
                    cell.run_dirs.push(dir);
                }
            }
            cells.push(cell);
        }
    }
    if let Some(dir) = out_dir {
        write_summary(&dir.join("summary.csv"), &cells)?;
    }
    Ok(cells)
}

pub fn write_summary(path: &Path, cells: &[SweepCell]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "l", "seeds", "median_final_return", "mean_final_return", "min_final_return", "max_final_return"])?;
    for c in cells {
        let n = c.final_returns.len() as f64;
        let mean = c.final_returns.iter().sum::<f64>() / n;
        let min = c.final_returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = c.final_returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            c.skill_dim.to_string(),
            c.unroll_length.to_string(),
            c.seeds.len().to_string(),
            c.median().to_string(),
            mean.to_string(),
            min.to_string(),
            max.to_string(),
        ])?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}
