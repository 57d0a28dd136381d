use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterVector;
use crate::env::EnvConfig;
use crate::policy::{ActMode, Architecture};
use crate::scalar::Scalar;
use crate::trainer::{episode_rng, run_episode, TrainError};

use super::AnalysisError;

/// One step of an episode as seen by the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u32,
    /// Internal action the sub-policy was conditioned on.
    pub h: Vec<f64>,
    /// Gate consumed at this step, i.e. emitted on the previous one (0 at `t = 0`).
    pub c: f64,
    /// Agent position before acting.
    pub row: usize,
    pub col: usize,
    pub action: usize,
    pub reward: f64,
    /// High-level proposal at this step.
    pub h_hat: Vec<f64>,
    /// Gate emitted at this step.
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub skill_dim: usize,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Runs one sampled episode whose layout and action noise derive from `seed`.
pub fn trace_episode<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    env: &EnvConfig,
    seed: u64,
) -> Result<EpisodeTrace, TrainError> {
    let mut rng = episode_rng(seed, 0);
    run_episode(arch, params, env, seed, &mut rng, ActMode::Sample)
}

fn header(d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..d).map(|j| format!("h{j}")));
    h.extend(["c", "row", "col", "action", "reward"].map(String::from));
    h.extend((0..d).map(|j| format!("hhat{j}")));
    h.push("gate".into());
    h
}

pub fn write_trace<W: Write>(out: W, trace: &EpisodeTrace) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trace.skill_dim))?;
    for s in &trace.steps {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.h.iter().map(f64::to_string));
        rec.push(s.c.to_string());
        rec.push(s.row.to_string());
        rec.push(s.col.to_string());
        rec.push(s.action.to_string());
        rec.push(s.reward.to_string());
        rec.extend(s.h_hat.iter().map(f64::to_string));
        rec.push(s.gate.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<EpisodeTrace, AnalysisError> {
    let bad = |e: &dyn std::fmt::Display| AnalysisError::Malformed(e.to_string());
    let mut r = csv::Reader::from_reader(input);
    let names: Vec<String> = r.headers().map_err(|e| bad(&e))?.iter().map(String::from).collect();
    let d = names.iter().filter(|n| n.starts_with('h') && n[1..].parse::<usize>().is_ok()).count();
    if names != header(d) {
        return Err(AnalysisError::Malformed(format!("unexpected header {names:?}")));
    }
    let mut steps = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let f = |i: usize| -> Result<f64, AnalysisError> { rec[i].parse().map_err(|e| bad(&e)) };
        let u = |i: usize| -> Result<usize, AnalysisError> { rec[i].parse().map_err(|e| bad(&e)) };
        steps.push(TraceStep {
            t: rec[0].parse().map_err(|e| bad(&e))?,
            h: (1..=d).map(f).collect::<Result<_, _>>()?,
            c: f(d + 1)?,
            row: u(d + 2)?,
            col: u(d + 3)?,
            action: u(d + 4)?,
            reward: f(d + 5)?,
            h_hat: (d + 6..2 * d + 6).map(f).collect::<Result<_, _>>()?,
            gate: f(2 * d + 6)?,
        });
    }
    Ok(EpisodeTrace { skill_dim: d, steps })
}
