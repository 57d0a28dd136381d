//! Post-hoc analysis of the internal action `h` and the gate `c` along episodes.

mod sweep;
mod trace;

pub use sweep::{median, sweep, write_summary, SweepCell, SweepOptions, EVAL_SEED_OFFSET};
pub use trace::{read_trace, trace_episode, write_trace, EpisodeTrace, TraceStep};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::policy::temporal_switch;

/// Default cut-off above which a simplex coordinate counts as used.
pub const ACTIVE_THRESHOLD: f64 = 0.1;

/// Fewer aligned pairs than this are flagged as a low-sample estimate.
pub const MIN_ALIGNMENT_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("need at least {needed} steps, trace has {found}")]
    TooShort { needed: usize, found: usize },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// Dimensions `j` with `max_t h_t[j] > threshold`.
pub fn active_dimensions(trace: &EpisodeTrace, threshold: f64) -> Result<BTreeSet<usize>, AnalysisError> {
    if trace.steps.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    Ok((0..trace.skill_dim)
        .filter(|&j| trace.steps.iter().any(|s| s.h[j] > threshold))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Pearson correlation; `None` when either series is constant.
    pub correlation: Option<f64>,
    pub n_pairs: usize,
    pub low_sample: bool,
}

/// Correlation between the gate consumed at step `t` and `‖h_t − h_{t−1}‖₁`, `t ≥ 1`.
pub fn gate_change_alignment(trace: &EpisodeTrace) -> Result<Alignment, AnalysisError> {
    let n = trace.steps.len();
    if n < 2 {
        return Err(AnalysisError::TooShort { needed: 2, found: n });
    }
    let (gates, changes): (Vec<f64>, Vec<f64>) = trace
        .steps
        .windows(2)
        .map(|w| {
            let change: f64 = w[1].h.iter().zip(&w[0].h).map(|(a, b)| (a - b).abs()).sum();
            (w[1].c, change)
        })
        .unzip();
    Ok(Alignment {
        correlation: pearson(&gates, &changes),
        n_pairs: gates.len(),
        low_sample: gates.len() < MIN_ALIGNMENT_PAIRS,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Color {
    Red,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColoredStep {
    pub t: u32,
    pub row: usize,
    pub col: usize,
    pub color: Color,
}

/// RED where `h_t[dim_a] > h_t[dim_b]` (strictly), GREEN otherwise.
pub fn color_trajectory(trace: &EpisodeTrace, dim_a: usize, dim_b: usize) -> Result<Vec<ColoredStep>, AnalysisError> {
    if dim_a == dim_b {
        return Err(AnalysisError::Dimensions("dim_a and dim_b must differ".into()));
    }
    if dim_a >= trace.skill_dim || dim_b >= trace.skill_dim {
        return Err(AnalysisError::Dimensions(format!(
            "dimensions ({dim_a}, {dim_b}) out of range for d = {}",
            trace.skill_dim
        )));
    }
    Ok(trace
        .steps
        .iter()
        .map(|s| ColoredStep {
            t: s.t,
            row: s.row,
            col: s.col,
            color: if s.h[dim_a] > s.h[dim_b] { Color::Red } else { Color::Green },
        })
        .collect())
}

/// Rebuilds every `h_t` from the logged gates and proposals, starting from the
/// uniform internal action.
pub fn recompute_internal_actions(trace: &EpisodeTrace) -> Vec<Vec<f64>> {
    let d = trace.skill_dim;
    let mut prev = vec![1.0 / d as f64; d];
    let mut out = Vec::with_capacity(trace.steps.len());
    for s in &trace.steps {
        let h = temporal_switch(s.c, &prev, &s.h_hat);
        prev.clone_from(&h);
        out.push(h);
    }
    out
}

/// Largest absolute gap between logged and recomputed internal actions.
pub fn switch_consistency_error(trace: &EpisodeTrace) -> f64 {
    recompute_internal_actions(trace)
        .iter()
        .zip(&trace.steps)
        .flat_map(|(h, s)| h.iter().zip(&s.h).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}
