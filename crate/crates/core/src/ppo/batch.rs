use crate::env::Observation;
use crate::scalar::Scalar;

/// Transitions collected from `num_envs` environments, `steps_per_env` each,
/// stored environment-major: step `t` of environment `e` is at `e * steps_per_env + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch<T> {
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub skill_dim: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    /// Carry entering each step: `h_{t-1}` (rows of `skill_dim`) and `c_{t-1}`.
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Internal action used and gate emitted at each step.
    pub h_used: Vec<T>,
    pub gates: Vec<T>,
    /// Episode ended after this step.
    pub dones: Vec<bool>,
    /// Value of the state following each environment's last step.
    pub bootstrap: Vec<T>,
    /// Skill-level transitions of the fixed-interval baseline.
    pub high: Option<HighBatch<T>>,
}

impl<T: Scalar> TrajectoryBatch<T> {
    pub fn with_capacity(num_envs: usize, steps_per_env: usize, skill_dim: usize) -> Self {
        let n = num_envs * steps_per_env;
        Self {
            num_envs,
            steps_per_env,
            skill_dim,
            observations: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            h_prev: Vec::with_capacity(n * skill_dim),
            c_prev: Vec::with_capacity(n),
            h_used: Vec::with_capacity(n * skill_dim),
            gates: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap: vec![T::zero(); num_envs],
            high: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn h_prev_row(&self, i: usize) -> &[T] {
        &self.h_prev[i * self.skill_dim..(i + 1) * self.skill_dim]
    }

    pub fn h_used_row(&self, i: usize) -> &[T] {
        &self.h_used[i * self.skill_dim..(i + 1) * self.skill_dim]
    }

    /// Checks the per-step arrays line up and log-probabilities are finite.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_envs * self.steps_per_env;
        let lens = [
            self.observations.len(),
            self.actions.len(),
            self.rewards.len(),
            self.log_probs.len(),
            self.values.len(),
            self.c_prev.len(),
            self.gates.len(),
            self.dones.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(format!("per-step arrays disagree: expected {n}, found {lens:?}"));
        }
        if self.h_prev.len() != n * self.skill_dim || self.h_used.len() != n * self.skill_dim {
            return Err("internal-action arrays have the wrong length".into());
        }
        if self.bootstrap.len() != self.num_envs {
            return Err("one bootstrap value per environment expected".into());
        }
        if !self.log_probs.iter().all(|v| v.is_finite()) {
            return Err("non-finite log-probability".into());
        }
        Ok(())
    }
}

/// Skill decisions of the fixed-interval baseline. Each entry spans up to `k`
/// environment steps and is rewarded with their summed environment reward.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HighBatch<T> {
    pub segments: Vec<HighSegment<T>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HighSegment<T> {
    pub observations: Vec<Observation>,
    pub skills: Vec<usize>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub rewards: Vec<T>,
    pub dones: Vec<bool>,
    /// Number of environment steps each decision covered.
    pub durations: Vec<u32>,
    pub bootstrap: T,
}

impl<T> HighBatch<T> {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.skills.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A run of consecutive steps of one environment used as one unrolled sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

/// Splits every environment's steps into windows of at most `unroll` steps that
/// never cross an episode boundary: a done flag may only sit on a window's last step.
pub fn segment_windows(dones: &[bool], num_envs: usize, steps_per_env: usize, unroll: usize) -> Vec<Window> {
    assert!(unroll >= 1);
    let mut out = Vec::new();
    for e in 0..num_envs {
        let base = e * steps_per_env;
        let mut start = 0;
        while start < steps_per_env {
            let mut len = 0;
            while start + len < steps_per_env && len < unroll {
                len += 1;
                if dones[base + start + len - 1] {
                    break;
                }
            }
            out.push(Window {
                start: base + start,
                len,
            });
            start += len;
        }
    }
    out
}
