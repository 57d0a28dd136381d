//! The temporally gated two-level policy and its two baselines.
//!
//! * [`PolicyKind::Temple`]: a high-level network proposes an internal action `ĥ_t`
//!   from the current observation; the gate `c_{t-1}` emitted by the sub-policy on the
//!   previous step blends it with the previous internal action,
//!   `h_t = c_{t-1}·ĥ_t + (1 − c_{t-1})·h_{t-1}`; the sub-policy then maps
//!   `[s_t | h_t]` to action logits, the next gate `c_t` and a value estimate.
//!   Episodes start from `h = (1/d, …, 1/d)` and `c = 0`.
//! * [`PolicyKind::TempleFix`]: the high level picks a skill every `k` steps and holds
//!   it in between; the gate head is ignored.
//! * [`PolicyKind::Flat`]: a single network from observation to logits and value.

mod network;

pub use network::{switch_node, Architecture, StepNodes, SubNodes};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParameterVector, Tensor};
use crate::env::{Observation, OBS_DIM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Temple,
    TempleFix,
    Flat,
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temple" => Ok(Self::Temple),
            "temple-fix" => Ok(Self::TempleFix),
            "flat" => Ok(Self::Flat),
            other => Err(format!("unknown policy kind {other:?}")),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Temple => "temple",
            Self::TempleFix => "temple-fix",
            Self::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Internal action dimension `d`.
    pub skill_dim: usize,
    /// Width of both hidden layers of the high-level and sub-policy networks.
    pub hidden: usize,
    /// Refresh interval `k` of the fixed-interval baseline.
    pub fix_interval: u64,
    /// Hidden width of the flat baseline.
    pub flat_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Temple,
            skill_dim: 4,
            hidden: 64,
            fix_interval: 10,
            flat_hidden: 96,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.skill_dim == 0 && self.kind != PolicyKind::Flat {
            return Err("skill_dim must be positive".into());
        }
        if self.hidden == 0 || self.flat_hidden == 0 {
            return Err("hidden widths must be positive".into());
        }
        if self.fix_interval == 0 {
            return Err("fix_interval must be at least 1".into());
        }
        Ok(())
    }
}

/// Recurrent state threaded between steps of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCarry<T> {
    pub h_prev: Vec<T>,
    pub c_prev: T,
    pub t: u64,
}

impl<T: Scalar> AgentCarry<T> {
    /// `h = (1/d, …, 1/d)`, `c = 0`.
    pub fn initial(d: usize) -> Self {
        let h = if d == 0 {
            Vec::new()
        } else {
            vec![T::one() / T::of(d as f64); d]
        };
        Self {
            h_prev: h,
            c_prev: T::zero(),
            t: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let tol = T::of(1e-9);
        let sum: T = self.h_prev.iter().copied().sum();
        self.c_prev >= T::zero()
            && self.c_prev <= T::one()
            && self.h_prev.iter().all(|&v| v >= T::zero())
            && (self.h_prev.is_empty() || (sum - T::one()).abs() <= tol)
    }
}

/// A skill drawn by the high level of the fixed-interval baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillChoice<T> {
    pub skill: usize,
    pub log_prob: T,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub action_logits: Vec<T>,
    /// Gate `c_t` emitted this step (0 for the flat baseline).
    pub gate: T,
    pub value: T,
    /// Internal action the sub-policy was conditioned on.
    pub h_used: Vec<T>,
    /// High-level proposal this step.
    pub h_hat: Vec<T>,
    pub log_prob: T,
    /// Present when the fixed-interval baseline refreshed its skill this step.
    pub skill: Option<SkillChoice<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    #[default]
    Sample,
    Greedy,
}

/// Plain-value gate blend, bit-identical to [`switch_node`].
pub fn temporal_switch<T: Scalar>(c_prev: T, h_prev: &[T], h_hat: &[T]) -> Vec<T> {
    let keep = -T::one() * c_prev + T::one();
    h_hat
        .iter()
        .zip(h_prev)
        .map(|(&fresh, &old)| fresh * c_prev + old * keep)
        .collect()
}

pub fn observations_tensor<T: Scalar>(obs: &[&Observation]) -> Tensor<T> {
    let data = obs
        .iter()
        .flat_map(|o| o.as_slice().iter().map(|&v| T::of(v)))
        .collect();
    Tensor::from_vec(obs.len(), OBS_DIM, data).expect("observation rows")
}

fn pick_action<T: Scalar, R: Rng + ?Sized>(probs: &[T], mode: ActMode, rng: &mut R) -> usize {
    match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let weights: Vec<f64> = probs.iter().map(|p| p.as_f64()).collect();
            WeightedIndex::new(&weights)
                .expect("softmax weights are positive")
                .sample(rng)
        }
    }
}

/// A policy architecture bound to its behaviour.
pub type Policy<T> = Architecture<T>;

impl<T: Scalar> Architecture<T> {
    /// `ĥ` for one observation.
    pub fn high_level_forward(&self, params: &ParameterVector<T>, obs: &Observation) -> Result<Vec<T>, AutodiffError> {
        let mut g = Graph::new(params);
        let x = g.constant(observations_tensor(&[obs]));
        let h_hat = self.high_forward(&mut g, x)?;
        Ok(g.value(h_hat).data().to_vec())
    }

    /// Action logits and gate for one observation conditioned on `h`.
    pub fn sub_policy_forward(
        &self,
        params: &ParameterVector<T>,
        obs: &Observation,
        h: &[T],
    ) -> Result<(Vec<T>, T), AutodiffError> {
        let mut g = Graph::new(params);
        let x = g.constant(observations_tensor(&[obs]));
        let hn = g.constant(Tensor::row(h));
        let sub = self.sub_forward(&mut g, x, hn)?;
        Ok((g.value(sub.logits).data().to_vec(), g.value(sub.gate).item()))
    }

    /// Acts for a batch of environments. Row `i` uses `carries[i]` and `rngs[i]` only,
    /// so results do not depend on how environments are grouped into batches.
    pub fn act_batch<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &[&Observation],
        carries: &mut [AgentCarry<T>],
        rngs: &mut [R],
        mode: ActMode,
    ) -> Result<Vec<(usize, PolicyOutput<T>)>, AutodiffError> {
        assert_eq!(obs.len(), carries.len());
        assert_eq!(obs.len(), rngs.len());
        match self.kind() {
            PolicyKind::Temple => self.act_temple(params, obs, carries, rngs, mode),
            PolicyKind::TempleFix => self.act_fixed(params, obs, carries, rngs, mode),
            PolicyKind::Flat => self.act_flat(params, obs, carries, rngs, mode),
        }
    }

    fn act_temple<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &[&Observation],
        carries: &mut [AgentCarry<T>],
        rngs: &mut [R],
        mode: ActMode,
    ) -> Result<Vec<(usize, PolicyOutput<T>)>, AutodiffError> {
        let d = self.skill_dim();
        let n = obs.len();
        let mut g = Graph::new(params);
        let x = g.constant(observations_tensor(obs));
        let h_prev = g.constant(Tensor::from_vec(
            n,
            d,
            carries.iter().flat_map(|c| c.h_prev.iter().copied()).collect(),
        )?);
        let c_prev = g.constant(Tensor::column(
            &carries.iter().map(|c| c.c_prev).collect::<Vec<_>>(),
        ));
        let step = self.temple_step(&mut g, x, h_prev, c_prev)?;
        let probs = g.softmax(step.sub.logits);
        let logp = g.log_softmax(step.sub.logits);
        let mut out = Vec::with_capacity(n);
        for (i, (carry, rng)) in carries.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let action = pick_action(g.value(probs).row_slice(i), mode, rng);
            let h = g.value(step.h).row_slice(i).to_vec();
            let gate = g.value(step.sub.gate).get(i, 0);
            out.push((
                action,
                PolicyOutput {
                    action_logits: g.value(step.sub.logits).row_slice(i).to_vec(),
                    gate,
                    value: g.value(step.sub.value).get(i, 0),
                    h_used: h.clone(),
                    h_hat: g.value(step.h_hat).row_slice(i).to_vec(),
                    log_prob: g.value(logp).get(i, action),
                    skill: None,
                },
            ));
            *carry = AgentCarry {
                h_prev: h,
                c_prev: gate,
                t: carry.t + 1,
            };
        }
        Ok(out)
    }

    fn act_fixed<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &[&Observation],
        carries: &mut [AgentCarry<T>],
        rngs: &mut [R],
        mode: ActMode,
    ) -> Result<Vec<(usize, PolicyOutput<T>)>, AutodiffError> {
        let d = self.skill_dim();
        let k = self.config.fix_interval;
        let n = obs.len();
        let mut g = Graph::new(params);
        let x = g.constant(observations_tensor(obs));
        let feat = self.high_features(&mut g, x)?;
        let skill_logits = self.high_logits_from(&mut g, feat)?;
        let skill_logp = g.log_softmax(skill_logits);
        let skill_probs = g.softmax(skill_logits);
        let high_value = self.high_value_from(&mut g, feat)?;

        let mut skills = Vec::with_capacity(n);
        let mut h_rows = Vec::with_capacity(n * d);
        for (i, (carry, rng)) in carries.iter().zip(rngs.iter_mut()).enumerate() {
            if carry.t % k == 0 {
                let z = pick_action(g.value(skill_probs).row_slice(i), mode, rng);
                skills.push(Some(SkillChoice {
                    skill: z,
                    log_prob: g.value(skill_logp).get(i, z),
                    value: g.value(high_value).get(i, 0),
                }));
                h_rows.extend((0..d).map(|j| if j == z { T::one() } else { T::zero() }));
            } else {
                skills.push(None);
                h_rows.extend_from_slice(&carry.h_prev);
            }
        }
        let h = g.constant(Tensor::from_vec(n, d, h_rows)?);
        let sub = self.sub_forward(&mut g, x, h)?;
        let probs = g.softmax(sub.logits);
        let logp = g.log_softmax(sub.logits);
        let mut out = Vec::with_capacity(n);
        for (i, ((carry, rng), skill)) in carries.iter_mut().zip(rngs.iter_mut()).zip(skills).enumerate() {
            let action = pick_action(g.value(probs).row_slice(i), mode, rng);
            let h_used = g.value(h).row_slice(i).to_vec();
            let gate = g.value(sub.gate).get(i, 0);
            out.push((
                action,
                PolicyOutput {
                    action_logits: g.value(sub.logits).row_slice(i).to_vec(),
                    gate,
                    value: g.value(sub.value).get(i, 0),
                    h_hat: h_used.clone(),
                    h_used: h_used.clone(),
                    log_prob: g.value(logp).get(i, action),
                    skill,
                },
            ));
            *carry = AgentCarry {
                h_prev: h_used,
                c_prev: gate,
                t: carry.t + 1,
            };
        }
        Ok(out)
    }

    fn act_flat<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &[&Observation],
        carries: &mut [AgentCarry<T>],
        rngs: &mut [R],
        mode: ActMode,
    ) -> Result<Vec<(usize, PolicyOutput<T>)>, AutodiffError> {
        let mut g = Graph::new(params);
        let x = g.constant(observations_tensor(obs));
        let (logits, value) = self.flat_forward(&mut g, x)?;
        let probs = g.softmax(logits);
        let logp = g.log_softmax(logits);
        let mut out = Vec::with_capacity(obs.len());
        for (i, (carry, rng)) in carries.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let action = pick_action(g.value(probs).row_slice(i), mode, rng);
            out.push((
                action,
                PolicyOutput {
                    action_logits: g.value(logits).row_slice(i).to_vec(),
                    gate: T::zero(),
                    value: g.value(value).get(i, 0),
                    h_used: Vec::new(),
                    h_hat: Vec::new(),
                    log_prob: g.value(logp).get(i, action),
                    skill: None,
                },
            ));
            carry.t += 1;
        }
        Ok(out)
    }

    /// One gated step for a single environment.
    pub fn temple_act<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &Observation,
        carry: &AgentCarry<T>,
        rng: &mut R,
    ) -> Result<(usize, PolicyOutput<T>, AgentCarry<T>), AutodiffError> {
        assert_eq!(self.kind(), PolicyKind::Temple);
        self.act_single(params, obs, carry, rng)
    }

    /// One step of the fixed-interval baseline for a single environment.
    pub fn fixed_interval_act<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &Observation,
        carry: &AgentCarry<T>,
        rng: &mut R,
    ) -> Result<(usize, PolicyOutput<T>, AgentCarry<T>), AutodiffError> {
        assert_eq!(self.kind(), PolicyKind::TempleFix);
        self.act_single(params, obs, carry, rng)
    }

    /// Flat baseline: `(action, value, log_prob)`.
    pub fn flat_act<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &Observation,
        rng: &mut R,
    ) -> Result<(usize, T, T), AutodiffError> {
        assert_eq!(self.kind(), PolicyKind::Flat);
        let (a, out, _) = self.act_single(params, obs, &AgentCarry::initial(0), rng)?;
        Ok((a, out.value, out.log_prob))
    }

    fn act_single<R: Rng>(
        &self,
        params: &ParameterVector<T>,
        obs: &Observation,
        carry: &AgentCarry<T>,
        rng: &mut R,
    ) -> Result<(usize, PolicyOutput<T>, AgentCarry<T>), AutodiffError> {
        let mut carries = [carry.clone()];
        let mut out = self.act_batch(
            params,
            &[obs],
            &mut carries,
            std::slice::from_mut(rng),
            ActMode::Sample,
        )?;
        let [next] = carries;
        let (a, o) = out.pop().expect("one row");
        Ok((a, o, next))
    }

    /// Fresh parameters: Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector<T> {
        let mut p = ParameterVector::zeros(self.layout().clone());
        crate::autodiff::glorot_init(&mut p, rng);
        p
    }
}
