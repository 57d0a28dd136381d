//! Clipped-surrogate policy optimisation with generalized advantage estimation and
//! truncated backpropagation through the gated internal-action recursion.

mod adam;
mod batch;
mod gae;
mod loss;

pub use adam::Adam;
pub use batch::{segment_windows, HighBatch, HighSegment, TrajectoryBatch, Window};
pub use gae::{compute_gae, compute_gae_with_discounts};
pub use loss::{clipped_objective, high_level_loss, windowed_loss, HighSamples, LossCoefs, LossOutput};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParameterVector};
use crate::policy::{Architecture, PolicyKind};
use crate::scalar::Scalar;

/// Recomputed log-probabilities may differ from the stored ones by at most this much
/// on the first minibatch of an update.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    /// Windows per minibatch. Stateless policies use `minibatch_size × unroll_length`
    /// single steps so every gradient step sees the same number of transitions.
    pub minibatch_size: usize,
    pub unroll_length: usize,
    /// Transitions per update, summed over all environments.
    pub rollout_steps: usize,
    pub num_envs: usize,
    /// Threads used for rollout collection.
    pub workers: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Training stops once this many episodes have finished; `None` picks a
    /// difficulty-dependent default.
    pub episode_budget: Option<u64>,
    pub max_updates: Option<u64>,
    /// Checkpoint every this many updates (0 disables periodic checkpoints).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs_per_update: 4,
            minibatch_size: 64,
            unroll_length: 4,
            rollout_steps: 2048,
            num_envs: 8,
            workers: 1,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            seed: 0,
            episode_budget: None,
            max_updates: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err("clip_epsilon must be positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            return Err("learning_rate must be non-negative".into());
        }
        if self.unroll_length == 0 {
            return Err("unroll_length must be at least 1".into());
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 {
            return Err("epochs_per_update and minibatch_size must be positive".into());
        }
        if self.num_envs == 0 || self.workers == 0 {
            return Err("num_envs and workers must be positive".into());
        }
        if self.rollout_steps < self.num_envs {
            return Err("rollout_steps must give every environment at least one step".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return Err("max_grad_norm must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_env(&self) -> usize {
        self.rollout_steps / self.num_envs
    }

    fn coefs<T: Scalar>(&self) -> LossCoefs<T> {
        LossCoefs {
            clip_epsilon: T::of(self.clip_epsilon),
            value_coef: T::of(self.value_coef),
            entropy_coef: T::of(self.entropy_coef),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("stale batch: recomputed log-probabilities drift by {drift:e} from the rollout")]
    StaleBatch { drift: f64 },
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
    /// High-level losses of the fixed-interval baseline.
    pub high_policy_loss: Option<f64>,
    pub high_value_loss: Option<f64>,
}

/// Advantages and returns for every step of `batch`, one GAE pass per environment.
pub fn batch_advantages<T: Scalar>(batch: &TrajectoryBatch<T>, gamma: T, lambda: T) -> (Vec<T>, Vec<T>) {
    let n = batch.steps_per_env;
    let mut adv = Vec::with_capacity(batch.len());
    let mut ret = Vec::with_capacity(batch.len());
    for e in 0..batch.num_envs {
        let r = e * n..(e + 1) * n;
        let (a, g) = compute_gae(
            &batch.rewards[r.clone()],
            &batch.values[r.clone()],
            &batch.dones[r],
            batch.bootstrap[e],
            gamma,
            lambda,
        );
        adv.extend(a);
        ret.extend(g);
    }
    (adv, ret)
}

/// Shifts to mean 0 and scales to standard deviation 1.
pub fn normalize<T: Scalar>(v: &[T]) -> Vec<T> {
    if v.is_empty() {
        return Vec::new();
    }
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt() + T::of(1e-8);
    v.iter().map(|&x| (x - mean) / std).collect()
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the norm before.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ParameterVector<T>, max_norm: T) -> T {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + T::of(1e-6)));
    }
    norm
}

/// Loss and gradient of a set of windows at `params`.
pub fn loss_and_gradient<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    batch: &TrajectoryBatch<T>,
    windows: &[Window],
    advantages: &[T],
    returns: &[T],
    coefs: &LossCoefs<T>,
) -> Result<(T, ParameterVector<T>, LossOutput), AutodiffError> {
    let mut g = Graph::new(params);
    let out = windowed_loss(arch, &mut g, batch, windows, advantages, returns, coefs)?;
    let value = g.value(out.loss).item();
    let grads = g.backward(out.loss)?;
    Ok((value, grads, out))
}

/// Optimiser state carried across updates.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    pub config: TrainConfig,
    adam: Adam<T>,
    high_adam: Option<Adam<T>>,
    rng: ChaCha8Rng,
    updates: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(arch: &Architecture<T>, config: TrainConfig) -> Self {
        let lr = T::of(config.learning_rate);
        let n = arch.num_params();
        Self {
            config,
            adam: Adam::new(n, lr),
            high_adam: (arch.kind() == PolicyKind::TempleFix).then(|| Adam::new(n, lr)),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4),
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One PPO update on a batch collected with `params`.
    pub fn update(
        &mut self,
        arch: &Architecture<T>,
        params: &mut ParameterVector<T>,
        batch: &TrajectoryBatch<T>,
    ) -> Result<UpdateStats, PpoError> {
        batch.validate().map_err(PpoError::Batch)?;
        let cfg = self.config;
        let coefs = cfg.coefs::<T>();
        let (adv, ret) = batch_advantages(batch, T::of(cfg.gamma), T::of(cfg.lambda));
        let adv = normalize(&adv);
        let recurrent = arch.kind() == PolicyKind::Temple;
        let (unroll, per_mb) = if recurrent {
            (cfg.unroll_length, cfg.minibatch_size)
        } else {
            (1, cfg.minibatch_size * cfg.unroll_length)
        };
        let windows = segment_windows(&batch.dones, batch.num_envs, batch.steps_per_env, unroll);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut stats = UpdateStats::default();
        let max_norm = T::of(cfg.max_grad_norm);

        for epoch in 0..cfg.epochs_per_update {
            order.shuffle(&mut self.rng);
            for (k, chunk) in order.chunks(per_mb).enumerate() {
                let mb: Vec<Window> = chunk.iter().map(|&i| windows[i]).collect();
                let (loss, mut grads, out) = loss_and_gradient(arch, params, batch, &mb, &adv, &ret, &coefs)?;
                if epoch == 0 && k == 0 && out.max_log_prob_drift > CONSISTENCY_TOLERANCE {
                    return Err(PpoError::StaleBatch {
                        drift: out.max_log_prob_drift,
                    });
                }
                if !loss.is_finite() {
                    return Err(PpoError::NonFinite { what: "loss", epoch });
                }
                if !grads.all_finite() {
                    return Err(PpoError::NonFinite { what: "gradient", epoch });
                }
                let norm = clip_grad_norm(&mut grads, max_norm);
                self.adam.step(params, &grads);
                stats.policy_loss += out.policy_loss;
                stats.value_loss += out.value_loss;
                stats.entropy += out.entropy;
                stats.clip_frac += out.clip_frac;
                stats.approx_kl += out.approx_kl;
                stats.grad_norm += norm.as_f64();
                stats.minibatches += 1;
            }
        }
        let m = stats.minibatches.max(1) as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.entropy /= m;
        stats.clip_frac /= m;
        stats.approx_kl /= m;
        stats.grad_norm /= m;

        if let (Some(high), Some(adam)) = (&batch.high, self.high_adam.as_mut()) {
            let samples = HighSamples::from_batch(high, T::of(cfg.gamma), T::of(cfg.lambda));
            if !samples.is_empty() {
                let hadv = normalize(&samples.advantages);
                let mut order: Vec<usize> = (0..samples.len()).collect();
                let (mut pl, mut vl, mut count) = (0.0, 0.0, 0usize);
                for epoch in 0..cfg.epochs_per_update {
                    order.shuffle(&mut self.rng);
                    for (k, rows) in order.chunks(cfg.minibatch_size).enumerate() {
                        let mut g = Graph::new(&*params);
                        let out = high_level_loss(arch, &mut g, &samples, &hadv, rows, &coefs)?;
                        if epoch == 0 && k == 0 && out.max_log_prob_drift > CONSISTENCY_TOLERANCE {
                            return Err(PpoError::StaleBatch {
                                drift: out.max_log_prob_drift,
                            });
                        }
                        if !g.value(out.loss).item().is_finite() {
                            return Err(PpoError::NonFinite { what: "high-level loss", epoch });
                        }
                        let mut grads = g.backward(out.loss)?;
                        if !grads.all_finite() {
                            return Err(PpoError::NonFinite { what: "high-level gradient", epoch });
                        }
                        clip_grad_norm(&mut grads, max_norm);
                        adam.step(params, &grads);
                        pl += out.policy_loss;
                        vl += out.value_loss;
                        count += 1;
                    }
                }
                stats.high_policy_loss = Some(pl / count as f64);
                stats.high_value_loss = Some(vl / count as f64);
            }
        }
        self.updates += 1;
        Ok(stats)
    }
}
