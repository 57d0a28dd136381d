use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::policy::{observations_tensor, Architecture, PolicyKind};
use crate::scalar::Scalar;

use super::batch::{HighBatch, TrajectoryBatch, Window};

/// Coefficients of the combined actor-critic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs<T> {
    pub clip_epsilon: T,
    pub value_coef: T,
    pub entropy_coef: T,
}

/// Scalar loss node plus diagnostics read off the forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub loss: NodeId,
    pub steps: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// Largest `|log π_new − log π_old|` over the steps.
    pub max_log_prob_drift: f64,
}

/// `min(r·A, clip(r, 1 − ε, 1 + ε)·A)` with `r = exp(log_prob_new − log_prob_old)`.
pub fn clipped_objective<T: Scalar>(log_prob_new: T, log_prob_old: T, advantage: T, clip_epsilon: T) -> T {
    let r = (log_prob_new - log_prob_old).exp();
    let clipped = r.max(T::one() - clip_epsilon).min(T::one() + clip_epsilon);
    (r * advantage).min(clipped * advantage)
}

struct Accum {
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: usize,
    kl: f64,
    drift: f64,
    steps: usize,
}

/// Per-step loss terms on a `rows × 1` batch, masked and summed into a scalar node.
#[allow(clippy::too_many_arguments)]
fn step_terms<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: NodeId,
    value: NodeId,
    actions: &[usize],
    old_log_probs: &[T],
    advantages: &[T],
    returns: &[T],
    mask: &[T],
    coefs: &LossCoefs<T>,
    acc: &mut Accum,
) -> Result<NodeId, AutodiffError> {
    let eps = coefs.clip_epsilon;
    let logp_all = g.log_softmax(logits);
    let probs = g.softmax(logits);
    let logp = g.pick(logp_all, actions)?;
    let old = g.constant(Tensor::column(old_log_probs));
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let adv = g.constant(Tensor::column(advantages));
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, T::one() - eps, T::one() + eps);
    let s2 = g.mul(clipped, adv)?;
    let surr = g.minimum(s1, s2)?;
    let ret = g.constant(Tensor::column(returns));
    let err = g.sub(value, ret)?;
    let vl = g.square(err);
    let plogp = g.mul(probs, logp_all)?;
    let neg_ent = g.row_sum(plogp);

    for (i, &m) in mask.iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        let d = g.value(diff).get(i, 0).as_f64();
        let r = g.value(ratio).get(i, 0).as_f64();
        acc.policy -= g.value(surr).get(i, 0).as_f64();
        acc.value += g.value(vl).get(i, 0).as_f64();
        acc.entropy -= g.value(neg_ent).get(i, 0).as_f64();
        acc.clipped += usize::from((r - 1.0).abs() > eps.as_f64());
        acc.kl += (r - 1.0) - d;
        acc.drift = acc.drift.max(d.abs());
        acc.steps += 1;
    }

    let pl = g.affine(surr, -T::one(), T::zero());
    let vl = g.affine(vl, coefs.value_coef, T::zero());
    let el = g.affine(neg_ent, coefs.entropy_coef, T::zero());
    let total = g.add(pl, vl)?;
    let total = g.add(total, el)?;
    let mask = g.constant(Tensor::column(mask));
    let masked = g.mul(total, mask)?;
    Ok(g.sum(masked))
}

fn finish<T: Scalar>(g: &mut Graph<'_, T>, parts: Vec<NodeId>, acc: Accum) -> Result<LossOutput, AutodiffError> {
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    let n = acc.steps.max(1) as f64;
    let loss = g.affine(total, T::of(1.0 / n), T::zero());
    Ok(LossOutput {
        loss,
        steps: acc.steps,
        policy_loss: acc.policy / n,
        value_loss: acc.value / n,
        entropy: acc.entropy / n,
        clip_frac: acc.clipped as f64 / n,
        approx_kl: acc.kl / n,
        max_log_prob_drift: acc.drift,
    })
}

/// Mean PPO loss over a set of windows, re-running the policy through each window.
///
/// For the gated policy, step `j` of a window feeds the internal action and gate
/// produced at step `j − 1` back into the switch, so gradients flow through the whole
/// window; the carry entering the window is the stored rollout value and is treated
/// as a constant. Shorter windows are padded and masked out.
pub fn windowed_loss<T: Scalar>(
    arch: &Architecture<T>,
    g: &mut Graph<'_, T>,
    batch: &TrajectoryBatch<T>,
    windows: &[Window],
    advantages: &[T],
    returns: &[T],
    coefs: &LossCoefs<T>,
) -> Result<LossOutput, AutodiffError> {
    assert!(!windows.is_empty(), "loss over an empty minibatch");
    let d = batch.skill_dim;
    let w = windows.len();
    let longest = windows.iter().map(|w| w.len).max().unwrap_or(1);
    let mut acc = Accum {
        policy: 0.0,
        value: 0.0,
        entropy: 0.0,
        clipped: 0,
        kl: 0.0,
        drift: 0.0,
        steps: 0,
    };

    let (mut h_prev, mut c_prev) = if arch.kind() == PolicyKind::Temple {
        let h: Vec<T> = windows
            .iter()
            .flat_map(|win| batch.h_prev_row(win.start).iter().copied())
            .collect();
        let c: Vec<T> = windows.iter().map(|win| batch.c_prev[win.start]).collect();
        (
            Some(g.constant(Tensor::from_vec(w, d, h)?)),
            Some(g.constant(Tensor::column(&c))),
        )
    } else {
        (None, None)
    };

    let mut parts = Vec::with_capacity(longest);
    for j in 0..longest {
        // padded rows repeat the window's last step and are masked out
        let idx: Vec<usize> = windows.iter().map(|win| win.start + j.min(win.len - 1)).collect();
        let mask: Vec<T> = windows
            .iter()
            .map(|win| if j < win.len { T::one() } else { T::zero() })
            .collect();
        let obs: Vec<_> = idx.iter().map(|&i| &batch.observations[i]).collect();
        let x = g.constant(observations_tensor(&obs));
        let (logits, value) = match arch.kind() {
            PolicyKind::Temple => {
                let step = arch.temple_step(g, x, h_prev.expect("carry"), c_prev.expect("carry"))?;
                h_prev = Some(step.h);
                c_prev = Some(step.sub.gate);
                (step.sub.logits, step.sub.value)
            }
            PolicyKind::TempleFix => {
                let h: Vec<T> = idx.iter().flat_map(|&i| batch.h_used_row(i).iter().copied()).collect();
                let h = g.constant(Tensor::from_vec(w, d, h)?);
                let sub = arch.sub_forward(g, x, h)?;
                (sub.logits, sub.value)
            }
            PolicyKind::Flat => arch.flat_forward(g, x)?,
        };
        let pick = |v: &[T]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
        parts.push(step_terms(
            g,
            logits,
            value,
            &actions,
            &pick(&batch.log_probs),
            &pick(advantages),
            &pick(returns),
            &mask,
            coefs,
            &mut acc,
        )?);
    }
    finish(g, parts, acc)
}

/// Flattened skill decisions of the fixed-interval baseline.
#[derive(Debug, Clone, Default)]
pub struct HighSamples<T> {
    pub observations: Vec<crate::env::Observation>,
    pub skills: Vec<usize>,
    pub log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Scalar> HighSamples<T> {
    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// GAE over skill decisions; a decision lasting `n` steps is discounted by `γⁿ`.
    pub fn from_batch(high: &HighBatch<T>, gamma: T, lambda: T) -> Self {
        let mut out = Self::default();
        for seg in &high.segments {
            let discounts: Vec<T> = seg.durations.iter().map(|&n| gamma.powi(n as i32)).collect();
            let (adv, ret) = super::gae::compute_gae_with_discounts(
                &seg.rewards,
                &seg.values,
                &seg.dones,
                seg.bootstrap,
                &discounts,
                lambda,
            );
            out.observations.extend(seg.observations.iter().cloned());
            out.skills.extend_from_slice(&seg.skills);
            out.log_probs.extend_from_slice(&seg.log_probs);
            out.advantages.extend(adv);
            out.returns.extend(ret);
        }
        out
    }
}

/// PPO loss of the fixed-interval baseline's high level on selected decisions.
pub fn high_level_loss<T: Scalar>(
    arch: &Architecture<T>,
    g: &mut Graph<'_, T>,
    samples: &HighSamples<T>,
    advantages: &[T],
    rows: &[usize],
    coefs: &LossCoefs<T>,
) -> Result<LossOutput, AutodiffError> {
    let mut acc = Accum {
        policy: 0.0,
        value: 0.0,
        entropy: 0.0,
        clipped: 0,
        kl: 0.0,
        drift: 0.0,
        steps: 0,
    };
    let obs: Vec<_> = rows.iter().map(|&i| &samples.observations[i]).collect();
    let x = g.constant(observations_tensor(&obs));
    let feat = arch.high_features(g, x)?;
    let logits = arch.high_logits_from(g, feat)?;
    let value = arch.high_value_from(g, feat)?;
    let pick = |v: &[T]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let skills: Vec<usize> = rows.iter().map(|&i| samples.skills[i]).collect();
    let part = step_terms(
        g,
        logits,
        value,
        &skills,
        &pick(&samples.log_probs),
        &pick(advantages),
        &pick(&samples.returns),
        &vec![T::one(); rows.len()],
        coefs,
        &mut acc,
    )?;
    finish(g, vec![part], acc)
}
