use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, ParameterVector, Tensor};
use crate::env::{Action, EnvConfig, FetchTheKey, Observation};
use crate::policy::{observations_tensor, ActMode, AgentCarry, Architecture, PolicyKind};
use crate::ppo::{HighBatch, HighSegment, TrajectoryBatch};
use crate::scalar::Scalar;

use super::TrainError;

/// Return and length of a finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub length: u32,
    pub keys: u8,
}

struct OpenDecision<T> {
    observation: Observation,
    skill: usize,
    log_prob: T,
    value: T,
    reward: T,
    duration: u32,
}

/// One environment with its own layout and action random streams, so a slot
/// behaves the same whichever worker steps it.
pub struct EnvSlot<T> {
    env: FetchTheKey,
    obs: Observation,
    carry: AgentCarry<T>,
    act_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    ep_return: f64,
    open: Option<OpenDecision<T>>,
}

/// Environments stepped together during collection; episodes continue across rollouts.
pub struct EnvPool<T> {
    slots: Vec<EnvSlot<T>>,
    skill_dim: usize,
}

impl<T: Scalar> EnvPool<T> {
    pub fn new(config: EnvConfig, num_envs: usize, seed: u64, skill_dim: usize) -> Result<Self, TrainError> {
        let base = seed ^ config.seed.rotate_left(32);
        let slots = (0..num_envs as u64)
            .map(|e| {
                let mut reset_rng = ChaCha8Rng::seed_from_u64(base);
                reset_rng.set_stream(2 * e);
                let mut act_rng = ChaCha8Rng::seed_from_u64(base);
                act_rng.set_stream(2 * e + 1);
                let mut env = FetchTheKey::new(config)?;
                let obs = env.reset(reset_rng.gen());
                Ok(EnvSlot {
                    env,
                    obs,
                    carry: AgentCarry::initial(skill_dim),
                    act_rng,
                    reset_rng,
                    ep_return: 0.0,
                    open: None,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(Self { slots, skill_dim })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Default)]
struct EnvTrack<T> {
    observations: Vec<Observation>,
    actions: Vec<usize>,
    rewards: Vec<T>,
    log_probs: Vec<T>,
    values: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    h_used: Vec<T>,
    gates: Vec<T>,
    dones: Vec<bool>,
    bootstrap: T,
    high: HighSegment<T>,
    episodes: Vec<EpisodeSummary>,
}

fn close<T: Scalar>(seg: &mut HighSegment<T>, d: OpenDecision<T>, done: bool) {
    seg.observations.push(d.observation);
    seg.skills.push(d.skill);
    seg.log_probs.push(d.log_prob);
    seg.values.push(d.value);
    seg.rewards.push(d.reward);
    seg.dones.push(done);
    seg.durations.push(d.duration);
}

/// Critic value of each state under its carry; consumes no randomness.
pub fn state_values<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    obs: &[&Observation],
    carries: &[AgentCarry<T>],
) -> Result<Vec<T>, AutodiffError> {
    let mut g = Graph::new(params);
    let x = g.constant(observations_tensor(obs));
    let n = obs.len();
    let value = match arch.kind() {
        PolicyKind::Flat => arch.flat_forward(&mut g, x)?.1,
        kind => {
            let d = arch.skill_dim();
            let h = g.constant(Tensor::from_vec(
                n,
                d,
                carries.iter().flat_map(|c| c.h_prev.iter().copied()).collect(),
            )?);
            if kind == PolicyKind::Temple {
                let c = g.constant(Tensor::column(&carries.iter().map(|c| c.c_prev).collect::<Vec<_>>()));
                arch.temple_step(&mut g, x, h, c)?.sub.value
            } else {
                arch.sub_forward(&mut g, x, h)?.value
            }
        }
    };
    Ok(g.value(value).data().to_vec())
}

/// High-level critic of the fixed-interval baseline.
pub fn high_values<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    obs: &[&Observation],
) -> Result<Vec<T>, AutodiffError> {
    let mut g = Graph::new(params);
    let x = g.constant(observations_tensor(obs));
    let f = arch.high_features(&mut g, x)?;
    let v = arch.high_value_from(&mut g, f)?;
    Ok(g.value(v).data().to_vec())
}

fn collect_chunk<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    slots: &mut [EnvSlot<T>],
    steps: usize,
    skill_dim: usize,
) -> Result<Vec<EnvTrack<T>>, TrainError> {
    let fixed = arch.kind() == PolicyKind::TempleFix;
    let mut carries: Vec<AgentCarry<T>> = slots.iter().map(|s| s.carry.clone()).collect();
    let mut rngs: Vec<ChaCha8Rng> = slots.iter().map(|s| s.act_rng.clone()).collect();
    let mut tracks: Vec<EnvTrack<T>> = (0..slots.len()).map(|_| EnvTrack::default()).collect();

    for _ in 0..steps {
        for (tr, c) in tracks.iter_mut().zip(&carries) {
            tr.h_prev.extend_from_slice(&c.h_prev);
            tr.c_prev.push(c.c_prev);
        }
        let outs = {
            let obs: Vec<&Observation> = slots.iter().map(|s| &s.obs).collect();
            arch.act_batch(params, &obs, &mut carries, &mut rngs, ActMode::Sample)?
        };
        for (i, (action, out)) in outs.into_iter().enumerate() {
            let slot = &mut slots[i];
            let tr = &mut tracks[i];
            if let Some(choice) = out.skill.filter(|_| fixed) {
                if let Some(prev) = slot.open.take() {
                    close(&mut tr.high, prev, false);
                }
                slot.open = Some(OpenDecision {
                    observation: slot.obs,
                    skill: choice.skill,
                    log_prob: choice.log_prob,
                    value: choice.value,
                    reward: T::zero(),
                    duration: 0,
                });
            }
            let step = slot.env.step(Action::from_index(action).expect("policy emits 0..4"))?;
            let reward = T::of(step.reward);
            slot.ep_return += step.reward;
            if let Some(open) = slot.open.as_mut() {
                open.reward = open.reward + reward;
                open.duration += 1;
            }
            tr.observations.push(slot.obs);
            tr.actions.push(action);
            tr.rewards.push(reward);
            tr.log_probs.push(out.log_prob);
            tr.values.push(out.value);
            tr.h_used.extend_from_slice(&out.h_used);
            tr.gates.push(out.gate);
            tr.dones.push(step.done);
            if step.done {
                if let Some(open) = slot.open.take() {
                    close(&mut tr.high, open, true);
                }
                tr.episodes.push(EpisodeSummary {
                    ret: slot.ep_return,
                    length: slot.env.state().steps,
                    keys: slot.env.state().keys_collected,
                });
                slot.ep_return = 0.0;
                slot.obs = slot.env.reset(slot.reset_rng.gen());
                carries[i] = AgentCarry::initial(skill_dim);
            } else {
                slot.obs = step.observation;
            }
        }
    }

    let obs: Vec<&Observation> = slots.iter().map(|s| &s.obs).collect();
    let boot = state_values(arch, params, &obs, &carries)?;
    let high_boot = if fixed {
        high_values(arch, params, &obs)?
    } else {
        vec![T::zero(); slots.len()]
    };
    for (i, slot) in slots.iter_mut().enumerate() {
        let tr = &mut tracks[i];
        tr.bootstrap = boot[i];
        // an interval still running at the cut is closed and bootstrapped here
        if let Some(open) = slot.open.take() {
            close(&mut tr.high, open, false);
        }
        tr.high.bootstrap = high_boot[i];
        slot.carry = carries[i].clone();
        slot.act_rng = rngs[i].clone();
    }
    Ok(tracks)
}

/// Steps every environment of the pool `steps` times with a frozen parameter snapshot.
///
/// Environments are split into contiguous groups, one per worker thread; the result
/// is independent of `workers`.
pub fn collect_rollout<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    pool: &mut EnvPool<T>,
    steps: usize,
    workers: usize,
) -> Result<(TrajectoryBatch<T>, Vec<EpisodeSummary>), TrainError> {
    let d = pool.skill_dim;
    let n = pool.slots.len();
    let per = n.div_ceil(workers.max(1));
    let tracks: Vec<EnvTrack<T>> = if workers <= 1 || n <= 1 {
        collect_chunk(arch, params, &mut pool.slots, steps, d)?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = pool
                .slots
                .chunks_mut(per)
                .map(|chunk| s.spawn(move || collect_chunk(arch, params, chunk, steps, d)))
                .collect();
            let mut all = Vec::with_capacity(n);
            for h in handles {
                all.extend(h.join().expect("rollout worker panicked")?);
            }
            Ok::<_, TrainError>(all)
        })?
    };

    let mut batch = TrajectoryBatch::with_capacity(n, steps, d);
    let mut episodes = Vec::new();
    let mut high = HighBatch::default();
    for (e, tr) in tracks.into_iter().enumerate() {
        batch.observations.extend(tr.observations);
        batch.actions.extend(tr.actions);
        batch.rewards.extend(tr.rewards);
        batch.log_probs.extend(tr.log_probs);
        batch.values.extend(tr.values);
        batch.h_prev.extend(tr.h_prev);
        batch.c_prev.extend(tr.c_prev);
        batch.h_used.extend(tr.h_used);
        batch.gates.extend(tr.gates);
        batch.dones.extend(tr.dones);
        batch.bootstrap[e] = tr.bootstrap;
        high.segments.push(tr.high);
        episodes.extend(tr.episodes);
    }
    if arch.kind() == PolicyKind::TempleFix {
        batch.high = Some(high);
    }
    Ok((batch, episodes))
}
