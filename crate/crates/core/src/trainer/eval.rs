use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{EpisodeTrace, TraceStep};
use crate::autodiff::ParameterVector;
use crate::env::{Action, EnvConfig, FetchTheKey, OracleActor};
use crate::policy::{ActMode, AgentCarry, Architecture, PolicyKind};
use crate::scalar::Scalar;

use super::TrainError;

/// Action-noise stream for episode `index` of an evaluation seeded with `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

/// Layout seeds of the episodes of an evaluation seeded with `seed`.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Plays one episode on the layout drawn from `episode_seed` and records every step.
pub fn run_episode<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    env_config: &EnvConfig,
    episode_seed: u64,
    rng: &mut ChaCha8Rng,
    mode: ActMode,
) -> Result<EpisodeTrace, TrainError> {
    let d = arch.skill_dim();
    let mut env = FetchTheKey::new(*env_config)?;
    let mut obs = env.reset(episode_seed);
    let mut carry = [AgentCarry::<T>::initial(d)];
    let mut steps = Vec::new();
    let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    loop {
        let consumed = carry[0].c_prev.as_f64();
        let pos = env.state().agent;
        let (action, out) = arch
            .act_batch(params, &[&obs], &mut carry, std::slice::from_mut(rng), mode)?
            .pop()
            .expect("one row");
        // the fixed-interval policy switches fully on refresh steps and never otherwise
        let c = match arch.kind() {
            PolicyKind::Temple => consumed,
            PolicyKind::TempleFix => {
                if out.skill.is_some() {
                    1.0
                } else {
                    0.0
                }
            }
            PolicyKind::Flat => 0.0,
        };
        let step = env.step(Action::from_index(action).expect("policy emits 0..4"))?;
        steps.push(TraceStep {
            t: steps.len() as u32,
            h: f(&out.h_used),
            c,
            row: pos.row,
            col: pos.col,
            action,
            reward: step.reward,
            h_hat: f(&out.h_hat),
            gate: out.gate.as_f64(),
        });
        if step.done {
            break;
        }
        obs = step.observation;
    }
    Ok(EpisodeTrace { skill_dim: d, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub mode: ActMode,
    pub keep_traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            mode: ActMode::Sample,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
    pub lengths: Vec<u32>,
    #[serde(skip)]
    pub traces: Vec<EpisodeTrace>,
}

fn summarize(returns: Vec<f64>, lengths: Vec<u32>, traces: Vec<EpisodeTrace>) -> EvalResult {
    let (mean_return, std_return) = mean_std(&returns);
    EvalResult {
        mean_return,
        std_return,
        returns,
        lengths,
        traces,
    }
}

/// Population mean and standard deviation; `NaN` for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and spread of the return over `episodes` fresh episodes.
pub fn evaluate<T: Scalar>(
    arch: &Architecture<T>,
    params: &ParameterVector<T>,
    env_config: &EnvConfig,
    opts: &EvalOptions,
) -> Result<EvalResult, TrainError> {
    if opts.episodes == 0 {
        return Err(TrainError::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(opts.episodes);
    let mut lengths = Vec::with_capacity(opts.episodes);
    let mut traces = Vec::new();
    for (i, seed) in episode_seeds(opts.seed, opts.episodes).into_iter().enumerate() {
        let mut rng = episode_rng(opts.seed, i as u64);
        let trace = run_episode(arch, params, env_config, seed, &mut rng, opts.mode)?;
        returns.push(trace.total_return());
        lengths.push(trace.len() as u32);
        if opts.keep_traces {
            traces.push(trace);
        }
    }
    Ok(summarize(returns, lengths, traces))
}

/// The BFS-optimal actor on the same episodes [`evaluate`] would use.
pub fn evaluate_oracle(env_config: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut lengths = Vec::with_capacity(episodes);
    for episode_seed in episode_seeds(seed, episodes) {
        let mut env = FetchTheKey::new(*env_config)?;
        env.reset(episode_seed);
        let mut ret = 0.0;
        loop {
            let out = env.step(OracleActor.act(&env))?;
            ret += out.reward;
            if out.done {
                break;
            }
        }
        returns.push(ret);
        lengths.push(env.state().steps);
    }
    Ok(summarize(returns, lengths, Vec::new()))
}
