//! Dyna-style offline training: periodic model rollouts into a bounded
//! synthetic buffer, mixed real/synthetic minibatches, periodic evaluation in
//! the true environment.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{actor_update, critic_update, ModePolicy, PenaltyConfig, SacConfig, SacState, TransitionBatch};
use crate::dynamics::{rollout, EnsembleModel};
use crate::envs::{ToyEnv, Transition};
use crate::error::{Error, Result};
use crate::nn::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Gradient-step budget.
    pub steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub rollout_length: usize,
    pub rollout_batch: usize,
    pub rollout_every: usize,
    /// Number of most recent rollout refreshes kept in the synthetic buffer.
    pub retain: usize,
    /// Stop once an evaluation reaches this normalized return.
    pub stop_at: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            eval_every: 5_000,
            eval_episodes: 10,
            rollout_length: 5,
            rollout_batch: 1_000,
            rollout_every: 1_000,
            retain: 5,
            stop_at: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.steps,
            self.eval_every,
            self.eval_episodes,
            self.rollout_length,
            self.rollout_batch,
            self.rollout_every,
            self.retain,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument("training counts must all be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation checkpoint of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub normalized_return: f64,
    pub loss_critic: f64,
    pub loss_actor: f64,
    pub mean_penalty: f64,
}

/// Synthetic transitions grouped by the refresh that produced them.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    chunks: VecDeque<Vec<Transition>>,
    retain: usize,
}

impl ReplayBuffer {
    pub fn new(retain: usize) -> Self {
        Self {
            chunks: VecDeque::new(),
            retain: retain.max(1),
        }
    }

    /// Adds one refresh and drops the oldest beyond the retention window.
    pub fn push(&mut self, chunk: Vec<Transition>) {
        self.chunks.push_back(chunk);
        while self.chunks.len() > self.retain {
            self.chunks.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform draws with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut dyn RngCore) -> Vec<&'a Transition> {
        let total = self.len();
        if total == 0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let mut i = rng.random_range(0..total);
                for c in &self.chunks {
                    if i < c.len() {
                        return &c[i];
                    }
                    i -= c.len();
                }
                unreachable!("index below total length")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: SacState,
    pub curve: Vec<CurvePoint>,
    pub steps_run: usize,
}

fn evaluate(env: &ToyEnv, state: &SacState, episodes: usize, rng: &mut dyn RngCore) -> Result<(f64, f64, f64)> {
    let policy = ModePolicy(&state.actor);
    let returns: Vec<f64> = (0..episodes).map(|_| env.episode_return(&policy, rng)).collect();
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64).sqrt();
    Ok((mean, std, env.normalized_return(mean)?))
}

pub fn train(
    env: &ToyEnv,
    data: &[Transition],
    model: &EnsembleModel,
    penalty: &PenaltyConfig,
    sac: &SacConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    penalty.validate()?;
    sac.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no offline data".into()));
    }
    let root = RngStream::new(cfg.seed, 0xE7);
    let mut state = SacState::new(env.state_dim(), env.action_dim(), sac.clone(), &mut root.substream(0).rng())?;
    let mut rng = root.substream(1).rng();
    let mut model_rng = root.substream(2).rng();
    let mut synthetic = ReplayBuffer::new(cfg.retain);
    let n_real = ((sac.real_ratio * sac.batch_size as f64).round() as usize).min(sac.batch_size);
    let terminal = |s: &[f64]| env.is_terminal(s);

    let mut curve = Vec::new();
    let (mut sum_c, mut sum_a, mut sum_p, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut steps_run = 0;
    for step in 0..cfg.steps {
        if step % cfg.rollout_every == 0 {
            let starts: Vec<f64> = (0..cfg.rollout_batch)
                .flat_map(|_| data[model_rng.random_range(0..data.len())].state.clone())
                .collect();
            let starts = Array2::from_shape_vec((cfg.rollout_batch, env.state_dim()), starts)
                .map_err(|e| Error::dim(e.to_string()))?;
            synthetic.push(rollout(model, &state.actor, starts.view(), cfg.rollout_length, &terminal, &mut model_rng)?);
        }
        let n_syn = if synthetic.is_empty() { 0 } else { sac.batch_size - n_real };
        let mut items: Vec<&Transition> = (0..sac.batch_size - n_syn)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        items.extend(synthetic.sample(n_syn, &mut rng));
        let batch = TransitionBatch::from_transitions(items)?;
        let c = critic_update(&mut state, &batch, penalty, &mut rng)?;
        let a = actor_update(&mut state, batch.states.view(), &mut rng)?;
        sum_c += c.loss;
        sum_a += a.loss;
        sum_p += c.mean_penalty;
        count += 1;
        steps_run = step + 1;

        if steps_run % cfg.eval_every == 0 || steps_run == cfg.steps {
            let mut eval_rng = root.substream(1000 + curve.len() as u64).rng();
            let (mean, std, normalized) = evaluate(env, &state, cfg.eval_episodes, &mut eval_rng)?;
            let k = count as f64;
            curve.push(CurvePoint {
                step: steps_run,
                eval_return_mean: mean,
                eval_return_std: std,
                normalized_return: normalized,
                loss_critic: sum_c / k,
                loss_actor: sum_a / k,
                mean_penalty: sum_p / k,
            });
            (sum_c, sum_a, sum_p, count) = (0.0, 0.0, 0.0, 0);
            if cfg.stop_at.is_some_and(|t| normalized >= t) {
                break;
            }
        }
    }
    Ok(TrainOutput {
        state,
        curve,
        steps_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: f64) -> Transition {
        Transition::real(vec![x, 0.0], vec![0.0], 0.0, vec![x, 0.0], false)
    }

    #[test]
    fn buffer_keeps_only_recent_refreshes() {
        let mut b = ReplayBuffer::new(2);
        for k in 0..5 {
            b.push((0..10).map(|i| t((k * 10 + i) as f64)).collect());
        }
        assert_eq!(b.len(), 20);
        let mut rng = RngStream::new(0, 0).rng();
        assert!(b.sample(200, &mut rng).iter().all(|x| x.state[0] >= 30.0));
        assert!(ReplayBuffer::new(3).sample(5, &mut rng).is_empty());
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = TrainConfig {
            rollout_length: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
