//! Bellman targets and uncertainty penalties over batches of transitions.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Actor, PenaltyConfig, Strategy};
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::gaussmm::mm_forward_batch;
use crate::nn::{hcat, MlpParams};

/// Column-major view of a batch of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub next_means: Array2<f64>,
    pub next_vars: Array2<f64>,
    pub reward_vars: Array1<f64>,
    pub dones: Array1<f64>,
}

impl TransitionBatch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Result<Self> {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (n, ds, da) = (items.len(), first.state.len(), first.action.len());
        let mut b = Self {
            states: Array2::zeros((n, ds)),
            actions: Array2::zeros((n, da)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, ds)),
            next_means: Array2::zeros((n, ds)),
            next_vars: Array2::zeros((n, ds)),
            reward_vars: Array1::zeros(n),
            dones: Array1::zeros(n),
        };
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != ds || t.action.len() != da || t.next_state.len() != ds {
                return Err(Error::dim(format!("transition {i} differs in width from the first")));
            }
            for j in 0..ds {
                b.states[[i, j]] = t.state[j];
                b.next_states[[i, j]] = t.next_state[j];
                b.next_means[[i, j]] = t.next_mean[j];
                b.next_vars[[i, j]] = t.next_var[j];
            }
            for j in 0..da {
                b.actions[[i, j]] = t.action[j];
            }
            b.rewards[i] = t.reward;
            b.reward_vars[i] = t.reward_var;
            b.dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn row_is_certain(&self, i: usize) -> bool {
        self.reward_vars[i] == 0.0 && self.next_vars.row(i).iter().all(|&v| v == 0.0)
    }
}

/// How the next action enters a bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionChoice {
    /// Reparameterized policy draw.
    Sample,
    /// Deterministic `tanh(μ)`.
    Mode,
}

fn next_actions(actor: &Actor, states: ArrayView2<f64>, choice: ActionChoice, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
    match choice {
        ActionChoice::Sample => Ok(actor.sample(states, rng)?.actions),
        ActionChoice::Mode => actor.mode(states),
    }
}

/// Row-wise minimum of the critics' Q-values.
pub fn bootstrap_min(critics: &[MlpParams], states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
    let x = hcat(states, actions);
    let mut out: Option<Array1<f64>> = None;
    for c in critics {
        let q = c.forward_batch(x.view())?.column(0).to_owned();
        out = Some(match out {
            None => q,
            Some(m) => ndarray::Zip::from(&m).and(&q).map_collect(|&a, &b| a.min(b)),
        });
    }
    out.ok_or_else(|| Error::InvalidArgument("no critics given".into()))
}

/// `r + γ(1 − done)·min_i Q_i(s′, a′)` at the realized next state.
pub fn sample_bellman(
    batch: &TransitionBatch,
    critics: &[MlpParams],
    actor: &Actor,
    choice: ActionChoice,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Array1<f64>> {
    let a = next_actions(actor, batch.next_states.view(), choice, rng)?;
    let q = bootstrap_min(critics, batch.next_states.view(), a.view())?;
    Ok(&batch.rewards + &(gamma * (1.0 - &batch.dones) * q))
}

/// Largest per-dimension predictive standard deviation of the next state.
pub fn penalty_mopo(batch: &TransitionBatch) -> Array1<f64> {
    batch
        .next_vars
        .map_axis(Axis(1), |row| row.iter().fold(0.0f64, |m, &v| m.max(v.sqrt())))
}

/// Sample standard deviation of `n` Bellman targets whose next states are
/// drawn from the stored predictive Gaussian. Each draw is scored with the
/// policy mode, so certain transitions get exactly zero.
pub fn penalty_mobile(
    batch: &TransitionBatch,
    critics: &[MlpParams],
    actor: &Actor,
    gamma: f64,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Array1<f64>> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let (rows, ds) = batch.next_means.dim();
    let uncertain: Vec<usize> = (0..rows).filter(|&i| !batch.row_is_certain(i)).collect();
    let mut penalty = Array1::zeros(rows);
    if uncertain.is_empty() {
        return Ok(penalty);
    }
    let mut draws = Array2::zeros((uncertain.len() * n, ds));
    for (u, &i) in uncertain.iter().enumerate() {
        for k in 0..n {
            for j in 0..ds {
                let z: f64 = rng.sample(StandardNormal);
                draws[[u * n + k, j]] = batch.next_means[[i, j]] + batch.next_vars[[i, j]].sqrt() * z;
            }
        }
    }
    let a = actor.mode(draws.view())?;
    let q = bootstrap_min(critics, draws.view(), a.view())?;
    for (u, &i) in uncertain.iter().enumerate() {
        let scale = gamma * (1.0 - batch.dones[i]);
        let targets: Vec<f64> = (0..n).map(|k| batch.rewards[i] + scale * q[u * n + k]).collect();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        penalty[i] = var.sqrt();
    }
    Ok(penalty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomboTarget {
    pub target: Array1<f64>,
    /// Unpenalized moment-matched target minus `target`.
    pub penalty: Array1<f64>,
}

/// `r + (1 − done)·min_i(γμ_i − βγσ_i) − β√var_r`, where `(μ_i, σ_i²)` is the
/// moment-matched output of critic `i` on the belief `N(s′_mean, var_s′)`
/// joined with a point mass at the policy mode.
pub fn target_mombo(
    batch: &TransitionBatch,
    critics: &[MlpParams],
    actor: &Actor,
    gamma: f64,
    beta: f64,
) -> Result<MomboTarget> {
    if critics.is_empty() {
        return Err(Error::InvalidArgument("no critics given".into()));
    }
    let a = actor.mode(batch.next_means.view())?;
    let means = hcat(batch.next_means.view(), a.view());
    let vars = hcat(batch.next_vars.view(), Array2::zeros(a.dim()).view());
    let rows = batch.len();
    let mut lcb = Array1::from_elem(rows, f64::INFINITY);
    let mut best_mean = Array1::from_elem(rows, f64::INFINITY);
    for c in critics {
        let (m, v) = mm_forward_batch(c, means.view(), vars.view())?;
        for i in 0..rows {
            let (mu, sigma) = (m[[i, 0]], v[[i, 0]].sqrt());
            lcb[i] = lcb[i].min(gamma * mu - beta * gamma * sigma);
            best_mean[i] = best_mean[i].min(gamma * mu);
        }
    }
    let keep = 1.0 - &batch.dones;
    let target = &batch.rewards + &(&keep * &lcb) - &(beta * batch.reward_vars.mapv(f64::sqrt));
    let plain = &batch.rewards + &(&keep * &best_mean);
    let penalty = &plain - &target;
    Ok(MomboTarget { target, penalty })
}

/// Strategy-specific pessimistic target and the penalty it subtracted.
pub fn pessimistic_targets(
    batch: &TransitionBatch,
    critics: &[MlpParams],
    actor: &Actor,
    cfg: &PenaltyConfig,
    rng: &mut dyn RngCore,
) -> Result<(Array1<f64>, Array1<f64>)> {
    match cfg.strategy {
        Strategy::Mombo => {
            let t = target_mombo(batch, critics, actor, cfg.gamma, cfg.beta)?;
            Ok((t.target, t.penalty))
        }
        Strategy::Mopo | Strategy::Mobile => {
            let base = sample_bellman(batch, critics, actor, ActionChoice::Sample, cfg.gamma, rng)?;
            let u = if cfg.strategy == Strategy::Mopo {
                penalty_mopo(batch)
            } else {
                penalty_mobile(batch, critics, actor, cfg.gamma, cfg.samples, rng)?
            };
            let penalty = cfg.beta * &u;
            Ok((base - &penalty, penalty))
        }
    }
}
