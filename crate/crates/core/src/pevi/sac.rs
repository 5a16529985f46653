//! Twin-critic soft actor-critic state and its gradient steps.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;

use super::{pessimistic_targets, Actor, PenaltyConfig, SacConfig, TransitionBatch};
use crate::error::{Error, Result};
use crate::nn::{hcat, AdamState, MlpParams, ScalarAdam};

#[derive(Debug, Clone)]
pub struct SacState {
    pub actor: Actor,
    pub critics: Vec<MlpParams>,
    pub targets: Vec<MlpParams>,
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub cfg: SacConfig,
    critic_opt: Vec<AdamState>,
    actor_opt: AdamState,
    alpha_opt: ScalarAdam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    /// Mean squared error averaged over both critics.
    pub loss: f64,
    pub mean_penalty: f64,
    pub mean_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    pub alpha: f64,
    /// Batch estimate of `−E[log π]`.
    pub entropy: f64,
}

impl SacState {
    pub fn new(state_dim: usize, action_dim: usize, cfg: SacConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let actor = Actor::init(state_dim, action_dim, &cfg.actor_hidden, rng);
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&cfg.critic_hidden);
        sizes.push(1);
        let critics: Vec<MlpParams> = (0..2).map(|_| MlpParams::glorot(&sizes, rng)).collect();
        let critic_opt = critics.iter().map(|c| AdamState::new(c, cfg.critic_lr)).collect();
        Ok(Self {
            actor_opt: AdamState::new(&actor.net, cfg.actor_lr),
            alpha_opt: ScalarAdam::new(cfg.alpha_lr),
            log_alpha: cfg.alpha.ln(),
            target_entropy: -(action_dim as f64),
            targets: critics.clone(),
            critic_opt,
            critics,
            actor,
            cfg,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// Regresses both critics onto the shared pessimistic target, then moves the
/// target networks by `τ`. Targets are plain numbers here, so no gradient can
/// reach the target networks.
pub fn critic_update(
    state: &mut SacState,
    batch: &TransitionBatch,
    penalty: &PenaltyConfig,
    rng: &mut dyn RngCore,
) -> Result<CriticStats> {
    let (y, u) = pessimistic_targets(batch, &state.targets, &state.actor, penalty, rng)?;
    let x = hcat(batch.states.view(), batch.actions.view());
    let n = batch.len() as f64;
    let count = state.critics.len() as f64;
    let mut loss = 0.0;
    for (k, (critic, opt)) in state.critics.iter_mut().zip(&mut state.critic_opt).enumerate() {
        let cache = critic.forward_cached(x.view())?;
        let resid = &cache.output().column(0) - &y;
        let l = resid.mapv(|r| r * r).sum() / n;
        if !l.is_finite() {
            return Err(Error::Training(format!("critic {k}: non-finite loss")));
        }
        loss += l / count;
        let upstream = (resid * (2.0 / n)).insert_axis(Axis(1));
        let grads = critic.backward_batch(&cache, upstream.view())?.params;
        opt.step(critic, &grads)?;
    }
    for (t, c) in state.targets.iter_mut().zip(&state.critics) {
        t.soft_update_from(c, state.cfg.tau);
    }
    Ok(CriticStats {
        loss,
        mean_penalty: u.mean().unwrap_or(0.0),
        mean_target: y.mean().unwrap_or(0.0),
    })
}

/// Gradient of `min_k Q_k(s, a)` with respect to `a`, plus the minimum.
fn min_q_action_gradient(critics: &[MlpParams], states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let x = hcat(states, actions);
    let caches = critics.iter().map(|c| c.forward_cached(x.view())).collect::<Result<Vec<_>>>()?;
    let rows = x.nrows();
    let mut best = vec![0usize; rows];
    let mut q = Array1::from_elem(rows, f64::INFINITY);
    for (k, cache) in caches.iter().enumerate() {
        for i in 0..rows {
            let v = cache.output()[[i, 0]];
            if v < q[i] {
                q[i] = v;
                best[i] = k;
            }
        }
    }
    let ds = states.ncols();
    let mut grad = Array2::zeros(actions.dim());
    for (k, (critic, cache)) in critics.iter().zip(&caches).enumerate() {
        let upstream = Array2::from_shape_fn((rows, 1), |(i, _)| if best[i] == k { 1.0 } else { 0.0 });
        let g = critic.input_gradient(cache, upstream.view())?;
        grad += &g.slice(ndarray::s![.., ds..]);
    }
    Ok((q, grad))
}

/// One reparameterized step on `E[α log π(a|s) − min_k Q_k(s, a)]`, followed
/// by the entropy-coefficient step when it is learned.
pub fn actor_update(state: &mut SacState, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<ActorStats> {
    if states.nrows() == 0 {
        return Err(Error::InvalidArgument("actor update on an empty batch".into()));
    }
    let n = states.nrows() as f64;
    let alpha = state.alpha();
    let sample = state.actor.sample(states, rng)?;
    let (q, dq) = min_q_action_gradient(&state.critics, states, sample.actions.view())?;
    let loss = (alpha * &sample.log_prob - &q).sum() / n;
    if !loss.is_finite() {
        return Err(Error::Training("actor: non-finite loss".into()));
    }
    let coef_lp = Array1::from_elem(states.nrows(), alpha / n);
    let coef_a = dq * (-1.0 / n);
    let grads = state.actor.sample_gradient(&sample, &coef_lp, &coef_a)?;
    state.actor_opt.step(&mut state.actor.net, &grads)?;
    let mean_lp = sample.log_prob.sum() / n;
    if state.cfg.learn_alpha {
        let grad = -(mean_lp + state.target_entropy);
        state.alpha_opt.step(&mut state.log_alpha, grad)?;
    }
    Ok(ActorStats {
        loss,
        alpha: state.alpha(),
        entropy: -mean_lp,
    })
}
