//! Tanh-squashed diagonal Gaussian policy.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, MlpParams};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-density of `tanh(U)` at `a` for `U ~ N(μ, e^{2 log σ})`, per dimension
/// summed.
pub fn squashed_log_density(mu: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let u = a.atanh();
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

/// Reparameterized draws together with what the actor gradient needs.
#[derive(Debug, Clone)]
pub struct ActorSample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub(crate) cache: ForwardCache,
    pub(crate) eps: Array2<f64>,
    pub(crate) log_std: Array2<f64>,
    /// False where the raw log-std was clamped (zero gradient).
    pub(crate) log_std_free: Array2<bool>,
}

/// The network emits `[μ, log σ]` per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: MlpParams,
}

impl Actor {
    pub fn new(net: MlpParams) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::dim("actor output must hold a mean and a log-std per action"));
        }
        Ok(Self { net })
    }

    pub fn init(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut dyn RngCore) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend(hidden);
        sizes.push(2 * action_dim);
        Self {
            net: MlpParams::glorot(&sizes, rng),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    /// Means and clamped log-stds of the pre-squash Gaussian.
    pub fn gaussian(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.net.forward_batch(states)?;
        let d = self.action_dim();
        Ok((
            out.slice(s![.., ..d]).to_owned(),
            out.slice(s![.., d..]).mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)),
        ))
    }

    /// Deterministic action `tanh(μ)`.
    pub fn mode(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.net.forward_batch(states)?;
        Ok(out.slice(s![.., ..self.action_dim()]).mapv(f64::tanh))
    }

    pub fn sample(&self, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<ActorSample> {
        let eps = Array2::from_shape_simple_fn((states.nrows(), self.action_dim()), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        self.sample_with_noise(states, eps)
    }

    /// Reparameterized sample `tanh(μ + σ·eps)` for given standard-normal
    /// noise, one row per state.
    pub fn sample_with_noise(&self, states: ArrayView2<f64>, eps: Array2<f64>) -> Result<ActorSample> {
        let cache = self.net.forward_cached(states)?;
        let d = self.action_dim();
        let out = cache.output();
        let rows = out.nrows();
        if eps.dim() != (rows, d) {
            return Err(Error::dim("noise must have one row per state and one column per action"));
        }
        let raw_log_std = out.slice(s![.., d..]);
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_free = raw_log_std.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let mut actions = Array2::zeros((rows, d));
        let mut log_prob = Array1::zeros(rows);
        for i in 0..rows {
            for j in 0..d {
                let (e, ls) = (eps[[i, j]], log_std[[i, j]]);
                let u = out[[i, j]] + ls.exp() * e;
                actions[[i, j]] = u.tanh();
                log_prob[i] += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
        }
        Ok(ActorSample {
            actions,
            log_prob,
            cache,
            eps,
            log_std,
            log_std_free,
        })
    }

    /// Parameter gradient of `Σ_i [c_logp_i · log π_i + Σ_j c_a_ij · a_ij]`
    /// through the reparameterized sample.
    pub fn sample_gradient(
        &self,
        sample: &ActorSample,
        coef_log_prob: &Array1<f64>,
        coef_action: &Array2<f64>,
    ) -> Result<MlpParams> {
        let d = self.action_dim();
        let rows = sample.actions.nrows();
        let mut upstream = Array2::zeros((rows, 2 * d));
        for i in 0..rows {
            for j in 0..d {
                let a = sample.actions[[i, j]];
                let std = sample.log_std[[i, j]].exp();
                let e = sample.eps[[i, j]];
                // d log π / du = 2 tanh(u); d a / du = 1 − a².
                let du = coef_log_prob[i] * 2.0 * a + coef_action[[i, j]] * (1.0 - a * a);
                upstream[[i, j]] = du;
                upstream[[i, d + j]] = if sample.log_std_free[[i, j]] {
                    -coef_log_prob[i] + du * std * e
                } else {
                    0.0
                };
            }
        }
        Ok(self.net.backward_batch(&sample.cache, upstream.view())?.params)
    }
}

/// `ln(1 − tanh²(u)) = 2(ln 2 − u − softplus(−2u))`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

impl Policy for Actor {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("one row");
        self.act_batch(s, rng).row(0).to_vec()
    }

    fn act_batch(&self, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Array2<f64> {
        self.sample(states, rng).expect("state width matches the actor").actions
    }
}

/// Deterministic view of an actor that always plays `tanh(μ)`.
pub struct ModePolicy<'a>(pub &'a Actor);

impl Policy for ModePolicy<'_> {
    fn act(&self, state: &[f64], _: &mut dyn RngCore) -> Vec<f64> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("one row");
        self.0.mode(s).expect("state width matches the actor").row(0).to_vec()
    }

    fn act_batch(&self, states: ArrayView2<f64>, _: &mut dyn RngCore) -> Array2<f64> {
        self.0.mode(states).expect("state width matches the actor")
    }
}
