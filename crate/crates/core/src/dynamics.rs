//! Heteroscedastic Gaussian ensemble over state deltas and rewards, with
//! validation-based elite selection and short model rollouts.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{Policy, Transition};
use crate::error::{Error, Result};
use crate::gaussmm::DiagonalGaussian;
use crate::nn::{checkpoint, hcat, AdamState, MlpParams, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub elites: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// L2 coefficient per layer, input layer first.
    pub weight_decay: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before a member stops.
    pub patience: usize,
    pub holdout_ratio: f64,
    pub max_holdout: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            elites: 3,
            hidden: vec![64, 64],
            lr: 1e-3,
            weight_decay: vec![2.5e-5, 5e-5, 7.5e-5],
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            holdout_ratio: 0.1,
            max_holdout: 2000,
            logvar_min: -10.0,
            logvar_max: 0.5,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 || self.elites == 0 || self.elites > self.members {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= elites ({}) <= members ({})",
                self.elites, self.members
            )));
        }
        if self.weight_decay.len() != self.hidden.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "weight_decay needs {} entries, one per layer",
                self.hidden.len() + 1
            )));
        }
        if self.logvar_min >= self.logvar_max {
            return Err(Error::InvalidArgument("logvar_min must be below logvar_max".into()));
        }
        if self.batch_size == 0 || !(self.holdout_ratio > 0.0 && self.holdout_ratio < 1.0) {
            return Err(Error::InvalidArgument("batch size and holdout ratio out of range".into()));
        }
        Ok(())
    }
}

/// Per-column affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with (numerically) zero spread keep unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty data");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s < 1e-12 { 1.0 } else { s });
        Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.std).all(|v| v.is_finite())
    }
}

/// Negative log-likelihood of a residual under `N(0, exp(logvar))`.
pub fn gaussian_nll(residual: f64, logvar: f64) -> f64 {
    0.5 * (residual * residual * (-logvar).exp() + logvar + (2.0 * std::f64::consts::PI).ln())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth clamp of a raw log-variance into `(lo, hi)` and its derivative.
fn soft_clamp(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let upper = hi - softplus(hi - raw);
    let value = (lo + softplus(upper - lo)).clamp(lo, hi);
    (value, sigmoid(hi - raw) * sigmoid(upper - lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    config: EnsembleConfig,
    state_dim: usize,
    action_dim: usize,
    elites: Vec<usize>,
    validation_nll: Vec<f64>,
    input_norm: Standardizer,
    target_norm: Standardizer,
}

/// Trained ensemble. Each member maps standardized `(s, a)` to the
/// standardized mean of `(Δs, r)` followed by raw log-variances in original
/// units.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<MlpParams>,
    meta: Sidecar,
}

impl EnsembleModel {
    pub fn from_parts(
        members: Vec<MlpParams>,
        elites: Vec<usize>,
        input_norm: Standardizer,
        target_norm: Standardizer,
        config: EnsembleConfig,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let out = 2 * (state_dim + 1);
        for (i, m) in members.iter().enumerate() {
            if m.input_dim() != state_dim + action_dim || m.output_dim() != out {
                return Err(Error::dim(format!("member {i} has the wrong input or output width")));
            }
        }
        if elites.is_empty() || elites.iter().any(|&e| e >= members.len()) {
            return Err(Error::InvalidArgument("elite indices out of range".into()));
        }
        if input_norm.mean.len() != state_dim + action_dim || target_norm.mean.len() != state_dim + 1 {
            return Err(Error::dim("normalization statistics have the wrong width"));
        }
        if !input_norm.is_finite() || !target_norm.is_finite() {
            return Err(Error::InvalidArgument("normalization statistics must be finite".into()));
        }
        let validation_nll = vec![f64::NAN; members.len()];
        Ok(Self {
            members,
            meta: Sidecar {
                config,
                state_dim,
                action_dim,
                elites,
                validation_nll,
                input_norm,
                target_norm,
            },
        })
    }

    pub fn elites(&self) -> &[usize] {
        &self.meta.elites
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn validation_nll(&self) -> &[f64] {
        &self.meta.validation_nll
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.meta.config
    }

    pub fn state_dim(&self) -> usize {
        self.meta.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.meta.action_dim
    }

    /// Predictive Gaussian over `(s′, r)` from elite `member`.
    pub fn predict(&self, member: usize, state: &[f64], action: &[f64]) -> Result<DiagonalGaussian> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::dim(e.to_string()))?;
        let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| Error::dim(e.to_string()))?;
        let (mean, var) = self.predict_batch(member, s, a)?;
        DiagonalGaussian::new(mean.row(0).to_owned(), var.row(0).to_owned())
    }

    /// Row-wise predictive means and variances over `(s′, r)`.
    pub fn predict_batch(
        &self,
        member: usize,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if !self.meta.elites.contains(&member) {
            return Err(Error::InvalidArgument(format!(
                "member {member} is not an elite (elites: {:?})",
                self.meta.elites
            )));
        }
        if states.ncols() != self.meta.state_dim || actions.ncols() != self.meta.action_dim {
            return Err(Error::dim("state or action width does not match the model"));
        }
        let out = self.raw_forward(member, states, actions)?;
        let d = self.meta.state_dim + 1;
        let cfg = &self.meta.config;
        let tn = &self.meta.target_norm;
        let mut mean = Array2::zeros((states.nrows(), d));
        let mut var = Array2::zeros((states.nrows(), d));
        for i in 0..states.nrows() {
            for j in 0..d {
                let m = out[[i, j]] * tn.std[j] + tn.mean[j];
                mean[[i, j]] = if j < self.meta.state_dim { states[[i, j]] + m } else { m };
                var[[i, j]] = soft_clamp(out[[i, d + j]], cfg.logvar_min, cfg.logvar_max).0.exp();
            }
        }
        Ok((mean, var))
    }

    fn raw_forward(&self, member: usize, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.meta.input_norm.transform(hcat(states, actions).view());
        self.members[member].forward_batch(x.view())
    }

    /// Writes the member networks to `<stem>.nets` and the rest to
    /// `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let nets: Vec<&MlpParams> = self.members.iter().collect();
        checkpoint::save_nets(&stem.with_extension("nets"), &nets)?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let members = checkpoint::load_nets(&stem.with_extension("nets"))?;
        let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let validation_nll = meta.validation_nll.clone();
        let mut model = Self::from_parts(
            members,
            meta.elites,
            meta.input_norm,
            meta.target_norm,
            meta.config,
            meta.state_dim,
            meta.action_dim,
        )?;
        model.meta.validation_nll = validation_nll;
        Ok(model)
    }
}

/// Indices of the `k` lowest losses; ties go to the lower index.
pub fn select_elites(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

struct Prepared {
    inputs: Array2<f64>,
    targets: Array2<f64>,
}

fn prepare(data: &[Transition]) -> Result<(Array2<f64>, Array2<f64>)> {
    let first = data.first().ok_or_else(|| Error::InvalidArgument("no transitions to train on".into()))?;
    let (ds, da) = (first.state.len(), first.action.len());
    let mut x = Array2::zeros((data.len(), ds + da));
    let mut y = Array2::zeros((data.len(), ds + 1));
    for (i, t) in data.iter().enumerate() {
        if t.state.len() != ds || t.action.len() != da || t.next_state.len() != ds {
            return Err(Error::dim(format!("transition {i} has inconsistent widths")));
        }
        for j in 0..ds {
            x[[i, j]] = t.state[j];
            y[[i, j]] = t.next_state[j] - t.state[j];
        }
        for j in 0..da {
            x[[i, ds + j]] = t.action[j];
        }
        y[[i, ds]] = t.reward;
    }
    Ok((x, y))
}

/// Mean per-dimension NLL and its gradient with respect to the raw outputs.
fn nll_and_grad(
    out: &Array2<f64>,
    targets: ArrayView2<f64>,
    target_std: &[f64],
    lo: f64,
    hi: f64,
) -> (f64, Array2<f64>) {
    let (rows, d) = targets.dim();
    let scale = 1.0 / (rows * d) as f64;
    let mut grad = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for i in 0..rows {
        for j in 0..d {
            let resid = (out[[i, j]] - targets[[i, j]]) * target_std[j];
            let (lv, dlv) = soft_clamp(out[[i, d + j]], lo, hi);
            let inv = (-lv).exp();
            loss += gaussian_nll(resid, lv);
            grad[[i, j]] = scale * resid * inv * target_std[j];
            grad[[i, d + j]] = scale * 0.5 * (1.0 - resid * resid * inv) * dlv;
        }
    }
    (loss * scale, grad)
}

fn evaluate(net: &MlpParams, data: &Prepared, target_std: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let out = net.forward_batch(data.inputs.view())?;
    Ok(nll_and_grad(&out, data.targets.view(), target_std, lo, hi).0)
}

/// Maximum-likelihood training of every member with early stopping on a
/// held-out split, followed by elite selection.
pub fn train_ensemble(data: &[Transition], cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    cfg.validate()?;
    let (x, y) = prepare(data)?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let (ds, da) = (data[0].state.len(), data[0].action.len());
    let stream = RngStream::new(cfg.seed, 0xD1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.substream(0).rng());
    let holdout = ((n as f64 * cfg.holdout_ratio) as usize).clamp(1, cfg.max_holdout.max(1)).min(n - 1);
    let (val_idx, train_idx) = perm.split_at(holdout);

    let train_x = x.select(Axis(0), train_idx);
    let train_y = y.select(Axis(0), train_idx);
    let input_norm = Standardizer::fit(train_x.view());
    let target_norm = Standardizer::fit(train_y.view());
    let train = Prepared {
        inputs: input_norm.transform(train_x.view()),
        targets: target_norm.transform(train_y.view()),
    };
    let val = Prepared {
        inputs: input_norm.transform(x.select(Axis(0), val_idx).view()),
        targets: target_norm.transform(y.select(Axis(0), val_idx).view()),
    };

    let mut sizes = vec![ds + da];
    sizes.extend(&cfg.hidden);
    sizes.push(2 * (ds + 1));
    let mut members = Vec::with_capacity(cfg.members);
    let mut losses = Vec::with_capacity(cfg.members);
    for m in 0..cfg.members {
        let mut rng = stream.substream(1 + m as u64).rng();
        let (net, loss) = train_member(m, &sizes, &train, &val, &target_norm.std, cfg, &mut rng)?;
        members.push(net);
        losses.push(loss);
    }
    let elites = select_elites(&losses, cfg.elites);
    let mut model = EnsembleModel::from_parts(members, elites, input_norm, target_norm, cfg.clone(), ds, da)?;
    model.meta.validation_nll = losses;
    Ok(model)
}

fn train_member(
    member: usize,
    sizes: &[usize],
    train: &Prepared,
    val: &Prepared,
    target_std: &[f64],
    cfg: &EnsembleConfig,
    rng: &mut dyn RngCore,
) -> Result<(MlpParams, f64)> {
    let diverged = |what: &str| Error::Training(format!("ensemble member {member}: {what}"));
    let mut net = MlpParams::glorot(sizes, rng);
    let mut adam = AdamState::new(&net, cfg.lr);
    let (lo, hi) = (cfg.logvar_min, cfg.logvar_max);
    let mut best = (evaluate(&net, val, target_std, lo, hi)?, net.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.inputs.nrows()).collect();
    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = train.inputs.select(Axis(0), chunk);
            let yb = train.targets.select(Axis(0), chunk);
            let cache = net.forward_cached(xb.view())?;
            let (loss, upstream) = nll_and_grad(cache.output(), yb.view(), target_std, lo, hi);
            if !loss.is_finite() {
                return Err(diverged("non-finite training loss"));
            }
            let mut grads = net.backward_batch(&cache, upstream.view())?.params;
            for (l, (g, p)) in grads.layers_mut().iter_mut().zip(net.layers()).enumerate() {
                g.weights.scaled_add(cfg.weight_decay[l], &p.weights);
            }
            adam.step(&mut net, &grads).map_err(|e| diverged(&e.to_string()))?;
        }
        let loss = evaluate(&net, val, target_std, lo, hi)?;
        if !loss.is_finite() {
            return Err(diverged("non-finite validation loss"));
        }
        if loss < best.0 {
            best = (loss, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, best.0))
}

/// Branched model rollouts of length at most `k` from every start state.
///
/// Each step picks an elite uniformly, samples `(s′, r)` from its Gaussian and
/// stores that elite's predictive variances with the tuple. Branches stop at
/// `k` steps or when `terminal(s′)` holds.
pub fn rollout(
    model: &EnsembleModel,
    policy: &dyn Policy,
    starts: ArrayView2<f64>,
    k: usize,
    terminal: &dyn Fn(&[f64]) -> bool,
    rng: &mut dyn RngCore,
) -> Result<Vec<Transition>> {
    if k == 0 {
        return Err(Error::InvalidArgument("rollout length must be at least 1".into()));
    }
    let ds = model.state_dim();
    let elites = model.elites().to_vec();
    let mut states = starts.to_owned();
    let mut out = Vec::with_capacity(starts.nrows() * k);
    for _ in 0..k {
        if states.nrows() == 0 {
            break;
        }
        let actions = policy.act_batch(states.view(), rng);
        let picks: Vec<usize> = (0..states.nrows()).map(|_| elites[rng.random_range(0..elites.len())]).collect();
        let mut predictions = Vec::with_capacity(elites.len());
        for &e in &elites {
            predictions.push(if picks.contains(&e) {
                Some(model.predict_batch(e, states.view(), actions.view())?)
            } else {
                None
            });
        }
        let mut survivors = Vec::new();
        for (i, &pick) in picks.iter().enumerate() {
            let slot = elites.iter().position(|&e| e == pick).expect("pick is an elite");
            let (mean, var) = predictions[slot].as_ref().expect("predicted for picked elites");
            let sample: Array1<f64> = mean
                .row(i)
                .iter()
                .zip(var.row(i))
                .map(|(&m, &v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + v.sqrt() * z
                })
                .collect();
            let next = sample.slice(s![..ds]).to_vec();
            let done = terminal(&next);
            out.push(Transition {
                state: states.row(i).to_vec(),
                action: actions.row(i).to_vec(),
                reward: sample[ds],
                next_state: next.clone(),
                next_mean: mean.slice(s![i, ..ds]).to_vec(),
                next_var: var.slice(s![i, ..ds]).to_vec(),
                reward_var: var[[i, ds]],
                done,
            });
            if !done {
                survivors.push(next);
            }
        }
        let rows = survivors.len();
        states = Array2::from_shape_vec((rows, ds), survivors.concat()).expect("rows of state width");
    }
    Ok(out)
}
