//! Experiment kernels shared by the subcommands and the acceptance suite.

use std::path::Path;

use anyhow::{bail, Context};
use mombo::bounds::{mlp_mm_w1_bound, suboptimality_bounds, BoundInputs, BoundRow};
use mombo::dynamics::EnsembleModel;
use mombo::envs::{ToyEnv, Transition};
use mombo::gaussmm::{mm_forward, DiagonalGaussian};
use mombo::mc::{mc_forward, scalar_moments};
use mombo::nn::{checkpoint, MlpParams, RngStream};
use mombo::pevi::{
    bootstrap_min, penalty_mobile, penalty_mopo, sample_bellman, target_mombo, ActionChoice, Actor, ModePolicy,
    PenaltyConfig, SacState, Strategy, TransitionBatch,
};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::metrics::UqPoint;

/// Seeded critic used when no trained checkpoint is supplied.
pub fn fixture_critic(seed: u64) -> MlpParams {
    MlpParams::glorot(&[3, 32, 32, 1], &mut RngStream::new(seed, 0xF0).rng())
}

/// Belief over `(position, velocity, action)` with uncertain state dims and
/// a point-mass action.
pub fn fixture_belief() -> DiagonalGaussian {
    DiagonalGaussian::from_slices(&[0.6, 0.3, 0.2], &[0.04, 0.09, 0.0]).expect("valid fixture belief")
}

/// Policy checkpoint layout: actor, two critics, two target critics.
pub fn save_policy(path: &Path, state: &SacState) -> anyhow::Result<()> {
    let nets: Vec<&MlpParams> = std::iter::once(&state.actor.net)
        .chain(&state.critics)
        .chain(&state.targets)
        .collect();
    checkpoint::save_nets(path, &nets)?;
    Ok(())
}

pub struct PolicyCheckpoint {
    pub actor: Actor,
    pub critics: Vec<MlpParams>,
    pub targets: Vec<MlpParams>,
}

pub fn load_policy(path: &Path) -> anyhow::Result<PolicyCheckpoint> {
    if !path.exists() {
        bail!("policy checkpoint {} not found; run `mombo train` with the same config first", path.display());
    }
    let mut nets = checkpoint::load_nets(path)?;
    if nets.len() != 5 {
        bail!("{} holds {} networks, expected 5", path.display(), nets.len());
    }
    let targets = nets.split_off(3);
    let critics = nets.split_off(1);
    Ok(PolicyCheckpoint {
        actor: Actor::new(nets.pop().expect("actor present"))?,
        critics,
        targets,
    })
}

pub fn load_dynamics(stem: &Path) -> anyhow::Result<EnsembleModel> {
    if !stem.with_extension("nets").exists() {
        bail!(
            "dynamics checkpoint {}.nets not found; run `mombo train-dynamics` with the same config first",
            stem.display()
        );
    }
    Ok(EnsembleModel::load(stem)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    /// `mc` or `mm`.
    pub method: String,
    /// Samples per MC estimate (0 for moment matching).
    pub n: usize,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmVsMc {
    pub rows: Vec<EstimatorRow>,
    pub mm_mean: f64,
    pub mm_std: f64,
    pub reference_mean: f64,
    pub reference_se: f64,
    /// Least-squares slope of ln var(MC mean) on ln N.
    pub slope: f64,
    /// One MC sample set per grid size, for density plots.
    pub draws: Vec<(usize, Vec<f64>)>,
}

/// Mean and sample variance by Welford's update, which stays exact (zero
/// variance) on identical values.
fn across(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, m2 / (xs.len() as f64 - 1.0))
}

pub fn loglog_slope(ns: &[usize], vars: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Repeated MC mean estimates at each grid size against the single
/// deterministic moment-matched estimate.
pub fn mm_vs_mc(
    critic: &MlpParams,
    belief: &DiagonalGaussian,
    grid: &[usize],
    repetitions: usize,
    reference_samples: usize,
    seed: u64,
) -> anyhow::Result<MmVsMc> {
    if repetitions < 2 || grid.is_empty() {
        bail!("need at least 2 repetitions and a non-empty grid");
    }
    let root = RngStream::new(seed, 0xF1);
    let mut rows = Vec::new();
    let mut vars = Vec::new();
    let mut draws = Vec::new();
    for (g, &n) in grid.iter().enumerate() {
        let mut means = Vec::with_capacity(repetitions);
        for r in 0..repetitions {
            let batch = mc_forward(critic, belief, n, root.substream(((g as u64) << 32) | r as u64))?;
            let col = batch.column(0);
            means.push(col.iter().sum::<f64>() / n as f64);
            if r == 0 {
                draws.push((n, col));
            }
        }
        let (mean, var) = across(&means);
        vars.push(var);
        rows.push(EstimatorRow {
            method: "mc".into(),
            n,
            repetitions,
            mean,
            std: var.sqrt(),
            var,
        });
    }
    let mut mm_means = Vec::with_capacity(repetitions);
    let mut mm_out = (0.0, 0.0);
    for _ in 0..repetitions {
        let (out, _) = mm_forward(critic, belief)?;
        mm_out = (out.mean()[0], out.var()[0].sqrt());
        mm_means.push(mm_out.0);
    }
    let (mm_rep_mean, mm_rep_var) = across(&mm_means);
    rows.push(EstimatorRow {
        method: "mm".into(),
        n: 0,
        repetitions,
        mean: mm_rep_mean,
        std: mm_rep_var.sqrt(),
        var: mm_rep_var,
    });
    let reference = mc_forward(critic, belief, reference_samples, root.substream(u64::MAX))?.column(0);
    let (reference_mean, reference_var) = scalar_moments(&reference)?;
    Ok(MmVsMc {
        slope: loglog_slope(grid, &vars),
        rows,
        mm_mean: mm_out.0,
        mm_std: mm_out.1,
        reference_mean,
        reference_se: (reference_var / reference_samples as f64).sqrt(),
        draws,
    })
}

/// Histogram density of `xs` on `bins` equal-width bins, as (center, density).
pub fn histogram_density(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        if x >= lo && x <= hi {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 / (xs.len() as f64 * width)))
        .collect()
}

/// One bound report per sample size, flattened to rows.
pub fn bound_rows(critic: &MlpParams, belief: &DiagonalGaussian, penalty: &PenaltyConfig, grid: &[usize]) -> anyhow::Result<Vec<BoundRow>> {
    let (_, trace) = mm_forward(critic, belief)?;
    let mm = mlp_mm_w1_bound(critic, &trace)?;
    let mut rows = Vec::new();
    for &samples in grid {
        let inputs = BoundInputs {
            horizon: penalty.horizon,
            gamma: penalty.gamma,
            rmax: penalty.rmax,
            delta: penalty.delta,
            samples,
        };
        rows.extend(suboptimality_bounds(inputs, &mm)?.rows());
    }
    Ok(rows)
}

/// Builds the synthetic tuple a model elite would produce for `(s, a)`.
fn elite_transition(
    model: &EnsembleModel,
    env: &ToyEnv,
    state: &[f64],
    action: &[f64],
    rng: &mut dyn rand::RngCore,
) -> anyhow::Result<Transition> {
    let elites = model.elites();
    let e = elites[rng.random_range(0..elites.len())];
    let g = model.predict(e, state, action)?;
    let ds = state.len();
    let sample: Vec<f64> = g
        .mean()
        .iter()
        .zip(g.var())
        .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let next = sample[..ds].to_vec();
    Ok(Transition {
        state: state.to_vec(),
        action: action.to_vec(),
        reward: sample[ds],
        done: env.is_terminal(&next),
        next_state: next,
        next_mean: g.mean().as_slice().expect("contiguous")[..ds].to_vec(),
        next_var: g.var().as_slice().expect("contiguous")[..ds].to_vec(),
        reward_var: g.var()[ds],
    })
}

/// Scores each strategy's penalty as an uncertainty quantifier along
/// evaluation episodes in the true environment.
///
/// The exact operator uses the true transition and `exact_samples` policy
/// draws at the true next state; the sample operator uses one draw from a
/// random elite and one policy draw.
#[allow(clippy::too_many_arguments)]
pub fn eval_uq(
    env: &ToyEnv,
    model: &EnsembleModel,
    policy: &PolicyCheckpoint,
    penalty: &PenaltyConfig,
    strategies: &[Strategy],
    episodes: usize,
    every: usize,
    exact_samples: usize,
    seed: u64,
) -> anyhow::Result<Vec<UqPoint>> {
    let root = RngStream::new(seed, 0xE9);
    let critics = &policy.targets;
    let actor = &policy.actor;
    let mode = ModePolicy(actor);
    let gamma = penalty.gamma;
    let mut points = Vec::new();
    for ep in 0..episodes {
        let mut rng = root.substream(ep as u64).rng();
        let mut s = env.reset(&mut rng).to_vec();
        for t in 0..env.horizon {
            let a = mombo::envs::Policy::act(&mode, &s, &mut rng);
            let step = env.step(&s, &a);
            let last = step.done || t + 1 == env.horizon;
            if t % every == 0 || last {
                let next = Array2::from_shape_fn((exact_samples, s.len()), |(_, j)| step.next[j]);
                let draws = actor.sample(next.view(), &mut rng)?.actions;
                let q = bootstrap_min(critics, next.view(), draws.view())?;
                let keep = if step.done { 0.0 } else { 1.0 };
                let exact = step.reward + gamma * keep * q.mean().expect("non-empty");

                let synthetic = elite_transition(model, env, &s, &a, &mut rng)?;
                let batch = TransitionBatch::from_transitions([&synthetic])?;
                let sample = sample_bellman(&batch, critics, actor, ActionChoice::Sample, gamma, &mut rng)?[0];
                for &strategy in strategies {
                    let u = match strategy {
                        Strategy::Mopo => penalty.beta * penalty_mopo(&batch)[0],
                        Strategy::Mobile => {
                            penalty.beta * penalty_mobile(&batch, critics, actor, gamma, penalty.samples, &mut rng)?[0]
                        }
                        Strategy::Mombo => target_mombo(&batch, critics, actor, gamma, penalty.beta)?.penalty[0],
                    };
                    points.push(UqPoint {
                        seed,
                        strategy,
                        episode: ep,
                        step: t,
                        penalty: u,
                        exact,
                        sample,
                        error: (exact - sample).abs(),
                    });
                }
            }
            if last {
                break;
            }
            s = step.next.to_vec();
        }
    }
    if points.is_empty() {
        bail!("no evaluation points were scored");
    }
    Ok(points)
}

pub fn read_belief(mean: &[f64], var: &[f64]) -> anyhow::Result<DiagonalGaussian> {
    DiagonalGaussian::from_slices(mean, var).context("invalid bounds belief")
}
