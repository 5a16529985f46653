//! Subcommand bodies. Each reads the resolved [`RunConfig`] and writes its
//! artifacts under `cfg.out`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mombo::dynamics::{train_ensemble, EnsembleConfig, EnsembleModel};
use mombo::envs::{generate_dataset, make_env, read_dataset, write_dataset, OfflineDataset, Policy, ToyEnv};
use mombo::gaussmm::DiagonalGaussian;
use mombo::nn::{checkpoint, MlpParams, RngStream};
use mombo::pevi::{train, CurvePoint, ModePolicy, TrainConfig};

use crate::config::RunConfig;
use crate::experiments::{
    bound_rows, eval_uq, fixture_belief, fixture_critic, histogram_density, load_dynamics, load_policy, mm_vs_mc,
    read_belief, save_policy, EstimatorRow,
};
use crate::metrics::{aggregate, summarize_uq, MetricsReport};
use crate::svg::{LinePlot, Series};
use crate::table::{read_csv, write_csv};

/// Progress messages on stderr unless `--quiet`.
#[derive(Debug, Clone, Copy)]
pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Reads the configured dataset, or the per-seed file in the output
/// directory, generating and writing it when absent.
pub fn ensure_dataset(cfg: &RunConfig, env: &ToyEnv, seed: u64, log: Log) -> anyhow::Result<OfflineDataset> {
    let path = cfg.dataset_path(seed);
    if path.exists() {
        return Ok(read_dataset(&path)?);
    }
    if cfg.dataset.path.is_some() {
        bail!("dataset file {} not found", path.display());
    }
    let ds = generate_dataset(env, cfg.dataset.mix()?, cfg.dataset.size, seed)?;
    write_dataset(&path, &ds)?;
    log.info(format!("wrote {} ({} transitions)", path.display(), ds.len()));
    Ok(ds)
}

fn ensemble_config(cfg: &RunConfig, seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        seed,
        ..cfg.ensemble.clone()
    }
}

pub fn ensure_dynamics(cfg: &RunConfig, ds: &OfflineDataset, seed: u64, log: Log) -> anyhow::Result<EnsembleModel> {
    let stem = cfg.dynamics_stem(seed);
    if stem.with_extension("nets").exists() {
        return Ok(EnsembleModel::load(&stem)?);
    }
    let model = train_ensemble(&ds.transitions, &ensemble_config(cfg, seed))?;
    model.save(&stem)?;
    log.info(format!("wrote {}.nets (elites {:?})", stem.display(), model.elites()));
    Ok(model)
}

pub fn cmd_gen_dataset(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    let env = make_env(&cfg.env)?;
    for &seed in &cfg.seeds {
        let ds = generate_dataset(&env, cfg.dataset.mix()?, cfg.dataset.size, seed)?;
        let path = cfg.out.join(format!("dataset-seed{seed}.jsonl"));
        write_dataset(&path, &ds)?;
        let returns = ds.episode_returns(env.horizon);
        let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
        log.info(format!(
            "wrote {} ({} transitions, {} episodes, mean return {mean:.2})",
            path.display(),
            ds.len(),
            returns.len()
        ));
    }
    Ok(())
}

pub fn cmd_train_dynamics(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    let env = make_env(&cfg.env)?;
    for &seed in &cfg.seeds {
        let ds = ensure_dataset(cfg, &env, seed, log)?;
        let model = train_ensemble(&ds.transitions, &ensemble_config(cfg, seed))?;
        let stem = cfg.dynamics_stem(seed);
        model.save(&stem)?;
        log.info(format!(
            "wrote {}.nets: validation NLL {:?}, elites {:?}",
            stem.display(),
            model.validation_nll(),
            model.elites()
        ));
    }
    Ok(())
}

/// Full pipeline for one seed: dataset, dynamics, policy training, artifacts.
pub fn train_seed(cfg: &RunConfig, seed: u64, log: Log) -> anyhow::Result<(Vec<CurvePoint>, MetricsReport)> {
    let env = make_env(&cfg.env)?;
    let ds = ensure_dataset(cfg, &env, seed, log)?;
    let model = ensure_dynamics(cfg, &ds, seed, log)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = train(&env, &ds.transitions, &model, &cfg.penalty, &cfg.sac, &tcfg)
        .with_context(|| format!("training seed {seed}"))?;
    write_csv(&cfg.curve_path(seed), &out.curve)?;
    save_policy(&cfg.policy_path(seed), &out.state)?;
    let report = MetricsReport::from_curve(cfg.penalty.strategy, seed, &out.curve, out.steps_run)?;
    log.info(format!(
        "seed {seed}: {} steps, final normalized return {:.1}, AULC {:.1}",
        out.steps_run, report.final_normalized_return, report.aulc
    ));
    Ok((out.curve, report))
}

pub fn cmd_train(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let results: Vec<anyhow::Result<(Vec<CurvePoint>, MetricsReport)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_seed(cfg, seed, log)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("a training job panicked"))))
            .collect()
    });
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (curve, report) = r?;
        curves.push(curve);
        reports.push(report);
    }
    let label = cfg.penalty.strategy.label();
    let agg_path = cfg.out.join(format!("curve-{label}-aggregate.csv"));
    write_csv(&agg_path, &aggregate(&curves)?)?;
    let metrics_path = cfg.out.join(format!("metrics-{label}.json"));
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&reports)? + "\n")?;
    log.info(format!("wrote {} and {}", agg_path.display(), metrics_path.display()));
    Ok(())
}

pub fn cmd_eval_uq(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    let env = make_env(&cfg.env)?;
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let model = load_dynamics(&cfg.dynamics_stem(seed))?;
        let policy = load_policy(&cfg.policy_path(seed))?;
        let e = &cfg.eval_uq;
        let points = eval_uq(
            &env,
            &model,
            &policy,
            &cfg.penalty,
            &e.strategies,
            e.episodes,
            e.every,
            e.exact_samples,
            seed,
        )?;
        write_csv(&cfg.out.join(format!("eval-uq-seed{seed}.csv")), &points)?;
        all.extend(points);
    }
    let summary = summarize_uq(&all)?;
    for s in &summary {
        log.info(format!(
            "seed {} {:>6}: accuracy {:.3}, tightness {:.4}, mean penalty {:.4}, mean error {:.4}",
            s.seed,
            s.strategy.label(),
            s.accuracy,
            s.tightness,
            s.mean_penalty,
            s.mean_error
        ));
    }
    write_csv(&cfg.out.join("eval-uq-summary.csv"), &summary)?;
    Ok(())
}

/// Critic and input belief from trained checkpoints when present, else the
/// seeded fixtures.
pub fn figure_inputs(cfg: &RunConfig, seed: u64, log: Log) -> anyhow::Result<(MlpParams, DiagonalGaussian)> {
    let policy_path = cfg.policy_path(seed);
    let stem = cfg.dynamics_stem(seed);
    if !(policy_path.exists() && stem.with_extension("nets").exists()) {
        log.info("no trained checkpoints in the output directory; using the fixture critic and belief");
        return Ok((fixture_critic(seed), fixture_belief()));
    }
    let env = make_env(&cfg.env)?;
    let policy = load_policy(&policy_path)?;
    let model = load_dynamics(&stem)?;
    let mut rng = RngStream::new(seed, 0xF2).rng();
    let s = env.reset(&mut rng);
    let mode = ModePolicy(&policy.actor);
    let a = mode.act(&s, &mut rng);
    let pred = model.predict(model.elites()[0], &s, &a)?;
    let ds = s.len();
    let mean = pred.mean().to_vec()[..ds].to_vec();
    let var = pred.var().to_vec()[..ds].to_vec();
    let next_action = mode.act(&mean, &mut rng);
    let belief = DiagonalGaussian::from_slices(&mean, &var)?.concat(&DiagonalGaussian::point(ndarray::Array1::from(next_action)));
    Ok((policy.critics[0].clone(), belief))
}

pub fn cmd_fig_mm_vs_mc(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    let seed = cfg.seeds[0];
    let (critic, belief) = figure_inputs(cfg, seed, log)?;
    let f = &cfg.figure;
    let result = mm_vs_mc(&critic, &belief, &f.grid, f.repetitions, f.reference_samples, seed)?;
    let mut rows = result.rows.clone();
    rows.push(EstimatorRow {
        method: "reference".into(),
        n: f.reference_samples,
        repetitions: 1,
        mean: result.reference_mean,
        std: result.reference_se,
        var: result.reference_se * result.reference_se,
    });
    std::fs::create_dir_all(&cfg.out)?;
    write_csv(&cfg.out.join("fig-mm-vs-mc.csv"), &rows)?;

    let (mu, sd) = (result.mm_mean, result.mm_std.max(1e-12));
    let (lo, hi) = (mu - 4.0 * sd, mu + 4.0 * sd);
    let mut density = LinePlot::new("Next-value distribution: moment matching vs sampling", "Q", "density");
    density.series.push(Series::new(
        "MM Gaussian",
        (0..=200)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                let z = (x - mu) / sd;
                (x, (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            })
            .collect(),
    ));
    for (n, xs) in &result.draws {
        let bins = ((*n as f64).sqrt() as usize).clamp(5, 60);
        density.series.push(Series {
            dashed: true,
            ..Series::new(format!("MC N={n}"), histogram_density(xs, lo, hi, bins))
        });
    }
    std::fs::write(cfg.out.join("fig-mm-vs-mc.svg"), density.render())?;

    let mut variance = LinePlot::new("Variance of the MC mean estimator", "N", "variance across repetitions");
    variance.log_x = true;
    variance.log_y = true;
    let mc: Vec<(f64, f64)> = result.rows.iter().filter(|r| r.method == "mc").map(|r| (r.n as f64, r.var)).collect();
    let first = mc[0];
    variance.series.push(Series::new("MC", mc.clone()));
    variance.series.push(Series {
        dashed: true,
        ..Series::new("slope -1", mc.iter().map(|&(n, _)| (n, first.1 * first.0 / n)).collect())
    });
    std::fs::write(cfg.out.join("fig-mm-vs-mc-variance.svg"), variance.render())?;
    log.info(format!(
        "MM ({:.6}, std {:.6}); reference MC mean {:.6} ± {:.2e}; log-log slope {:.3}",
        result.mm_mean, result.mm_std, result.reference_mean, result.reference_se, result.slope
    ));
    Ok(())
}

/// A five-network container is a policy checkpoint, whose first critic is
/// used; otherwise the first network is taken as the critic.
fn load_critic(path: &Path) -> anyhow::Result<MlpParams> {
    if !path.exists() {
        bail!("critic checkpoint {} not found", path.display());
    }
    let mut nets = checkpoint::load_nets(path)?;
    match nets.len() {
        0 => bail!("{} holds no networks", path.display()),
        5 => Ok(nets.swap_remove(1)),
        _ => Ok(nets.swap_remove(0)),
    }
}

pub fn cmd_bounds(cfg: &RunConfig, log: Log) -> anyhow::Result<()> {
    let critic = match &cfg.bounds.critic {
        Some(p) => load_critic(p)?,
        None => fixture_critic(cfg.seeds[0]),
    };
    let belief = match (&cfg.bounds.belief_mean, &cfg.bounds.belief_var) {
        (Some(m), Some(v)) => read_belief(m, v)?,
        _ => fixture_belief(),
    };
    let rows = bound_rows(&critic, &belief, &cfg.penalty, &cfg.bounds.grid)?;
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("bounds.csv");
    write_csv(&path, &rows)?;
    for r in rows.iter().filter(|r| r.layer.is_none()) {
        log.info(format!(
            "N={:>6}: mm_subopt {:.4e}  mc_subopt {:.4e}",
            r.samples,
            r.mm_subopt.unwrap_or(f64::NAN),
            r.mc_subopt.unwrap_or(f64::NAN)
        ));
    }
    log.info(format!("wrote {}", path.display()));
    Ok(())
}

/// Aggregates the given curve files, or every per-seed curve in the output
/// directory grouped by strategy.
pub fn cmd_aggregate(cfg: &RunConfig, files: &[PathBuf], log: Log) -> anyhow::Result<()> {
    let groups: Vec<(String, Vec<PathBuf>)> = if files.is_empty() {
        let mut found: std::collections::BTreeMap<String, Vec<PathBuf>> = Default::default();
        let entries = std::fs::read_dir(&cfg.out).with_context(|| format!("cannot list {}", cfg.out.display()))?;
        for entry in entries {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
            if let Some(rest) = name.strip_prefix("curve-").and_then(|r| r.strip_suffix(".csv")) {
                if let Some((strategy, _)) = rest.rsplit_once("-seed") {
                    found.entry(strategy.to_string()).or_default().push(path);
                }
            }
        }
        if found.is_empty() {
            bail!("no curve-<strategy>-seed<k>.csv files in {}", cfg.out.display());
        }
        found.into_iter().collect()
    } else {
        vec![("custom".into(), files.to_vec())]
    };
    for (label, mut paths) in groups {
        paths.sort();
        let curves = paths
            .iter()
            .map(|p| read_csv::<CurvePoint>(p))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let path = cfg.out.join(format!("curve-{label}-aggregate.csv"));
        write_csv(&path, &aggregate(&curves)?)?;
        log.info(format!("wrote {} from {} curves", path.display(), curves.len()));
    }
    Ok(())
}
