//! Learning-curve summaries and uncertainty-quantifier scores.

use std::collections::BTreeMap;

use anyhow::bail;
use mombo::pevi::{CurvePoint, Strategy};
use serde::{Deserialize, Serialize};

/// Area under the learning curve: the unweighted mean of the checkpoint
/// normalized returns.
pub fn aulc(normalized: &[f64]) -> anyhow::Result<f64> {
    if normalized.is_empty() {
        bail!("AULC of an empty learning curve");
    }
    Ok(normalized.iter().sum::<f64>() / normalized.len() as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: usize,
    /// Curves contributing to this checkpoint.
    pub seeds: usize,
    pub normalized_mean: f64,
    pub normalized_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

/// Per-checkpoint mean and sample std across seeds. Curves that stopped
/// early simply do not contribute to later checkpoints.
pub fn aggregate(curves: &[Vec<CurvePoint>]) -> anyhow::Result<Vec<AggregateRow>> {
    if curves.is_empty() {
        bail!("nothing to aggregate");
    }
    let mut by_step: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for curve in curves {
        for p in curve {
            let entry = by_step.entry(p.step).or_default();
            entry.0.push(p.normalized_return);
            entry.1.push(p.eval_return_mean);
        }
    }
    Ok(by_step
        .into_iter()
        .map(|(step, (norm, ret))| {
            let (normalized_mean, normalized_std) = mean_std(&norm);
            let (return_mean, return_std) = mean_std(&ret);
            AggregateRow {
                step,
                seeds: norm.len(),
                normalized_mean,
                normalized_std,
                return_mean,
                return_std,
            }
        })
        .collect())
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub normalized_returns: Vec<f64>,
    pub aulc: f64,
    pub final_return: f64,
    pub final_normalized_return: f64,
    pub steps_run: usize,
}

impl MetricsReport {
    pub fn from_curve(strategy: Strategy, seed: u64, curve: &[CurvePoint], steps_run: usize) -> anyhow::Result<Self> {
        let normalized: Vec<f64> = curve.iter().map(|p| p.normalized_return).collect();
        let last = curve.last().ok_or_else(|| anyhow::anyhow!("run produced no checkpoints"))?;
        Ok(Self {
            strategy,
            seed,
            aulc: aulc(&normalized)?,
            normalized_returns: normalized,
            final_return: last.eval_return_mean,
            final_normalized_return: last.normalized_return,
            steps_run,
        })
    }
}

/// One scored state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqPoint {
    pub seed: u64,
    pub strategy: Strategy,
    pub episode: usize,
    pub step: usize,
    pub penalty: f64,
    pub exact: f64,
    pub sample: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    pub seed: u64,
    pub strategy: Strategy,
    pub points: usize,
    pub accuracy: f64,
    pub tightness: f64,
    pub mean_penalty: f64,
    pub mean_error: f64,
}

/// `accuracy = mean 1(U ≥ |err|)` and `tightness = mean (U − |err|)`.
pub fn uq_scores(penalties: &[f64], errors: &[f64]) -> anyhow::Result<(f64, f64)> {
    if penalties.len() != errors.len() || penalties.is_empty() {
        bail!("need equally many penalties and errors, at least one");
    }
    let n = penalties.len() as f64;
    let hits = penalties.iter().zip(errors).filter(|(u, e)| **u >= e.abs()).count();
    let slack = penalties.iter().zip(errors).map(|(u, e)| u - e.abs()).sum::<f64>();
    Ok((hits as f64 / n, slack / n))
}

pub fn summarize_uq(points: &[UqPoint]) -> anyhow::Result<Vec<UqSummary>> {
    let mut groups: BTreeMap<(u64, &'static str), Vec<&UqPoint>> = BTreeMap::new();
    for p in points {
        groups.entry((p.seed, p.strategy.label())).or_default().push(p);
    }
    groups
        .into_values()
        .map(|g| {
            let us: Vec<f64> = g.iter().map(|p| p.penalty).collect();
            let es: Vec<f64> = g.iter().map(|p| p.error).collect();
            let (accuracy, tightness) = uq_scores(&us, &es)?;
            Ok(UqSummary {
                seed: g[0].seed,
                strategy: g[0].strategy,
                points: g.len(),
                accuracy,
                tightness,
                mean_penalty: us.iter().sum::<f64>() / us.len() as f64,
                mean_error: es.iter().map(|e| e.abs()).sum::<f64>() / es.len() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(step: usize, norm: f64, ret: f64) -> CurvePoint {
        CurvePoint {
            step,
            eval_return_mean: ret,
            eval_return_std: 0.0,
            normalized_return: norm,
            loss_critic: 0.0,
            loss_actor: 0.0,
            mean_penalty: 0.0,
        }
    }

    #[test]
    fn aulc_is_checkpoint_mean() {
        assert_eq!(aulc(&[0.0, 50.0, 100.0]).unwrap(), 50.0);
        assert!(aulc(&[]).is_err());
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        let a = vec![point(10, 10.0, 1.0), point(20, 40.0, 4.0)];
        let b = vec![point(10, 30.0, 3.0)];
        let rows = aggregate(&[a, b]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].seeds, 2);
        assert_eq!(rows[0].normalized_mean, 20.0);
        assert!((rows[0].normalized_std - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!((rows[1].seeds, rows[1].normalized_std, rows[1].return_mean), (1, 0.0, 4.0));
    }

    #[test]
    fn uq_score_arithmetic() {
        assert_eq!(uq_scores(&[2.0], &[1.0]).unwrap(), (1.0, 1.0));
        assert_eq!(uq_scores(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), (1.0, 0.0));
        let us = [0.1, 0.5, 2.0];
        let es = [0.3, -0.2, 1.0];
        let (acc, tight) = uq_scores(&us, &es).unwrap();
        let shifted: Vec<f64> = us.iter().map(|u| u + 10.0).collect();
        let (acc2, tight2) = uq_scores(&shifted, &es).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc2, 1.0);
        assert!((tight2 - tight - 10.0).abs() < 1e-12);
        assert!(uq_scores(&[], &[]).is_err());
    }
}
