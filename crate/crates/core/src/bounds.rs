//! Computable Wasserstein and suboptimality bounds for moment-matched and
//! sampling-based value propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmm::{relu_moments, DiagonalGaussian, PropagationTrace};
use crate::nn::{std_normal_cdf, std_normal_pdf, MlpParams};

/// `∫₋∞⁰ F(u) du` for `N(μ̃, σ̃²)`, i.e. `σ̃ φ(μ̃/σ̃) − μ̃ Φ(−μ̃/σ̃)`.
///
/// This is the mass a Gaussian places below zero, weighted by distance, and
/// is the price of replacing a rectified variable with a Gaussian.
pub fn relu_gap(mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return (-mean).max(0.0);
    }
    let alpha = mean / std;
    (std * std_normal_pdf(alpha) - mean * std_normal_cdf(-alpha)).max(0.0)
}

/// W1 bound between `max(0, X)` for `X ~ N(μ, σ²)` and its moment-matched
/// Gaussian. Zero variance is a point mass and costs nothing.
pub fn relu_mm_w1_bound(input: &DiagonalGaussian) -> Result<f64> {
    if input.len() != 1 {
        return Err(Error::dim("single-unit bound needs a scalar belief"));
    }
    let (mu, sigma) = (input.mean()[0], input.var()[0].sqrt());
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let (m, v) = relu_moments(mu, sigma);
    let s = v.sqrt();
    Ok(relu_gap(m, s) + (mu - m).abs() + (sigma - s).abs())
}

/// Bound contributions of one hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTerms {
    /// Sum of the per-unit gap terms.
    pub gap: f64,
    /// L1 distance between the pre-activation belief and the matched
    /// post-activation belief, over means plus standard deviations.
    pub coupling: f64,
    /// Units whose gap term exceeds 1.
    pub gap_units_above_one: usize,
}

/// Deterministic W1 bound between the sampled pushforward of a network and
/// its moment-matched output Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmBound {
    /// One entry per hidden layer.
    pub layers: Vec<LayerTerms>,
    /// Induced L1 norm of every weight matrix, in layer order.
    pub norms: Vec<f64>,
    pub total: f64,
}

pub fn mlp_mm_w1_bound(params: &MlpParams, trace: &PropagationTrace) -> Result<MmBound> {
    let depth = params.depth();
    if trace.depth() != depth {
        return Err(Error::dim(format!(
            "trace covers {} layers, network has {depth}",
            trace.depth()
        )));
    }
    for (l, layer) in params.layers().iter().enumerate() {
        if trace.pre_activation(l).len() != layer.out_dim() {
            return Err(Error::dim(format!("trace stage for layer {l} has the wrong width")));
        }
    }
    let norms = params.operator_norms();
    let mut layers = Vec::with_capacity(depth - 1);
    for l in 0..depth - 1 {
        let pre = trace.pre_activation(l);
        let post = trace.post_activation(l);
        let mut terms = LayerTerms {
            gap: 0.0,
            coupling: 0.0,
            gap_units_above_one: 0,
        };
        for k in 0..pre.len() {
            let (m, s) = (post.mean()[k], post.var()[k].sqrt());
            let g = relu_gap(m, s);
            terms.gap += g;
            if g > 1.0 {
                terms.gap_units_above_one += 1;
            }
            terms.coupling += (pre.mean()[k] - m).abs() + (pre.var()[k].sqrt() - s).abs();
        }
        layers.push(terms);
    }
    let total = layers
        .iter()
        .enumerate()
        .map(|(l, t)| (t.gap + t.coupling) * norms[l + 1..].iter().product::<f64>())
        .sum();
    Ok(MmBound { layers, norms, total })
}

/// `R_max² / (1 − γ)²`, the squared range of a discounted return.
pub fn squared_value_range(rmax: f64, gamma: f64) -> f64 {
    (rmax / (1.0 - gamma)).powi(2)
}

/// High-probability W1 bound between a network's output distribution and
/// its estimate from `n` samples, holding with probability `1 − δ`.
pub fn sampling_w1_bound(norms: &[f64], n: usize, delta: f64, rmax: f64, gamma: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::UndefinedBound(format!(
            "sampling bound needs at least two samples, got {n}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("γ must lie in (0, 1), got {gamma}")));
    }
    if rmax <= 0.0 {
        return Err(Error::InvalidArgument(format!("R_max must be positive, got {rmax}")));
    }
    let half = (n / 2) as f64;
    let radius = (-8.0 * (delta / 4.0).ln() * squared_value_range(rmax, gamma) / half).sqrt();
    Ok(norms.iter().product::<f64>() * radius)
}

/// Inputs shared by both suboptimality bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub horizon: usize,
    pub gamma: f64,
    pub rmax: f64,
    pub delta: f64,
    pub samples: usize,
}

/// Every intermediate and final bound quantity for one network and input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub layers: Vec<LayerTerms>,
    pub norms: Vec<f64>,
    pub mm_w1_bound: f64,
    pub mm_subopt: f64,
    pub mc_w1_bound: f64,
    pub mc_subopt: f64,
}

pub fn suboptimality_bounds(inputs: BoundInputs, mm: &MmBound) -> Result<BoundReport> {
    if inputs.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mc_w1_bound = sampling_w1_bound(&mm.norms, inputs.samples, inputs.delta, inputs.rmax, inputs.gamma)?;
    let scale = 2.0 * inputs.horizon as f64;
    Ok(BoundReport {
        inputs,
        layers: mm.layers.clone(),
        norms: mm.norms.clone(),
        mm_w1_bound: mm.total,
        mm_subopt: scale * mm.total,
        mc_w1_bound,
        mc_subopt: scale * mc_w1_bound,
    })
}

/// Flat record for tabular output: one row per layer, then a totals row
/// with `layer` unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub layer: Option<usize>,
    pub gap: Option<f64>,
    pub coupling: Option<f64>,
    pub norm: Option<f64>,
    pub gap_units_above_one: Option<usize>,
    pub mm_w1_bound: Option<f64>,
    pub mm_subopt: Option<f64>,
    pub mc_w1_bound: Option<f64>,
    pub mc_subopt: Option<f64>,
    pub samples: usize,
    pub delta: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub rmax: f64,
}

impl BoundReport {
    pub fn rows(&self) -> Vec<BoundRow> {
        let base = BoundRow {
            layer: None,
            gap: None,
            coupling: None,
            norm: None,
            gap_units_above_one: None,
            mm_w1_bound: None,
            mm_subopt: None,
            mc_w1_bound: None,
            mc_subopt: None,
            samples: self.inputs.samples,
            delta: self.inputs.delta,
            horizon: self.inputs.horizon,
            gamma: self.inputs.gamma,
            rmax: self.inputs.rmax,
        };
        let mut rows: Vec<BoundRow> = self
            .norms
            .iter()
            .enumerate()
            .map(|(l, &norm)| {
                let terms = self.layers.get(l);
                BoundRow {
                    layer: Some(l),
                    gap: terms.map(|t| t.gap),
                    coupling: terms.map(|t| t.coupling),
                    norm: Some(norm),
                    gap_units_above_one: terms.map(|t| t.gap_units_above_one),
                    ..base.clone()
                }
            })
            .collect();
        rows.push(BoundRow {
            mm_w1_bound: Some(self.mm_w1_bound),
            mm_subopt: Some(self.mm_subopt),
            mc_w1_bound: Some(self.mc_w1_bound),
            mc_subopt: Some(self.mc_subopt),
            ..base
        });
        rows
    }

    /// True when every reported quantity is finite and non-negative.
    pub fn is_valid(&self) -> bool {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        self.layers.iter().all(|t| ok(t.gap) && ok(t.coupling))
            && self.norms.iter().copied().all(ok)
            && [self.mm_w1_bound, self.mm_subopt, self.mc_w1_bound, self.mc_subopt]
                .into_iter()
                .all(ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmm::mm_forward;
    use crate::nn::{Layer, RngStream};
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::{prop_assert, proptest};

    fn unit_net() -> MlpParams {
        MlpParams::new(vec![
            Layer::new(array![[1.0]], array![0.0]).unwrap(),
            Layer::new(array![[1.0]], array![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn standard_normal_unit_bound() {
        let b = relu_mm_w1_bound(&DiagonalGaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        assert!((b - 0.9009).abs() < 5e-5, "{b}");
    }

    #[test]
    fn inactive_region_costs_nothing() {
        let b = relu_mm_w1_bound(&DiagonalGaussian::scalar(10.0, 1e-4).unwrap()).unwrap();
        assert!(b <= 1e-8, "{b}");
        assert_eq!(relu_mm_w1_bound(&DiagonalGaussian::scalar(-2.0, 0.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn single_hidden_unit_network() {
        let net = unit_net();
        let (_, trace) = mm_forward(&net, &DiagonalGaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let bound = mlp_mm_w1_bound(&net, &trace).unwrap();
        assert_eq!(bound.layers.len(), 1);
        assert!((bound.layers[0].gap - 0.0858).abs() < 5e-5);
        assert!((bound.layers[0].coupling - 0.8151).abs() < 5e-5);
        assert!((bound.total - 0.9009).abs() < 5e-5);
        let unit = relu_mm_w1_bound(&DiagonalGaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        assert!((bound.total - unit).abs() < 1e-15);
    }

    #[test]
    fn linear_network_has_zero_bound() {
        let mut rng = RngStream::new(8, 0).rng();
        let net = MlpParams::glorot(&[3, 2], &mut rng);
        let input = DiagonalGaussian::from_slices(&[0.1, 0.2, 0.3], &[1.0, 0.5, 0.2]).unwrap();
        let (_, trace) = mm_forward(&net, &input).unwrap();
        let bound = mlp_mm_w1_bound(&net, &trace).unwrap();
        assert!(bound.layers.is_empty());
        assert_eq!(bound.total, 0.0);
    }

    #[test]
    fn scaled_output_layer_scales_bound() {
        let mut net = unit_net();
        net.layers_mut()[1].weights[[0, 0]] = -3.0;
        let (_, trace) = mm_forward(&net, &DiagonalGaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let bound = mlp_mm_w1_bound(&net, &trace).unwrap();
        assert!((bound.total - 3.0 * 0.9009).abs() < 2e-4);
    }

    #[test]
    fn mismatched_trace_rejected() {
        let mut rng = RngStream::new(1, 0).rng();
        let a = MlpParams::glorot(&[2, 4, 1], &mut rng);
        let b = MlpParams::glorot(&[2, 4, 4, 1], &mut rng);
        let (_, trace) = mm_forward(&a, &DiagonalGaussian::point(array![0.0, 1.0])).unwrap();
        assert!(mlp_mm_w1_bound(&b, &trace).is_err());
    }

    #[test]
    fn value_range_matches_reference_arithmetic() {
        let r = squared_value_range(11.7, 0.99);
        assert!((r - 1.3689e6).abs() < 1e-3, "{r}");
        assert_eq!(format!("{:.2e}", r), "1.37e6");
    }

    #[test]
    fn sampling_bound_reference_value() {
        let b = sampling_w1_bound(&[1.0], 10, 0.1, 11.7, 0.99).unwrap();
        assert!((b - 2842.5).abs() < 0.1, "{b}");
        // Norm product scales the bound linearly.
        let scaled = sampling_w1_bound(&[2.0, 0.5, 3.0], 10, 0.1, 11.7, 0.99).unwrap();
        assert!((scaled - 3.0 * b).abs() < 1e-9);
    }

    #[test]
    fn sampling_bound_undefined_for_one_sample() {
        assert!(matches!(
            sampling_w1_bound(&[1.0], 1, 0.1, 1.0, 0.9),
            Err(Error::UndefinedBound(_))
        ));
        assert!(sampling_w1_bound(&[1.0], 10, 1.0, 1.0, 0.9).is_err());
        assert!(sampling_w1_bound(&[1.0], 10, 0.1, 1.0, 1.0).is_err());
        assert!(sampling_w1_bound(&[1.0], 10, 0.1, 0.0, 0.9).is_err());
    }

    #[test]
    fn sampling_bound_shape() {
        let at = |n, d| sampling_w1_bound(&[1.0], n, d, 1.0, 0.9).unwrap();
        let ns = [2, 4, 10, 50, 100, 1000, 10_000];
        for w in ns.windows(2) {
            assert!(at(w[1], 0.1) < at(w[0], 0.1));
        }
        let deltas = [0.5, 0.2, 0.1, 0.05, 0.01, 1e-4];
        for w in deltas.windows(2) {
            assert!(at(10, w[1]) > at(10, w[0]));
        }
    }

    fn report(horizon: usize, total: f64) -> BoundReport {
        let mm = MmBound {
            layers: vec![],
            norms: vec![1.0],
            total,
        };
        let inputs = BoundInputs {
            horizon,
            gamma: 0.99,
            rmax: 11.7,
            delta: 0.1,
            samples: 10,
        };
        suboptimality_bounds(inputs, &mm).unwrap()
    }

    #[test]
    fn suboptimality_scales_with_horizon() {
        let r = report(1, 0.9009);
        assert_eq!(r.mm_subopt, 2.0 * r.mm_w1_bound);
        assert_eq!(r.mc_subopt, 2.0 * r.mc_w1_bound);
        let r = report(100, 0.9009);
        assert!((r.mm_subopt - 180.18).abs() < 1e-9);
        assert!(r.is_valid());
    }

    #[test]
    fn zero_horizon_rejected() {
        let mm = MmBound {
            layers: vec![],
            norms: vec![1.0],
            total: 0.0,
        };
        let inputs = BoundInputs {
            horizon: 0,
            gamma: 0.9,
            rmax: 1.0,
            delta: 0.1,
            samples: 4,
        };
        assert!(suboptimality_bounds(inputs, &mm).is_err());
    }

    #[test]
    fn rows_cover_every_layer_plus_totals() {
        let mut rng = RngStream::new(2, 0).rng();
        let net = MlpParams::glorot(&[2, 8, 8, 1], &mut rng);
        let input = DiagonalGaussian::new(Array1::zeros(2), Array1::ones(2)).unwrap();
        let (_, trace) = mm_forward(&net, &input).unwrap();
        let mm = mlp_mm_w1_bound(&net, &trace).unwrap();
        let inputs = BoundInputs {
            horizon: 100,
            gamma: 0.99,
            rmax: 11.7,
            delta: 0.1,
            samples: 100,
        };
        let r = suboptimality_bounds(inputs, &mm).unwrap();
        let rows = r.rows();
        assert_eq!(rows.len(), 4);
        assert!(rows[2].gap.is_none() && rows[2].norm.is_some());
        assert_eq!(rows[3].mm_subopt, Some(r.mm_subopt));
        assert!(r.is_valid());
    }

    #[test]
    fn wide_uncertain_layer_reports_large_gap() {
        let net = MlpParams::new(vec![
            Layer::new(Array2::ones((40, 1)), Array1::zeros(40)).unwrap(),
            Layer::new(Array2::ones((1, 40)), Array1::zeros(1)).unwrap(),
        ])
        .unwrap();
        let (_, trace) = mm_forward(&net, &DiagonalGaussian::scalar(0.0, 25.0).unwrap()).unwrap();
        let bound = mlp_mm_w1_bound(&net, &trace).unwrap();
        // Per-unit gaps stay below one but the layer sum does not.
        assert_eq!(bound.layers[0].gap_units_above_one, 0);
        assert!(bound.layers[0].gap > 1.0);
    }

    proptest! {
        #[test]
        fn gap_at_most_one_for_unit_scale(mu in -50.0f64..50.0, sigma in 1e-6f64..1.0) {
            let (m, v) = relu_moments(mu, sigma);
            let g = relu_gap(m, v.sqrt());
            prop_assert!((0.0..=1.0).contains(&g));
        }

        #[test]
        fn bounds_are_non_negative(mu in -20.0f64..20.0, sigma in 0.0f64..10.0) {
            let b = relu_mm_w1_bound(&DiagonalGaussian::scalar(mu, sigma * sigma).unwrap()).unwrap();
            prop_assert!(b >= 0.0 && b.is_finite());
        }
    }
}
