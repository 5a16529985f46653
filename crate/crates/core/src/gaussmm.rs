//! Deterministic moment matching through ReLU networks.
//!
//! A factorized Gaussian belief is pushed through each affine layer exactly
//! (mean `A μ + b`, variance `(A∘A) σ²`) and through each ReLU by replacing the
//! rectified Gaussian with the Gaussian of identical first two moments.
//! Dimensions are treated as independent throughout.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::nn::{counter, std_normal_cdf, std_normal_pdf, Layer, MlpParams, SATURATION};

/// Factorized normal belief over a real vector. Zero variance marks a point
/// mass in that coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Array1<f64>, var: Array1<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim(format!(
                "mean has {} entries, variance has {}",
                mean.len(),
                var.len()
            )));
        }
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        if !var.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidArgument("variance must be finite and non-negative".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn from_slices(mean: &[f64], var: &[f64]) -> Result<Self> {
        Self::new(Array1::from(mean.to_vec()), Array1::from(var.to_vec()))
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::from_slices(&[mean], &[var])
    }

    /// Point mass at `mean`.
    pub fn point(mean: Array1<f64>) -> Self {
        let var = Array1::zeros(mean.len());
        Self { mean, var }
    }

    pub fn empty() -> Self {
        Self::point(Array1::zeros(0))
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn var(&self) -> &Array1<f64> {
        &self.var
    }

    pub fn std(&self) -> Array1<f64> {
        self.var.mapv(f64::sqrt)
    }

    /// Concatenation `(a, b)` of two independent beliefs.
    pub fn concat(&self, other: &DiagonalGaussian) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: concatenate![Axis(0), self.mean, other.mean],
            var: concatenate![Axis(0), self.var, other.var],
        }
    }
}

pub fn concat_beliefs(a: &DiagonalGaussian, b: &DiagonalGaussian) -> DiagonalGaussian {
    a.concat(b)
}

/// Post-linear and post-ReLU beliefs of every layer, in order:
/// `pre_1, post_1, pre_2, post_2, …, pre_L` (`2L − 1` stages).
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    stages: Vec<DiagonalGaussian>,
}

impl PropagationTrace {
    pub fn stages(&self) -> &[DiagonalGaussian] {
        &self.stages
    }

    /// Number of layers `L` the trace covers.
    pub fn depth(&self) -> usize {
        self.stages.len().div_ceil(2)
    }

    /// Matched pre-activation belief of layer `l` (0-based).
    pub fn pre_activation(&self, l: usize) -> &DiagonalGaussian {
        &self.stages[2 * l]
    }

    /// Matched post-ReLU belief of hidden layer `l` (0-based, `l < L − 1`).
    pub fn post_activation(&self, l: usize) -> &DiagonalGaussian {
        &self.stages[2 * l + 1]
    }
}

/// Exact affine pushforward of a factorized Gaussian.
pub fn mm_linear(layer: &Layer, input: &DiagonalGaussian) -> Result<DiagonalGaussian> {
    if layer.in_dim() != input.len() {
        return Err(Error::dim(format!(
            "layer expects {} inputs, belief has {}",
            layer.in_dim(),
            input.len()
        )));
    }
    let mean = layer.weights.dot(&input.mean) + &layer.bias;
    let var = layer.weights.mapv(|w| w * w).dot(&input.var);
    counter::add_affine_passes(2);
    Ok(DiagonalGaussian { mean, var })
}

const TAIL_CUTOFF: f64 = 37.0;

/// Mean and variance of `max(0, X)` for `X ~ N(μ, σ²)`.
///
/// Zero `σ` is the point-mass limit `(max(0, μ), 0)`. For `α = μ/σ ≥ 0` the
/// moments are evaluated in the rearranged form `μ + σ(φ(α) − αΦ(−α))`, which
/// avoids the cancellation of `E[Y²] − E[Y]²` when `α` is large.
#[inline]
pub fn relu_moments(mu: f64, sigma: f64) -> (f64, f64) {
    if sigma <= 0.0 {
        return (mu.max(0.0), 0.0);
    }
    let alpha = (mu / sigma).clamp(-SATURATION, SATURATION);
    // Past |α| = 37 the tail terms are below 1e-300 and only feed subnormal
    // arithmetic, so return the saturated moments directly.
    if alpha >= TAIL_CUTOFF {
        return (mu, sigma * sigma);
    }
    if alpha <= -TAIL_CUTOFF {
        return (0.0, 0.0);
    }
    let pdf = std_normal_pdf(alpha);
    if alpha >= 0.0 {
        let tail = std_normal_cdf(-alpha);
        let excess = (pdf - alpha * tail).max(0.0);
        let ratio = 1.0 + (alpha * alpha - 1.0) * tail - alpha * pdf - excess * excess;
        (mu + sigma * excess, sigma * sigma * ratio.clamp(0.0, 1.0))
    } else {
        let cdf = std_normal_cdf(alpha);
        let m_std = (alpha * cdf + pdf).max(0.0);
        let second = (alpha * alpha + 1.0) * cdf + alpha * pdf;
        let ratio = second - m_std * m_std;
        (sigma * m_std, sigma * sigma * ratio.clamp(0.0, 1.0))
    }
}

pub fn mm_relu(input: &DiagonalGaussian) -> DiagonalGaussian {
    let mut mean = Array1::zeros(input.len());
    let mut var = Array1::zeros(input.len());
    Zip::from(&mut mean)
        .and(&mut var)
        .and(&input.mean)
        .and(&input.var)
        .for_each(|m, v, &mu, &s2| {
            (*m, *v) = relu_moments(mu, s2.sqrt());
        });
    DiagonalGaussian { mean, var }
}

/// Progressive moment matching through every layer of `params`.
pub fn mm_forward(params: &MlpParams, input: &DiagonalGaussian) -> Result<(DiagonalGaussian, PropagationTrace)> {
    let depth = params.depth();
    let mut stages = Vec::with_capacity(2 * depth - 1);
    let mut h = input.clone();
    for (l, layer) in params.layers().iter().enumerate() {
        let pre = mm_linear(layer, &h)?;
        if l + 1 < depth {
            h = mm_relu(&pre);
            stages.push(pre);
            stages.push(h.clone());
        } else {
            h = pre.clone();
            stages.push(pre);
        }
    }
    Ok((h, PropagationTrace { stages }))
}

/// Row-batched [`mm_forward`] without a trace: each row of `means`/`vars` is
/// an independent belief. Returns the output means and variances.
pub fn mm_forward_batch(
    params: &MlpParams,
    means: ArrayView2<f64>,
    vars: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if means.dim() != vars.dim() {
        return Err(Error::dim("mean and variance batches differ in shape"));
    }
    if means.ncols() != params.input_dim() {
        return Err(Error::dim(format!(
            "network expects {} inputs, beliefs have {}",
            params.input_dim(),
            means.ncols()
        )));
    }
    let depth = params.depth();
    let mut m = means.to_owned();
    let mut v = vars.to_owned();
    for (l, layer) in params.layers().iter().enumerate() {
        let w2 = layer.weights.mapv(|w| w * w);
        let mut next_m = m.dot(&layer.weights.t());
        next_m += &layer.bias;
        let mut next_v = v.dot(&w2.t());
        if l + 1 < depth {
            Zip::from(&mut next_m).and(&mut next_v).for_each(|mu, s2| {
                (*mu, *s2) = relu_moments(*mu, s2.sqrt());
            });
        }
        m = next_m;
        v = next_v;
    }
    counter::add_affine_passes(2 * (means.nrows() * depth) as u64);
    Ok((m, v))
}

/// Convenience: output belief of a scalar-output network as `(μ, σ)`.
pub fn scalar_output(params: &MlpParams, input: &DiagonalGaussian) -> Result<(f64, f64)> {
    let (out, _) = mm_forward(params, input)?;
    if out.len() != 1 {
        return Err(Error::dim(format!("expected a scalar output, got {}", out.len())));
    }
    Ok((out.mean[0], out.var[0].sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;
    use ndarray::array;
    use proptest::prelude::{prop_assert, prop_assume, proptest};
    use rand::Rng;

    fn layer(w: Array2<f64>, b: Array1<f64>) -> Layer {
        Layer::new(w, b).unwrap()
    }

    #[test]
    fn linear_identity_is_noop() {
        let x = DiagonalGaussian::from_slices(&[0.5, -1.0], &[0.2, 3.0]).unwrap();
        let y = mm_linear(&layer(Array2::eye(2), Array1::zeros(2)), &x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn linear_sums_independent_normals() {
        let x = DiagonalGaussian::from_slices(&[1.0, 2.0], &[0.25, 0.25]).unwrap();
        let y = mm_linear(&layer(array![[1.0, 1.0]], array![0.0]), &x).unwrap();
        assert_eq!(y.mean()[0], 3.0);
        assert_eq!(y.var()[0], 0.5);
    }

    #[test]
    fn point_mass_matches_forward() {
        let mut rng = RngStream::new(1, 0).rng();
        let net = MlpParams::glorot(&[3, 8, 8, 2], &mut rng);
        let x = array![0.3, -1.2, 2.0];
        let (out, trace) = mm_forward(&net, &DiagonalGaussian::point(x.clone())).unwrap();
        let want = net.forward(x.as_slice().unwrap()).unwrap();
        for (got, want) in out.mean().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(out.var().iter().all(|&v| v == 0.0));
        assert_eq!(trace.stages().len(), 5);
        assert_eq!(trace.depth(), 3);
    }

    #[test]
    fn linear_network_is_closed_form() {
        let w = array![[0.5, -2.0, 1.0]];
        let net = MlpParams::new(vec![layer(w.clone(), array![0.3])]).unwrap();
        let x = DiagonalGaussian::from_slices(&[1.0, 0.0, -1.0], &[0.1, 0.2, 0.3]).unwrap();
        let (out, trace) = mm_forward(&net, &x).unwrap();
        assert!((out.mean()[0] - (0.5 - 1.0 + 0.3)).abs() < 1e-15);
        assert!((out.var()[0] - (0.25 * 0.1 + 4.0 * 0.2 + 0.3)).abs() < 1e-15);
        assert_eq!(trace.stages().len(), 1);
    }

    #[test]
    fn relu_standard_normal() {
        let (m, v) = relu_moments(0.0, 1.0);
        // Closed form: E[Y] = 1/√(2π), var = (1 − 1/π)/2.
        assert!((m - 0.398_942_3).abs() < 1e-7);
        assert!((v - 0.5 * (1.0 - std::f64::consts::FRAC_1_PI)).abs() < 1e-15);
        assert!((v - 0.340_845_1).abs() < 1e-7);
    }

    #[test]
    fn relu_saturated_regimes() {
        let (m, v) = relu_moments(3.0, 0.1);
        assert!((m - 3.0).abs() < 1e-6 && (v - 0.01).abs() < 1e-6);
        let (m, v) = relu_moments(-3.0, 0.1);
        assert!(m.abs() < 1e-6 && v.abs() < 1e-6);
        assert_eq!(relu_moments(-2.0, 0.0), (0.0, 0.0));
        assert_eq!(relu_moments(2.0, 0.0), (2.0, 0.0));
        // Far tails stay finite and clamped.
        let (m, v) = relu_moments(-1e3, 1e-3);
        assert!(m >= 0.0 && v >= 0.0 && m.is_finite());
    }

    #[test]
    fn concat_examples() {
        let a = DiagonalGaussian::scalar(1.0, 0.1).unwrap();
        let b = DiagonalGaussian::scalar(2.0, 0.0).unwrap();
        let c = concat_beliefs(&a, &b);
        assert_eq!(c.mean().to_vec(), vec![1.0, 2.0]);
        assert_eq!(c.var().to_vec(), vec![0.1, 0.0]);
        assert_eq!(concat_beliefs(&a, &DiagonalGaussian::empty()), a);
    }

    #[test]
    fn block_diagonal_equals_per_block() {
        let a = DiagonalGaussian::from_slices(&[1.0, -0.5], &[0.3, 0.1]).unwrap();
        let b = DiagonalGaussian::from_slices(&[2.0], &[0.7]).unwrap();
        let wa = array![[1.0, 2.0], [0.5, -1.0]];
        let wb = array![[3.0]];
        let mut w = Array2::zeros((3, 3));
        w.slice_mut(ndarray::s![..2, ..2]).assign(&wa);
        w.slice_mut(ndarray::s![2.., 2..]).assign(&wb);
        let joint = mm_linear(&layer(w, Array1::zeros(3)), &a.concat(&b)).unwrap();
        let ya = mm_linear(&layer(wa, Array1::zeros(2)), &a).unwrap();
        let yb = mm_linear(&layer(wb, Array1::zeros(1)), &b).unwrap();
        assert_eq!(joint, ya.concat(&yb));
    }

    #[test]
    fn invalid_beliefs_rejected() {
        assert!(DiagonalGaussian::from_slices(&[0.0], &[-1.0]).is_err());
        assert!(DiagonalGaussian::from_slices(&[0.0, 1.0], &[1.0]).is_err());
        let net = MlpParams::glorot(&[2, 1], &mut RngStream::new(0, 0).rng());
        assert!(mm_forward(&net, &DiagonalGaussian::scalar(0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = RngStream::new(5, 0).rng();
        let net = MlpParams::glorot(&[4, 16, 16, 1], &mut rng);
        let means = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let vars = Array2::from_shape_fn((7, 4), |_| rng.random_range(0.0..0.5));
        let (bm, bv) = mm_forward_batch(&net, means.view(), vars.view()).unwrap();
        for i in 0..7 {
            let x = DiagonalGaussian::new(means.row(i).to_owned(), vars.row(i).to_owned()).unwrap();
            let (out, _) = mm_forward(&net, &x).unwrap();
            assert!((out.mean()[0] - bm[[i, 0]]).abs() < 1e-12);
            assert!((out.var()[0] - bv[[i, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_affine_passes_per_layer() {
        let net = MlpParams::glorot(&[3, 8, 8, 1], &mut RngStream::new(2, 0).rng());
        let x = DiagonalGaussian::from_slices(&[0.0; 3], &[1.0; 3]).unwrap();
        counter::reset_affine_passes();
        mm_forward(&net, &x).unwrap();
        assert_eq!(counter::affine_passes(), 2 * 3);
        counter::reset_affine_passes();
        net.forward(&[0.0; 3]).unwrap();
        assert_eq!(counter::affine_passes(), 3);
    }

    proptest! {
        #[test]
        fn matched_mean_dominates_and_variance_shrinks(mu in -50.0f64..50.0, sigma in 1e-3f64..20.0) {
            let (m, v) = relu_moments(mu, sigma);
            prop_assert!(m >= mu);
            prop_assert!(v <= sigma * sigma);
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn matched_cdf_lies_below_on_negative_axis(mu in -5.0f64..5.0, sigma in 0.05f64..5.0) {
            let (m, v) = relu_moments(mu, sigma);
            let s = v.sqrt();
            // A fully clipped belief collapses to a point mass at 0.
            prop_assume!(s > 0.0);
            for i in 0..=200 {
                let u = -10.0 * sigma * i as f64 / 200.0;
                let lhs = std_normal_cdf((u - m) / s);
                let rhs = std_normal_cdf((u - mu) / sigma);
                prop_assert!(lhs <= rhs + 1e-12, "u={} lhs={} rhs={}", u, lhs, rhs);
            }
        }
    }
}
