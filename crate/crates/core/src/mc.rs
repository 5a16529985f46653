//! Monte Carlo reference for moment matching: sampled pushforwards through a
//! network, empirical moments, and one-dimensional Wasserstein distances.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussmm::DiagonalGaussian;
use crate::nn::{std_normal_cdf, MlpParams, RngStream};

/// Rows pushed through the network per chunk, to bound peak memory.
const CHUNK: usize = 1 << 15;

/// `N` output samples of a network under a Gaussian input, one per row.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    samples: Array2<f64>,
    stream: RngStream,
}

impl SampleBatch {
    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn stream(&self) -> RngStream {
        self.stream
    }

    /// Samples of output coordinate `j`, in draw order.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.column(j).to_vec()
    }
}

/// Per-dimension sample mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: Array1<f64>,
    /// Absent when `n == 1`.
    pub var: Option<Array1<f64>>,
    pub n: usize,
}

impl EmpiricalMoments {
    pub fn variance(&self) -> Result<&Array1<f64>> {
        self.var
            .as_ref()
            .ok_or(Error::InsufficientSamples { needed: 2, got: self.n })
    }

    /// Standard error of each mean coordinate, `σ̂ / √n`.
    pub fn std_error(&self) -> Result<Array1<f64>> {
        let n = self.n as f64;
        Ok(self.variance()?.mapv(|v| (v / n).sqrt()))
    }
}

/// Draws `n` inputs from `input` and applies the point-value forward pass.
pub fn mc_forward(params: &MlpParams, input: &DiagonalGaussian, n: usize, stream: RngStream) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let d = input.len();
    if d != params.input_dim() {
        return Err(Error::dim(format!(
            "network expects {} inputs, belief has {}",
            params.input_dim(),
            d
        )));
    }
    let mut rng = stream.rng();
    let std = input.std();
    let mut samples = Array2::zeros((n, params.output_dim()));
    let mut start = 0;
    while start < n {
        let rows = CHUNK.min(n - start);
        let mut x = Array2::zeros((rows, d));
        for mut row in x.rows_mut() {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                row[j] = input.mean()[j] + std[j] * z;
            }
        }
        let y = params.forward_batch(x.view())?;
        samples.slice_mut(ndarray::s![start..start + rows, ..]).assign(&y);
        start += rows;
    }
    Ok(SampleBatch { samples, stream })
}

/// Column means and unbiased (divisor `N − 1`) variances of a batch.
pub fn empirical_moments(batch: &SampleBatch) -> EmpiricalMoments {
    moments_of(&batch.samples)
}

pub(crate) fn moments_of(samples: &Array2<f64>) -> EmpiricalMoments {
    let n = samples.nrows();
    let mean = samples.mean_axis(Axis(0)).expect("batch is non-empty");
    let var = (n >= 2).then(|| {
        let mut acc = Array1::<f64>::zeros(samples.ncols());
        for row in samples.rows() {
            for (a, (&x, &m)) in acc.iter_mut().zip(row.iter().zip(&mean)) {
                *a += (x - m) * (x - m);
            }
        }
        acc / (n - 1) as f64
    });
    EmpiricalMoments { mean, var, n }
}

/// Mean and unbiased variance of a scalar sample.
pub fn scalar_moments(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Exact W1 between two empirical measures on the real line.
///
/// Equal sizes use the order-statistics formula `(1/n) Σ |a₍ᵢ₎ − b₍ᵢ₎|`.
/// Unequal sizes integrate `|Q_a(p) − Q_b(p)|` over the merged breakpoints of
/// the two step quantile functions. Inputs need not be sorted.
pub fn empirical_w1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (m, n) = (a.len(), b.len());
    if m == n {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / n as f64);
    }
    // Breakpoints i/m and j/n compared as (i+1)·n vs (j+1)·m in integers.
    let (mut i, mut j) = (0usize, 0usize);
    let mut p = 0.0;
    let mut total = 0.0;
    while i < m && j < n {
        let (ea, eb) = ((i + 1) * n, (j + 1) * m);
        let next = ea.min(eb) as f64 / (m * n) as f64;
        total += (next - p) * (a[i] - b[j]).abs();
        p = next;
        if ea <= eb {
            i += 1;
        }
        if eb <= ea {
            j += 1;
        }
    }
    Ok(total)
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Analytic W1 upper bound between two scalar Gaussians, `|Δμ| + |Δσ|`.
pub fn gaussian_w1_upper(a: &DiagonalGaussian, b: &DiagonalGaussian) -> Result<f64> {
    if a.len() != 1 || b.len() != 1 {
        return Err(Error::dim("W1 upper bound needs scalar beliefs"));
    }
    Ok((a.mean()[0] - b.mean()[0]).abs() + (a.var()[0].sqrt() - b.var()[0].sqrt()).abs())
}

/// Kolmogorov–Smirnov distance between a sample and `N(μ, σ²)`.
pub fn ks_to_normal(xs: &[f64], mu: f64, sigma: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("KS reference needs σ > 0".into()));
    }
    let xs = sorted(xs)?;
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf((x - mu) / sigma);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max))
}

/// Fits `N(μ̂_N, σ̂²_N)` to `xs` and returns one fresh draw from it, the
/// `y′_N` construction of the sampling-based estimator.
pub fn redraw_from_fit<R: Rng + ?Sized>(xs: &[f64], rng: &mut R) -> Result<f64> {
    let (mean, var) = scalar_moments(xs)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + var.sqrt() * z)
}

/// Two-sided Hoeffding tail `2 exp(−2 ε² N / range²)` for the mean of `N`
/// samples supported on an interval of width `range`.
pub fn hoeffding_tail(eps: f64, n: usize, range: f64) -> f64 {
    2.0 * (-2.0 * eps * eps * n as f64 / (range * range)).exp()
}
