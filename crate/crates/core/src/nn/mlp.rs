//! Dense ReLU multilayer perceptrons with batched forward and reverse passes.
//!
//! Hidden layers use `max(0, ·)`; the output layer is affine. Batches are
//! row-major: one sample per row.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::counter;
use crate::error::{Error, Result};

/// One affine layer, `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::dim("empty weight matrix"));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Parameters of an `L`-layer ReLU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Activations retained by [`MlpParams::forward_cached`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer; the last entry is the network output.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("cache holds at least one layer")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.inputs[0]
    }
}

/// Gradients of a scalar objective with respect to every parameter (same
/// shapes as the network) and to the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: MlpParams,
    pub input: Array2<f64>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("an MLP needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::dim(format!(
                    "layer {} expects {} inputs but layer {} emits {}",
                    l + 1,
                    pair[1].in_dim(),
                    l,
                    pair[0].out_dim()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            let finite = layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every width from the
    /// input to the output, so `sizes.len() == L + 1`.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output width");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input to output (`L + 1` entries).
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::dim(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                width
            )));
        }
        Ok(())
    }

    /// Point-value forward pass for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::dim(e.to_string()))?;
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(relu);
            h = affine(layer, h.view());
        }
        counter::add_affine_passes((x.nrows() * self.layers.len()) as u64);
        Ok(h)
    }

    /// Forward pass that keeps every intermediate for [`Self::backward_batch`].
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, inputs[l].view());
            if l + 1 < self.layers.len() {
                inputs.push(z.mapv(relu));
            }
            pre.push(z);
        }
        counter::add_affine_passes((x.nrows() * self.layers.len()) as u64);
        Ok(ForwardCache { inputs, pre })
    }

    /// Gradient of `Σ_rows upstream · output` for a single input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let xb = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::dim(e.to_string()))?;
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| Error::dim(e.to_string()))?;
        let cache = self.forward_cached(xb)?;
        self.backward_batch(&cache, ub)
    }

    /// Reverse pass over a cached batch. Parameter gradients are summed over
    /// rows; the input gradient keeps one row per sample.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<Gradients> {
        let (params, input) = self.backprop(cache, upstream, true)?;
        Ok(Gradients {
            params: params.expect("parameter gradients requested"),
            input,
        })
    }

    /// Reverse pass that only produces the input gradient.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.backprop(cache, upstream, false)?.1)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
        want_params: bool,
    ) -> Result<(Option<MlpParams>, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::dim(format!(
                "upstream has shape {:?}, output has shape {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let mut grads = want_params.then(|| self.zeros_like());
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[l];
                gl.weights = delta.t().dot(&cache.inputs[l]);
                gl.bias = delta.sum_axis(Axis(0));
            }
            let mut back = delta.dot(&self.layers[l].weights);
            if l > 0 {
                // ReLU derivative, taken as 0 at exactly 0.
                Zip::from(&mut back).and(&cache.pre[l - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = back;
        }
        Ok((grads, delta))
    }

    /// `self ← τ·source + (1 − τ)·self`.
    pub fn soft_update_from(&mut self, source: &MlpParams, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weights.zip_mut_with(&src.weights, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            dst.bias.zip_mut_with(&src.bias, |d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }

    /// Adds `scale · other` to every parameter.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.scaled_add(scale, &src.weights);
            dst.bias.scaled_add(scale, &src.bias);
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    /// Induced L1 operator norm of every weight matrix, in layer order.
    pub fn operator_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| induced_l1_norm(l.weights.view()).expect("layers are never empty"))
            .collect()
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn affine(layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

/// Induced `‖·‖₁→₁` operator norm: the largest absolute column sum.
pub fn induced_l1_norm(a: ArrayView2<f64>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::dim("operator norm of an empty matrix"));
    }
    Ok(a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Horizontal concatenation of two row-aligned batches.
pub fn hcat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.nrows(), b.nrows(), "row counts differ");
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

/// Single-row view helper.
pub fn row_matrix(x: ArrayView1<f64>) -> Array2<f64> {
    x.to_owned().insert_axis(Axis(0))
}
