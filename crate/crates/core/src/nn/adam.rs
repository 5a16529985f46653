
use super::MlpParams;
use crate::error::{Error, Result};

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: MlpParams,
    second: MlpParams,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first) {
            return Err(Error::dim("gradient, parameter and optimizer shapes differ"));
        }
        for (l, g) in grads.layers().iter().enumerate() {
            if !g.weights.iter().chain(g.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient in layer {l}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, m), v), g) in params
            .layers_mut()
            .iter_mut()
            .zip(self.first.layers_mut())
            .zip(self.second.layers_mut())
            .zip(grads.layers())
        {
            ndarray::Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Adam on a single scalar (used for the entropy temperature).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    step: u64,
    pub lr: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self { m: 0.0, v: 0.0, step: 0, lr }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Training("non-finite scalar gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        let m_hat = self.m / (1.0 - 0.9f64.powi(t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(t));
        *param -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
        Ok(())
    }
}
