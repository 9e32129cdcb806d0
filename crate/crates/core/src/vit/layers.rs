//! Dense building blocks with explicit backward passes. Activations are
//! row-major `rows x features` slices.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite");
        let mut l = Self::zeros(in_dim, out_dim);
        l.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        l
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `y = x W^T + b` for `rows` input rows.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for xi in x.chunks_exact(self.in_dim) {
            for (o, w) in self.weight.chunks_exact(self.in_dim).enumerate() {
                y.push(self.bias[o] + dot(xi, w));
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        let mut dx = vec![0.0; rows * self.in_dim];
        for i in 0..rows {
            let xi = &x[i * self.in_dim..(i + 1) * self.in_dim];
            let dyi = &dy[i * self.out_dim..(i + 1) * self.out_dim];
            let dxi = &mut dx[i * self.in_dim..(i + 1) * self.in_dim];
            for (o, &g) in dyi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let gw = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for k in 0..self.in_dim {
                    gw[k] += g * xi[k];
                    dxi[k] += g * w[k];
                }
            }
        }
        dx
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Normalized input and reciprocal std per row, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = self.dim();
        let rows = x.len() / d;
        let mut y = Vec::with_capacity(x.len());
        let mut cache = LnCache {
            xhat: Vec::with_capacity(x.len()),
            rstd: Vec::with_capacity(rows),
        };
        for row in x.chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            cache.rstd.push(rstd);
            for (k, v) in row.iter().enumerate() {
                let xh = (v - mean) * rstd;
                cache.xhat.push(xh);
                y.push(self.gamma[k] * xh + self.beta[k]);
            }
        }
        (y, cache)
    }

    pub fn backward(&self, cache: &LnCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.dim();
        let mut dx = vec![0.0; dy.len()];
        for (r, (dyr, xh)) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).enumerate() {
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for k in 0..d {
                grad.gamma[k] += dyr[k] * xh[k];
                grad.beta[k] += dyr[k];
                let dxh = dyr[k] * self.gamma[k];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[k];
            }
            mean_dxh /= d as f64;
            mean_dxh_xh /= d as f64;
            let rstd = cache.rstd[r];
            for k in 0..d {
                let dxh = dyr[k] * self.gamma[k];
                dx[r * d + k] = rstd * (dxh - mean_dxh - xh[k] * mean_dxh_xh);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
