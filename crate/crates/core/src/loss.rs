//! Training objectives over per-sample squared gaze errors
//! `x_d = (pitch - pitch_gt)^2 + (yaw - yaw_gt)^2` in radians squared.
//!
//! Every loss comes in a plain form and a `*_grad` form returning the value
//! together with `dL/dx_d`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, LatencyProfile};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("squared error must be finite and >= 0, got {0}")]
    BadError(f64),
    #[error("scaling factor N must be finite and > 0, got {0}")]
    BadScale(f64),
    #[error("no batch for exit {0}")]
    MissingExit(usize),
    #[error("performance-aware loss needs a latency profile")]
    MissingProfile,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-sample squared angular errors of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchErrors {
    values: Vec<f64>,
}

impl BatchErrors {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        if let Some(&v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(LossError::BadError(v));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SmoothMax,
    PerformanceAware,
    Multires,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mse" => Ok(Self::Mse),
            "smooth_max" => Ok(Self::SmoothMax),
            "performance_aware" | "perf" => Ok(Self::PerformanceAware),
            "multires" => Ok(Self::Multires),
            other => Err(format!(
                "unknown loss `{other}` (expected mse, smooth_max, performance_aware or multires)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Temperature of the smooth max.
    pub n: f64,
    pub profile: Option<LatencyProfile>,
    pub theta_i_deg: f64,
    /// Weight per exit; exits absent here weigh 1.
    pub exit_weights: BTreeMap<usize, f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            n: 100.0,
            profile: None,
            theta_i_deg: 5.0,
            exit_weights: BTreeMap::new(),
        }
    }
}

impl LossConfig {
    pub fn with_profile(profile: LatencyProfile, theta_i_deg: f64) -> Self {
        Self {
            profile: Some(profile),
            theta_i_deg,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(LossError::BadScale(self.n));
        }
        Ok(())
    }

    pub fn exit_weight(&self, exit: usize) -> f64 {
        self.exit_weights.get(&exit).copied().unwrap_or(1.0)
    }
}

/// Mean of the squared errors.
pub fn mse_loss(batch: &BatchErrors) -> f64 {
    batch.values.iter().sum::<f64>() / batch.len() as f64
}

pub fn mse_loss_grad(batch: &BatchErrors) -> (f64, Vec<f64>) {
    (mse_loss(batch), vec![1.0 / batch.len() as f64; batch.len()])
}

/// `(1/N) ln sum exp(N x_d)` in shifted form.
pub fn smooth_max(batch: &BatchErrors, n: f64) -> f64 {
    let m = batch.max();
    m + batch.values.iter().map(|x| (n * (x - m)).exp()).sum::<f64>().ln() / n
}

/// Value and gradient; the gradient is `softmax(N x)`.
pub fn smooth_max_grad(batch: &BatchErrors, n: f64) -> (f64, Vec<f64>) {
    let m = batch.max();
    let w: Vec<f64> = batch.values.iter().map(|x| (n * (x - m)).exp()).collect();
    let s: f64 = w.iter().sum();
    (m + s.ln() / n, w.into_iter().map(|v| v / s).collect())
}

/// `U(s) = latency(theta_i + deg(sqrt(s)))` and `dU/ds`. The derivative at
/// `s = 0` is taken as 0.
pub fn latency_of_squared_error(profile: &LatencyProfile, theta_i_deg: f64, s: f64) -> Result<(f64, f64), LossError> {
    let root = s.sqrt();
    let (u, slope) = profile.eval_with_slope(theta_i_deg + root.to_degrees())?;
    let du = if root > 0.0 {
        slope * (180.0 / std::f64::consts::PI) * 0.5 / root
    } else {
        0.0
    };
    Ok((u, du))
}

/// Latency (ms) of the smooth-max error of the batch.
pub fn performance_aware_loss(batch: &BatchErrors, cfg: &LossConfig) -> Result<f64, LossError> {
    performance_aware_loss_grad(batch, cfg).map(|(v, _)| v)
}

pub fn performance_aware_loss_grad(batch: &BatchErrors, cfg: &LossConfig) -> Result<(f64, Vec<f64>), LossError> {
    cfg.validate()?;
    let profile = cfg.profile.as_ref().ok_or(LossError::MissingProfile)?;
    let (s, ds) = smooth_max_grad(batch, cfg.n);
    let (u, du) = latency_of_squared_error(profile, cfg.theta_i_deg, s)?;
    Ok((u, ds.into_iter().map(|g| g * du).collect()))
}

/// Weighted sum of the performance-aware loss over `exits`.
pub fn multires_loss(
    per_exit: &BTreeMap<usize, BatchErrors>,
    exits: &[usize],
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    multires_loss_grad(per_exit, exits, cfg).map(|(v, _)| v)
}

pub fn multires_loss_grad(
    per_exit: &BTreeMap<usize, BatchErrors>,
    exits: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, BTreeMap<usize, Vec<f64>>), LossError> {
    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for &e in exits {
        let batch = per_exit.get(&e).ok_or(LossError::MissingExit(e))?;
        let w = cfg.exit_weight(e);
        let (v, g) = performance_aware_loss_grad(batch, cfg)?;
        total += w * v;
        grads.insert(e, g.into_iter().map(|x| w * x).collect());
    }
    Ok((total, grads))
}

/// Evaluates `kind` on per-exit batches. Single-exit kinds use `final_exit`;
/// [`LossKind::Multires`] uses every exit in `per_exit`.
pub fn loss_and_grad(
    kind: LossKind,
    per_exit: &BTreeMap<usize, BatchErrors>,
    final_exit: usize,
    cfg: &LossConfig,
) -> Result<(f64, BTreeMap<usize, Vec<f64>>), LossError> {
    let single = |f: &dyn Fn(&BatchErrors) -> Result<(f64, Vec<f64>), LossError>| {
        let batch = per_exit.get(&final_exit).ok_or(LossError::MissingExit(final_exit))?;
        let (v, g) = f(batch)?;
        Ok((v, BTreeMap::from([(final_exit, g)])))
    };
    match kind {
        LossKind::Mse => single(&|b| Ok(mse_loss_grad(b))),
        LossKind::SmoothMax => {
            cfg.validate()?;
            single(&|b| Ok(smooth_max_grad(b, cfg.n)))
        }
        LossKind::PerformanceAware => single(&|b| performance_aware_loss_grad(b, cfg)),
        LossKind::Multires => {
            let exits: Vec<usize> = per_exit.keys().copied().collect();
            multires_loss_grad(per_exit, &exits, cfg)
        }
    }
}
