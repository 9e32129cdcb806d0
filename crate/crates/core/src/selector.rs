//! Picks the model depth minimizing tracking plus foveated-rendering latency.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{eval_latency, GeometryError, LatencyBudget, LatencyProfile, Resolution};

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("depth profile is empty")]
    Empty,
    #[error("depth {0} appears more than once")]
    DuplicateDepth(usize),
    #[error("depth {depth}: {reason}")]
    BadEntry { depth: usize, reason: String },
    #[error("depth profile csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Measurements of one sub-network depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEntry {
    pub depth: usize,
    pub t_tracking_ms: f64,
    pub p90_deg: f64,
    pub p95_deg: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthProfile {
    entries: Vec<DepthEntry>,
}

impl DepthProfile {
    /// Validates and sorts entries by depth.
    pub fn new(mut entries: Vec<DepthEntry>) -> Result<Self, SelectError> {
        if entries.is_empty() {
            return Err(SelectError::Empty);
        }
        entries.sort_by_key(|e| e.depth);
        for w in entries.windows(2) {
            if w[0].depth == w[1].depth {
                return Err(SelectError::DuplicateDepth(w[0].depth));
            }
        }
        for e in &entries {
            let bad = |reason: &str| SelectError::BadEntry {
                depth: e.depth,
                reason: reason.into(),
            };
            if !(e.t_tracking_ms.is_finite() && e.t_tracking_ms > 0.0) {
                return Err(bad("tracking latency must be positive"));
            }
            if !(e.p90_deg.is_finite() && e.p95_deg.is_finite() && e.p90_deg >= 0.0 && e.p95_deg >= e.p90_deg) {
                return Err(bad("percentiles must satisfy 0 <= p90 <= p95"));
            }
            if !(e.flops.is_finite() && e.flops >= 0.0) {
                return Err(bad("flops must be >= 0"));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[DepthEntry] {
        &self.entries
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SelectError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let entries = r
            .deserialize::<DepthEntry>()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| SelectError::Csv(format!("row {}: {e}", i + 2))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, SelectError> {
        let f = std::fs::File::open(path).map_err(|e| SelectError::Csv(format!("{}: {e}", path.display())))?;
        Self::read_csv(f)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SelectError> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e).map_err(|e| SelectError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| SelectError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Percentile {
    P90,
    P95,
}

impl std::str::FromStr for Percentile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P90" | "90" => Ok(Self::P90),
            "P95" | "95" => Ok(Self::P95),
            other => Err(format!("unknown percentile `{other}` (expected P90 or P95)")),
        }
    }
}

impl Percentile {
    pub fn of(&self, e: &DepthEntry) -> f64 {
        match self {
            Percentile::P90 => e.p90_deg,
            Percentile::P95 => e.p95_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionQuery {
    pub resolution: Resolution,
    pub profile: LatencyProfile,
    pub percentile: Percentile,
    pub theta_i_deg: f64,
    pub t_sensing_ms: f64,
    pub t_comm_ms: f64,
}

impl SelectionQuery {
    pub fn new(profile: LatencyProfile, percentile: Percentile) -> Self {
        Self {
            resolution: profile.resolution,
            profile,
            percentile,
            theta_i_deg: 5.0,
            t_sensing_ms: 0.0,
            t_comm_ms: 0.0,
        }
    }
}

/// Rendering latency when the fovea is inflated by the entry's error percentile.
pub fn render_latency_for_depth(entry: &DepthEntry, query: &SelectionQuery) -> Result<f64, SelectError> {
    Ok(eval_latency(&query.profile, query.theta_i_deg + query.percentile.of(entry))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub depth: usize,
    pub t_tracking_ms: f64,
    pub t_fr_ms: f64,
    /// Tracking plus rendering latency, the selection objective.
    pub t_total_ms: f64,
    pub budget: LatencyBudget,
}

/// Exhaustive argmin of tracking plus rendering latency; ties go to the
/// smaller depth.
pub fn select(depths: &DepthProfile, query: &SelectionQuery) -> Result<Selection, SelectError> {
    let mut best: Option<Selection> = None;
    for e in depths.entries() {
        let t_fr = render_latency_for_depth(e, query)?;
        let total = e.t_tracking_ms + t_fr;
        if best.is_none_or(|b| total < b.t_total_ms) {
            best = Some(Selection {
                depth: e.depth,
                t_tracking_ms: e.t_tracking_ms,
                t_fr_ms: t_fr,
                t_total_ms: total,
                budget: LatencyBudget::new(query.t_sensing_ms, query.t_comm_ms, e.t_tracking_ms, t_fr)?,
            });
        }
    }
    best.ok_or(SelectError::Empty)
}
