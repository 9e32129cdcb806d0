//! Foveal-region geometry, the piecewise-linear latency function and the
//! per-frame latency budget.
//!
//! Radii follow `r = rho * d * tan(theta)` for both the error-free and the
//! inflated region, so that pixel density scales the physical radius into
//! pixels consistently.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("eccentricity {theta_f_deg}° is outside [0°, 90°)")]
    AngleOutOfRange { theta_f_deg: f64 },
    #[error("profile needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("duplicate eccentricity {0}° in profile samples")]
    DuplicateEccentricity(f64),
    #[error("non-finite or negative value in profile sample ({0}, {1})")]
    BadSample(f64, f64),
    #[error(
        "profile is not monotone: latency drops from {lat_a} ms at {ecc_a}° to {lat_b} ms at {ecc_b}°"
    )]
    NonMonotone {
        ecc_a: f64,
        lat_a: f64,
        ecc_b: f64,
        lat_b: f64,
    },
    #[error("eccentricity must be >= 0, got {0}")]
    NegativeEccentricity(f64),
    #[error("latency component {0} must be finite and >= 0")]
    BadLatency(&'static str),
    #[error("profile csv: {0}")]
    Csv(String),
}

/// Fovea angle, viewing distance and pixel density of a display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovealGeometry {
    pub theta_i_deg: f64,
    pub distance: f64,
    pub pixel_density: f64,
}

impl FovealGeometry {
    pub fn new(theta_i_deg: f64, distance: f64, pixel_density: f64) -> Result<Self, GeometryError> {
        if !(theta_i_deg > 0.0 && theta_i_deg < 90.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "theta_i must lie in (0°, 90°), got {theta_i_deg}"
            )));
        }
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(GeometryError::InvalidGeometry(format!(
                "distance must be > 0, got {distance}"
            )));
        }
        if !(pixel_density > 0.0 && pixel_density.is_finite()) {
            return Err(GeometryError::InvalidGeometry(format!(
                "pixel density must be > 0, got {pixel_density}"
            )));
        }
        Ok(Self {
            theta_i_deg,
            distance,
            pixel_density,
        })
    }

    fn radius_at(&self, theta_deg: f64) -> f64 {
        self.pixel_density * self.distance * theta_deg.to_radians().tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovealRegion {
    /// Radius without tracking error, in pixels.
    pub r_i: f64,
    /// Radius inflated to cover the tracking error, in pixels.
    pub r_f: f64,
    /// `r_f - r_i`.
    pub c: f64,
    pub theta_f_deg: f64,
}

/// Foveal radius after inflating the fovea angle by the tracking error `delta_theta_deg`.
pub fn foveal_radius(geom: &FovealGeometry, delta_theta_deg: f64) -> Result<FovealRegion, GeometryError> {
    let theta_f_deg = geom.theta_i_deg + delta_theta_deg;
    if !(0.0..90.0).contains(&theta_f_deg) || delta_theta_deg < 0.0 {
        return Err(GeometryError::AngleOutOfRange { theta_f_deg });
    }
    let r_i = geom.radius_at(geom.theta_i_deg);
    let r_f = geom.radius_at(theta_f_deg);
    Ok(FovealRegion {
        r_i,
        r_f,
        c: r_f - r_i,
        theta_f_deg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "720P")]
    P720,
    #[serde(rename = "1080P")]
    P1080,
    #[serde(rename = "1440P")]
    P1440,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resolution::P720 => "720P",
            Resolution::P1080 => "1080P",
            Resolution::P1440 => "1440P",
            Resolution::Custom => "custom",
        })
    }
}

impl std::str::FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "720p" | "720" => Ok(Resolution::P720),
            "1080p" | "1080" => Ok(Resolution::P1080),
            "1440p" | "1440" => Ok(Resolution::P1440),
            "custom" => Ok(Resolution::Custom),
            other => Err(format!("unknown resolution `{other}` (expected 720P, 1080P, 1440P or custom)")),
        }
    }
}

/// A knot of the latency profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub eccentricity_deg: f64,
    pub latency_ms: f64,
}

/// Monotone piecewise-linear map from foveal eccentricity to rendering latency.
///
/// Below the first knot the latency is clamped to the first value; beyond the
/// last knot it is extended with the slope of the last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    knots: Vec<Knot>,
    pub device_label: String,
    pub resolution: Resolution,
}

impl LatencyProfile {
    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn with_labels(mut self, device: impl Into<String>, resolution: Resolution) -> Self {
        self.device_label = device.into();
        self.resolution = resolution;
        self
    }

    /// Latency and its right-hand derivative (ms per degree) at `theta_deg`.
    pub fn eval_with_slope(&self, theta_deg: f64) -> Result<(f64, f64), GeometryError> {
        if !(theta_deg >= 0.0) {
            return Err(GeometryError::NegativeEccentricity(theta_deg));
        }
        let k = &self.knots;
        let first = k[0];
        if theta_deg < first.eccentricity_deg {
            return Ok((first.latency_ms, 0.0));
        }
        // Segment i spans [k[i], k[i+1]); the last segment also covers extrapolation.
        let last_seg = k.len() - 2;
        let seg = k
            .partition_point(|kn| kn.eccentricity_deg <= theta_deg)
            .saturating_sub(1)
            .min(last_seg);
        let (a, b) = (k[seg], k[seg + 1]);
        let slope = (b.latency_ms - a.latency_ms) / (b.eccentricity_deg - a.eccentricity_deg);
        if theta_deg == a.eccentricity_deg {
            return Ok((a.latency_ms, slope));
        }
        if theta_deg == b.eccentricity_deg {
            return Ok((b.latency_ms, slope));
        }
        Ok((a.latency_ms + slope * (theta_deg - a.eccentricity_deg), slope))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GeometryError> {
        let mut w = csv::Writer::from_writer(writer);
        for knot in &self.knots {
            w.serialize(knot).map_err(|e| GeometryError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| GeometryError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeometryError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers().map_err(|e| GeometryError::Csv(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["eccentricity_deg", "latency_ms"] {
            return Err(GeometryError::Csv(format!(
                "expected header `eccentricity_deg,latency_ms`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for (line, row) in r.deserialize::<Knot>().enumerate() {
            let knot = row.map_err(|e| GeometryError::Csv(format!("row {}: {e}", line + 2)))?;
            samples.push((knot.eccentricity_deg, knot.latency_ms));
        }
        fit_profile(&samples)
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)
            .map_err(|e| GeometryError::Csv(format!("{}: {e}", path.display())))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::read_csv(file)?.with_labels(label, Resolution::Custom))
    }
}

/// Builds a latency profile from `(eccentricity_deg, latency_ms)` samples.
pub fn fit_profile(samples: &[(f64, f64)]) -> Result<LatencyProfile, GeometryError> {
    if samples.len() < 2 {
        return Err(GeometryError::TooFewSamples(samples.len()));
    }
    for &(e, l) in samples {
        if !e.is_finite() || !l.is_finite() || e < 0.0 || l < 0.0 {
            return Err(GeometryError::BadSample(e, l));
        }
    }
    let mut knots: Vec<Knot> = samples
        .iter()
        .map(|&(eccentricity_deg, latency_ms)| Knot {
            eccentricity_deg,
            latency_ms,
        })
        .collect();
    knots.sort_by(|a, b| a.eccentricity_deg.total_cmp(&b.eccentricity_deg));
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.eccentricity_deg == b.eccentricity_deg {
            return Err(GeometryError::DuplicateEccentricity(a.eccentricity_deg));
        }
        if b.latency_ms < a.latency_ms {
            return Err(GeometryError::NonMonotone {
                ecc_a: a.eccentricity_deg,
                lat_a: a.latency_ms,
                ecc_b: b.eccentricity_deg,
                lat_b: b.latency_ms,
            });
        }
    }
    Ok(LatencyProfile {
        knots,
        device_label: String::new(),
        resolution: Resolution::Custom,
    })
}

/// Rendering latency at eccentricity `theta_f_deg`.
pub fn eval_latency(profile: &LatencyProfile, theta_f_deg: f64) -> Result<f64, GeometryError> {
    profile.eval_with_slope(theta_f_deg).map(|(v, _)| v)
}

/// Per-frame latency components in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBudget {
    pub t_sensing_ms: f64,
    pub t_comm_ms: f64,
    pub t_tracking_ms: f64,
    pub t_fr_ms: f64,
}

impl LatencyBudget {
    pub fn new(t_sensing_ms: f64, t_comm_ms: f64, t_tracking_ms: f64, t_fr_ms: f64) -> Result<Self, GeometryError> {
        let budget = Self {
            t_sensing_ms,
            t_comm_ms,
            t_tracking_ms,
            t_fr_ms,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("t_sensing", self.t_sensing_ms),
            ("t_comm", self.t_comm_ms),
            ("t_tracking", self.t_tracking_ms),
            ("t_fr", self.t_fr_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GeometryError::BadLatency(name));
            }
        }
        Ok(())
    }
}

pub fn total_latency(budget: &LatencyBudget) -> f64 {
    budget.t_sensing_ms + budget.t_comm_ms + budget.t_tracking_ms + budget.t_fr_ms
}
