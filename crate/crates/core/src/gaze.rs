use serde::{Deserialize, Serialize};

/// Gaze direction as (pitch, yaw) in radians.
///
/// The unit ray is `(cos(pitch) sin(yaw), sin(pitch), cos(pitch) cos(yaw))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeVector {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeVector {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    pub fn from_degrees(pitch_deg: f64, yaw_deg: f64) -> Self {
        Self::new(pitch_deg.to_radians(), yaw_deg.to_radians())
    }

    pub fn unit_ray(&self) -> [f64; 3] {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        [cp * sy, sp, cp * cy]
    }

    /// `||self - other||^2` over the (pitch, yaw) components.
    pub fn squared_distance(&self, other: &GazeVector) -> f64 {
        let dp = self.pitch - other.pitch;
        let dy = self.yaw - other.yaw;
        dp * dp + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.pitch.is_finite() && self.yaw.is_finite()
    }
}
