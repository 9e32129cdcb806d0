//! Bundled synthetic latency profiles and depth measurements.

use crate::geometry::{LatencyProfile, Resolution};
use crate::selector::DepthProfile;

const HMD_720P: &str = include_str!("../fixtures/hmd_720p.csv");
const HMD_1080P: &str = include_str!("../fixtures/hmd_1080p.csv");
const HMD_1440P: &str = include_str!("../fixtures/hmd_1440p.csv");
const DEPTHS_HMD: &str = include_str!("../fixtures/depths_hmd.csv");

/// Head-mounted-display rendering latency profile. `Custom` maps to 1080P.
pub fn hmd_profile(resolution: Resolution) -> LatencyProfile {
    let (csv, res) = match resolution {
        Resolution::P720 => (HMD_720P, Resolution::P720),
        Resolution::P1440 => (HMD_1440P, Resolution::P1440),
        Resolution::P1080 | Resolution::Custom => (HMD_1080P, Resolution::P1080),
    };
    LatencyProfile::read_csv(csv.as_bytes())
        .expect("bundled profile is valid")
        .with_labels("hmd", res)
}

/// Per-depth tracking latency and error percentiles of a six-exit model.
pub fn hmd_depths() -> DepthProfile {
    DepthProfile::read_csv(DEPTHS_HMD.as_bytes()).expect("bundled depth profile is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::eval_latency;

    #[test]
    fn profiles_parse() {
        for r in [Resolution::P720, Resolution::P1080, Resolution::P1440] {
            assert_eq!(hmd_profile(r).resolution, r);
        }
        let p = hmd_profile(Resolution::P1080);
        let ratio = eval_latency(&p, 20.0).unwrap() / eval_latency(&p, 5.0).unwrap();
        assert!((1.8..2.2).contains(&ratio));
        assert_eq!(hmd_depths().entries().len(), 6);
    }
}
