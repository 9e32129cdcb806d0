//! Turns frames into normalized square model inputs, either from the whole
//! frame or from the pupil-centered crop window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cropper::{crop_around, locate_and_crop, CropConfig, CropError, CropWindow};
use crate::image::GrayFrame;
use crate::synth::{AugmentConfig, LabeledFrame, Normalization};
use crate::trainer::Sample;
use crate::vit::ModelInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Preprocessing {
    /// Whole frame squeezed to the model side.
    Full,
    /// Pupil-centered window; frames without a pupil fall back to the
    /// window at the frame center.
    Cropped(CropConfig),
}

/// Source rectangle and whether the cropper found a pupil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceRegion {
    pub rect: (f64, f64, f64, f64),
    pub window: Option<CropWindow>,
}

pub fn source_region(frame: &GrayFrame, mode: &Preprocessing) -> Result<SourceRegion, CropError> {
    let (w, h) = (frame.width(), frame.height());
    match mode {
        Preprocessing::Full => Ok(SourceRegion {
            rect: (0.0, 0.0, w as f64, h as f64),
            window: None,
        }),
        Preprocessing::Cropped(cfg) => {
            let found = locate_and_crop(frame, cfg)?;
            let win = match found {
                Some(win) => win,
                None => crop_around(
                    ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
                    (cfg.window_width, cfg.window_height),
                    (w, h),
                )?,
            };
            Ok(SourceRegion {
                rect: (win.x0 as f64, win.y0 as f64, win.width as f64, win.height as f64),
                window: found,
            })
        }
    }
}

pub fn input_from_rect(frame: &GrayFrame, rect: (f64, f64, f64, f64), side: usize, norm: &Normalization) -> ModelInput {
    let pixels = frame.resample_rect(rect, side, side).into_iter().map(|v| norm.apply(v)).collect();
    ModelInput::new(side, pixels)
}

pub fn to_model_input(
    frame: &GrayFrame,
    mode: &Preprocessing,
    side: usize,
    norm: &Normalization,
) -> Result<(ModelInput, SourceRegion), CropError> {
    let region = source_region(frame, mode)?;
    Ok((input_from_rect(frame, region.rect, side, norm), region))
}

/// Augmented input: a random sub-rectangle of the source region.
pub fn augmented_input<R: Rng>(
    frame: &GrayFrame,
    region: &SourceRegion,
    side: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ModelInput {
    input_from_rect(frame, cfg.draw_rect(region.rect, rng), side, &cfg.normalization)
}

/// Model inputs and source regions for every frame, in order.
pub fn prepare_samples(
    frames: &[LabeledFrame],
    mode: &Preprocessing,
    side: usize,
    norm: &Normalization,
) -> Result<(Vec<Sample>, Vec<SourceRegion>), CropError> {
    let out = frames
        .par_iter()
        .map(|f| {
            let (input, region) = to_model_input(&f.frame, mode, side, norm)?;
            Ok((Sample { input, gaze: f.gaze }, region))
        })
        .collect::<Result<Vec<_>, CropError>>()?;
    Ok(out.into_iter().unzip())
}

/// `copies` augmented variants per frame. Frame `i` draws from its own
/// stream of `seed`, so the result does not depend on scheduling.
pub fn augmented_samples(
    frames: &[LabeledFrame],
    regions: &[SourceRegion],
    side: usize,
    cfg: &AugmentConfig,
    copies: usize,
    seed: u64,
) -> Vec<Sample> {
    frames
        .par_iter()
        .zip(regions)
        .enumerate()
        .flat_map_iter(|(i, (f, region))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..copies)
                .map(|_| Sample {
                    input: augmented_input(&f.frame, region, side, cfg, &mut rng),
                    gaze: f.gaze,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}
