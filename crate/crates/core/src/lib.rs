//! Co-simulation toolkit for gaze-tracked foveated rendering.
//!
//! The pipeline runs from a near-eye frame to a rendering decision:
//! [`cropper`] finds the pupil and cuts a window around it, [`vit`] regresses
//! gaze with optional token pruning and early exits, [`loss`] scores batches
//! in latency units through [`geometry`], [`trainer`] fits and evaluates
//! models, and [`selector`] picks the depth that minimizes tracking plus
//! rendering latency.

pub mod cropper;
pub mod fixtures;
pub mod gaze;
pub mod geometry;
pub mod image;
pub mod loss;
pub mod preprocess;
pub mod selector;
pub mod synth;
pub mod trainer;
pub mod vit;

pub use gaze::GazeVector;
