use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fovea::cropper::{locate_and_crop, CropSession, CropWindow, EventDecision};
use fovea::fixtures;
use fovea::geometry::{LatencyProfile, Resolution};
use fovea::image::GrayFrame;
use fovea::loss::LossConfig;
use fovea::preprocess::{augmented_samples, prepare_samples};
use fovea::selector::{select as select_depth, DepthEntry, DepthProfile, Percentile, SelectionQuery};
use fovea::synth::{flip_right_eye, generate, load_corpus, write_labels, LabelRow, LabeledFrame, SceneParams, LABELS_FILE};
use fovea::trainer::{
    evaluate, finetune_pruned, split_indices, train as train_model, write_epoch_log, ErrorDistribution, Sample,
    TrainError,
};
use fovea::vit::{checkpoint, flops_estimate, GazeModel};

use crate::config::ExperimentSpec;
use crate::{Common, CropArgs, EvalArgs, FitProfileArgs, Internal, SelectArgs, SynthArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.fvnt";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train.json";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const EVAL_FILE: &str = "eval.json";
pub const DEPTHS_FILE: &str = "depths.csv";
pub const PROFILE_FILE: &str = "profile.csv";
pub const SELECTION_FILE: &str = "selection.json";

/// Loads the experiment file, applies the shared flags and creates the
/// output directory.
pub fn setup(common: &Common) -> Result<(ExperimentSpec, PathBuf)> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.set_seed(seed);
    }
    let out = common
        .output_dir
        .clone()
        .or_else(|| spec.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    Ok((spec, out))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing json")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing json")?;
    writeln!(std::io::stdout().lock(), "{text}").context("writing to stdout")
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'a str,
    seed: u64,
    count: usize,
    eye: fovea::synth::Eye,
    labels: &'a str,
    scene: &'a SceneParams,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let (mut spec, out) = setup(&a.common)?;
    if let Some(f) = a.outlier_fraction {
        spec.scene.outlier_fraction = f;
    }
    spec.scene.validate().context("invalid scene parameters")?;
    if a.count == 0 {
        log::warn!("count is 0: writing an empty corpus");
    }
    let frames = generate(&spec.scene, a.count)?;
    let mut rows = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        // Mirroring is an involution, so it also renders a right eye from a left one.
        let frame = flip_right_eye(frame, a.eye);
        let name = format!("frame_{i:05}.png");
        frame.frame.save(&out.join(&name))?;
        rows.push(LabelRow {
            filename: name,
            eye: a.eye,
            pitch_rad: frame.gaze.pitch,
            yaw_rad: frame.gaze.yaw,
        });
    }
    write_labels(&out.join(LABELS_FILE), &rows)?;
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: spec.scene.seed,
            count: a.count,
            eye: a.eye,
            labels: LABELS_FILE,
            scene: &spec.scene,
        },
    )?;
    eprintln!("wrote {} frames to {}", a.count, out.display());
    Ok(())
}

#[derive(Serialize)]
struct CropLine {
    file: String,
    window: Option<CropWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decision: Option<EventDecision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "pgm")
    )
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_image(p))
                .collect();
            v.sort();
            files.extend(v);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            bail!("{}: no such file or directory", input.display());
        }
    }
    Ok(files)
}

pub fn crop(a: &CropArgs) -> Result<()> {
    let (spec, _) = setup(&a.common)?;
    let files = expand_inputs(&a.inputs)?;
    let mut session = CropSession::new(spec.events, spec.crop)?;
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for path in files {
        let file = path.display().to_string();
        let line = match GrayFrame::load(&path) {
            Err(e) => CropLine {
                file,
                window: None,
                decision: None,
                error: Some(e.to_string()),
            },
            Ok(frame) if a.stream => match session.process(&frame) {
                Ok(step) => CropLine {
                    file,
                    window: step.window,
                    decision: Some(step.decision),
                    error: None,
                },
                Err(e) => CropLine {
                    file,
                    window: None,
                    decision: None,
                    error: Some(e.to_string()),
                },
            },
            Ok(frame) => match locate_and_crop(&frame, &spec.crop) {
                Ok(window) => CropLine {
                    file,
                    window,
                    decision: None,
                    error: None,
                },
                Err(e) => CropLine {
                    file,
                    window: None,
                    decision: None,
                    error: Some(e.to_string()),
                },
            },
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loaded corpus frames with right eyes mirrored to the left.
fn load_frames(dir: &Path) -> Result<Vec<LabeledFrame>> {
    let corpus = load_corpus(dir)?;
    for reason in &corpus.skipped {
        log::warn!("{}: skipped {reason}", dir.display());
    }
    if corpus.entries.is_empty() {
        return Err(TrainError::EmptyCorpus).with_context(|| format!("corpus {}", dir.display()));
    }
    Ok(corpus.entries.iter().map(|e| flip_right_eye(&e.frame, e.eye)).collect())
}

fn corpus_dir(flag: &Option<PathBuf>, spec: &ExperimentSpec) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| spec.paths.corpus.clone())
        .context("no corpus: pass --corpus or set paths.corpus")
}

fn latency_profile(path: Option<&Path>, resolution: Resolution) -> Result<LatencyProfile> {
    Ok(match path {
        Some(p) => LatencyProfile::load(p)?.with_labels(
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            resolution,
        ),
        None => fixtures::hmd_profile(resolution),
    })
}

fn loss_config(spec: &ExperimentSpec) -> Result<LossConfig> {
    let mut cfg = LossConfig::with_profile(
        latency_profile(spec.paths.profile.as_deref(), spec.loss.resolution)?,
        spec.loss.theta_i_deg,
    );
    cfg.n = spec.loss.n;
    cfg.exit_weights = spec.loss.exit_weights.clone();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    loss: fovea::loss::LossKind,
    finetune: bool,
    epochs_run: usize,
    best_epoch: usize,
    best_metric: f64,
    stopped_early: bool,
    train_samples: usize,
    val_samples: usize,
    validation: &'a ErrorDistribution,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (mut spec, out) = setup(&a.common)?;
    if let Some(kind) = a.loss {
        spec.train.loss = kind;
    }
    if let Some(epochs) = a.epochs {
        if a.finetune {
            spec.train.finetune_epochs = epochs;
        } else {
            spec.train.max_epochs = epochs;
        }
        spec.train.patience = spec.train.patience.min(epochs);
    }
    spec.train.validate()?;
    let model = match &a.checkpoint {
        Some(p) => checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => GazeModel::new(spec.model.clone(), spec.train.seed)?,
    };
    let frames = load_frames(&corpus_dir(&a.corpus, &spec)?)?;
    let side = model.config().image_side;
    let (samples, regions) = prepare_samples(&frames, &spec.preprocessing, side, &spec.normalization)?;
    let (tr, va) = split_indices(samples.len(), spec.train.val_fraction, spec.train.seed);
    if tr.is_empty() || va.is_empty() {
        bail!(
            "{} frames cannot be split into non-empty train and validation sets with val_fraction {}",
            samples.len(),
            spec.train.val_fraction
        );
    }
    let mut train_set: Vec<Sample> = tr.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = va.iter().map(|&i| samples[i].clone()).collect();
    if spec.augment_copies > 0 {
        let mut aug = spec.augment;
        aug.normalization = spec.normalization;
        aug.validate()?;
        let tr_frames: Vec<LabeledFrame> = tr.iter().map(|&i| frames[i].clone()).collect();
        let tr_regions: Vec<_> = tr.iter().map(|&i| regions[i]).collect();
        train_set.extend(augmented_samples(&tr_frames, &tr_regions, side, &aug, spec.augment_copies, spec.train.seed));
    }
    let loss_cfg = loss_config(&spec)?;
    let outcome = if a.finetune {
        finetune_pruned(&model, &train_set, &val_set, &spec.train, &loss_cfg)?
    } else {
        train_model(&model, &train_set, &val_set, &spec.train, &loss_cfg)?
    };
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.model, &ckpt)?;
    let reloaded = checkpoint::load(&ckpt)?;
    if reloaded.flat_params() != outcome.model.flat_params() {
        return Err(Internal("checkpoint does not reload to the trained parameters".into()).into());
    }
    let log_path = out.join(EPOCH_LOG_FILE);
    write_epoch_log(&outcome.log, File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?)?;
    let validation = evaluate(&outcome.model.view(), &val_set)?;
    let mut effective = spec.clone();
    effective.model = outcome.model.config().clone();
    write_json(&out.join(EXPERIMENT_FILE), &effective)?;
    let summary = TrainSummary {
        loss: spec.train.loss,
        finetune: a.finetune,
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        stopped_early: outcome.stopped_early,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        validation: &validation,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    print_json(&summary)
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct ExitEval {
    pub depth: usize,
    pub flops: u64,
    pub distribution: ErrorDistribution,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Distribution of the full-depth exit.
    #[serde(rename = "final")]
    pub final_exit: ErrorDistribution,
    pub exits: Vec<ExitEval>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (spec, out) = setup(&a.common)?;
    let ckpt = a
        .checkpoint
        .clone()
        .or_else(|| spec.paths.checkpoint.clone())
        .context("no checkpoint: pass --checkpoint or set paths.checkpoint")?;
    let model = checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let frames = load_frames(&corpus_dir(&a.corpus, &spec)?)?;
    let cfg = model.config().clone();
    let (samples, _) = prepare_samples(&frames, &spec.preprocessing, cfg.image_side, &spec.normalization)?;
    let mut exits = Vec::new();
    for &depth in &cfg.exit_blocks {
        exits.push(ExitEval {
            depth,
            flops: flops_estimate(&cfg, depth),
            distribution: evaluate(&model.truncate(depth)?, &samples)?,
        });
    }
    let final_exit = exits.last().map(|e| e.distribution).ok_or_else(|| Internal("model has no exits".into()))?;
    let report = EvalReport {
        samples: samples.len(),
        final_exit,
        exits,
    };
    write_json(&out.join(EVAL_FILE), &report)?;
    let entries = report
        .exits
        .iter()
        .map(|e| DepthEntry {
            depth: e.depth,
            t_tracking_ms: e.flops as f64 / 1e9 * spec.eval.ms_per_gflop,
            p90_deg: e.distribution.p90,
            p95_deg: e.distribution.p95,
            flops: e.flops as f64,
        })
        .collect();
    let depths_path = out.join(DEPTHS_FILE);
    DepthProfile::new(entries)?
        .write_csv(File::create(&depths_path).with_context(|| format!("creating {}", depths_path.display()))?)?;
    print_json(&report)
}

pub fn fit_profile(a: &FitProfileArgs) -> Result<()> {
    let (_, out) = setup(&a.common)?;
    let profile = LatencyProfile::load(&a.samples)?.with_labels(a.device.clone(), a.resolution);
    let path = out.join(PROFILE_FILE);
    profile.write_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    print_json(&profile)
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct SelectionOutput {
    pub depth: usize,
    pub t_tracking_ms: f64,
    pub t_fr_ms: f64,
    pub t_total_ms: f64,
}

pub fn select(a: &SelectArgs) -> Result<()> {
    let (spec, out) = setup(&a.common)?;
    let resolution = a.resolution.unwrap_or(spec.select.resolution);
    let percentile: Percentile = a.percentile.unwrap_or(spec.select.percentile);
    let profile = latency_profile(a.profile.as_deref().or(spec.paths.profile.as_deref()), resolution)?;
    let depths = match a.depths.as_deref().or(spec.paths.depths.as_deref()) {
        Some(p) => DepthProfile::load(p)?,
        None => fixtures::hmd_depths(),
    };
    let query = SelectionQuery {
        resolution,
        profile,
        percentile,
        theta_i_deg: a.theta_i.unwrap_or(spec.select.theta_i_deg),
        t_sensing_ms: spec.select.t_sensing_ms,
        t_comm_ms: spec.select.t_comm_ms,
    };
    let s = select_depth(&depths, &query)?;
    let output = SelectionOutput {
        depth: s.depth,
        t_tracking_ms: s.t_tracking_ms,
        t_fr_ms: s.t_fr_ms,
        t_total_ms: s.t_total_ms,
    };
    write_json(&out.join(SELECTION_FILE), &output)?;
    print_json(&output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_flag_reaches_every_consumer() {
        let mut spec = ExperimentSpec::default();
        spec.set_seed(42);
        assert_eq!(spec.scene.seed, 42);
        assert_eq!(spec.train.seed, 42);
    }

    #[test]
    fn default_experiment_roundtrips_through_json() {
        let spec = ExperimentSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ExperimentSpec>("{\"bogus\": 1}").is_err());
    }
}
