mod common;

use fovea::gaze::GazeVector;
use fovea::loss::{LossConfig, LossKind};
use fovea::preprocess::Preprocessing;
use fovea::synth::SceneParams;
use fovea::trainer::{
    angular_error, evaluate, finetune_pruned, train, write_epoch_log, ErrorDistribution, TrainConfig, TrainError,
};
use fovea::vit::{checkpoint, GazeModel, ModelConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> SceneParams {
    SceneParams {
        seed,
        ..SceneParams::default()
    }
}

#[test]
fn distribution_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in [1, 2, 19, 20, 21, 10_000] {
        let errors: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0f64).powi(2) / 30.0).collect();
        let d = ErrorDistribution::from_errors(&errors).unwrap();
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = |p: f64| sorted[((p * n as f64 - 1e-9).ceil() as usize).max(1) - 1];
        assert_eq!(d.count, n);
        assert_eq!(d.min, sorted[0]);
        assert_eq!(d.max, sorted[n - 1]);
        assert_eq!(d.p90, rank(0.90), "n={n}");
        assert_eq!(d.p95, rank(0.95), "n={n}");
        let mean = errors.iter().sum::<f64>() / n as f64;
        assert!((d.mean - mean).abs() <= 1e-12 * mean.max(1.0));
        assert!(d.min <= d.mean && d.mean <= d.max && d.p90 <= d.p95 && d.p95 <= d.max);
    }
    assert!(matches!(ErrorDistribution::from_errors(&[]), Err(TrainError::EmptyCorpus)));
}

#[test]
fn angular_error_matches_3d_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ray = |g: &GazeVector| {
        Vector3::new(g.pitch.cos() * g.yaw.sin(), g.pitch.sin(), g.pitch.cos() * g.yaw.cos())
    };
    for _ in 0..2000 {
        let a = GazeVector::new(rng.random_range(-1.2..1.2), rng.random_range(-1.5..1.5));
        let b = GazeVector::new(rng.random_range(-1.2..1.2), rng.random_range(-1.5..1.5));
        let (ra, rb) = (ray(&a), ray(&b));
        // atan2 of cross and dot is well conditioned at every angle.
        let want = ra.cross(&rb).norm().atan2(ra.dot(&rb)).to_degrees();
        let got = angular_error(&a, &b);
        assert!((got - want).abs() < 1e-9 || (want < 1e-3 && (got - want).abs() < 1e-5), "{got} vs {want}");
    }
    let zero = GazeVector::new(0.0, 0.0);
    assert_eq!(angular_error(&zero, &zero), 0.0);
    assert!((angular_error(&zero, &GazeVector::from_degrees(0.0, 5.0)) - 5.0).abs() < 1e-12);
}

#[test]
fn toy_training_converges() {
    let data = common::synthetic_split(&scene(7), 2000, &Preprocessing::Full);
    let model = GazeModel::new(ModelConfig::toy(), 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 30,
        patience: 30,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&model, &data.train, &data.val, &cfg, &LossConfig::default()).unwrap();
    let first = out.log[0].train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "epoch 1 loss {first}, final {last}");
}

#[test]
fn training_is_deterministic() {
    let data = common::synthetic_split(&scene(5), 300, &Preprocessing::Full);
    let model = GazeModel::new(ModelConfig::toy(), 2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 3,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let out = train(&model, &data.train, &data.val, &cfg, &LossConfig::default()).unwrap();
        let mut log = Vec::new();
        write_epoch_log(&out.log, &mut log).unwrap();
        let mut ckpt = Vec::new();
        checkpoint::write_checkpoint(&out.model, &mut ckpt).unwrap();
        (log, ckpt)
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_returns_the_best_epoch() {
    let data = common::synthetic_split(&scene(6), 400, &Preprocessing::Full);
    let model = GazeModel::new(ModelConfig::toy(), 3).unwrap();
    for (kind, lr) in [(LossKind::Mse, 3e-3), (LossKind::PerformanceAware, 3e-3)] {
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 2,
            batch_size: 16,
            lr,
            loss: kind,
            seed: 4,
            ..TrainConfig::default()
        };
        let lc = LossConfig::with_profile(fovea::fixtures::hmd_profile(fovea::geometry::Resolution::P1080), 5.0);
        let out = train(&model, &data.train, &data.val, &cfg, &lc).unwrap();
        let metric = |l: &fovea::trainer::EpochLog| if cfg.selects_on_p95() { l.val_p95_deg } else { l.val_mean_deg };
        let best = out.log.iter().map(metric).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_metric, best, "{kind:?}");
        assert_eq!(metric(&out.log[out.best_epoch]), best);
        let d = evaluate(&out.model.view(), &data.val).unwrap();
        let again = if cfg.selects_on_p95() { d.p95 } else { d.mean };
        assert_eq!(again, best);
        if out.stopped_early {
            assert_eq!(out.log.len(), out.best_epoch + 1 + cfg.patience);
        }
    }
}

#[test]
fn pruned_finetune_recovers_accuracy() {
    let data = common::synthetic_split(&scene(8), 1000, &Preprocessing::Full);
    let cfg = TrainConfig {
        max_epochs: 20,
        patience: 20,
        batch_size: 16,
        lr: 1e-3,
        seed: 5,
        finetune_epochs: 10,
        ..TrainConfig::default()
    };
    let lc = LossConfig::default();
    let base = train(&GazeModel::new(ModelConfig::toy(), 4).unwrap(), &data.train, &data.val, &cfg, &lc).unwrap();
    let unpruned = evaluate(&base.model.view(), &data.val).unwrap().mean;

    let mut pruned = base.model.clone();
    pruned.set_pruning(0.25, 1).unwrap();
    let before = evaluate(&pruned.view(), &data.val).unwrap().mean;
    let tuned = finetune_pruned(&pruned, &data.train, &data.val, &cfg, &lc).unwrap();
    let after = evaluate(&tuned.model.view(), &data.val).unwrap().mean;
    assert!(tuned.model.config().prune_ratio > 0.0);
    assert!(tuned.log.iter().all(|l| l.lr <= cfg.finetune_lr));
    assert!(after <= before);
    // Recovery ratio: unpruned error over pruned error.
    assert!(unpruned / after >= 0.8, "unpruned {unpruned}, pruned {before} -> {after}");

    assert!(matches!(
        finetune_pruned(&base.model, &data.train, &data.val, &cfg, &lc),
        Err(TrainError::PruningDisabled)
    ));
}

#[test]
fn finetune_overrides() {
    let f = TrainConfig::default().finetune();
    assert_eq!(f.lr, 5e-5);
    assert!(f.max_epochs <= 50);
    assert!(f.validate().is_ok());
}
