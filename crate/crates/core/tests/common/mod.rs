//! Shared oracles for integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use fovea::gaze::GazeVector;
use fovea::image::BinaryMask;
use fovea::loss::{LossConfig, LossKind};
use fovea::preprocess::{prepare_samples, Preprocessing};
use fovea::synth::{generate_with_samples, Normalization, SceneParams};
use fovea::trainer::{batch_loss, batch_loss_and_grad, split_indices, Sample};
use fovea::vit::{GazeModel, ModelInput};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_input(side: usize, rng: &mut impl Rng) -> ModelInput {
    ModelInput::new(side, (0..side * side).map(|_| rng.random_range(-1.5..1.5)).collect())
}

pub fn random_samples(side: usize, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Sample {
            input: random_input(side, &mut rng),
            gaze: GazeVector::new(rng.random_range(-0.4..0.4), rng.random_range(-0.5..0.5)),
        })
        .collect()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences, `|a - n| / max(|a|, |n|, floor)`, with the offending tensor.
///
/// Central differences carry roundoff of about `eps * |L| / step`, so
/// components much smaller than that cannot be resolved; `floor` is
/// `floor_scale * max(|L|, 1)`.
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn gradient_check(
    model: &GazeModel,
    samples: &[Sample],
    kind: LossKind,
    loss_cfg: &LossConfig,
    step: f64,
    floor_scale: f64,
) -> GradReport {
    let batch: Vec<&Sample> = samples.iter().collect();
    let (loss, analytic) = batch_loss_and_grad(model, &batch, kind, loss_cfg).unwrap();
    let floor = floor_scale * loss.abs().max(1.0);
    let names: Vec<(String, usize)> = model.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut offset = 0;
    for (name, len) in names {
        for k in 0..len {
            let i = offset + k;
            let mut p = base.clone();
            p[i] = base[i] + step;
            probe.set_flat_params(&p);
            let up = batch_loss(&probe, &batch, kind, loss_cfg).unwrap();
            p[i] = base[i] - step;
            probe.set_flat_params(&p);
            let down = batch_loss(&probe, &batch, kind, loss_cfg).unwrap();
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{k}] analytic {a:e} numeric {numeric:e}");
            }
            report.checked += 1;
        }
        offset += len;
    }
    report
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn layer_norm(x: &DMatrix<f64>, gamma: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let d = x.ncols();
    let mut y = x.clone();
    for r in 0..x.nrows() {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let s = (var + 1e-6).sqrt();
        for c in 0..d {
            y[(r, c)] = (x[(r, c)] - mean) / s * gamma[c] + beta[c];
        }
    }
    y
}

fn linear(x: &DMatrix<f64>, w: &[f64], b: &[f64], out: usize) -> DMatrix<f64> {
    let wm = DMatrix::from_row_slice(out, x.ncols(), w);
    let mut y = x * wm.transpose();
    for mut row in y.row_iter_mut() {
        for c in 0..out {
            row[c] += b[c];
        }
    }
    y
}

/// Independent matrix-level forward pass, including single-step pruning.
pub fn naive_forward(model: &GazeModel, input: &ModelInput) -> BTreeMap<usize, GazeVector> {
    let cfg = model.config();
    let (d, p, g) = (cfg.embed_dim, cfg.patch_side, cfg.image_side / cfg.patch_side);
    let heads = cfg.heads;
    let dh = d / heads;
    let mut patches = DMatrix::zeros(g * g, p * p);
    for gy in 0..g {
        for gx in 0..g {
            for y in 0..p {
                for x in 0..p {
                    patches[(gy * g + gx, y * p + x)] = input.pixels[(gy * p + y) * cfg.image_side + gx * p + x];
                }
            }
        }
    }
    let emb = linear(&patches, &model.patch_embed.weight, &model.patch_embed.bias, d);
    let mut h = DMatrix::zeros(g * g + 1, d);
    for c in 0..d {
        h[(0, c)] = model.summary_token[c] + model.pos_embed[c];
        for r in 0..g * g {
            h[(r + 1, c)] = emb[(r, c)] + model.pos_embed[(r + 1) * d + c];
        }
    }
    let mut out = BTreeMap::new();
    for (bi, blk) in model.blocks.iter().enumerate() {
        let n = h.nrows();
        let a = layer_norm(&h, &blk.ln1.gamma, &blk.ln1.beta);
        let qkv = linear(&a, &blk.qkv.weight, &blk.qkv.bias, 3 * d);
        let mut o = DMatrix::zeros(n, d);
        let mut summary_row = vec![0.0; n];
        for hd in 0..heads {
            let q = qkv.columns(hd * dh, dh).into_owned();
            let k = qkv.columns(d + hd * dh, dh).into_owned();
            let v = qkv.columns(2 * d + hd * dh, dh).into_owned();
            let mut s = (&q * k.transpose()) / (dh as f64).sqrt();
            for r in 0..n {
                let m = s.row(r).max();
                let e: Vec<f64> = s.row(r).iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..n {
                    s[(r, c)] = e[c] / z;
                }
            }
            for c in 0..n {
                summary_row[c] += s[(0, c)] / heads as f64;
            }
            o.columns_mut(hd * dh, dh).copy_from(&(&s * &v));
        }
        let h1 = &h + linear(&o, &blk.proj.weight, &blk.proj.bias, d);
        let c = layer_norm(&h1, &blk.ln2.gamma, &blk.ln2.beta);
        let m = linear(&c, &blk.fc1.weight, &blk.fc1.bias, blk.fc1.out_dim).map(gelu);
        h = &h1 + linear(&m, &blk.fc2.weight, &blk.fc2.bias, d);
        let b = bi + 1;
        if let Some(head) = model.heads.get(&b) {
            let s = layer_norm(&h.rows(0, 1).into_owned(), &head.norm.gamma, &head.norm.beta);
            let u = linear(&s, &head.fc1.weight, &head.fc1.bias, head.fc1.out_dim).map(gelu);
            let y = linear(&u, &head.fc2.weight, &head.fc2.bias, 2);
            out.insert(b, GazeVector::new(y[(0, 0)], y[(0, 1)]));
        }
        if cfg.prune_ratio > 0.0 && b == cfg.prune_after_block && b < cfg.depth {
            let keep = ((1.0 - cfg.prune_ratio) * (n - 1) as f64 - 1e-9).ceil().max(1.0) as usize;
            let mut order: Vec<usize> = (1..n).collect();
            order.sort_by(|&x, &y| summary_row[y].partial_cmp(&summary_row[x]).unwrap().then(x.cmp(&y)));
            let mut rows: Vec<usize> = order[..keep].to_vec();
            rows.sort_unstable();
            rows.insert(0, 0);
            h = h.select_rows(rows.iter());
        }
    }
    out
}

/// A generated corpus split 80/20 with split seed 1.
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// Outlier-band flag of every validation frame.
    pub val_outlier: Vec<bool>,
}

pub fn synthetic_split(p: &SceneParams, count: usize, mode: &Preprocessing) -> Split {
    let generated = generate_with_samples(p, count).unwrap();
    let frames: Vec<_> = generated.iter().map(|(f, _)| f.clone()).collect();
    let (samples, _) = prepare_samples(&frames, mode, 32, &Normalization::default()).unwrap();
    let (tr, va) = split_indices(count, 0.2, 1);
    Split {
        train: tr.iter().map(|&i| samples[i].clone()).collect(),
        val: va.iter().map(|&i| samples[i].clone()).collect(),
        val_outlier: va.iter().map(|&i| generated[i].1.outlier).collect(),
    }
}

/// Breadth-first 8-connected flood fill over every component.
pub fn flood_fill_components(m: &BinaryMask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (m.width(), m.height());
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((cx, cy)) = queue.pop_front() {
                comp.push((cx as u32, cy as u32));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if m.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            comp.sort_by_key(|&(x, y)| (y, x));
            comps.push(comp);
        }
    }
    comps
}

/// Linear interpolation between the bracketing knots found by linear scan;
/// clamped below the first knot, last-segment slope beyond the last.
pub fn interp_oracle(knots: &[(f64, f64)], theta: f64) -> f64 {
    if theta <= knots[0].0 {
        return knots[0].1;
    }
    let i = (0..knots.len() - 1)
        .find(|&i| theta < knots[i + 1].0)
        .unwrap_or(knots.len() - 2);
    let ((e0, l0), (e1, l1)) = (knots[i], knots[i + 1]);
    let t = (theta - e0) / (e1 - e0);
    l0 * (1.0 - t) + l1 * t
}

/// Generator config checked into `fixtures/`.
pub fn scene_fixture(name: &str) -> SceneParams {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}
