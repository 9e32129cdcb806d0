use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{gelu, gelu_grad, LayerNorm, Linear, LnCache};
use super::{ModelConfig, ModelError};
use crate::gaze::GazeVector;

/// Normalized square input image.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub side: usize,
    pub pixels: Vec<f64>,
}

impl ModelInput {
    pub fn new(side: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), side * side, "input must be side*side pixels");
        Self { side, pixels }
    }
}

/// Latent tokens; row 0 is the summary token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub dim: usize,
    pub latents: Vec<f64>,
    /// Original index per row: 0 for the summary token, `j + 1` for patch `j`.
    pub indices: Vec<usize>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.latents[i * self.dim..(i + 1) * self.dim]
    }
}

/// Importance of each non-summary token: the summary token's attention row,
/// averaged over heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub values: Vec<f64>,
}

/// Per-exit gaze keyed by 1-based block index.
pub type GazePrediction = BTreeMap<usize, GazeVector>;

/// `ceil(keep_ratio * patches)`, guarded against float noise, at least 1.
pub fn keep_count(patches: usize, keep_ratio: f64) -> usize {
    let raw = keep_ratio * patches as f64;
    ((raw - 1e-9).ceil().max(1.0) as usize).min(patches)
}

/// Positions (into `scores`) of the kept tokens, ascending. Highest scores win;
/// equal scores go to the lower position.
pub fn select_tokens(scores: &[f64], keep_ratio: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let k = keep_count(scores.len(), keep_ratio);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Keeps the summary token and the top-scoring patch tokens, preserving order.
pub fn prune_tokens(tokens: &TokenSet, scores: &AttentionScores, keep_ratio: f64) -> TokenSet {
    assert_eq!(scores.values.len() + 1, tokens.len(), "one score per non-summary token");
    let rows: Vec<usize> = std::iter::once(0)
        .chain(select_tokens(&scores.values, keep_ratio).into_iter().map(|p| p + 1))
        .collect();
    let mut latents = Vec::with_capacity(rows.len() * tokens.dim);
    for &r in &rows {
        latents.extend_from_slice(tokens.row(r));
    }
    TokenSet {
        dim: tokens.dim,
        latents,
        indices: rows.iter().map(|&r| tokens.indices[r]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// LayerNorm -> Linear -> GELU -> Linear(2) on the summary token.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitHead {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ExitHead {
    fn param_count(&self) -> usize {
        2 * self.norm.dim() + self.fc1.param_count() + self.fc2.param_count()
    }
}

impl Block {
    fn param_count(&self) -> usize {
        2 * self.ln1.dim() + self.qkv.param_count() + self.proj.param_count()
            + 2 * self.ln2.dim()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    n: usize,
    ln1: LnCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    /// `heads x n x n` attention probabilities.
    attn: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    c: Vec<f64>,
    pre: Vec<f64>,
    m: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    norm: LnCache,
    u: Vec<f64>,
    pre: Vec<f64>,
    m: Vec<f64>,
}

/// Activations of one forward pass, kept for [`GazeModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    /// Rows kept after the pruning point, as `(block, rows)` with a 1-based block.
    pruned: Option<(usize, Vec<usize>)>,
    heads: BTreeMap<usize, HeadCache>,
    pub prediction: GazePrediction,
    pub scores: Option<AttentionScores>,
    /// Token count entering each block.
    pub token_counts: Vec<usize>,
    /// Original token indices surviving to the last block run.
    pub final_indices: Vec<usize>,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    config: ModelConfig,
    pub patch_embed: Linear,
    pub summary_token: Vec<f64>,
    /// `(num_patches + 1) x embed_dim`.
    pub pos_embed: Vec<f64>,
    pub blocks: Vec<Block>,
    pub heads: BTreeMap<usize, ExitHead>,
}

impl GazeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let hid = config.mlp_hidden();
        let hh = config.head_hidden_dim();
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let small = Normal::new(0.0, 0.02).unwrap();
        let patch_embed = Linear::init(config.patch_dim(), d, fan(config.patch_dim()), &mut rng);
        let summary_token = (0..d).map(|_| small.sample(&mut rng)).collect();
        let pos_embed = (0..(config.num_patches() + 1) * d).map(|_| small.sample(&mut rng)).collect();
        let blocks = (0..config.depth)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                qkv: Linear::init(d, 3 * d, fan(d), &mut rng),
                proj: Linear::init(d, d, fan(d), &mut rng),
                ln2: LayerNorm::new(d),
                fc1: Linear::init(d, hid, fan(d), &mut rng),
                fc2: Linear::init(hid, d, fan(hid), &mut rng),
            })
            .collect();
        let heads = config
            .exit_blocks
            .iter()
            .map(|&e| {
                (
                    e,
                    ExitHead {
                        norm: LayerNorm::new(d),
                        fc1: Linear::init(d, hh, fan(d), &mut rng),
                        fc2: Linear::init(hh, 2, 0.1 * fan(hh), &mut rng),
                    },
                )
            })
            .collect();
        Ok(Self {
            config,
            patch_embed,
            summary_token,
            pos_embed,
            blocks,
            heads,
        })
    }

    /// Same shapes, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the prune setting without touching parameters.
    pub fn set_pruning(&mut self, prune_ratio: f64, prune_after_block: usize) -> Result<(), ModelError> {
        let mut cfg = self.config.clone();
        cfg.prune_ratio = prune_ratio;
        cfg.prune_after_block = prune_after_block;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.embedding_param_count()
            + self.blocks.iter().map(Block::param_count).sum::<usize>()
            + self.heads.values().map(ExitHead::param_count).sum::<usize>()
    }

    fn embedding_param_count(&self) -> usize {
        self.patch_embed.param_count() + self.summary_token.len() + self.pos_embed.len()
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let d = self.config.embed_dim;
        let mut out = Vec::new();
        fn push_linear<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a Linear) {
            out.push(TensorRef {
                name: format!("{name}.weight"),
                shape: vec![l.out_dim, l.in_dim],
                data: &l.weight,
            });
            out.push(TensorRef {
                name: format!("{name}.bias"),
                shape: vec![l.out_dim],
                data: &l.bias,
            });
        }
        fn push_ln<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a LayerNorm) {
            out.push(TensorRef {
                name: format!("{name}.gamma"),
                shape: vec![l.dim()],
                data: &l.gamma,
            });
            out.push(TensorRef {
                name: format!("{name}.beta"),
                shape: vec![l.dim()],
                data: &l.beta,
            });
        }
        push_linear(&mut out, "patch_embed", &self.patch_embed);
        out.push(TensorRef {
            name: "summary_token".into(),
            shape: vec![d],
            data: &self.summary_token,
        });
        out.push(TensorRef {
            name: "pos_embed".into(),
            shape: vec![self.pos_embed.len() / d, d],
            data: &self.pos_embed,
        });
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{}", i + 1);
            push_ln(&mut out, &format!("{p}.ln1"), &b.ln1);
            push_linear(&mut out, &format!("{p}.qkv"), &b.qkv);
            push_linear(&mut out, &format!("{p}.proj"), &b.proj);
            push_ln(&mut out, &format!("{p}.ln2"), &b.ln2);
            push_linear(&mut out, &format!("{p}.fc1"), &b.fc1);
            push_linear(&mut out, &format!("{p}.fc2"), &b.fc2);
        }
        for (e, h) in &self.heads {
            let p = format!("heads.{e}");
            push_ln(&mut out, &format!("{p}.norm"), &h.norm);
            push_linear(&mut out, &format!("{p}.fc1"), &h.fc1);
            push_linear(&mut out, &format!("{p}.fc2"), &h.fc2);
        }
        out
    }

    /// Mutable counterpart of [`GazeModel::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn push_linear<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, l: &'a mut Linear) {
            let shape = vec![l.out_dim, l.in_dim];
            let out_dim = l.out_dim;
            out.push(TensorMut {
                name: format!("{name}.weight"),
                shape,
                data: &mut l.weight,
            });
            out.push(TensorMut {
                name: format!("{name}.bias"),
                shape: vec![out_dim],
                data: &mut l.bias,
            });
        }
        fn push_ln<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, l: &'a mut LayerNorm) {
            let d = l.dim();
            out.push(TensorMut {
                name: format!("{name}.gamma"),
                shape: vec![d],
                data: &mut l.gamma,
            });
            out.push(TensorMut {
                name: format!("{name}.beta"),
                shape: vec![d],
                data: &mut l.beta,
            });
        }
        let d = self.config.embed_dim;
        let mut out = Vec::new();
        push_linear(&mut out, "patch_embed", &mut self.patch_embed);
        out.push(TensorMut {
            name: "summary_token".into(),
            shape: vec![d],
            data: &mut self.summary_token,
        });
        let rows = self.pos_embed.len() / d;
        out.push(TensorMut {
            name: "pos_embed".into(),
            shape: vec![rows, d],
            data: &mut self.pos_embed,
        });
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{}", i + 1);
            push_ln(&mut out, &format!("{p}.ln1"), &mut b.ln1);
            push_linear(&mut out, &format!("{p}.qkv"), &mut b.qkv);
            push_linear(&mut out, &format!("{p}.proj"), &mut b.proj);
            push_ln(&mut out, &format!("{p}.ln2"), &mut b.ln2);
            push_linear(&mut out, &format!("{p}.fc1"), &mut b.fc1);
            push_linear(&mut out, &format!("{p}.fc2"), &mut b.fc2);
        }
        for (e, h) in self.heads.iter_mut() {
            let p = format!("heads.{e}");
            push_ln(&mut out, &format!("{p}.norm"), &mut h.norm);
            push_linear(&mut out, &format!("{p}.fc1"), &mut h.fc1);
            push_linear(&mut out, &format!("{p}.fc2"), &mut h.fc2);
        }
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            v.extend_from_slice(t.data);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Splits the image into patches and embeds them with the summary token
    /// and positional embeddings.
    pub fn patchify(&self, input: &ModelInput) -> Result<TokenSet, ModelError> {
        Ok(self.embed(input)?.0)
    }

    fn extract_patches(&self, input: &ModelInput) -> Result<Vec<f64>, ModelError> {
        let cfg = &self.config;
        if input.side != cfg.image_side || input.pixels.len() != input.side * input.side {
            return Err(ModelError::WrongInputSize {
                got: input.side,
                expected: cfg.image_side,
            });
        }
        let (g, p, s) = (cfg.grid(), cfg.patch_side, cfg.image_side);
        let mut patches = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
        for gy in 0..g {
            for gx in 0..g {
                for y in gy * p..(gy + 1) * p {
                    patches.extend_from_slice(&input.pixels[y * s + gx * p..y * s + (gx + 1) * p]);
                }
            }
        }
        Ok(patches)
    }

    fn embed(&self, input: &ModelInput) -> Result<(TokenSet, Vec<f64>), ModelError> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let patches = self.extract_patches(input)?;
        let n_p = cfg.num_patches();
        let emb = self.patch_embed.forward(&patches, n_p);
        let mut latents = Vec::with_capacity((n_p + 1) * d);
        latents.extend(self.summary_token.iter().zip(&self.pos_embed[..d]).map(|(a, b)| a + b));
        latents.extend(emb.iter().zip(&self.pos_embed[d..]).map(|(a, b)| a + b));
        if latents.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation { block: 0 });
        }
        Ok((
            TokenSet {
                dim: d,
                latents,
                indices: (0..=n_p).collect(),
            },
            patches,
        ))
    }

    fn block_forward(&self, block: &Block, h: &[f64], n: usize) -> (Vec<f64>, BlockCache) {
        let d = self.config.embed_dim;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (a, ln1) = block.ln1.forward(h);
        let qkv = block.qkv.forward(&a, n);
        let mut attn = vec![0.0; heads * n * n];
        let mut o = vec![0.0; n * d];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..n {
                let q = &qkv[i * 3 * d + off..i * 3 * d + off + dh];
                let row = &mut attn[(hd * n + i) * n..(hd * n + i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + d + off..j * 3 * d + d + off + dh];
                    *s = super::layers::dot(q, k) * scale;
                }
                super::layers::softmax_in_place(row);
                let oi = &mut o[i * d + off..i * d + off + dh];
                for (j, &p) in row.iter().enumerate() {
                    let v = &qkv[j * 3 * d + 2 * d + off..j * 3 * d + 2 * d + off + dh];
                    for t in 0..dh {
                        oi[t] += p * v[t];
                    }
                }
            }
        }
        let y = block.proj.forward(&o, n);
        let h1: Vec<f64> = h.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (c, ln2) = block.ln2.forward(&h1);
        let pre = block.fc1.forward(&c, n);
        let m: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let z = block.fc2.forward(&m, n);
        let h2 = h1.iter().zip(&z).map(|(a, b)| a + b).collect();
        (
            h2,
            BlockCache {
                n,
                ln1,
                a,
                qkv,
                attn,
                o,
                ln2,
                c,
                pre,
                m,
            },
        )
    }

    fn block_backward(&self, block: &Block, cache: &BlockCache, dh2: &[f64], grad: &mut Block) -> Vec<f64> {
        let n = cache.n;
        let d = self.config.embed_dim;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let dm = block.fc2.backward(&cache.m, dh2, n, &mut grad.fc2);
        let dpre: Vec<f64> = dm.iter().zip(&cache.pre).map(|(g, &x)| g * gelu_grad(x)).collect();
        let dc = block.fc1.backward(&cache.c, &dpre, n, &mut grad.fc1);
        let dln2 = block.ln2.backward(&cache.ln2, &dc, &mut grad.ln2);
        let dh1: Vec<f64> = dh2.iter().zip(&dln2).map(|(a, b)| a + b).collect();

        let d_o = block.proj.backward(&cache.o, &dh1, n, &mut grad.proj);
        let mut dqkv = vec![0.0; n * 3 * d];
        let mut da_row = vec![0.0; n];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..n {
                let probs = &cache.attn[(hd * n + i) * n..(hd * n + i + 1) * n];
                let doi = &d_o[i * d + off..i * d + off + dh];
                // dP[i, j] = do_i . v_j ; dV_j += P[i, j] do_i
                for j in 0..n {
                    let vj = j * 3 * d + 2 * d + off;
                    da_row[j] = super::layers::dot(doi, &cache.qkv[vj..vj + dh]);
                    let p = probs[j];
                    for t in 0..dh {
                        dqkv[vj + t] += p * doi[t];
                    }
                }
                let rowdot: f64 = probs.iter().zip(&da_row).map(|(p, g)| p * g).sum();
                let qi = i * 3 * d + off;
                for j in 0..n {
                    let ds = probs[j] * (da_row[j] - rowdot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = j * 3 * d + d + off;
                    for t in 0..dh {
                        dqkv[qi + t] += ds * cache.qkv[kj + t];
                        dqkv[kj + t] += ds * cache.qkv[qi + t];
                    }
                }
            }
        }
        let da = block.qkv.backward(&cache.a, &dqkv, n, &mut grad.qkv);
        let dln1 = block.ln1.backward(&cache.ln1, &da, &mut grad.ln1);
        dh1.iter().zip(&dln1).map(|(a, b)| a + b).collect()
    }

    fn head_forward(&self, head: &ExitHead, summary: &[f64]) -> (GazeVector, HeadCache) {
        let (u, norm) = head.norm.forward(summary);
        let pre = head.fc1.forward(&u, 1);
        let m: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let g = head.fc2.forward(&m, 1);
        (GazeVector::new(g[0], g[1]), HeadCache { norm, u, pre, m })
    }

    fn head_backward(&self, head: &ExitHead, cache: &HeadCache, dg: [f64; 2], grad: &mut ExitHead) -> Vec<f64> {
        let dm = head.fc2.backward(&cache.m, &dg, 1, &mut grad.fc2);
        let dpre: Vec<f64> = dm.iter().zip(&cache.pre).map(|(g, &x)| g * gelu_grad(x)).collect();
        let du = head.fc1.backward(&cache.u, &dpre, 1, &mut grad.fc1);
        head.norm.backward(&cache.norm, &du, &mut grad.norm)
    }

    fn run(&self, input: &ModelInput, depth: usize, exits: &[usize]) -> Result<ForwardTrace, ModelError> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let (tokens, patches) = self.embed(input)?;
        let mut h = tokens.latents;
        let mut indices = tokens.indices;
        let mut blocks = Vec::with_capacity(depth);
        let mut token_counts = Vec::with_capacity(depth);
        let mut heads = BTreeMap::new();
        let mut prediction = GazePrediction::new();
        let mut pruned = None;
        let mut scores = None;
        for b in 1..=depth {
            let n = indices.len();
            token_counts.push(n);
            let (h2, cache) = self.block_forward(&self.blocks[b - 1], &h, n);
            if h2.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteActivation { block: b });
            }
            h = h2;
            if exits.contains(&b) {
                let head = self
                    .heads
                    .get(&b)
                    .ok_or(ModelError::NotAnExit(b))?;
                let (g, hc) = self.head_forward(head, &h[..d]);
                if !g.is_finite() {
                    return Err(ModelError::NonFiniteActivation { block: b });
                }
                prediction.insert(b, g);
                heads.insert(b, hc);
            }
            if b == cfg.prune_after_block && cfg.prunes_within(depth) {
                let s = summary_scores(&cache.attn, cfg.heads, n);
                let rows: Vec<usize> = std::iter::once(0)
                    .chain(select_tokens(&s.values, 1.0 - cfg.prune_ratio).into_iter().map(|p| p + 1))
                    .collect();
                let mut kept = Vec::with_capacity(rows.len() * d);
                for &r in &rows {
                    kept.extend_from_slice(&h[r * d..(r + 1) * d]);
                }
                h = kept;
                indices = rows.iter().map(|&r| indices[r]).collect();
                pruned = Some((b, rows));
                scores = Some(s);
            }
            blocks.push(cache);
        }
        Ok(ForwardTrace {
            patches,
            blocks,
            pruned,
            heads,
            prediction,
            scores,
            token_counts,
            final_indices: indices,
        })
    }

    /// Predictions at every configured exit.
    pub fn forward(&self, input: &ModelInput) -> Result<GazePrediction, ModelError> {
        Ok(self.forward_train(input)?.prediction)
    }

    /// Forward pass keeping the activations needed by [`GazeModel::backward`].
    pub fn forward_train(&self, input: &ModelInput) -> Result<ForwardTrace, ModelError> {
        self.run(input, self.config.depth, &self.config.exit_blocks)
    }

    /// Accumulates parameter gradients into `grads` given `dL/dgaze` per exit.
    /// Exits missing from `exit_grads` contribute nothing. Token selection is
    /// held fixed (gradients flow only through the kept tokens).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        exit_grads: &BTreeMap<usize, [f64; 2]>,
        grads: &mut GazeModel,
    ) -> Result<(), ModelError> {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let depth = trace.blocks.len();
        let last_n = trace.blocks.last().map_or(cfg.num_patches() + 1, |c| c.n);
        let mut dh = vec![0.0; last_n * d];
        for b in (1..=depth).rev() {
            if let Some((pb, rows)) = &trace.pruned {
                if *pb == b {
                    let n_before = trace.blocks[b - 1].n;
                    let mut full = vec![0.0; n_before * d];
                    for (i, &r) in rows.iter().enumerate() {
                        full[r * d..(r + 1) * d].copy_from_slice(&dh[i * d..(i + 1) * d]);
                    }
                    dh = full;
                }
            }
            if let (Some(g), Some(hc)) = (exit_grads.get(&b), trace.heads.get(&b)) {
                let head = &self.heads[&b];
                let gh = grads.heads.get_mut(&b).expect("gradient model mirrors heads");
                let ds = self.head_backward(head, hc, *g, gh);
                for (a, v) in dh[..d].iter_mut().zip(ds) {
                    *a += v;
                }
            }
            dh = self.block_backward(&self.blocks[b - 1], &trace.blocks[b - 1], &dh, &mut grads.blocks[b - 1]);
        }
        for (g, v) in grads.summary_token.iter_mut().zip(&dh[..d]) {
            *g += v;
        }
        for (g, v) in grads.pos_embed.iter_mut().zip(&dh) {
            *g += v;
        }
        self.patch_embed
            .backward(&trace.patches, &dh[d..], cfg.num_patches(), &mut grads.patch_embed);
        for t in grads.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteGradient(t.name));
            }
        }
        Ok(())
    }

    /// A view running blocks `1..=depth` and emitting only that exit.
    pub fn truncate(&self, depth: usize) -> Result<ModelView<'_>, ModelError> {
        if !self.heads.contains_key(&depth) {
            return Err(ModelError::NotAnExit(depth));
        }
        Ok(ModelView { model: self, depth })
    }

    /// The full-depth view.
    pub fn view(&self) -> ModelView<'_> {
        ModelView {
            model: self,
            depth: self.config.depth,
        }
    }
}

fn summary_scores(attn: &[f64], heads: usize, n: usize) -> AttentionScores {
    let mut values = vec![0.0; n - 1];
    for hd in 0..heads {
        let row = &attn[hd * n * n..hd * n * n + n];
        for (v, a) in values.iter_mut().zip(&row[1..]) {
            *v += a;
        }
    }
    values.iter_mut().for_each(|v| *v /= heads as f64);
    AttentionScores { values }
}

/// A shallower sub-network sharing parameters with its parent.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    model: &'a GazeModel,
    depth: usize,
}

impl<'a> ModelView<'a> {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn model(&self) -> &'a GazeModel {
        self.model
    }

    pub fn forward(&self, input: &ModelInput) -> Result<GazePrediction, ModelError> {
        Ok(self.model.run(input, self.depth, &[self.depth])?.prediction)
    }

    pub fn forward_train(&self, input: &ModelInput) -> Result<ForwardTrace, ModelError> {
        self.model.run(input, self.depth, &[self.depth])
    }

    pub fn predict(&self, input: &ModelInput) -> Result<GazeVector, ModelError> {
        Ok(self.forward(input)?[&self.depth])
    }

    /// Parameters reachable from this view.
    pub fn param_count(&self) -> usize {
        self.model.embedding_param_count()
            + self.model.blocks[..self.depth].iter().map(Block::param_count).sum::<usize>()
            + self.model.heads[&self.depth].param_count()
    }
}
