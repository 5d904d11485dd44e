//! Chunked causal self-attention over a per-layer KV cache.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::kv_cache::{LayerCache, Provenance};
use crate::rng::Seed;
use crate::rope::{rope_apply, RopeParams};
use crate::tensor::{gaussian_init, matmul, softmax_rows, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl AttentionWeights {
    pub fn random(model_dim: usize, seed: Seed, scale: f32) -> Result<Self> {
        let shape = [model_dim, model_dim];
        Ok(Self {
            wq: gaussian_init(&shape, seed.derive("wq"), scale)?,
            wk: gaussian_init(&shape, seed.derive("wk"), scale)?,
            wv: gaussian_init(&shape, seed.derive("wv"), scale)?,
            wo: gaussian_init(&shape, seed.derive("wo"), scale)?,
        })
    }

    pub fn zeros(model_dim: usize) -> Self {
        let z = Tensor::zeros(&[model_dim, model_dim]);
        Self { wq: z.clone(), wk: z.clone(), wv: z.clone(), wo: z }
    }

    pub fn model_dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if w.shape() != [d, d] {
                return Err(dim_err(format!("{name} must be {d}x{d}, got {:?}", w.shape())));
            }
            w.ensure_finite("attention weights")?;
        }
        Ok(())
    }
}

/// Visibility between tokens of the same chunk. Cached tokens are always
/// visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChunkMask {
    #[default]
    Causal,
    Bidirectional,
}

#[derive(Debug, Clone, Copy)]
pub struct AttendOptions<'a> {
    /// Append this chunk's rotated keys and values to the cache.
    pub write: bool,
    pub mask: ChunkMask,
    /// Per-token origin for cache bookkeeping; empty means all video.
    pub provenance: &'a [Provenance],
}

impl Default for AttendOptions<'_> {
    fn default() -> Self {
        Self { write: true, mask: ChunkMask::Causal, provenance: &[] }
    }
}

/// Project a `[tokens, model_dim]` block to rotated keys and plain values at
/// positions `start..start + tokens`.
pub fn project_kv(x: &Tensor, w: &AttentionWeights, rope: &RopeParams, start: usize) -> Result<(Tensor, Tensor)> {
    let (t, d) = (x.rows(), x.cols());
    let heads = d / rope.head_dim;
    let k = rope_apply(&matmul(&x.as_matrix(), &w.wk)?.reshape(&[t, heads, rope.head_dim])?, start, rope)?;
    let v = matmul(&x.as_matrix(), &w.wv)?;
    Ok((k.reshape(&[t, d])?, v))
}

/// Attend `chunk` (`[tokens, model_dim]`) over everything in `cache` plus
/// itself. The chunk occupies positions starting at `cache.next_position()`.
pub fn attend_chunk(
    chunk: &Tensor,
    cache: &mut LayerCache,
    w: &AttentionWeights,
    rope: &RopeParams,
    opts: AttendOptions<'_>,
) -> Result<Tensor> {
    rope.validate()?;
    let (t, d) = (chunk.rows(), chunk.cols());
    let hd = rope.head_dim;
    if d != w.model_dim() || d != cache.model_dim() || d % hd != 0 {
        return Err(dim_err(format!(
            "attention dims: tokens have {d} channels, weights {}, cache {}, head_dim {hd}",
            w.model_dim(),
            cache.model_dim()
        )));
    }
    let heads = d / hd;
    let start = cache.next_position();
    let x = chunk.as_matrix();

    let q = rope_apply(&matmul(&x, &w.wq)?.reshape(&[t, heads, hd])?, start, rope)?;
    let (k, v) = project_kv(&x, w, rope, start)?;

    let cached = cache.len();
    let total = cached + t;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut heads_out = vec![0.0f32; t * d];

    for h in 0..heads {
        let col = h * hd;
        // Keys transposed to [hd, total] so the score product streams rows.
        let mut kt = vec![0.0f32; hd * total];
        let mut vh = Vec::with_capacity(total * hd);
        for r in 0..cached {
            let src = &cache.keys()[r * d + col..r * d + col + hd];
            for (e, &val) in src.iter().enumerate() {
                kt[e * total + r] = val;
            }
            vh.extend_from_slice(&cache.values()[r * d + col..r * d + col + hd]);
        }
        for r in 0..t {
            let src = &k.data()[r * d + col..r * d + col + hd];
            for (e, &val) in src.iter().enumerate() {
                kt[e * total + cached + r] = val;
            }
            vh.extend_from_slice(&v.data()[r * d + col..r * d + col + hd]);
        }
        let mut qh = Vec::with_capacity(t * hd);
        for r in 0..t {
            qh.extend_from_slice(&q.data()[(r * heads + h) * hd..(r * heads + h + 1) * hd]);
        }
        let qh = Tensor::new(vec![t, hd], qh)?;
        let kt = Tensor::new(vec![hd, total], kt)?;
        let vh = Tensor::new(vec![total, hd], vh)?;

        let mut scores = matmul(&qh, &kt)?.scale(scale);
        if opts.mask == ChunkMask::Causal {
            let s = scores.data_mut();
            for i in 0..t {
                for j in i + 1..t {
                    s[i * total + cached + j] = f32::NEG_INFINITY;
                }
            }
        }
        let probs = softmax_rows(&scores)?;
        let oh = matmul(&probs, &vh)?;
        for r in 0..t {
            heads_out[r * d + col..r * d + col + hd].copy_from_slice(oh.row(r));
        }
    }

    let out = matmul(&Tensor::new(vec![t, d], heads_out)?, &w.wo)?;
    if opts.write {
        cache.append(&k, &v, start, opts.provenance)?;
    }
    Ok(out)
}

/// Single-pass causal attention over a whole sequence starting at position
/// zero, evaluated per query in f64. Serves as the reference that chunked,
/// cached evaluation must reproduce.
pub fn full_recompute_oracle(all_tokens: &Tensor, w: &AttentionWeights, rope: &RopeParams) -> Result<Tensor> {
    windowed_recompute_oracle(all_tokens, w, rope, 0, None)
}

/// Like [`full_recompute_oracle`] with the sequence placed at
/// `start_position`, and each query at sequence index `i` restricted to keys
/// with index `>= window_start(i)` when `window` is given. `window(i)`
/// returns the first visible key index for query `i`.
pub fn windowed_recompute_oracle(
    all_tokens: &Tensor,
    w: &AttentionWeights,
    rope: &RopeParams,
    start_position: usize,
    window: Option<&dyn Fn(usize) -> usize>,
) -> Result<Tensor> {
    let (n, d) = (all_tokens.rows(), all_tokens.cols());
    let hd = rope.head_dim;
    let heads = d / hd;
    let x = all_tokens.as_matrix();
    let q = rope_apply(&matmul(&x, &w.wq)?.reshape(&[n, heads, hd])?, start_position, rope)?;
    let k = rope_apply(&matmul(&x, &w.wk)?.reshape(&[n, heads, hd])?, start_position, rope)?;
    let v = matmul(&x, &w.wv)?;
    let (q, k, v) = (q.data(), k.data(), v.data());
    let scale = 1.0 / (hd as f64).sqrt();

    let mut concat = vec![0.0f32; n * d];
    let mut logits = vec![0.0f64; n];
    for h in 0..heads {
        for i in 0..n {
            let lo = window.map_or(0, |f| f(i));
            let qi = &q[(i * heads + h) * hd..(i * heads + h + 1) * hd];
            let mut max = f64::NEG_INFINITY;
            for j in lo..=i {
                let kj = &k[(j * heads + h) * hd..(j * heads + h + 1) * hd];
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                logits[j] = dot * scale;
                max = max.max(logits[j]);
            }
            let denom: f64 = (lo..=i).map(|j| (logits[j] - max).exp()).sum();
            for e in 0..hd {
                let mut acc = 0.0f64;
                for j in lo..=i {
                    acc += (logits[j] - max).exp() / denom * f64::from(v[j * d + h * hd + e]);
                }
                concat[i * d + h * hd + e] = acc as f32;
            }
        }
    }
    matmul(&Tensor::new(vec![n, d], concat)?, &w.wo)
}
