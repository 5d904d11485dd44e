//! Diffusion-transformer stack, hint injection and the per-chunk denoising
//! loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::{attend_chunk, AttendOptions, AttentionWeights, ChunkMask};
use crate::config::ModelConfig;
use crate::error::{dim_err, Error, Result};
use crate::kv_cache::{KvCache, LayerCache, Provenance};
use crate::rng::Seed;
use crate::rope::RopeParams;
use crate::tensor::{gaussian_init, gelu, matmul, rmsnorm, Tensor};

/// Pre-norm transformer block: attention then MLP, each residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub norm1: Tensor,
    pub attn: AttentionWeights,
    pub norm2: Tensor,
    pub mlp_in: Tensor,
    pub mlp_out: Tensor,
}

impl BlockWeights {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, unit norm gains.
    pub fn random(model_dim: usize, hidden: usize, seed: Seed) -> Result<Self> {
        let s = 1.0 / (model_dim as f32).sqrt();
        Ok(Self {
            norm1: Tensor::filled(&[model_dim], 1.0),
            attn: AttentionWeights::random(model_dim, seed.derive("attn"), s)?,
            norm2: Tensor::filled(&[model_dim], 1.0),
            mlp_in: gaussian_init(&[model_dim, hidden], seed.derive("mlp_in"), s)?,
            mlp_out: gaussian_init(&[hidden, model_dim], seed.derive("mlp_out"), 1.0 / (hidden as f32).sqrt())?,
        })
    }

    pub fn zeros(model_dim: usize, hidden: usize) -> Self {
        Self {
            norm1: Tensor::zeros(&[model_dim]),
            attn: AttentionWeights::zeros(model_dim),
            norm2: Tensor::zeros(&[model_dim]),
            mlp_in: Tensor::zeros(&[model_dim, hidden]),
            mlp_out: Tensor::zeros(&[hidden, model_dim]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        [&self.norm1, &self.attn.wq, &self.attn.wk, &self.attn.wv, &self.attn.wo, &self.norm2, &self.mlp_in, &self.mlp_out]
            .iter()
            .map(|t| t.len())
            .sum()
    }

    pub(crate) fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.norm1"), &mut self.norm1),
            (format!("{prefix}.wq"), &mut self.attn.wq),
            (format!("{prefix}.wk"), &mut self.attn.wk),
            (format!("{prefix}.wv"), &mut self.attn.wv),
            (format!("{prefix}.wo"), &mut self.attn.wo),
            (format!("{prefix}.norm2"), &mut self.norm2),
            (format!("{prefix}.mlp_in"), &mut self.mlp_in),
            (format!("{prefix}.mlp_out"), &mut self.mlp_out),
        ]
    }
}

/// One transformer block over a `[tokens, model_dim]` chunk.
pub fn dit_block_forward(
    x: &Tensor,
    cache: &mut LayerCache,
    w: &BlockWeights,
    rope: &RopeParams,
    opts: AttendOptions<'_>,
) -> Result<Tensor> {
    let attn = attend_chunk(&rmsnorm(x, w.norm1.data())?, cache, &w.attn, rope, opts)?;
    let h = x.add(&attn)?;
    let mlp = matmul(&gelu(&matmul(&rmsnorm(&h, w.norm2.data())?, &w.mlp_in)?), &w.mlp_out)?;
    h.add(&mlp)
}

/// Hints keyed by the DiT block index that receives them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HintSet(pub BTreeMap<usize, Tensor>);

impl HintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, block: usize, hint: Tensor) {
        self.0.insert(block, hint);
    }

    pub fn get(&self, block: usize) -> Option<&Tensor> {
        self.0.get(&block)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &Tensor)> {
        self.0.iter()
    }
}

/// Context scale α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextScale(pub f32);

impl Default for ContextScale {
    fn default() -> Self {
        ContextScale(1.0)
    }
}

impl ContextScale {
    pub fn new(alpha: f32) -> Result<Self> {
        if alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::Config(format!("context scale must be finite, got {alpha}")))
        }
    }
}

/// Hint projections `W_proj`, keyed by receiving block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionProjection(pub BTreeMap<usize, Tensor>);

impl InjectionProjection {
    pub fn zeros(injection_map: &[usize], model_dim: usize) -> Self {
        Self(injection_map.iter().map(|&b| (b, Tensor::zeros(&[model_dim, model_dim]))).collect())
    }

    pub fn gaussian(injection_map: &[usize], model_dim: usize, seed: Seed, scale: f32) -> Result<Self> {
        injection_map
            .iter()
            .map(|&b| Ok((b, gaussian_init(&[model_dim, model_dim], seed.derive(&format!("proj{b}")), scale)?)))
            .collect::<Result<_>>()
            .map(Self)
    }

    pub fn get(&self, block: usize) -> Option<&Tensor> {
        self.0.get(&block)
    }

    pub fn is_zero(&self) -> bool {
        self.0.values().all(|w| w.data().iter().all(|&v| v == 0.0))
    }
}

/// `x + α · (h × W_proj)`.
pub fn inject_hint(x: &Tensor, hint: &Tensor, w_proj: &Tensor, alpha: ContextScale) -> Result<Tensor> {
    if hint.rows() != x.rows() || hint.cols() != w_proj.rows() || w_proj.cols() != x.cols() {
        return Err(dim_err(format!(
            "inject_hint: x {:?}, hint {:?}, W_proj {:?}",
            x.shape(),
            hint.shape(),
            w_proj.shape()
        )));
    }
    let projected = matmul(&hint.as_matrix(), w_proj)?;
    let mut out = x.clone();
    for (o, p) in out.data_mut().iter_mut().zip(projected.data()) {
        *o += alpha.0 * p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Config("noise schedule must be strictly decreasing".into()));
        }
        if sigmas.iter().any(|s| !s.is_finite()) || *sigmas.last().unwrap() < 0.0 {
            return Err(Error::Config("noise schedule values must be finite and end >= 0".into()));
        }
        Ok(Self { sigmas })
    }

    /// Evenly spaced from `start` down to `end`; a single step uses `start`.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 1 {
            return Self::new(vec![start]);
        }
        let sigmas = (0..steps)
            .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::new(sigmas)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// Sinusoidal embedding of `1000·σ`, first half sines then cosines.
pub fn timestep_embedding(sigma: f64, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let t = sigma * 1000.0;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * freq).sin() as f32;
        out[half + i] = (t * freq).cos() as f32;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitWeights {
    pub embed_in: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub norm_out: Tensor,
    pub embed_out: Tensor,
}

impl DitWeights {
    pub fn random(cfg: &ModelConfig, seed: Seed) -> Result<Self> {
        let (d, c) = (cfg.model_dim, cfg.latent_channels);
        Ok(Self {
            embed_in: gaussian_init(&[c, d], seed.derive("embed_in"), 1.0 / (c as f32).sqrt())?,
            blocks: (0..cfg.num_blocks)
                .map(|i| BlockWeights::random(d, cfg.mlp_hidden(), seed.derive(&format!("block{i}"))))
                .collect::<Result<_>>()?,
            norm_out: Tensor::filled(&[d], 1.0),
            embed_out: gaussian_init(&[d, c], seed.derive("embed_out"), 1.0 / (d as f32).sqrt())?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.embed_in.len() + self.norm_out.len() + self.embed_out.len()
            + self.blocks.iter().map(BlockWeights::parameter_count).sum::<usize>()
    }
}

/// Everything the injection path needs for one chunk.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub hints: &'a HintSet,
    pub projections: &'a InjectionProjection,
    pub alpha: ContextScale,
}

/// Per-chunk options for the denoising loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenoiseOptions<'a> {
    /// Extra leading tokens beyond the configured chunk length (reference
    /// latents in the concatenation architecture).
    pub prefix_tokens: usize,
    pub mask: ChunkMask,
    pub provenance: &'a [Provenance],
}

/// One model evaluation at noise level `sigma`; returns the predicted update
/// direction in latent space.
pub fn dit_forward(
    latents: &Tensor,
    sigma: f64,
    injection: &Injection<'_>,
    weights: &DitWeights,
    caches: &mut KvCache,
    rope: &RopeParams,
    attend: AttendOptions<'_>,
) -> Result<Tensor> {
    let d = weights.embed_in.cols();
    let mut h = matmul(&latents.as_matrix(), &weights.embed_in)?.add_row(&timestep_embedding(sigma, d))?;
    for (i, block) in weights.blocks.iter().enumerate() {
        h = dit_block_forward(&h, caches.layer_mut(i), block, rope, attend)?;
        if let Some(hint) = injection.hints.get(i) {
            let w = injection
                .projections
                .get(i)
                .ok_or_else(|| Error::Config(format!("no hint projection for block {i}")))?;
            h = inject_hint(&h, hint, w, injection.alpha)?;
        }
    }
    matmul(&rmsnorm(&h, weights.norm_out.data())?, &weights.embed_out)
}

/// Denoise one chunk: `steps` model passes with the same hints, each
/// followed by `x ← x − σ·f(x)`. The KV cache is written on the last pass only.
#[allow(clippy::too_many_arguments)]
pub fn denoise_chunk(
    noisy: &Tensor,
    injection: &Injection<'_>,
    schedule: &NoiseSchedule,
    caches: &mut KvCache,
    weights: &DitWeights,
    cfg: &ModelConfig,
    rope: &RopeParams,
    opts: DenoiseOptions<'_>,
) -> Result<Tensor> {
    denoise_chunk_traced(noisy, injection, schedule, caches, weights, cfg, rope, opts).map(|d| d.latents)
}

#[derive(Debug, Clone)]
pub struct Denoised {
    pub latents: Tensor,
    /// Input of the final pass, i.e. the tokens whose K/V went into the cache.
    pub cached_input: Tensor,
}

/// [`denoise_chunk`], also returning the input of the cache-writing pass.
#[allow(clippy::too_many_arguments)]
pub fn denoise_chunk_traced(
    noisy: &Tensor,
    injection: &Injection<'_>,
    schedule: &NoiseSchedule,
    caches: &mut KvCache,
    weights: &DitWeights,
    cfg: &ModelConfig,
    rope: &RopeParams,
    opts: DenoiseOptions<'_>,
) -> Result<Denoised> {
    if schedule.len() != cfg.denoise_steps {
        return Err(Error::Config(format!(
            "schedule has {} steps, config expects {}",
            schedule.len(),
            cfg.denoise_steps
        )));
    }
    let tokens = cfg.chunk_tokens() + opts.prefix_tokens;
    if noisy.rows() != tokens || noisy.cols() != cfg.latent_channels {
        return Err(dim_err(format!(
            "noisy latents {:?}, expected [{tokens}, {}]",
            noisy.shape(),
            cfg.latent_channels
        )));
    }
    if caches.num_layers() != weights.blocks.len() {
        return Err(Error::Config("one cache layer per DiT block required".into()));
    }
    for (&block, hint) in injection.hints.iter() {
        if !cfg.injection_map.contains(&block) {
            return Err(Error::Config(format!("hint for block {block} outside injection_map")));
        }
        if hint.rows() != tokens || hint.cols() != cfg.model_dim {
            return Err(dim_err(format!("hint for block {block} is {:?}, expected [{tokens}, {}]", hint.shape(), cfg.model_dim)));
        }
    }

    let mut x = noisy.as_matrix();
    let mut cached_input = x.clone();
    let last = schedule.len() - 1;
    for (step, &sigma) in schedule.sigmas().iter().enumerate() {
        let attend = AttendOptions { write: step == last, mask: opts.mask, provenance: opts.provenance };
        if step == last {
            cached_input = x.clone();
        }
        let update = dit_forward(&x, sigma, injection, weights, caches, rope, attend)?;
        let s = sigma as f32;
        for (v, u) in x.data_mut().iter_mut().zip(update.data()) {
            *v -= s * u;
        }
    }
    x.ensure_finite("denoised latents")?;
    Ok(Denoised { latents: x, cached_input })
}
