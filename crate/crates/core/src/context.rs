//! The parallel conditioning pathway: context blocks that turn encoded
//! conditioning into per-block hints.

use serde::{Deserialize, Serialize};

use crate::attention::{AttendOptions, ChunkMask};
use crate::conditioning::TemporalEncoder;
use crate::config::ModelConfig;
use crate::dit::{dit_block_forward, BlockWeights, HintSet, InjectionProjection};
use crate::error::{dim_err, Error, Result};
use crate::kv_cache::{KvCache, Provenance};
use crate::rng::Seed;
use crate::rope::RopeParams;
use crate::tensor::{gaussian_init, matmul, Tensor};

/// Context blocks share the DiT block structure but own their weights.
/// Block `j` emits the hint for DiT block `injection_map[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBlockStack {
    /// `[2 · latent_channels, model_dim]`.
    pub embed: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub projections: InjectionProjection,
    pub injection_map: Vec<usize>,
}

impl ContextBlockStack {
    /// Random block weights; projections drawn with `projection_scale`
    /// (zero by default, i.e. the untrained state).
    pub fn random(cfg: &ModelConfig, seed: Seed) -> Result<Self> {
        let (d, c2) = (cfg.model_dim, 2 * cfg.latent_channels);
        let projections = if cfg.projection_scale == 0.0 {
            InjectionProjection::zeros(&cfg.injection_map, d)
        } else {
            InjectionProjection::gaussian(&cfg.injection_map, d, seed.derive("proj"), cfg.projection_scale)?
        };
        Ok(Self {
            embed: gaussian_init(&[c2, d], seed.derive("embed"), 1.0 / (c2 as f32).sqrt())?,
            blocks: (0..cfg.injection_map.len())
                .map(|j| BlockWeights::random(d, cfg.mlp_hidden(), seed.derive(&format!("block{j}"))))
                .collect::<Result<_>>()?,
            projections,
            injection_map: cfg.injection_map.clone(),
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn input_channels(&self) -> usize {
        self.embed.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.embed.len()
            + self.blocks.iter().map(BlockWeights::parameter_count).sum::<usize>()
            + self.projections.0.values().map(Tensor::len).sum::<usize>()
    }

    pub fn new_cache(&self, cfg: &ModelConfig) -> KvCache {
        KvCache::new(self.depth(), cfg.model_dim, cfg.cache_capacity())
    }

    /// The stack's forward pass. Both architectures call exactly this; only
    /// the input rows and the attention mask differ between them.
    pub fn forward(&self, input: &Tensor, cache: &mut KvCache, rope: &RopeParams, opts: AttendOptions<'_>) -> Result<HintSet> {
        if input.cols() != self.input_channels() {
            return Err(dim_err(format!(
                "context input has {} channels, expected {}",
                input.cols(),
                self.input_channels()
            )));
        }
        if cache.num_layers() != self.depth() {
            return Err(Error::Config("one context cache layer per context block required".into()));
        }
        let mut h = matmul(&input.as_matrix(), &self.embed)?;
        let mut hints = HintSet::new();
        for (j, (block, &target)) in self.blocks.iter().zip(&self.injection_map).enumerate() {
            h = dit_block_forward(&h, cache.layer_mut(j), block, rope, opts)?;
            hints.insert(target, h.clone());
        }
        Ok(hints)
    }
}

/// Hints for one chunk of `[chunk_tokens, 2 · latent]` conditioning. The
/// context cache advances causally.
pub fn compute_hints(
    conditioning: &Tensor,
    stack: &ContextBlockStack,
    cache: &mut KvCache,
    cfg: &ModelConfig,
    rope: &RopeParams,
) -> Result<HintSet> {
    if conditioning.rows() != cfg.chunk_tokens() {
        return Err(dim_err(format!(
            "conditioning has {} tokens, chunk has {}",
            conditioning.rows(),
            cfg.chunk_tokens()
        )));
    }
    let tags = vec![Provenance::Video; conditioning.rows()];
    stack.forward(conditioning, cache, rope, AttendOptions { write: true, mask: ChunkMask::Causal, provenance: &tags })
}

/// Hints computed once and reused for every later chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHintCache {
    pub hints: HintSet,
    pub compute_count: usize,
}

impl ReferenceHintCache {
    pub fn store(hints: HintSet) -> Self {
        Self { hints, compute_count: 1 }
    }
}

/// Encode every reference image to one latent frame; returns `[refs · hw, latent]`.
pub fn encode_reference_latents(refs: &[Tensor], encoder: &TemporalEncoder, cfg: &ModelConfig) -> Result<Tensor> {
    if refs.is_empty() {
        return Err(Error::Precondition("at least one reference image is required".into()));
    }
    let latents = refs
        .iter()
        .map(|r| {
            if r.shape() != cfg.frame_shape() {
                return Err(dim_err(format!("reference image {:?}, expected {:?}", r.shape(), cfg.frame_shape())));
            }
            encoder.encode_image(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&latents.iter().collect::<Vec<_>>())
}

/// Chunk-shaped context input for references: latents mean-pooled per
/// token across references, placed in the inactive half, then repeated for
/// every latent frame of the chunk.
pub fn reference_conditioning(ref_latents: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let (hw, c) = (cfg.tokens_per_frame(), cfg.latent_channels);
    if ref_latents.cols() != c || ref_latents.rows() == 0 || !ref_latents.rows().is_multiple_of(hw) {
        return Err(dim_err(format!("reference latents {:?} are not whole frames of [{hw}, {c}]", ref_latents.shape())));
    }
    let n = ref_latents.rows() / hw;
    let mut pooled = vec![0.0f32; hw * c];
    for r in 0..n {
        for (p, v) in pooled.iter_mut().zip(&ref_latents.data()[r * hw * c..(r + 1) * hw * c]) {
            *p += v;
        }
    }
    let inv = 1.0 / n as f32;
    let mut frame = Vec::with_capacity(hw * 2 * c);
    for tok in 0..hw {
        frame.extend(pooled[tok * c..(tok + 1) * c].iter().map(|v| v * inv));
        frame.extend(std::iter::repeat_n(0.0, c));
    }
    let mut data = Vec::with_capacity(cfg.chunk_tokens() * 2 * c);
    for _ in 0..cfg.latent_frames_per_chunk() {
        data.extend_from_slice(&frame);
    }
    Tensor::new(vec![cfg.chunk_tokens(), 2 * c], data)
}

/// Run references through the encoder and the context stack exactly once,
/// with a fresh context cache.
pub fn encode_references_once(
    refs: &[Tensor],
    encoder: &TemporalEncoder,
    stack: &ContextBlockStack,
    cfg: &ModelConfig,
    rope: &RopeParams,
) -> Result<ReferenceHintCache> {
    let input = reference_conditioning(&encode_reference_latents(refs, encoder, cfg)?, cfg)?;
    let mut cache = stack.new_cache(cfg);
    Ok(ReferenceHintCache::store(compute_hints(&input, stack, &mut cache, cfg, rope)?))
}

/// Per-block sum when both sets are present, pass-through otherwise.
pub fn merge_hints(reference: Option<&HintSet>, chunk: Option<&HintSet>) -> Result<HintSet> {
    match (reference, chunk) {
        (None, None) => Err(Error::Precondition("merge_hints needs at least one hint set".into())),
        (Some(h), None) | (None, Some(h)) => Ok(h.clone()),
        (Some(a), Some(b)) => {
            let mut out = a.clone();
            for (&block, hb) in b.iter() {
                let merged = match a.get(block) {
                    Some(ha) => ha.add(hb)?,
                    None => hb.clone(),
                };
                out.insert(block, merged);
            }
            Ok(out)
        }
    }
}
