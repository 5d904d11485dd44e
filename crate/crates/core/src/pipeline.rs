//! Per-chunk orchestration: encode, hints, denoise, decode, in either the
//! adapted architecture or the legacy concatenation architecture.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{AttendOptions, ChunkMask};
use crate::conditioning::{
    infer_mode, prepare_chunk_conditioning, video_mode, ConditioningInputs, EncoderCachePair, Mode, TemporalEncoder,
};
use crate::config::{Faults, ModelConfig};
use crate::context::{
    compute_hints, encode_reference_latents, encode_references_once, merge_hints, ContextBlockStack,
    ReferenceHintCache,
};
use crate::dit::{
    denoise_chunk_traced, dit_forward, ContextScale, DenoiseOptions, DitWeights, HintSet, Injection,
    InjectionProjection, NoiseSchedule,
};
use crate::error::{dim_err, Error, Result};
use crate::golden;
use crate::kv_cache::{CacheDump, KvCache, Provenance};
use crate::rng::Seed;
use crate::rope::RopeParams;
use crate::tensor::{gaussian_init, matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Adapted,
    Legacy,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adapted" => Ok(Self::Adapted),
            "legacy" => Ok(Self::Legacy),
            other => Err(Error::Config(format!("unknown architecture `{other}` (adapted|legacy)"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adapted => "adapted",
            Self::Legacy => "legacy",
        })
    }
}

/// Causal temporal decoder mirroring the encoder: output frame `t·c + s` is
/// `l_t · sub_s + l_{t−1} · carry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDecoder {
    /// One `[latent, pixel]` map per sub-frame.
    pub subs: Vec<Tensor>,
    pub carry: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    prev: Tensor,
}

impl DecodeState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { prev: Tensor::zeros(&[cfg.tokens_per_frame(), cfg.latent_channels]) }
    }
}

impl TemporalDecoder {
    pub fn random(cfg: &ModelConfig, seed: Seed) -> Result<Self> {
        let (c, p) = (cfg.latent_channels, cfg.pixel_channels);
        let s = 1.0 / (c as f32).sqrt();
        Ok(Self {
            subs: (0..cfg.temporal_compression)
                .map(|i| gaussian_init(&[c, p], seed.derive(&format!("sub{i}")), s))
                .collect::<Result<_>>()?,
            carry: gaussian_init(&[c, p], seed.derive("carry"), 0.5 * s)?,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (c, p) = (cfg.latent_channels, cfg.pixel_channels);
        Self { subs: (0..cfg.temporal_compression).map(|_| Tensor::zeros(&[c, p])).collect(), carry: Tensor::zeros(&[c, p]) }
    }

    pub fn parameter_count(&self) -> usize {
        self.carry.len() + self.subs.iter().map(Tensor::len).sum::<usize>()
    }
}

/// Decode `[latent_frames · hw, latent]` into `[latent_frames · c, h, w, pixel]`.
pub fn decode_chunk(latents: &Tensor, decoder: &TemporalDecoder, state: &mut DecodeState, cfg: &ModelConfig) -> Result<Tensor> {
    let hw = cfg.tokens_per_frame();
    let lf = cfg.latent_frames_per_chunk();
    if latents.rows() != lf * hw || latents.cols() != cfg.latent_channels {
        return Err(dim_err(format!(
            "decoder expects [{}, {}] latents, got {:?}",
            lf * hw,
            cfg.latent_channels,
            latents.shape()
        )));
    }
    let c = decoder.subs.len();
    let mut data = Vec::with_capacity(lf * c * hw * cfg.pixel_channels);
    for t in 0..lf {
        let cur = latents.slice_rows(t * hw, (t + 1) * hw)?;
        let carried = matmul(&state.prev, &decoder.carry)?;
        for sub in &decoder.subs {
            data.extend_from_slice(matmul(&cur, sub)?.add(&carried)?.data());
        }
        state.prev = cur;
    }
    Tensor::new(vec![lf * c, cfg.frame_height, cfg.frame_width, cfg.pixel_channels], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub base: usize,
    pub context: usize,
}

impl ParameterCounts {
    pub fn overhead(&self) -> f64 {
        self.context as f64 / self.base as f64
    }
}

/// All weights of the engine; shared read-only between sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub dit: DitWeights,
    pub context: ContextBlockStack,
    pub encoder: TemporalEncoder,
    pub decoder: TemporalDecoder,
    pub rope: RopeParams,
    pub schedule: NoiseSchedule,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<String>,
}

const MANIFEST: &str = "manifest.json";

impl Model {
    pub fn new(cfg: ModelConfig, seed: Seed) -> Result<Self> {
        Self::with_faults(cfg, seed, Faults::none())
    }

    pub fn with_faults(cfg: ModelConfig, seed: Seed, faults: Faults) -> Result<Self> {
        cfg.validate()?;
        let rope = RopeParams { head_dim: cfg.head_dim(), base: cfg.rope_base };
        rope.validate()?;
        let mut context = ContextBlockStack::random(&cfg, seed.derive("context"))?;
        if faults.nonzero_projection_init && context.projections.is_zero() {
            let scale = 1.0 / (cfg.model_dim as f32).sqrt();
            context.projections =
                InjectionProjection::gaussian(&cfg.injection_map, cfg.model_dim, seed.derive("fault"), scale)?;
        }
        Ok(Self {
            dit: DitWeights::random(&cfg, seed.derive("dit"))?,
            context,
            encoder: TemporalEncoder::random(&cfg, seed.derive("encoder"))?,
            decoder: TemporalDecoder::random(&cfg, seed.derive("decoder"))?,
            schedule: NoiseSchedule::linear(cfg.sigma_max, cfg.sigma_min, cfg.denoise_steps)?,
            rope,
            cfg,
        })
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        ParameterCounts { base: self.dit.parameter_count(), context: self.context.parameter_count() }
    }

    fn named(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("dit.embed_in".into(), &mut self.dit.embed_in),
            ("dit.norm_out".into(), &mut self.dit.norm_out),
            ("dit.embed_out".into(), &mut self.dit.embed_out),
            ("ctx.embed".into(), &mut self.context.embed),
            ("enc.proj".into(), &mut self.encoder.proj),
            ("dec.carry".into(), &mut self.decoder.carry),
        ];
        for (i, b) in self.dit.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("dit.block{i}")));
        }
        for (j, b) in self.context.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("ctx.block{j}")));
        }
        for (b, w) in self.context.projections.0.iter_mut() {
            out.push((format!("ctx.proj.block{b}"), w));
        }
        for (j, t) in self.encoder.taps.iter_mut().enumerate() {
            out.push((format!("enc.tap{j}"), t));
        }
        for (s, t) in self.decoder.subs.iter_mut().enumerate() {
            out.push((format!("dec.sub{s}"), t));
        }
        out
    }

    /// Write every tensor as a golden file plus a JSON manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut copy = self.clone();
        let named = copy.named();
        for (name, t) in &named {
            golden::write(dir.join(format!("{name}.tensor")), t)?;
        }
        let manifest = Manifest { config: self.cfg.clone(), tensors: named.into_iter().map(|(n, _)| n).collect() };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format {
            path: dir.join(MANIFEST).display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(dir.join(MANIFEST), json)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| Error::Format { path: path.display().to_string(), reason: e.to_string() })?;
        let mut model = Self::new(manifest.config, Seed(0))?;
        let mut named: BTreeMap<String, &mut Tensor> = model.named().into_iter().collect();
        if named.len() != manifest.tensors.len() {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("manifest lists {} tensors, model has {}", manifest.tensors.len(), named.len()),
            });
        }
        for name in &manifest.tensors {
            let slot = named.get_mut(name).ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                reason: format!("unexpected tensor `{name}`"),
            })?;
            let t = golden::read(dir.join(format!("{name}.tensor")))?;
            if t.shape() != slot.shape() {
                return Err(dim_err(format!("{name}: stored {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            **slot = t;
        }
        Ok(model)
    }
}

/// Remove the first `ref_tokens` rows.
pub fn strip_references(output: &Tensor, ref_tokens: usize) -> Result<Tensor> {
    if ref_tokens > output.rows() {
        return Err(Error::Precondition(format!(
            "cannot strip {ref_tokens} reference rows from {} rows",
            output.rows()
        )));
    }
    output.slice_rows(ref_tokens, output.rows())
}

/// Seeded per-chunk noise.
pub fn chunk_noise(cfg: &ModelConfig, seed: Seed, chunk_index: usize) -> Result<Tensor> {
    gaussian_init(&[cfg.chunk_tokens(), cfg.latent_channels], seed.derive(&format!("noise{chunk_index}")), 1.0)
}

/// One line of the per-chunk trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub chunk_index: usize,
    pub architecture: Architecture,
    pub mode: Mode,
    pub dit_sequence_tokens: usize,
    pub cache_tokens: usize,
    /// Context-stack passes so far in this session, reference encoding included.
    pub hint_compute_count: usize,
    pub wall_latency_ms: f64,
    pub alpha: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkResult {
    /// `[chunk_frames, h, w, pixel]`.
    pub frames: Tensor,
    /// Denoised video latents, `[chunk_tokens, latent]`.
    pub latents: Tensor,
    pub trace: TraceRecord,
}

/// Tokens that went into the DiT cache for one chunk, kept so the cache can
/// be rebuilt from scratch.
#[derive(Debug, Clone)]
struct HistoryEntry {
    tokens: Tensor,
    hints: HintSet,
}

#[derive(Debug, Clone)]
pub struct GenerationSession {
    model: Arc<Model>,
    pub mode: Mode,
    /// Mode implied by video and mask alone.
    pub stream_mode: Option<Mode>,
    pub architecture: Architecture,
    pub alpha: ContextScale,
    pub chunk_index: usize,
    seed: Seed,
    faults: Faults,
    inputs: ConditioningInputs,
    dit_cache: KvCache,
    context_cache: KvCache,
    encoder_caches: Option<EncoderCachePair>,
    decode_state: DecodeState,
    reference_hints: Option<ReferenceHintCache>,
    anchor_hints: Option<ReferenceHintCache>,
    pending_refs: Option<Tensor>,
    legacy_ref_tokens: usize,
    hint_compute_count: usize,
    history: VecDeque<HistoryEntry>,
}

impl GenerationSession {
    pub fn open(model: Arc<Model>, inputs: ConditioningInputs, architecture: Architecture, alpha: ContextScale, seed: Seed) -> Result<Self> {
        Self::open_with_faults(model, inputs, architecture, alpha, seed, Faults::none())
    }

    pub fn open_with_faults(
        model: Arc<Model>,
        inputs: ConditioningInputs,
        architecture: Architecture,
        alpha: ContextScale,
        seed: Seed,
        faults: Faults,
    ) -> Result<Self> {
        let cfg = &model.cfg;
        let mode = infer_mode(&inputs)?;
        let stream_mode = video_mode(&inputs)?;
        inputs.validate(cfg)?;
        if let Some(v) = &inputs.src_video {
            if v.shape()[0] % cfg.chunk_frames != 0 {
                return Err(Error::Chunking(format!(
                    "src_video has {} frames, not a multiple of chunk_frames {}",
                    v.shape()[0],
                    cfg.chunk_frames
                )));
            }
        }
        let encoder_caches = stream_mode
            .and_then(|m| EncoderCachePair::for_mode(&model.encoder, cfg.tokens_per_frame(), m, faults));

        let mut session = Self {
            mode,
            stream_mode,
            architecture,
            alpha,
            chunk_index: 0,
            seed,
            faults,
            dit_cache: KvCache::new(cfg.num_blocks, cfg.model_dim, cfg.cache_capacity()),
            context_cache: model.context.new_cache(cfg),
            encoder_caches,
            decode_state: DecodeState::zeros(cfg),
            reference_hints: None,
            anchor_hints: None,
            pending_refs: None,
            legacy_ref_tokens: 0,
            hint_compute_count: 0,
            history: VecDeque::new(),
            inputs,
            model,
        };
        if session.inputs.has_refs() {
            let m = &session.model;
            match architecture {
                Architecture::Adapted => {
                    session.reference_hints =
                        Some(encode_references_once(session.inputs.refs(), &m.encoder, &m.context, &m.cfg, &m.rope)?);
                    session.hint_compute_count += 1;
                }
                Architecture::Legacy => {
                    session.pending_refs = Some(encode_reference_latents(session.inputs.refs(), &m.encoder, &m.cfg)?);
                }
            }
        }
        Ok(session)
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn faults(&self) -> Faults {
        self.faults
    }

    pub fn dit_cache(&self) -> &KvCache {
        &self.dit_cache
    }

    pub fn context_cache(&self) -> &KvCache {
        &self.context_cache
    }

    pub fn encoder_caches(&self) -> Option<&EncoderCachePair> {
        self.encoder_caches.as_ref()
    }

    pub fn reference_hints(&self) -> Option<&ReferenceHintCache> {
        self.reference_hints.as_ref()
    }

    pub fn anchor_hints(&self) -> Option<&ReferenceHintCache> {
        self.anchor_hints.as_ref()
    }

    /// Encoded reference latents still waiting to be concatenated (legacy).
    pub fn pending_references(&self) -> Option<&Tensor> {
        self.pending_refs.as_ref()
    }

    pub fn hint_compute_count(&self) -> usize {
        self.hint_compute_count
    }

    pub fn cache_dump(&self) -> CacheDump {
        self.dit_cache.dump()
    }

    /// Chunks the conditioning video can feed; `None` when unbounded.
    pub fn available_chunks(&self) -> Option<usize> {
        self.inputs.src_video.as_ref().map(|v| v.shape()[0] / self.model.cfg.chunk_frames)
    }

    /// Noise for the next chunk, derived from the session seed.
    pub fn next_noise(&self) -> Result<Tensor> {
        chunk_noise(&self.model.cfg, self.seed, self.chunk_index)
    }

    fn chunk_streams(&self, index: usize) -> Result<(Tensor, Option<Tensor>)> {
        let cfg = &self.model.cfg;
        let video = self.inputs.src_video.as_ref().ok_or_else(|| Error::Precondition("no src_video".into()))?;
        let frames = video.shape()[0];
        let (lo, hi) = (index * cfg.chunk_frames, (index + 1) * cfg.chunk_frames);
        if hi > frames {
            return Err(Error::InvalidInput(format!("src_video has {frames} frames; chunk {index} needs {hi}")));
        }
        let slice = |t: &Tensor| -> Result<Tensor> {
            let per = t.len() / t.shape()[0];
            let mut shape = t.shape().to_vec();
            shape[0] = cfg.chunk_frames;
            Tensor::new(shape, t.data()[lo * per..hi * per].to_vec())
        };
        Ok((slice(video)?, self.inputs.src_mask.as_ref().map(slice).transpose()?))
    }

    /// Encode this chunk's streams and run them through the context stack.
    fn stream_hints(&mut self, index: usize) -> Result<Option<HintSet>> {
        let Some(stream_mode) = self.stream_mode else {
            return Ok(None);
        };
        if self.architecture == Architecture::Adapted && stream_mode == Mode::Extension {
            if let Some(anchor) = &self.anchor_hints {
                return Ok(Some(anchor.hints.clone()));
            }
        }
        let (video, chunk_mask) = self.chunk_streams(index)?;
        let model = Arc::clone(&self.model);
        let caches = self.encoder_caches.as_mut().expect("stream modes carry encoder caches");
        let cond = prepare_chunk_conditioning(&video, chunk_mask.as_ref(), stream_mode, &model.encoder, caches)?;
        let hints = compute_hints(&cond, &model.context, &mut self.context_cache, &model.cfg, &model.rope)?;
        self.hint_compute_count += 1;
        if self.architecture == Architecture::Adapted && stream_mode == Mode::Extension {
            self.anchor_hints = Some(ReferenceHintCache::store(hints.clone()));
        }
        Ok(Some(hints))
    }

    /// Legacy context input: reference rows `[ref | 0]` ahead of the chunk
    /// conditioning (zeros when there is none).
    fn legacy_context(&mut self, ref_latents: &Tensor, cond: Option<&Tensor>, mask: ChunkMask) -> Result<HintSet> {
        let model = Arc::clone(&self.model);
        let input = legacy_context_input(ref_latents, cond, &model.cfg)?;
        let r = ref_latents.rows();
        let mut tags = vec![Provenance::Reference; r];
        tags.extend(std::iter::repeat_n(Provenance::Video, input.rows() - r));
        model.context.forward(&input, &mut self.context_cache, &model.rope, AttendOptions { write: true, mask, provenance: &tags })
    }

    /// Generate the next chunk from `noise` (`[chunk_tokens, latent]`).
    pub fn generate_chunk(&mut self, noise: &Tensor) -> Result<ChunkResult> {
        let start = Instant::now();
        let model = Arc::clone(&self.model);
        let cfg = &model.cfg;
        if noise.rows() != cfg.chunk_tokens() || noise.cols() != cfg.latent_channels {
            return Err(dim_err(format!(
                "noise {:?}, expected [{}, {}]",
                noise.shape(),
                cfg.chunk_tokens(),
                cfg.latent_channels
            )));
        }
        let index = self.chunk_index;
        if let Some(n) = self.available_chunks() {
            if index >= n {
                return Err(Error::InvalidInput(format!("conditioning video covers {n} chunks")));
            }
        }

        let (input, hints, prefix, mask) = match (self.architecture, self.pending_refs.take()) {
            (Architecture::Legacy, Some(refs)) => {
                let r = refs.rows();
                let cond = match self.stream_mode {
                    Some(m) => {
                        let (video, chunk_mask) = self.chunk_streams(index)?;
                        let caches = self.encoder_caches.as_mut().expect("stream modes carry encoder caches");
                        Some(prepare_chunk_conditioning(&video, chunk_mask.as_ref(), m, &model.encoder, caches)?)
                    }
                    None => None,
                };
                let hints = self.legacy_context(&refs, cond.as_ref(), ChunkMask::Bidirectional)?;
                self.hint_compute_count += 1;
                self.legacy_ref_tokens = r;
                (Tensor::concat_rows(&[&refs, noise])?, hints, r, ChunkMask::Bidirectional)
            }
            (_, _) => {
                let chunk = self.stream_hints(index)?;
                let hints = match (self.reference_hints.as_ref().map(|r| &r.hints), chunk.as_ref()) {
                    (None, None) => HintSet::new(),
                    (r, c) => merge_hints(r, c)?,
                };
                (noise.as_matrix(), hints, 0, ChunkMask::Causal)
            }
        };

        let mut tags = vec![Provenance::Reference; prefix];
        tags.extend(std::iter::repeat_n(Provenance::Video, cfg.chunk_tokens()));
        let injection = Injection { hints: &hints, projections: &model.context.projections, alpha: self.alpha };
        let denoised = denoise_chunk_traced(
            &input,
            &injection,
            &model.schedule,
            &mut self.dit_cache,
            &model.dit,
            cfg,
            &model.rope,
            DenoiseOptions { prefix_tokens: prefix, mask, provenance: &tags },
        )?;
        let latents = strip_references(&denoised.latents, prefix)?;
        self.remember(strip_references(&denoised.cached_input, prefix)?, &hints, prefix)?;
        let frames = decode_chunk(&latents, &model.decoder, &mut self.decode_state, cfg)?;
        self.chunk_index += 1;

        let trace = TraceRecord {
            chunk_index: index,
            architecture: self.architecture,
            mode: self.mode,
            dit_sequence_tokens: input.rows(),
            cache_tokens: self.dit_cache.tokens(),
            hint_compute_count: self.hint_compute_count,
            wall_latency_ms: start.elapsed().as_secs_f64() * 1e3,
            alpha: self.alpha.0,
        };
        Ok(ChunkResult { frames, latents, trace })
    }

    fn remember(&mut self, tokens: Tensor, hints: &HintSet, prefix: usize) -> Result<()> {
        let hints = HintSet(
            hints
                .iter()
                .map(|(&b, h)| Ok((b, strip_references(h, prefix)?)))
                .collect::<Result<_>>()?,
        );
        self.history.push_back(HistoryEntry { tokens, hints });
        let cap = self.model.cfg.cache_chunks;
        while cap > 0 && self.history.len() > cap {
            self.history.pop_front();
        }
        Ok(())
    }

    /// Drop the legacy reference entries from the DiT cache in place, without
    /// re-rotating what remains.
    pub fn strip_reference_cache(&mut self) -> Result<()> {
        let r = std::mem::take(&mut self.legacy_ref_tokens);
        self.dit_cache.strip(0..r)
    }

    /// Rebuild the DiT cache from the cached-pass tokens of every retained
    /// chunk, without references and at fresh contiguous positions.
    pub fn recompute_cache(&mut self) -> Result<()> {
        let model = Arc::clone(&self.model);
        let cfg = &model.cfg;
        let mut cache = KvCache::new(cfg.num_blocks, cfg.model_dim, cfg.cache_capacity());
        let sigma = *model.schedule.sigmas().last().expect("schedule is non-empty");
        let tags = vec![Provenance::Video; cfg.chunk_tokens()];
        for entry in &self.history {
            let injection = Injection { hints: &entry.hints, projections: &model.context.projections, alpha: self.alpha };
            let attend = AttendOptions { write: true, mask: ChunkMask::Causal, provenance: &tags };
            dit_forward(&entry.tokens, sigma, &injection, &model.dit, &mut cache, &model.rope, attend)?;
        }
        self.dit_cache = cache;
        self.legacy_ref_tokens = 0;
        Ok(())
    }

    /// Cached-pass tokens and hints of each retained chunk, oldest first.
    pub fn history(&self) -> impl Iterator<Item = (&Tensor, &HintSet)> {
        self.history.iter().map(|e| (&e.tokens, &e.hints))
    }
}

/// Context-stack input for the concatenation architecture.
pub fn legacy_context_input(ref_latents: &Tensor, cond: Option<&Tensor>, cfg: &ModelConfig) -> Result<Tensor> {
    let c = cfg.latent_channels;
    let refs = Tensor::concat_cols(&[ref_latents, &Tensor::zeros(&[ref_latents.rows(), c])])?;
    let zeros;
    let cond = match cond {
        Some(t) => t,
        None => {
            zeros = Tensor::zeros(&[cfg.chunk_tokens(), 2 * c]);
            &zeros
        }
    };
    Tensor::concat_rows(&[&refs, cond])
}
