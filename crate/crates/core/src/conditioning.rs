//! Conditioning inputs, mode inference, dual-stream encoding and the
//! per-mode encoder cache strategy.
//!
//! Frame sequences are tensors shaped `[frames, height, width, channels]`;
//! masks are `[frames, height, width, 1]` with 1 marking reactive pixels
//! (to be generated) and 0 marking inactive pixels (to be preserved).

use serde::{Deserialize, Serialize};

use crate::config::{Faults, ModelConfig};
use crate::error::{dim_err, Error, Result};
use crate::rng::Seed;
use crate::tensor::{gaussian_init, matmul, Tensor};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditioningInputs {
    pub src_video: Option<Tensor>,
    pub src_mask: Option<Tensor>,
    /// Reference images, each `[height, width, channels]`.
    pub src_ref_images: Option<Vec<Tensor>>,
}

impl ConditioningInputs {
    pub fn refs(&self) -> &[Tensor] {
        self.src_ref_images.as_deref().unwrap_or(&[])
    }

    pub fn has_refs(&self) -> bool {
        !self.refs().is_empty()
    }

    /// Shape checks against the engine configuration.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let [h, w, c] = cfg.frame_shape();
        if let Some(v) = &self.src_video {
            match v.shape() {
                [_, vh, vw, vc] if (*vh, *vw, *vc) == (h, w, c) => {}
                s => return Err(dim_err(format!("src_video must be [frames, {h}, {w}, {c}], got {s:?}"))),
            }
        }
        if let Some(m) = &self.src_mask {
            let frames = self.src_video.as_ref().map(|v| v.shape()[0]);
            match (m.shape(), frames) {
                ([mf, mh, mw, 1], Some(vf)) if (*mh, *mw) == (h, w) && *mf == vf => {}
                (s, _) => return Err(dim_err(format!("src_mask must be [frames, {h}, {w}, 1] matching src_video, got {s:?}"))),
            }
            if m.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput("mask values must lie in [0, 1]".into()));
            }
        }
        for r in self.refs() {
            if r.shape() != [h, w, c] {
                return Err(dim_err(format!("reference image must be [{h}, {w}, {c}], got {:?}", r.shape())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    T2vBaseline,
    V2v,
    Mv2v,
    R2v,
    Extension,
    Composed,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::T2vBaseline, Mode::V2v, Mode::Mv2v, Mode::R2v, Mode::Extension, Mode::Composed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::T2vBaseline => "T2V_BASELINE",
            Mode::V2v => "V2V",
            Mode::Mv2v => "MV2V",
            Mode::R2v => "R2V",
            Mode::Extension => "EXTENSION",
            Mode::Composed => "COMPOSED",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    /// Case-insensitive; `-` and `_` are interchangeable. `t2v` names the baseline.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_uppercase().replace('-', "_");
        if key == "T2V" {
            return Ok(Mode::T2vBaseline);
        }
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode `{s}`; expected one of {:?}", Mode::ALL.map(Mode::as_str))))
    }
}

/// First frame fully inactive, every later frame fully reactive.
pub fn is_extension_pattern(mask: &Tensor) -> bool {
    let frames = mask.shape().first().copied().unwrap_or(0);
    if frames < 2 {
        return false;
    }
    let per_frame = mask.len() / frames;
    let (first, rest) = mask.data().split_at(per_frame);
    first.iter().all(|&v| v == 0.0) && rest.iter().all(|&v| v == 1.0)
}

/// The per-chunk stream mode implied by video and mask alone.
pub fn video_mode(inputs: &ConditioningInputs) -> Result<Option<Mode>> {
    match (&inputs.src_video, &inputs.src_mask) {
        (None, Some(_)) => Err(Error::InvalidInput("src_mask given without src_video".into())),
        (None, None) => Ok(None),
        (Some(_), None) => Ok(Some(Mode::V2v)),
        (Some(_), Some(m)) if is_extension_pattern(m) => Ok(Some(Mode::Extension)),
        (Some(_), Some(_)) => Ok(Some(Mode::Mv2v)),
    }
}

/// Mode from input presence alone.
pub fn infer_mode(inputs: &ConditioningInputs) -> Result<Mode> {
    let stream = video_mode(inputs)?;
    Ok(match (stream, inputs.has_refs()) {
        (None, false) => Mode::T2vBaseline,
        (None, true) => Mode::R2v,
        (Some(m), false) => m,
        (Some(_), true) => Mode::Composed,
    })
}

/// `(video ⊙ (1 − mask), video ⊙ mask)`, mask broadcast over channels.
pub fn split_streams(video: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = video.cols();
    if mask.cols() != 1 || video.rows() != mask.len() {
        return Err(dim_err(format!("mask {:?} does not match video {:?}", mask.shape(), video.shape())));
    }
    let mut inactive = video.clone();
    let mut reactive = video.clone();
    for (px, &m) in mask.data().iter().enumerate() {
        for ch in 0..c {
            let i = px * c + ch;
            inactive.data_mut()[i] *= 1.0 - m;
            reactive.data_mut()[i] *= m;
        }
    }
    Ok((inactive, reactive))
}

/// Causal temporal encoder: per-pixel channel projection, a causal temporal
/// convolution over `kernel` frames, then mean pooling of each group of
/// `compression` frames into one latent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncoder {
    /// `[pixel_channels, latent_channels]`.
    pub proj: Tensor,
    /// Tap `j` weights the frame `j` steps back; each `[latent, latent]`.
    pub taps: Vec<Tensor>,
    pub compression: usize,
}

/// Carry state: the last `kernel − 1` projected frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    frames: Vec<Tensor>,
}

impl EncoderState {
    pub fn zeros(encoder: &TemporalEncoder, tokens_per_frame: usize) -> Self {
        let c = encoder.latent_channels();
        Self { frames: (1..encoder.kernel()).map(|_| Tensor::zeros(&[tokens_per_frame, c])).collect() }
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn is_zero(&self) -> bool {
        self.frames.iter().all(|f| f.data().iter().all(|&v| v == 0.0))
    }
}

impl TemporalEncoder {
    pub fn random(cfg: &ModelConfig, seed: Seed) -> Result<Self> {
        let (cp, cl) = (cfg.pixel_channels, cfg.latent_channels);
        let tap_scale = 1.0 / ((cl * cfg.temporal_kernel) as f32).sqrt();
        Ok(Self {
            proj: gaussian_init(&[cp, cl], seed.derive("proj"), 1.0 / (cp as f32).sqrt())?,
            taps: (0..cfg.temporal_kernel)
                .map(|j| gaussian_init(&[cl, cl], seed.derive(&format!("tap{j}")), tap_scale))
                .collect::<Result<_>>()?,
            compression: cfg.temporal_compression,
        })
    }

    pub fn kernel(&self) -> usize {
        self.taps.len()
    }

    pub fn latent_channels(&self) -> usize {
        self.proj.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.proj.len() + self.taps.iter().map(Tensor::len).sum::<usize>()
    }

    /// Encode `[frames, h, w, c]` into `[frames / compression · h · w, latent]`
    /// token rows. `state = None` encodes from a zero carry and keeps nothing.
    pub fn encode(&self, frames: &Tensor, state: Option<&mut EncoderState>) -> Result<Tensor> {
        let &[n, h, w, c] = frames.shape() else {
            return Err(dim_err(format!("encoder expects [frames, h, w, c], got {:?}", frames.shape())));
        };
        if c != self.proj.rows() {
            return Err(dim_err(format!("encoder expects {} channels, got {c}", self.proj.rows())));
        }
        if n % self.compression != 0 {
            return Err(Error::Chunking(format!("{n} frames is not a multiple of compression {}", self.compression)));
        }
        let hw = h * w;
        let cl = self.latent_channels();
        let mut fresh;
        let state = match state {
            Some(s) => s,
            None => {
                fresh = EncoderState::zeros(self, hw);
                &mut fresh
            }
        };
        if state.frames.iter().any(|f| f.rows() != hw) {
            return Err(dim_err("encoder state does not match frame size"));
        }

        let mut history: Vec<Tensor> = std::mem::take(&mut state.frames);
        let carried = history.len();
        for f in 0..n {
            let frame = Tensor::new(vec![hw, c], frames.data()[f * hw * c..(f + 1) * hw * c].to_vec())?;
            history.push(matmul(&frame, &self.proj)?);
        }

        let inv = 1.0 / self.compression as f32;
        let mut latents = vec![0.0f32; (n / self.compression) * hw * cl];
        for f in 0..n {
            let idx = carried + f;
            let mut y = Tensor::zeros(&[hw, cl]);
            for (j, tap) in self.taps.iter().enumerate() {
                if let Some(src) = idx.checked_sub(j).map(|i| &history[i]) {
                    y = y.add(&matmul(src, tap)?)?;
                }
            }
            let t = f / self.compression;
            let dst = &mut latents[t * hw * cl..(t + 1) * hw * cl];
            for (d, v) in dst.iter_mut().zip(y.data()) {
                *d += v * inv;
            }
        }
        let keep = self.kernel() - 1;
        state.frames = history.split_off(history.len() - keep);
        Tensor::new(vec![(n / self.compression) * hw, cl], latents)
    }

    /// A still image as one latent frame: the image repeated `compression`
    /// times, encoded from a zero carry.
    pub fn encode_image(&self, image: &Tensor) -> Result<Tensor> {
        let mut data = Vec::with_capacity(image.len() * self.compression);
        for _ in 0..self.compression {
            data.extend_from_slice(image.data());
        }
        let mut shape = vec![self.compression];
        shape.extend_from_slice(image.shape());
        self.encode(&Tensor::new(shape, data)?, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamCache {
    Enabled,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStrategy {
    pub inactive: StreamCache,
    pub reactive: StreamCache,
}

/// Encoder cache flags for modes that carry per-chunk streams. Returns
/// `None` for modes without streams and for `Composed`, whose strategy is
/// that of its underlying stream mode.
pub fn cache_strategy_for(mode: Mode) -> Option<CacheStrategy> {
    use StreamCache::*;
    match mode {
        Mode::V2v => Some(CacheStrategy { inactive: Enabled, reactive: Enabled }),
        Mode::Mv2v | Mode::Extension => Some(CacheStrategy { inactive: Enabled, reactive: Skipped }),
        Mode::T2vBaseline | Mode::R2v | Mode::Composed => None,
    }
}

/// Independent carry states for the two streams.
#[derive(Debug, Clone)]
pub struct EncoderCachePair {
    pub inactive: EncoderState,
    pub reactive: EncoderState,
    pub strategy: CacheStrategy,
}

impl EncoderCachePair {
    pub fn new(encoder: &TemporalEncoder, tokens_per_frame: usize, strategy: CacheStrategy) -> Self {
        Self {
            inactive: EncoderState::zeros(encoder, tokens_per_frame),
            reactive: EncoderState::zeros(encoder, tokens_per_frame),
            strategy,
        }
    }

    /// Caches for a stream mode, or `None` for modes without streams. The
    /// `reactive_cache_in_masked_modes` fault forces the reactive cache on.
    pub fn for_mode(encoder: &TemporalEncoder, tokens_per_frame: usize, mode: Mode, faults: Faults) -> Option<Self> {
        let mut strategy = cache_strategy_for(mode)?;
        if faults.reactive_cache_in_masked_modes {
            strategy.reactive = StreamCache::Enabled;
        }
        Some(Self::new(encoder, tokens_per_frame, strategy))
    }
}

fn encode_with(encoder: &TemporalEncoder, frames: &Tensor, state: &mut EncoderState, flag: StreamCache, hw: usize) -> Result<Tensor> {
    match flag {
        StreamCache::Enabled => encoder.encode(frames, Some(state)),
        StreamCache::Skipped => {
            *state = EncoderState::zeros(encoder, hw);
            encoder.encode(frames, None)
        }
    }
}

/// Encode one chunk's streams and channel-concatenate them into the
/// `[chunk_tokens, 2 · latent]` context input. Without a mask the whole
/// frame is reactive.
pub fn prepare_chunk_conditioning(
    video: &Tensor,
    mask: Option<&Tensor>,
    mode: Mode,
    encoder: &TemporalEncoder,
    caches: &mut EncoderCachePair,
) -> Result<Tensor> {
    if matches!(mode, Mode::T2vBaseline | Mode::R2v) {
        return Err(Error::Precondition(format!("{mode} has no per-chunk conditioning streams")));
    }
    let &[n, h, w, _] = video.shape() else {
        return Err(dim_err(format!("video chunk must be [frames, h, w, c], got {:?}", video.shape())));
    };
    let ones;
    let mask = match mask {
        Some(m) => m,
        None => {
            ones = Tensor::filled(&[n, h, w, 1], 1.0);
            &ones
        }
    };
    let (inactive, reactive) = split_streams(video, mask)?;
    let hw = h * w;
    let strategy = caches.strategy;
    let li = encode_with(encoder, &inactive, &mut caches.inactive, strategy.inactive, hw)?;
    let lr = encode_with(encoder, &reactive, &mut caches.reactive, strategy.reactive, hw)?;
    Tensor::concat_cols(&[&li, &lr])
}
