//! Engine and benchmark configuration, loadable from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! num_blocks = 8
//! injection_map = [0, 2, 4, 6]
//! chunk_frames = 12
//!
//! [bench]
//! warmup_chunks = 3
//! measured_chunks = 15
//! scenarios = ["baseline", "depth", "inpaint", "extension"]
//! ```
//!
//! Every field is optional and falls back to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::Scenario;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// DiT blocks that receive a hint, ascending. Context block `j` feeds
    /// `injection_map[j]`.
    pub injection_map: Vec<usize>,
    pub denoise_steps: usize,
    /// Linear noise schedule endpoints, first step to last step.
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Pixel frames per chunk.
    pub chunk_frames: usize,
    /// Frame grid; one latent token per grid cell.
    pub frame_height: usize,
    pub frame_width: usize,
    pub pixel_channels: usize,
    pub latent_channels: usize,
    /// Pixel frames folded into one latent frame.
    pub temporal_compression: usize,
    /// Causal temporal kernel span, in frames.
    pub temporal_kernel: usize,
    /// KV-cache capacity in chunks of history; 0 means unbounded.
    pub cache_chunks: usize,
    pub rope_base: f64,
    /// Std-dev for hint projection weights. Zero reproduces the untrained,
    /// zero-initialized state.
    pub projection_scale: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 8,
            model_dim: 64,
            heads: 4,
            mlp_ratio: 4.0,
            injection_map: vec![0, 2, 4, 6],
            denoise_steps: 4,
            sigma_max: 1.0,
            sigma_min: 0.25,
            chunk_frames: 12,
            frame_height: 8,
            frame_width: 8,
            pixel_channels: 3,
            latent_channels: 8,
            temporal_compression: 4,
            temporal_kernel: 3,
            cache_chunks: 4,
            rope_base: 10_000.0,
            projection_scale: 0.0,
        }
    }
}

impl ModelConfig {
    /// A reduced configuration for fast oracle suites.
    pub fn tiny() -> Self {
        Self {
            num_blocks: 4,
            model_dim: 32,
            heads: 2,
            mlp_ratio: 2.0,
            injection_map: vec![0, 2],
            chunk_frames: 8,
            frame_height: 4,
            frame_width: 4,
            latent_channels: 4,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.model_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.frame_height * self.frame_width
    }

    pub fn latent_frames_per_chunk(&self) -> usize {
        self.chunk_frames / self.temporal_compression.max(1)
    }

    /// DiT sequence length per chunk; constant for a session.
    pub fn chunk_tokens(&self) -> usize {
        self.latent_frames_per_chunk() * self.tokens_per_frame()
    }

    pub fn cache_capacity(&self) -> Option<usize> {
        (self.cache_chunks > 0).then(|| self.cache_chunks * self.chunk_tokens())
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.frame_height, self.frame_width, self.pixel_channels]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 || self.model_dim == 0 || self.heads == 0 {
            return fail("num_blocks, model_dim and heads must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) || !self.head_dim().is_multiple_of(2) {
            return fail(format!(
                "model_dim {} must split into {} heads of even size",
                self.model_dim, self.heads
            ));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail("mlp_ratio must be positive".into());
        }
        if self.injection_map.windows(2).any(|w| w[0] >= w[1]) {
            return fail("injection_map must be strictly ascending".into());
        }
        if self.injection_map.iter().any(|&b| b >= self.num_blocks) {
            return fail(format!("injection_map entries must be < num_blocks ({})", self.num_blocks));
        }
        if self.denoise_steps == 0 {
            return fail("denoise_steps must be >= 1".into());
        }
        if self.temporal_compression == 0 || self.temporal_kernel == 0 {
            return fail("temporal_compression and temporal_kernel must be >= 1".into());
        }
        if self.chunk_frames == 0 || !self.chunk_frames.is_multiple_of(self.temporal_compression) {
            return Err(Error::Chunking(format!(
                "chunk_frames {} is not a positive multiple of temporal_compression {}",
                self.chunk_frames, self.temporal_compression
            )));
        }
        if self.tokens_per_frame() == 0 || self.pixel_channels == 0 || self.latent_channels == 0 {
            return fail("frame grid and channel counts must be positive".into());
        }
        if !(self.rope_base > 0.0) {
            return fail("rope_base must be positive".into());
        }
        if !(self.projection_scale >= 0.0) || !self.projection_scale.is_finite() {
            return fail("projection_scale must be finite and >= 0".into());
        }
        crate::dit::NoiseSchedule::linear(self.sigma_max, self.sigma_min, self.denoise_steps)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup_chunks: usize,
    pub measured_chunks: usize,
    pub scenarios: Vec<Scenario>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup_chunks: 3,
            measured_chunks: 15,
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.measured_chunks == 0 {
            return Err(Error::Config("measured_chunks must be >= 1".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        Ok(())
    }
}

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Faults {
    /// Keep the reactive encoder cache alive in MV2V and EXTENSION.
    pub reactive_cache_in_masked_modes: bool,
    /// Initialize hint projections with random weights instead of zeros.
    pub nonzero_projection_init: bool,
}

impl Faults {
    pub const FLAGS: [&'static str; 2] = ["reactive-cache-in-masked-modes", "nonzero-projection-init"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_flag(flag: &str) -> Result<Self> {
        match flag.replace('_', "-").as_str() {
            "reactive-cache-in-masked-modes" => Ok(Self { reactive_cache_in_masked_modes: true, ..Self::default() }),
            "nonzero-projection-init" => Ok(Self { nonzero_projection_init: true, ..Self::default() }),
            other => Err(Error::Config(format!("unknown fault flag `{other}`; expected one of {:?}", Self::FLAGS))),
        }
    }

    pub fn any(&self) -> bool {
        self.reactive_cache_in_masked_modes || self.nonzero_projection_init
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub bench: BenchConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.bench.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
