//! Request and response bodies shared by the HTTP service and its client.

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningInputs, Mode};
use crate::config::{Config, Faults};
use crate::dit::ContextScale;
use crate::kv_cache::CacheDump;
use crate::pipeline::Architecture;
use crate::tensor::Tensor;
use crate::verify::Suite;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenSession {
    /// Model shape and seed; weights are drawn from `config.seed`.
    pub config: Config,
    pub inputs: ConditioningInputs,
    pub architecture: Architecture,
    pub alpha: ContextScale,
    pub faults: Faults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub mode: Mode,
    pub architecture: Architecture,
    pub alpha: f32,
    pub chunk_index: usize,
    /// Chunks the conditioning video covers; absent when unbounded.
    pub available_chunks: Option<usize>,
}

/// Body of a chunk request. Without `noise` the session draws its own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkRequest {
    pub noise: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub chunk_index: usize,
    pub hint_compute_count: usize,
    pub dit: CacheDump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheRepair {
    /// Drop reference entries in place, keeping the remaining rotations.
    Strip,
    /// Rebuild the cache from history without references.
    Recompute,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyRequest {
    pub suite: Option<Suite>,
    pub fault: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
