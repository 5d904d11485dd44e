//! Per-layer key/value caches.
//!
//! Keys are stored after rotary encoding, so the absolute position each key
//! was written at is baked into its values. Position labels are kept next to
//! every entry and are never rewritten, including by eviction or stripping.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Origin of a cached token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Video,
    Reference,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    model_dim: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    positions: Vec<usize>,
    #[cfg(feature = "provenance")]
    tags: Vec<Provenance>,
    next_position: usize,
    capacity: Option<usize>,
}

impl LayerCache {
    /// `capacity` is the maximum number of cached tokens; `None` is unbounded.
    pub fn new(model_dim: usize, capacity: Option<usize>) -> Self {
        Self {
            model_dim,
            keys: Vec::new(),
            values: Vec::new(),
            positions: Vec::new(),
            #[cfg(feature = "provenance")]
            tags: Vec::new(),
            next_position: 0,
            capacity,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Position the next appended token must start at.
    pub fn next_position(&self) -> usize {
        self.next_position
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Rotated keys, `[len, model_dim]` row-major.
    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[cfg(feature = "provenance")]
    pub fn provenance(&self) -> &[Provenance] {
        &self.tags
    }

    #[cfg(feature = "provenance")]
    pub fn count_tagged(&self, tag: Provenance) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Labels strictly increasing by one and ending right before
    /// `next_position`.
    pub fn is_consistent(&self) -> bool {
        self.positions.windows(2).all(|w| w[1] == w[0] + 1)
            && self.positions.last().is_none_or(|&p| p + 1 == self.next_position)
    }

    /// Append a contiguous run of already-rotated keys and their values.
    /// `tags` may be empty, meaning every token is video.
    pub fn append(&mut self, keys: &Tensor, values: &Tensor, start_position: usize, tags: &[Provenance]) -> Result<()> {
        if start_position != self.next_position {
            return Err(Error::CacheIntegrity(format!(
                "chunk starts at position {start_position} but cache ends at {}",
                self.next_position
            )));
        }
        if keys.cols() != self.model_dim || values.cols() != self.model_dim || keys.rows() != values.rows() {
            return Err(dim_err("cache append: key/value shape mismatch"));
        }
        let n = keys.rows();
        if !tags.is_empty() && tags.len() != n {
            return Err(dim_err("cache append: one provenance tag per token required"));
        }
        self.keys.extend_from_slice(keys.data());
        self.values.extend_from_slice(values.data());
        self.positions.extend(start_position..start_position + n);
        #[cfg(feature = "provenance")]
        if tags.is_empty() {
            self.tags.extend(std::iter::repeat_n(Provenance::Video, n));
        } else {
            self.tags.extend_from_slice(tags);
        }
        self.next_position += n;
        self.evict_to_capacity();
        Ok(())
    }

    /// Sliding window: drop the oldest entries until within capacity.
    fn evict_to_capacity(&mut self) {
        let Some(cap) = self.capacity else { return };
        if self.len() <= cap {
            return;
        }
        let drop = self.len() - cap;
        self.keys.drain(..drop * self.model_dim);
        self.values.drain(..drop * self.model_dim);
        self.positions.drain(..drop);
        #[cfg(feature = "provenance")]
        self.tags.drain(..drop);
    }

    /// Remove every entry whose position label falls in `range`.
    ///
    /// Nothing is re-rotated: retained keys keep the rotation of their
    /// original positions, while the position counter shrinks by the number
    /// of removed entries as if they had never been generated. The resulting
    /// cache is internally inconsistent whenever a later entry survives.
    pub fn strip(&mut self, range: Range<usize>) -> Result<()> {
        if range.is_empty() {
            return Ok(());
        }
        let (Some(&lo), Some(&hi)) = (self.positions.iter().min(), self.positions.iter().max()) else {
            return Err(Error::Precondition("strip from an empty cache".into()));
        };
        if range.start < lo || range.end > hi + 1 {
            return Err(Error::Precondition(format!(
                "strip range {range:?} outside cached positions {lo}..{}",
                hi + 1
            )));
        }
        let d = self.model_dim;
        let keep: Vec<bool> = self.positions.iter().map(|p| !range.contains(p)).collect();
        let removed = keep.iter().filter(|k| !**k).count();
        let mut idx = 0;
        self.keys.retain(|_| {
            let k = keep[idx / d];
            idx += 1;
            k
        });
        idx = 0;
        self.values.retain(|_| {
            let k = keep[idx / d];
            idx += 1;
            k
        });
        idx = 0;
        self.positions.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
        #[cfg(feature = "provenance")]
        {
            idx = 0;
            self.tags.retain(|_| {
                let k = keep[idx];
                idx += 1;
                k
            });
        }
        self.next_position -= removed;
        Ok(())
    }

    pub fn dump(&self) -> LayerDump {
        LayerDump {
            tokens: self.len(),
            first_position: self.positions.first().copied(),
            last_position: self.positions.last().copied(),
            next_position: self.next_position,
            key_checksum: checksum(&self.keys),
            value_checksum: checksum(&self.values),
            #[cfg(feature = "provenance")]
            reference_entries: Some(self.count_tagged(Provenance::Reference)),
            #[cfg(not(feature = "provenance"))]
            reference_entries: None,
        }
    }
}

/// First 16 hex digits of SHA-256 over the little-endian f32 bytes.
fn checksum(data: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Per-layer cache summary used by tests and the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDump {
    pub tokens: usize,
    pub first_position: Option<usize>,
    pub last_position: Option<usize>,
    pub next_position: usize,
    pub key_checksum: String,
    pub value_checksum: String,
    /// Present only when provenance tracking is compiled in.
    pub reference_entries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheDump {
    pub layers: Vec<LayerDump>,
}

/// One [`LayerCache`] per transformer block.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn new(num_layers: usize, model_dim: usize, capacity: Option<usize>) -> Self {
        Self { layers: (0..num_layers).map(|_| LayerCache::new(model_dim, capacity)).collect() }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerCache {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut LayerCache {
        &mut self.layers[i]
    }

    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }

    /// Cached tokens in the first layer; all layers advance together.
    pub fn tokens(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn strip(&mut self, range: Range<usize>) -> Result<()> {
        for l in &mut self.layers {
            l.strip(range.clone())?;
        }
        Ok(())
    }

    pub fn dump(&self) -> CacheDump {
        CacheDump { layers: self.layers.iter().map(LayerCache::dump).collect() }
    }
}
