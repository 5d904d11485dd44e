//! Rotary position embeddings with interleaved pairs.
//!
//! For head dimension `d`, pair `i` (elements `2i`, `2i+1`) at absolute
//! position `p` is rotated by `θ = p · base^(−2i/d)`:
//!
//! ```text
//! y[2i]   = x[2i]·cos θ − x[2i+1]·sin θ
//! y[2i+1] = x[2i]·sin θ + x[2i+1]·cos θ
//! ```
//!
//! Angles and products are evaluated in f64 and rounded once to f32.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub fn new(head_dim: usize) -> Result<Self> {
        let p = Self { head_dim, base: 10_000.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("rope head_dim must be even and > 0, got {}", self.head_dim)));
        }
        if !(self.base > 0.0) {
            return Err(Error::Config("rope base must be positive".into()));
        }
        Ok(())
    }

    pub fn angle(&self, position: usize, pair: usize) -> f64 {
        position as f64 * self.base.powf(-2.0 * pair as f64 / self.head_dim as f64)
    }
}

/// Rotate `[tokens, heads, head_dim]` vectors; token `t` sits at
/// `start_position + t`.
pub fn rope_apply(x: &Tensor, start_position: usize, params: &RopeParams) -> Result<Tensor> {
    params.validate()?;
    let hd = params.head_dim;
    let &[tokens, heads, d] = x.shape() else {
        return Err(dim_err(format!("rope expects [tokens, heads, head_dim], got {:?}", x.shape())));
    };
    if d != hd {
        return Err(dim_err(format!("rope head_dim {hd} vs tensor head_dim {d}")));
    }
    let mut out = x.clone();
    let data = out.data_mut();
    let half = hd / 2;
    let mut cs = vec![(0.0f64, 0.0f64); half];
    for t in 0..tokens {
        for (i, slot) in cs.iter_mut().enumerate() {
            let (s, c) = params.angle(start_position + t, i).sin_cos();
            *slot = (c, s);
        }
        for h in 0..heads {
            let off = (t * heads + h) * hd;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let a = f64::from(data[off + 2 * i]);
                let b = f64::from(data[off + 2 * i + 1]);
                data[off + 2 * i] = (a * c - b * s) as f32;
                data[off + 2 * i + 1] = (a * s + b * c) as f32;
            }
        }
    }
    Ok(out)
}
