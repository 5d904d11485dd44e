//! Seeded synthetic conditioning: noise videos, procedural masks and
//! reference images.

use crate::conditioning::{ConditioningInputs, Mode};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::rng::Seed;
use crate::tensor::{gaussian_init, Tensor};

pub fn noise_video(cfg: &ModelConfig, frames: usize, seed: Seed) -> Result<Tensor> {
    let [h, w, c] = cfg.frame_shape();
    gaussian_init(&[frames, h, w, c], seed, 1.0)
}

fn mask_from(cfg: &ModelConfig, frames: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Tensor> {
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let mut data = Vec::with_capacity(frames * h * w);
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                data.push(f(t, y, x));
            }
        }
    }
    Tensor::new(vec![frames, h, w, 1], data)
}

/// Left half of every frame reactive.
pub fn half_frame_mask(cfg: &ModelConfig, frames: usize) -> Result<Tensor> {
    let half = cfg.frame_width / 2;
    mask_from(cfg, frames, |_, _, x| if x < half { 1.0 } else { 0.0 })
}

/// First frame inactive, every later frame reactive.
pub fn extension_mask(cfg: &ModelConfig, frames: usize) -> Result<Tensor> {
    mask_from(cfg, frames, |t, _, _| if t == 0 { 0.0 } else { 1.0 })
}

pub fn reference_images(cfg: &ModelConfig, count: usize, seed: Seed) -> Result<Vec<Tensor>> {
    (0..count).map(|i| gaussian_init(&cfg.frame_shape(), seed.derive(&format!("ref{i}")), 1.0)).collect()
}

/// Inputs whose inferred mode is `mode`, covering `chunks` chunks. Composed
/// pairs references with an inpainting stream.
pub fn inputs_for_mode(cfg: &ModelConfig, mode: Mode, chunks: usize, refs: usize, seed: Seed) -> Result<ConditioningInputs> {
    let frames = chunks * cfg.chunk_frames;
    let video = || noise_video(cfg, frames, seed.derive("video"));
    let refs = || reference_images(cfg, refs.max(1), seed.derive("refs"));
    Ok(match mode {
        Mode::T2vBaseline => ConditioningInputs::default(),
        Mode::V2v => ConditioningInputs { src_video: Some(video()?), ..Default::default() },
        Mode::Mv2v => ConditioningInputs {
            src_video: Some(video()?),
            src_mask: Some(half_frame_mask(cfg, frames)?),
            src_ref_images: None,
        },
        Mode::Extension => ConditioningInputs {
            src_video: Some(video()?),
            src_mask: Some(extension_mask(cfg, frames)?),
            src_ref_images: None,
        },
        Mode::R2v => ConditioningInputs { src_ref_images: Some(refs()?), ..Default::default() },
        Mode::Composed => ConditioningInputs {
            src_video: Some(video()?),
            src_mask: Some(half_frame_mask(cfg, frames)?),
            src_ref_images: Some(refs()?),
        },
    })
}
