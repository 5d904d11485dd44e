//! Oracle suites runnable from the command line, each reporting named
//! claims. Fault flags plant known defects so the suites can be shown to
//! catch them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{attend_chunk, full_recompute_oracle, AttendOptions, AttentionWeights};
use crate::conditioning::{
    infer_mode, prepare_chunk_conditioning, ConditioningInputs, EncoderCachePair, EncoderState, Mode, TemporalEncoder,
};
use crate::config::{Faults, ModelConfig};
use crate::dit::{denoise_chunk, dit_forward, ContextScale, DenoiseOptions, HintSet, Injection};
use crate::error::{Error, Result};
use crate::kv_cache::{KvCache, LayerCache};
use crate::pipeline::{Architecture, GenerationSession, Model};
use crate::rng::Seed;
use crate::rope::RopeParams;
use crate::synth;
use crate::tensor::{gaussian_init, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    CacheEquivalence,
    ZeroInit,
    Contamination,
    CacheStrategy,
    ModeTable,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::CacheEquivalence, Suite::ZeroInit, Suite::Contamination, Suite::CacheStrategy, Suite::ModeTable];

    pub fn name(self) -> &'static str {
        match self {
            Suite::CacheEquivalence => "cache-equivalence",
            Suite::ZeroInit => "zero-init",
            Suite::Contamination => "contamination",
            Suite::CacheStrategy => "cache-strategy",
            Suite::ModeTable => "mode-table",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.replace('_', "-"))
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`; expected one of {:?}", Suite::ALL.map(Suite::name))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub suite: Suite,
    pub claim: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub faults: Faults,
    pub claims: Vec<ClaimResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    pub fn suite_passed(&self, suite: Suite) -> bool {
        self.claims.iter().filter(|c| c.suite == suite).all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.claims {
            out.push_str(&format!(
                "[{}] {:<17} {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite.name(),
                c.claim,
                c.detail
            ));
        }
        let failed = self.claims.iter().filter(|c| !c.passed).count();
        out.push_str(&format!("{} claims, {} failed\n", self.claims.len(), failed));
        out
    }
}

struct Recorder {
    suite: Suite,
    claims: Vec<ClaimResult>,
}

impl Recorder {
    fn check(&mut self, claim: &str, passed: bool, detail: impl Into<String>) {
        self.claims.push(ClaimResult { suite: self.suite, claim: claim.into(), passed, detail: detail.into() });
    }
}

/// Run one suite, or all of them, on the small configuration.
pub fn run_verify(suite: Option<Suite>, faults: Faults, seed: u64) -> Result<VerifyReport> {
    let cfg = ModelConfig::tiny();
    let mut claims = Vec::new();
    for s in Suite::ALL.into_iter().filter(|s| suite.is_none_or(|x| x == *s)) {
        let mut r = Recorder { suite: s, claims: Vec::new() };
        match s {
            Suite::CacheEquivalence => cache_equivalence(&mut r, &cfg, seed)?,
            Suite::ZeroInit => zero_init(&mut r, &cfg, seed, faults)?,
            Suite::Contamination => contamination(&mut r, &cfg, seed)?,
            Suite::CacheStrategy => cache_strategy(&mut r, &cfg, seed, faults)?,
            Suite::ModeTable => mode_table(&mut r, &cfg, seed)?,
        }
        claims.extend(r.claims);
    }
    Ok(VerifyReport { seed, faults, claims })
}

fn run_chunks(s: &mut GenerationSession, n: usize) -> Result<Vec<Tensor>> {
    (0..n)
        .map(|_| {
            let noise = s.next_noise()?;
            Ok(s.generate_chunk(&noise)?.frames)
        })
        .collect()
}

fn cache_equivalence(r: &mut Recorder, cfg: &ModelConfig, seed: u64) -> Result<()> {
    let d = cfg.model_dim;
    let rope = RopeParams { head_dim: cfg.head_dim(), base: cfg.rope_base };
    let mut worst = 0.0f32;
    for draw in 0..3u64 {
        let s = Seed(seed).derive(&format!("attn{draw}"));
        let w = AttentionWeights::random(d, s, 1.0 / (d as f32).sqrt())?;
        let all = gaussian_init(&[48, d], s.derive("tokens"), 1.0)?;
        let oracle = full_recompute_oracle(&all, &w, &rope)?;
        for chunk in [1usize, 2, 4, 12] {
            let mut cache = LayerCache::new(d, None);
            let mut parts = Vec::new();
            for start in (0..48).step_by(chunk) {
                parts.push(attend_chunk(&all.slice_rows(start, start + chunk)?, &mut cache, &w, &rope, AttendOptions::default())?);
            }
            let got = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
            worst = worst.max(got.max_abs_diff(&oracle));
        }
    }
    r.check(
        "chunked cached attention equals full causal recompute",
        worst < 1e-5,
        format!("max-abs {worst:.2e} over chunk sizes 1, 2, 4, 12 (tol 1e-5)"),
    );

    let model = Arc::new(Model::new(cfg.clone(), Seed(seed))?);
    let inputs = synth::inputs_for_mode(cfg, Mode::R2v, 2, 1, Seed(seed))?;
    let mut s = GenerationSession::open(Arc::clone(&model), inputs, Architecture::Legacy, ContextScale::default(), Seed(seed))?;
    run_chunks(&mut s, 1)?;
    let noise = s.next_noise()?;
    let oracle = replay_without_references(&s, &noise)?;

    let mut stripped = s.clone();
    stripped.strip_reference_cache()?;
    let diverged = stripped.generate_chunk(&noise)?.latents.max_abs_diff(&oracle);
    r.check(
        "stripping reference entries without re-rotation corrupts later chunks",
        diverged > 1e-3,
        format!("max-abs {diverged:.2e} from the no-reference oracle (needs > 1e-3)"),
    );

    let mut rebuilt = s.clone();
    rebuilt.recompute_cache()?;
    let err = rebuilt.generate_chunk(&noise)?.latents.max_abs_diff(&oracle);
    r.check(
        "recomputing the whole cache restores the no-reference history",
        err < 1e-5,
        format!("max-abs {err:.2e} (tol 1e-5)"),
    );
    Ok(())
}

/// Next-chunk latents from a fresh cache filled with the session's retained
/// history and no reference tokens.
pub fn replay_without_references(s: &GenerationSession, noise: &Tensor) -> Result<Tensor> {
    let m = s.model();
    let cfg = &m.cfg;
    let mut cache = KvCache::new(cfg.num_blocks, cfg.model_dim, cfg.cache_capacity());
    let sigma = *m.schedule.sigmas().last().expect("schedule is non-empty");
    for (tokens, hints) in s.history() {
        let inj = Injection { hints, projections: &m.context.projections, alpha: s.alpha };
        dit_forward(tokens, sigma, &inj, &m.dit, &mut cache, &m.rope, AttendOptions::default())?;
    }
    let empty = HintSet::new();
    let inj = Injection { hints: &empty, projections: &m.context.projections, alpha: s.alpha };
    denoise_chunk(noise, &inj, &m.schedule, &mut cache, &m.dit, cfg, &m.rope, DenoiseOptions::default())
}

fn zero_init(r: &mut Recorder, cfg: &ModelConfig, seed: u64, faults: Faults) -> Result<()> {
    let model = Arc::new(Model::with_faults(cfg.clone(), Seed(seed), faults)?);
    r.check(
        "hint projections start at zero",
        model.context.projections.is_zero(),
        format!("{} projection matrices", model.context.projections.0.len()),
    );
    let open = |inputs| GenerationSession::open(Arc::clone(&model), inputs, Architecture::Adapted, ContextScale(1.0), Seed(seed));
    let baseline = run_chunks(&mut open(ConditioningInputs::default())?, 2)?;
    for mode in Mode::ALL.into_iter().filter(|m| *m != Mode::T2vBaseline) {
        let inputs = synth::inputs_for_mode(cfg, mode, 2, 2, Seed(seed).derive("inputs"))?;
        let out = run_chunks(&mut open(inputs)?, 2)?;
        let worst = out.iter().zip(&baseline).map(|(a, b)| a.max_abs_diff(b)).fold(0.0f32, f32::max);
        let exact = out.iter().zip(&baseline).all(|(a, b)| a.bit_eq(b));
        r.check(
            &format!("untrained context pathway leaves {mode} output equal to baseline"),
            exact,
            if exact { "bit-identical over 2 chunks".to_string() } else { format!("max-abs {worst:.2e}") },
        );
    }
    Ok(())
}

fn contamination(r: &mut Recorder, cfg: &ModelConfig, seed: u64) -> Result<()> {
    let model = Arc::new(Model::new(cfg.clone(), Seed(seed))?);
    let ref_tokens = cfg.tokens_per_frame();
    let mut lengths = Vec::new();
    for n in [0usize, 1, 4] {
        let inputs = if n == 0 {
            ConditioningInputs::default()
        } else {
            synth::inputs_for_mode(cfg, Mode::R2v, 1, n, Seed(seed))?
        };
        let mut row = Vec::new();
        for arch in [Architecture::Adapted, Architecture::Legacy] {
            let mut s = GenerationSession::open(Arc::clone(&model), inputs.clone(), arch, ContextScale::default(), Seed(seed))?;
            let noise = s.next_noise()?;
            row.push(s.generate_chunk(&noise)?.trace.dit_sequence_tokens);
        }
        lengths.push((n, row[0], row[1]));
    }
    let fixed = lengths.iter().all(|&(_, a, _)| a == cfg.chunk_tokens());
    r.check(
        "adapted sequence length is fixed for 0, 1 and 4 references",
        fixed,
        format!("{:?}", lengths.iter().map(|l| l.1).collect::<Vec<_>>()),
    );
    let grows = lengths.iter().all(|&(n, _, l)| l == cfg.chunk_tokens() + n * ref_tokens);
    r.check(
        "legacy first chunk grows by one frame of tokens per reference",
        grows,
        format!("{:?} with {ref_tokens} tokens per reference", lengths.iter().map(|l| l.2).collect::<Vec<_>>()),
    );

    if !cfg!(feature = "provenance") {
        r.check("provenance tags available", false, "built without the `provenance` feature");
        return Ok(());
    }
    let refs = 2;
    let inputs = synth::inputs_for_mode(cfg, Mode::R2v, 2, refs, Seed(seed))?;
    let mut legacy = GenerationSession::open(Arc::clone(&model), inputs, Architecture::Legacy, ContextScale::default(), Seed(seed))?;
    run_chunks(&mut legacy, 1)?;
    let counts: Vec<_> = legacy.cache_dump().layers.iter().map(|l| l.reference_entries.unwrap_or(0)).collect();
    r.check(
        "legacy cache holds every reference token after the first chunk",
        counts.iter().all(|&c| c == refs * ref_tokens),
        format!("{counts:?} tagged entries per layer, expected {}", refs * ref_tokens),
    );

    let mut tagged = 0;
    for mode in Mode::ALL {
        let inputs = synth::inputs_for_mode(cfg, mode, 2, refs, Seed(seed))?;
        let mut s = GenerationSession::open(Arc::clone(&model), inputs, Architecture::Adapted, ContextScale::default(), Seed(seed))?;
        run_chunks(&mut s, 2)?;
        tagged += s.cache_dump().layers.iter().map(|l| l.reference_entries.unwrap_or(0)).sum::<usize>();
    }
    r.check(
        "adapted cache never holds reference tokens",
        tagged == 0,
        format!("{tagged} reference-tagged entries across all modes"),
    );
    Ok(())
}

fn cache_strategy(r: &mut Recorder, cfg: &ModelConfig, seed: u64, faults: Faults) -> Result<()> {
    let enc = TemporalEncoder::random(cfg, Seed(seed).derive("encoder"))?;
    let hw = cfg.tokens_per_frame();
    let lc = cfg.latent_channels;
    let frames = cfg.chunk_frames;
    let chunk_b = synth::noise_video(cfg, frames, Seed(seed).derive("b"))?;

    // Encode chunk B after one of two different predecessors; returns the
    // (inactive, reactive) halves.
    let after = |mode: Mode, mask: Option<&Tensor>, pred: u64| -> Result<(Tensor, Tensor)> {
        let mut caches = EncoderCachePair::for_mode(&enc, hw, mode, faults).expect("stream mode");
        let a = synth::noise_video(cfg, frames, Seed(seed).derive(&format!("a{pred}")))?;
        prepare_chunk_conditioning(&a, mask, mode, &enc, &mut caches)?;
        let out = prepare_chunk_conditioning(&chunk_b, mask, mode, &enc, &mut caches)?;
        split_halves(&out, lc)
    };

    let masks = [
        (Mode::Mv2v, synth::half_frame_mask(cfg, frames)?),
        (Mode::Extension, Tensor::filled(&[frames, cfg.frame_height, cfg.frame_width, 1], 1.0)),
    ];
    for (mode, mask) in &masks {
        let (_, x) = after(*mode, Some(mask), 1)?;
        let (_, y) = after(*mode, Some(mask), 2)?;
        r.check(
            &format!("{mode} reactive encoding ignores the previous chunk"),
            x.bit_eq(&y),
            format!("max-abs {:.2e} between two different predecessors", x.max_abs_diff(&y)),
        );
    }

    let (_, xr) = after(Mode::V2v, None, 1)?;
    let (_, yr) = after(Mode::V2v, None, 2)?;
    let dr = xr.max_abs_diff(&yr);
    r.check("V2V reactive encoding carries the previous chunk", dr > 0.0, format!("max-abs {dr:.2e} (needs > 0)"));
    let (mi, _) = after(Mode::Mv2v, Some(&masks[0].1), 1)?;
    let (ni, _) = after(Mode::Mv2v, Some(&masks[0].1), 2)?;
    let di = mi.max_abs_diff(&ni);
    r.check("MV2V inactive encoding carries the previous chunk", di > 0.0, format!("max-abs {di:.2e} (needs > 0)"));

    // Swap only the reactive carry; the inactive half must not move.
    let mask = &masks[0].1;
    let mut a = EncoderCachePair::for_mode(&enc, hw, Mode::V2v, faults).expect("stream mode");
    let mut b = a.clone();
    let mut other = EncoderState::zeros(&enc, hw);
    enc.encode(&synth::noise_video(cfg, frames, Seed(seed).derive("other"))?, Some(&mut other))?;
    b.reactive = other;
    let (ai, _) = split_halves(&prepare_chunk_conditioning(&chunk_b, Some(mask), Mode::V2v, &enc, &mut a)?, lc)?;
    let (bi, _) = split_halves(&prepare_chunk_conditioning(&chunk_b, Some(mask), Mode::V2v, &enc, &mut b)?, lc)?;
    r.check("stream caches are isolated", ai.bit_eq(&bi), format!("max-abs {:.2e} in the inactive half", ai.max_abs_diff(&bi)));
    Ok(())
}

fn split_halves(t: &Tensor, lc: usize) -> Result<(Tensor, Tensor)> {
    let mut a = Vec::with_capacity(t.len() / 2);
    let mut b = Vec::with_capacity(t.len() / 2);
    for row in 0..t.rows() {
        a.extend_from_slice(&t.row(row)[..lc]);
        b.extend_from_slice(&t.row(row)[lc..]);
    }
    Ok((Tensor::new(vec![t.rows(), lc], a)?, Tensor::new(vec![t.rows(), lc], b)?))
}

fn mode_table(r: &mut Recorder, cfg: &ModelConfig, seed: u64) -> Result<()> {
    let frames = cfg.chunk_frames;
    let video = Some(synth::noise_video(cfg, frames, Seed(seed))?);
    let mask = Some(synth::half_frame_mask(cfg, frames)?);
    let ext = Some(synth::extension_mask(cfg, frames)?);
    let refs = Some(synth::reference_images(cfg, 1, Seed(seed))?);
    let rows: [(&str, ConditioningInputs, Mode); 7] = [
        ("nothing", ConditioningInputs::default(), Mode::T2vBaseline),
        ("video", ConditioningInputs { src_video: video.clone(), ..Default::default() }, Mode::V2v),
        ("video + mask", ConditioningInputs { src_video: video.clone(), src_mask: mask.clone(), src_ref_images: None }, Mode::Mv2v),
        ("video + anchor mask", ConditioningInputs { src_video: video.clone(), src_mask: ext, src_ref_images: None }, Mode::Extension),
        ("refs", ConditioningInputs { src_ref_images: refs.clone(), ..Default::default() }, Mode::R2v),
        ("video + mask + refs", ConditioningInputs { src_video: video.clone(), src_mask: mask.clone(), src_ref_images: refs.clone() }, Mode::Composed),
        ("video + refs", ConditioningInputs { src_video: video, src_mask: None, src_ref_images: refs }, Mode::Composed),
    ];
    for (label, inputs, expected) in rows {
        let got = infer_mode(&inputs);
        let ok = matches!(got, Ok(m) if m == expected);
        r.check(&format!("{label} infers {expected}"), ok, format!("{got:?}"));
    }
    let got = infer_mode(&ConditioningInputs { src_mask: mask, ..Default::default() });
    r.check("mask without video is rejected", matches!(got, Err(Error::InvalidInput(_))), format!("{got:?}"));
    Ok(())
}
