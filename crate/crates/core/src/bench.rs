//! Streaming benchmark harness: warmup/measured chunk protocol, overhead
//! ratios against the no-conditioning baseline, and an analytic
//! multiply-accumulate model of every scenario.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningInputs, Mode};
use crate::config::{BenchConfig, Config, ModelConfig};
use crate::dit::ContextScale;
use crate::error::{Error, Result};
use crate::pipeline::{Architecture, GenerationSession, Model, ParameterCounts, TraceRecord};
use crate::rng::Seed;
use crate::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Baseline,
    Depth,
    Inpaint,
    Extension,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Baseline, Scenario::Depth, Scenario::Inpaint, Scenario::Extension];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::Depth => "depth",
            Scenario::Inpaint => "inpaint",
            Scenario::Extension => "extension",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Scenario::Baseline => Mode::T2vBaseline,
            Scenario::Depth => Mode::V2v,
            Scenario::Inpaint => Mode::Mv2v,
            Scenario::Extension => Mode::Extension,
        }
    }

    /// Comma-separated scenario names.
    pub fn parse_list(s: &str) -> Result<Vec<Scenario>> {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}` (baseline|depth|inpaint|extension)")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Seeded conditioning for a scenario: noise video, left-half mask for
/// inpainting, first-frame-inactive mask for extension.
pub fn scenario_inputs(cfg: &ModelConfig, scenario: Scenario, chunks: usize, seed: Seed) -> Result<ConditioningInputs> {
    synth::inputs_for_mode(cfg, scenario.mode(), chunks, 0, seed.derive(scenario.name()))
}

fn block_macs(cfg: &ModelConfig, tokens: u64, cached: u64) -> u64 {
    let d = cfg.model_dim as u64;
    let h = cfg.mlp_hidden() as u64;
    4 * tokens * d * d + 2 * tokens * d * h + 2 * tokens * (cached + tokens) * d
}

fn cached_before(cfg: &ModelConfig, chunk_index: usize) -> u64 {
    let t = cfg.chunk_tokens() as u64;
    let history = chunk_index as u64 * t;
    match cfg.cache_capacity() {
        Some(cap) => history.min(cap as u64),
        None => history,
    }
}

/// Multiply-accumulates of one chunk, split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChunkMacs {
    pub dit: u64,
    pub injection: u64,
    pub context: u64,
    pub encoder: u64,
    pub decoder: u64,
}

impl ChunkMacs {
    pub fn total(&self) -> u64 {
        self.dit + self.injection + self.context + self.encoder + self.decoder
    }
}

/// Analytic MAC count for chunk `chunk_index` of a scenario in the adapted
/// architecture. Attention counts the full `(cached + chunk)` score matrix,
/// masked entries included; norms, softmax and activations are not counted.
pub fn chunk_macs(cfg: &ModelConfig, scenario: Scenario, chunk_index: usize) -> ChunkMacs {
    let t = cfg.chunk_tokens() as u64;
    let d = cfg.model_dim as u64;
    let c = cfg.latent_channels as u64;
    let p = cfg.pixel_channels as u64;
    let hw = cfg.tokens_per_frame() as u64;
    let frames = cfg.chunk_frames as u64;
    let steps = cfg.denoise_steps as u64;
    let lc = cfg.injection_map.len() as u64;
    let cl = cached_before(cfg, chunk_index);

    let mut m = ChunkMacs {
        dit: steps * (t * c * d + cfg.num_blocks as u64 * block_macs(cfg, t, cl) + t * d * c),
        decoder: 2 * frames * hw * c * p,
        ..Default::default()
    };
    if scenario == Scenario::Baseline {
        return m;
    }
    m.injection = steps * lc * t * d * d;
    let fresh_hints = scenario != Scenario::Extension || chunk_index == 0;
    if fresh_hints {
        m.context = t * 2 * c * d + lc * block_macs(cfg, t, cl);
        let k = cfg.temporal_kernel as u64;
        m.encoder = 2 * frames * (hw * p * c + k * hw * c * c);
    }
    m
}

/// Scenario-to-baseline MAC ratio summed over the measured window.
pub fn predict_flop_ratio(cfg: &ModelConfig, bench: &BenchConfig, scenario: Scenario) -> f64 {
    let window = bench.warmup_chunks..bench.warmup_chunks + bench.measured_chunks;
    let num: u64 = window.clone().map(|i| chunk_macs(cfg, scenario, i).total()).sum();
    let den: u64 = window.map(|i| chunk_macs(cfg, Scenario::Baseline, i).total()).sum();
    num as f64 / den as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub mode: Mode,
    pub measured_chunks: usize,
    pub avg_latency_ms: f64,
    pub peak_latency_ms: f64,
    /// Frames per second at the mean chunk latency.
    pub avg_fps: f64,
    /// Frames per second of the fastest single measured chunk.
    pub best_chunk_fps: f64,
    /// Mean latency over the baseline mean latency.
    pub overhead_ratio: f64,
    pub predicted_flop_ratio: f64,
    pub hint_compute_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub warmup_chunks: usize,
    pub measured_chunks: usize,
    pub model: ModelConfig,
    pub parameters: ParameterCounts,
    pub parameter_overhead: f64,
    pub production_reference: String,
    pub scenarios: Vec<ScenarioReport>,
}

impl BenchReport {
    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|r| r.scenario == s)
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>9} {:>10} {:>9} {:>9} {:>6}",
            "scenario", "avg ms", "peak ms", "avg fps", "best fps", "overhead", "flop est", "hints"
        );
        for r in &self.scenarios {
            let _ = writeln!(
                out,
                "{:<10} {:>10.3} {:>10.3} {:>9.1} {:>10.1} {:>8.3}x {:>8.3}x {:>6}",
                r.scenario.name(),
                r.avg_latency_ms,
                r.peak_latency_ms,
                r.avg_fps,
                r.best_chunk_fps,
                r.overhead_ratio,
                r.predicted_flop_ratio,
                r.hint_compute_count
            );
        }
        let _ = writeln!(
            out,
            "parameters: base {} / context {} ({:.1}% overhead)",
            self.parameters.base,
            self.parameters.context,
            100.0 * self.parameter_overhead
        );
        let _ = writeln!(out, "for scale: {}", self.production_reference);
        let _ = writeln!(out, "best fps is the fastest single measured chunk");
        out
    }
}

/// One trace line tagged with its scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTrace {
    pub scenario: Scenario,
    pub measured: bool,
    #[serde(flatten)]
    pub record: TraceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub report: BenchReport,
    pub trace: Vec<BenchTrace>,
}

impl BenchRun {
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
            .collect()
    }
}

pub const PRODUCTION_REFERENCE: &str =
    "production-scale context weights are about 1.4 GB on a 1.3B-parameter base model (not compared)";

struct Measured {
    session: GenerationSession,
    latencies: Vec<f64>,
    trace: Vec<BenchTrace>,
}

/// Run every configured scenario on one thread. Chunks are interleaved
/// round-robin with a rotating order, so slow periods of the host hit all
/// scenarios alike. The baseline is always measured since every ratio is
/// relative to it, but only reported when listed.
pub fn run_benchmark(config: &Config) -> Result<BenchRun> {
    config.model.validate()?;
    config.bench.validate()?;
    let bench = &config.bench;
    let seed = Seed(config.seed);
    let model = Arc::new(Model::new(config.model.clone(), seed.derive("model"))?);
    let total = bench.warmup_chunks + bench.measured_chunks;

    let mut order = vec![Scenario::Baseline];
    order.extend(bench.scenarios.iter().copied().filter(|s| *s != Scenario::Baseline));
    let mut runs = order
        .iter()
        .map(|&s| {
            let inputs = scenario_inputs(&model.cfg, s, total, seed)?;
            let session = GenerationSession::open(
                Arc::clone(&model),
                inputs,
                Architecture::Adapted,
                ContextScale::default(),
                seed.derive(s.name()),
            )?;
            Ok(Measured { session, latencies: Vec::new(), trace: Vec::new() })
        })
        .collect::<Result<Vec<_>>>()?;

    for i in 0..total {
        for k in 0..runs.len() {
            let idx = (i + k) % runs.len();
            let m = &mut runs[idx];
            let noise = m.session.next_noise()?;
            let record = m.session.generate_chunk(&noise)?.trace;
            let measured = i >= bench.warmup_chunks;
            if measured {
                m.latencies.push(record.wall_latency_ms);
            }
            m.trace.push(BenchTrace { scenario: order[idx], measured, record });
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let baseline_avg = mean(&runs[0].latencies);
    let frames = config.model.chunk_frames as f64;
    let mut scenarios = Vec::new();
    let mut trace = Vec::new();
    for (&s, m) in order.iter().zip(runs) {
        trace.extend(m.trace);
        if !bench.scenarios.contains(&s) {
            continue;
        }
        let avg = mean(&m.latencies);
        let peak = m.latencies.iter().copied().fold(f64::MIN, f64::max);
        let best = m.latencies.iter().copied().fold(f64::MAX, f64::min);
        scenarios.push(ScenarioReport {
            scenario: s,
            mode: s.mode(),
            measured_chunks: m.latencies.len(),
            avg_latency_ms: avg,
            peak_latency_ms: peak,
            avg_fps: frames * 1e3 / avg,
            best_chunk_fps: frames * 1e3 / best,
            overhead_ratio: if s == Scenario::Baseline { 1.0 } else { avg / baseline_avg },
            predicted_flop_ratio: predict_flop_ratio(&config.model, bench, s),
            hint_compute_count: m.session.hint_compute_count(),
        });
    }
    let parameters = model.parameter_counts();
    Ok(BenchRun {
        report: BenchReport {
            seed: config.seed,
            warmup_chunks: bench.warmup_chunks,
            measured_chunks: bench.measured_chunks,
            model: config.model.clone(),
            parameters,
            parameter_overhead: parameters.overhead(),
            production_reference: PRODUCTION_REFERENCE.into(),
            scenarios,
        },
        trace,
    })
}
