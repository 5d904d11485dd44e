use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tokio::net::TcpListener;

use vace_client::Client;
use vace_core::bench::Scenario;
use vace_core::conditioning::{ConditioningInputs, Mode};
use vace_core::config::Config;
use vace_core::dit::ContextScale;
use vace_core::golden;
use vace_core::pipeline::Architecture;
use vace_core::rng::Seed;
use vace_core::service::{OpenSession, VerifyRequest};
use vace_core::synth;
use vace_core::tensor::Tensor;
use vace_core::verify::Suite;

#[derive(Parser)]
#[command(name = "vace", version, about = "Streaming video generation with a zero-initialized context adapter")]
struct Cli {
    /// Service URL. Without it an in-process server is started on a loopback port.
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate chunks from conditioning directories of `.tensor` files.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        video: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value = "adapted")]
        arch: Architecture,
        #[arg(long, default_value_t = 1.0)]
        alpha: f32,
        /// Defaults to every chunk the video covers, or 1 without a video.
        #[arg(long)]
        chunks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the latency benchmark and write a JSON report.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated, e.g. `baseline,depth,inpaint,extension`.
        #[arg(long)]
        scenarios: Option<String>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the verification suites.
    Verify {
        #[arg(long)]
        suite: Option<Suite>,
        #[arg(long)]
        fault: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write seeded synthetic conditioning directories for `generate`.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 2)]
        chunks: usize,
        #[arg(long, default_value_t = 1)]
        refs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn tensor_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tensor"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .tensor files in {}", dir.display());
    }
    Ok(files)
}

/// Concatenate `[frames, h, w, c]` files along the frame axis, in name order.
fn read_frames(dir: &Path) -> Result<Tensor> {
    let parts = tensor_files(dir)?.iter().map(golden::read).collect::<vace_core::Result<Vec<_>>>()?;
    let tail = parts[0].shape()[1..].to_vec();
    if parts.iter().any(|p| p.shape().len() != 4 || p.shape()[1..] != tail[..]) {
        bail!("{}: every file must be [frames, h, w, c] with matching frame shape", dir.display());
    }
    let frames: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let flat = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
    let mut shape = vec![frames];
    shape.extend(tail);
    Ok(flat.reshape(&shape)?)
}

fn write_chunks(dir: &Path, t: &Tensor, per_chunk: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let frame: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = per_chunk;
    for (i, part) in t.data().chunks(per_chunk * frame).enumerate() {
        golden::write(dir.join(format!("chunk_{i:04}.tensor")), &Tensor::new(shape.clone(), part.to_vec())?)?;
    }
    Ok(())
}

async fn generate(client: &Client, req: OpenSession, chunks: Option<usize>, out: &Path) -> Result<()> {
    let session = client.open_session(&req).await?;
    let n = chunks.or(session.available_chunks).unwrap_or(1);
    fs::create_dir_all(out)?;
    let mut trace = String::new();
    for i in 0..n {
        let chunk = client.generate_chunk(&session.id, None).await?;
        golden::write(out.join(format!("chunk_{i:04}.tensor")), &chunk.frames)?;
        trace.push_str(&serde_json::to_string(&chunk.trace)?);
        trace.push('\n');
        println!(
            "chunk {i}: {} tokens, cache {}, {:.2} ms",
            chunk.trace.dit_sequence_tokens, chunk.trace.cache_tokens, chunk.trace.wall_latency_ms
        );
    }
    fs::write(out.join("trace.jsonl"), trace)?;
    let cache = client.cache(&session.id).await?;
    fs::write(out.join("cache.json"), serde_json::to_string_pretty(&cache)?)?;
    client.close_session(&session.id).await?;
    println!("mode {} ({}), {n} chunks written to {}", session.mode, session.architecture, out.display());
    Ok(())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Serve { addr } = &cli.command {
        let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        vace_server::serve(listener).await?;
        return Ok(ExitCode::SUCCESS);
    }
    if let Command::Synth { config, mode, chunks, refs, seed, out } = &cli.command {
        let cfg = load_config(config.as_deref())?.model;
        let inputs = synth::inputs_for_mode(&cfg, *mode, *chunks, *refs, Seed(*seed))?;
        if let Some(v) = &inputs.src_video {
            write_chunks(&out.join("video"), v, cfg.chunk_frames)?;
        }
        if let Some(m) = &inputs.src_mask {
            write_chunks(&out.join("mask"), m, cfg.chunk_frames)?;
        }
        for (i, r) in inputs.refs().iter().enumerate() {
            fs::create_dir_all(out.join("refs"))?;
            golden::write(out.join("refs").join(format!("ref_{i:04}.tensor")), r)?;
        }
        println!("{mode} inputs written to {}", out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let listener = TcpListener::bind("127.0.0.1:0").await?;
            let url = format!("http://{}", listener.local_addr()?);
            tokio::spawn(vace_server::serve(listener));
            Client::new(url)
        }
    };
    client.health().await.with_context(|| format!("server at {} is not reachable", client.base_url()))?;

    match cli.command {
        Command::Generate { config, video, mask, refs, arch, alpha, chunks, out } => {
            let inputs = ConditioningInputs {
                src_video: video.as_deref().map(read_frames).transpose()?,
                src_mask: mask.as_deref().map(read_frames).transpose()?,
                src_ref_images: match refs {
                    Some(dir) => Some(tensor_files(&dir)?.iter().map(golden::read).collect::<vace_core::Result<_>>()?),
                    None => None,
                },
            };
            let req = OpenSession {
                config: load_config(config.as_deref())?,
                inputs,
                architecture: arch,
                alpha: ContextScale::new(alpha)?,
                ..Default::default()
            };
            generate(&client, req, chunks, &out).await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { config, scenarios, report } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(list) = scenarios {
                cfg.bench.scenarios = Scenario::parse_list(&list)?;
            }
            let run = client.bench(&cfg).await?;
            fs::write(&report, serde_json::to_string_pretty(&run.report)?)?;
            let trace_path = report.with_extension("trace.jsonl");
            fs::write(&trace_path, run.trace_jsonl())?;
            print!("{}", run.report.to_table());
            println!("report {}, trace {}", report.display(), trace_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, fault, seed } => {
            let report = client.verify(&VerifyRequest { suite, fault, seed }).await?;
            print!("{}", report.summary());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Serve { .. } | Command::Synth { .. } => unreachable!(),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
