use tokio::net::TcpListener;

use vace_client::{Client, ClientError};
use vace_core::conditioning::Mode;
use vace_core::config::{Config, ModelConfig};
use vace_core::pipeline::Architecture;
use vace_core::rng::Seed;
use vace_core::service::{CacheRepair, OpenSession, VerifyRequest};
use vace_core::synth;
use vace_core::verify::Suite;

async fn client() -> Client {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(vace_server::serve(listener));
    Client::new(url)
}

fn tiny() -> Config {
    Config { seed: 5, model: ModelConfig::tiny(), ..Default::default() }
}

fn open(mode: Mode, refs: usize, architecture: Architecture) -> OpenSession {
    let cfg = tiny();
    let inputs = synth::inputs_for_mode(&cfg.model, mode, 3, refs, Seed(1)).unwrap();
    OpenSession { config: cfg, inputs, architecture, ..Default::default() }
}

#[tokio::test]
async fn zero_init_matches_baseline_over_http() {
    let c = client().await;
    c.health().await.unwrap();
    let base = c.open_session(&open(Mode::T2vBaseline, 0, Architecture::Adapted)).await.unwrap();
    let cond = c.open_session(&open(Mode::Composed, 2, Architecture::Adapted)).await.unwrap();
    assert_eq!(cond.mode, Mode::Composed);
    for _ in 0..2 {
        let a = c.generate_chunk(&base.id, None).await.unwrap();
        let b = c.generate_chunk(&cond.id, None).await.unwrap();
        assert!(a.frames.bit_eq(&b.frames));
        assert_eq!(a.trace.dit_sequence_tokens, b.trace.dit_sequence_tokens);
    }
    let cache = c.cache(&cond.id).await.unwrap();
    assert!(cache.dit.layers.iter().all(|l| l.reference_entries == Some(0)));
}

#[tokio::test]
async fn legacy_contamination_and_repair() {
    let c = client().await;
    let s = c.open_session(&open(Mode::R2v, 2, Architecture::Legacy)).await.unwrap();
    let first = c.generate_chunk(&s.id, None).await.unwrap();
    let per_ref = ModelConfig::tiny().tokens_per_frame();
    assert_eq!(first.trace.dit_sequence_tokens, ModelConfig::tiny().chunk_tokens() + 2 * per_ref);

    let dirty = c.cache(&s.id).await.unwrap();
    assert!(dirty.dit.layers.iter().all(|l| l.reference_entries == Some(2 * per_ref)));
    let clean = c.repair_cache(&s.id, CacheRepair::Recompute).await.unwrap();
    assert!(clean.dit.layers.iter().all(|l| l.reference_entries == Some(0)));
    assert_ne!(dirty.dit.layers[0].key_checksum, clean.dit.layers[0].key_checksum);
    c.generate_chunk(&s.id, None).await.unwrap();
    c.close_session(&s.id).await.unwrap();
}

#[tokio::test]
async fn errors_carry_status_and_message() {
    let c = client().await;
    match c.generate_chunk("00000000-0000-0000-0000-000000000000", None).await {
        Err(ClientError::Api { status, message }) => {
            assert_eq!(status, 404);
            assert!(message.contains("no session"));
        }
        other => panic!("expected a 404, got {other:?}"),
    }
    let bad = VerifyRequest { fault: Some("bogus".into()), ..Default::default() };
    assert!(matches!(c.verify(&bad).await, Err(ClientError::Api { status: 422, .. })));
}

#[tokio::test]
async fn verify_fault_flips_suite() {
    let c = client().await;
    let clean = c.verify(&VerifyRequest { suite: Some(Suite::CacheStrategy), ..Default::default() }).await.unwrap();
    assert!(clean.passed());
    let req = VerifyRequest {
        suite: Some(Suite::CacheStrategy),
        fault: Some("reactive-cache-in-masked-modes".into()),
        seed: 0,
    };
    assert!(!c.verify(&req).await.unwrap().passed());
}

#[tokio::test]
async fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    assert!(matches!(Client::new(url).health().await, Err(ClientError::Transport(_))));
}
