//! Typed client for the vace HTTP service.

use serde::de::DeserializeOwned;
use serde::Serialize;

use vace_core::bench::BenchRun;
use vace_core::config::Config;
use vace_core::pipeline::ChunkResult;
use vace_core::service::{CacheRepair, CacheReport, ChunkRequest, ErrorBody, OpenSession, SessionInfo, VerifyRequest};
use vace_core::tensor::Tensor;
use vace_core::verify::VerifyReport;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn read<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = error_message(&text).unwrap_or(text);
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::read(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::read(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    pub async fn health(&self) -> Result<()> {
        self.get::<serde::de::IgnoredAny>("/health").await.map(|_| ())
    }

    pub async fn open_session(&self, req: &OpenSession) -> Result<SessionInfo> {
        self.post("/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        self.get(&format!("/sessions/{id}")).await
    }

    /// Next chunk; `noise` overrides the session's own draw.
    pub async fn generate_chunk(&self, id: &str, noise: Option<Tensor>) -> Result<ChunkResult> {
        self.post(&format!("/sessions/{id}/chunks"), &ChunkRequest { noise }).await
    }

    pub async fn cache(&self, id: &str) -> Result<CacheReport> {
        self.get(&format!("/sessions/{id}/cache")).await
    }

    pub async fn repair_cache(&self, id: &str, repair: CacheRepair) -> Result<CacheReport> {
        self.post(&format!("/sessions/{id}/cache"), &repair).await
    }

    pub async fn close_session(&self, id: &str) -> Result<()> {
        let resp = self.http.delete(format!("{}/sessions/{id}", self.base)).send().await?;
        if resp.status().is_success() {
            return Ok(());
        }
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap_or_default();
        Err(ClientError::Api { status, message: error_message(&text).unwrap_or(text) })
    }

    pub async fn bench(&self, config: &Config) -> Result<BenchRun> {
        self.post("/bench", config).await
    }

    pub async fn verify(&self, req: &VerifyRequest) -> Result<VerifyReport> {
        self.post("/verify", req).await
    }
}

fn error_message(text: &str) -> Option<String> {
    serde_json::from_str::<ErrorBody>(text).ok().map(|b| b.error)
}
