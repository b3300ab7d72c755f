//! HTTP clients for the generation, captioning and embedding services.
//!
//! These are blocking clients; async callers go through `spawn_blocking`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use ureq::http::StatusCode;
use ureq::Agent;
use webforge_core::evaluate::{Embedding, EmbeddingProvider, EvalError};
use webforge_core::genclient::{
    verify_png, CaptionResponse, Captioner, GenError, GenerateRequest, GeneratedImage, GenerationConfig,
    ImageGenerator,
};

pub const GENERATE_URL_ENV: &str = "GENERATE_URL";
pub const CAPTION_URL_ENV: &str = "CAPTION_URL";
pub const EMBED_URL_ENV: &str = "EMBED_URL";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_BODY: u64 = 256 * 1024 * 1024;

fn client(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn read_text(resp: &mut ureq::http::Response<ureq::Body>) -> String {
    resp.body_mut().read_to_string().unwrap_or_default()
}

fn unavailable(endpoint: &str, reason: impl ToString) -> GenError {
    GenError::BackendUnavailable {
        endpoint: endpoint.to_string(),
        reason: reason.to_string(),
    }
}

/// Classifies a non-success status: 4xx is a rejection, anything else an outage.
fn status_error(endpoint: &str, status: StatusCode, body: String) -> GenError {
    if status.is_client_error() {
        GenError::BackendRejectedPrompt(format!("{status}: {}", body.trim()))
    } else {
        unavailable(endpoint, status)
    }
}

pub struct HttpGenerator {
    endpoint: String,
    client: Agent,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: client(timeout),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(GENERATE_URL_ENV).ok().filter(|s| !s.is_empty()).map(Self::new)
    }
}

impl ImageGenerator for HttpGenerator {
    fn generate(&self, prompt: &str, config: &GenerationConfig) -> Result<GeneratedImage, GenError> {
        if prompt.trim().is_empty() {
            return Err(GenError::EmptyPrompt);
        }
        config.validate()?;
        let config = GenerationConfig {
            seed: Some(config.resolved_seed()),
            ..config.clone()
        };
        let start = Instant::now();
        let mut resp = self
            .client
            .post(&self.endpoint)
            .send_json(GenerateRequest::new(prompt, &config))
            .map_err(|e| unavailable(&self.endpoint, e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(status_error(&self.endpoint, status, read_text(&mut resp)));
        }
        let png = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(|e| unavailable(&self.endpoint, e))?;
        let png = bytes::Bytes::from(png);
        verify_png(&png, config.width, config.height)?;
        Ok(GeneratedImage {
            png,
            elapsed_ms: start.elapsed().as_millis() as u64,
        })
    }
}

pub struct HttpCaptioner {
    endpoint: String,
    client: Agent,
}

impl HttpCaptioner {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: client(DEFAULT_TIMEOUT),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(CAPTION_URL_ENV).ok().filter(|s| !s.is_empty()).map(Self::new)
    }
}

impl Captioner for HttpCaptioner {
    fn caption(&self, image: &[u8]) -> Result<String, GenError> {
        let format = image::guess_format(image).map_err(|e| GenError::UndecodableImage(e.to_string()))?;
        let mut resp = self
            .client
            .post(&self.endpoint)
            .header("content-type", format.to_mime_type())
            .send(image)
            .map_err(|e| unavailable(&self.endpoint, e))?;
        let status = resp.status();
        if status == StatusCode::UNPROCESSABLE_ENTITY || status == StatusCode::UNSUPPORTED_MEDIA_TYPE {
            return Err(GenError::UndecodableImage(read_text(&mut resp)));
        }
        if !status.is_success() {
            return Err(status_error(&self.endpoint, status, read_text(&mut resp)));
        }
        let body: CaptionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(&self.endpoint, format!("bad caption response: {e}")))?;
        Ok(body.caption)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    endpoint: String,
    client: Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: client(DEFAULT_TIMEOUT),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(EMBED_URL_ENV).ok().filter(|s| !s.is_empty()).map(Self::new)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let fail = |e: String| EvalError::ProviderUnavailable(format!("{}: {e}", self.endpoint));
        let mut resp = self
            .client
            .post(&self.endpoint)
            .send_json(EmbedRequest { text })
            .map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(resp.status().to_string()));
        }
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| fail(e.to_string()))?;
        Embedding::from_provider(body.embedding)
    }
}
