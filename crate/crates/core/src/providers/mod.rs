//! Uniform access to generative models.
//!
//! Pipelines talk to a [`ProviderHub`], which owns concurrency limits,
//! timeouts, the structured-output repair loop and asset registration. The
//! hub drives a [`ModelBackend`]: either the deterministic [`mock`] backend
//! or the [`http`] gateway client.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use serde::Serialize;

use crate::ids::sha256_hex;
use crate::media::MediaError;
use crate::model::AssetRef;

pub mod http;
mod hub;
pub mod mock;
pub mod schema;

pub use hub::{HubStats, ProviderHub, Timeouts};
pub use schema::{KeyRule, Schema, TextHint};

/// Shared bytes that stay out of serialized request records.
#[derive(Clone, Default)]
pub struct Blob(pub Arc<Vec<u8>>);

impl fmt::Debug for Blob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Blob({} bytes)", self.0.len())
    }
}

/// One element of a multimodal prompt. Serialization omits media bytes, so
/// serialized parts are stable request fingerprints.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text {
        text: String,
    },
    Image {
        label: String,
        checksum: String,
        media_type: String,
        #[serde(skip)]
        data: Blob,
    },
    /// A whole video clip, used when frames cannot be sampled locally.
    Video {
        label: String,
        checksum: String,
        #[serde(skip)]
        path: PathBuf,
    },
}

impl Part {
    pub fn text(text: impl Into<String>) -> Part {
        Part::Text { text: text.into() }
    }

    /// Image part whose identity is `checksum` (usually the source asset's).
    pub fn image(label: impl Into<String>, checksum: impl Into<String>, data: Vec<u8>) -> Part {
        let media_type = if data.starts_with(&[0xFF, 0xD8]) {
            "image/jpeg"
        } else {
            "image/png"
        };
        Part::Image {
            label: label.into(),
            checksum: checksum.into(),
            media_type: media_type.into(),
            data: Blob(Arc::new(data)),
        }
    }

    /// Image part identified by the hash of its own bytes.
    pub fn image_bytes(label: impl Into<String>, data: Vec<u8>) -> Part {
        let checksum = sha256_hex(&data);
        Part::image(label, checksum, data)
    }

    pub fn checksum(&self) -> Option<&str> {
        match self {
            Part::Text { .. } => None,
            Part::Image { checksum, .. } | Part::Video { checksum, .. } => Some(checksum),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text { text } => Some(text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StructuredRequest {
    /// Pipeline stage name, recorded for audit.
    pub stage: String,
    pub system_prompt: String,
    pub user_parts: Vec<Part>,
    pub schema: Schema,
    /// Sampling creativity in [0, 1].
    pub creativity: f32,
    pub max_retries: u32,
}

impl StructuredRequest {
    pub fn new(stage: impl Into<String>, system_prompt: impl Into<String>, schema: Schema) -> Self {
        Self {
            stage: stage.into(),
            system_prompt: system_prompt.into(),
            user_parts: Vec::new(),
            schema,
            creativity: 0.2,
            max_retries: 2,
        }
    }

    pub fn part(mut self, part: Part) -> Self {
        self.user_parts.push(part);
        self
    }

    pub fn parts(mut self, parts: impl IntoIterator<Item = Part>) -> Self {
        self.user_parts.extend(parts);
        self
    }

    pub fn creativity(mut self, c: f32) -> Self {
        self.creativity = c.clamp(0.0, 1.0);
        self
    }

    /// Concatenated text parts.
    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(Part::as_text)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Previous invalid answer fed back to the model.
#[derive(Debug, Clone, Serialize)]
pub struct Repair {
    pub error: String,
    pub previous: String,
}

/// One attempt of a structured completion.
#[derive(Debug, Clone)]
pub struct CompletionCall<'a> {
    pub request: &'a StructuredRequest,
    pub attempt: u32,
    pub seed: u64,
    pub repair: Option<Repair>,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub echo: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageGenRequest {
    pub stage: String,
    pub prompt: String,
    pub n: u32,
    pub seed: Option<u64>,
    /// Image to edit, if any.
    pub base_image: Option<Part>,
    /// Continuity references such as neighboring frames.
    pub references: Vec<Part>,
    pub width: u32,
    pub height: u32,
}

impl ImageGenRequest {
    pub fn new(stage: impl Into<String>, prompt: impl Into<String>, n: u32) -> Self {
        Self {
            stage: stage.into(),
            prompt: prompt.into(),
            n,
            seed: None,
            base_image: None,
            references: Vec::new(),
            width: 1280,
            height: 720,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoGenRequest {
    pub stage: String,
    pub prompt: String,
    pub n: u32,
    pub seed: Option<u64>,
    /// Keyframe the clip starts from; required.
    pub keyframe: Option<Part>,
    pub duration_hint_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeechRequest {
    pub script: String,
    pub voice: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MusicRequest {
    pub prompt: String,
    pub duration_s: f64,
    pub n: u32,
    pub seed: Option<u64>,
}

/// Raw media returned by a backend before it is stored.
#[derive(Debug, Clone)]
pub struct GeneratedMedia {
    pub bytes: Vec<u8>,
    pub ext: String,
    pub echo: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProviderResult {
    pub outputs: Vec<AssetRef>,
    pub latency_ms: u64,
    pub provider_name: String,
    pub raw_echo: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuredResult {
    pub value: serde_json::Value,
    pub retries_used: u32,
    pub latency_ms: u64,
    pub provider_name: String,
    pub raw_echo: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Video,
    Speech,
    Music,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Speech => "speech",
            Modality::Music => "music",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("malformed schema: {0}")]
    InvalidSchema(String),
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("script is empty")]
    EmptyScript,
    #[error("output failed validation after {attempts} attempts: {error}")]
    SchemaValidationExhausted { attempts: u32, error: String, last_raw: String },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("{modality} call timed out after {after_ms} ms")]
    Timeout { modality: Modality, after_ms: u64 },
    #[error("content refused: {0}")]
    ContentRefused(String),
    #[error("{} of {requested} outputs failed", failures.len())]
    PartialFailure {
        requested: u32,
        outputs: Vec<AssetRef>,
        failures: Vec<String>,
    },
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("asset storage failed: {0}")]
    Storage(String),
}

impl ProviderError {
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::InvalidSchema(_) => "invalid_schema",
            ProviderError::Precondition(_) => "precondition_failed",
            ProviderError::EmptyScript => "empty_script",
            ProviderError::SchemaValidationExhausted { .. } => "schema_validation_exhausted",
            ProviderError::Unavailable(_) => "provider_unavailable",
            ProviderError::Timeout { .. } => "timeout",
            ProviderError::ContentRefused(_) => "content_refused",
            ProviderError::PartialFailure { .. } => "partial_failure",
            ProviderError::Media(_) => "media_probe_error",
            ProviderError::Storage(_) => "storage_error",
        }
    }

    /// True for failures caused by the caller rather than the provider.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            ProviderError::InvalidSchema(_)
                | ProviderError::Precondition(_)
                | ProviderError::EmptyScript
                | ProviderError::Media(_)
        )
    }
}

#[async_trait]
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, call: &CompletionCall<'_>) -> Result<Completion, ProviderError>;

    /// Produces output number `index` of an `n`-way request.
    async fn generate_image(&self, req: &ImageGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError>;

    async fn generate_video(&self, req: &VideoGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError>;

    async fn synthesize_speech(&self, req: &SpeechRequest, seed: u64) -> Result<GeneratedMedia, ProviderError>;

    async fn synthesize_music(&self, req: &MusicRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError>;
}
