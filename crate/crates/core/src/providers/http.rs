//! JSON-over-HTTP backend.
//!
//! Each modality posts to its own endpoint. Requests carry media inline as
//! base64; replies are `{"text", "id"}` for completions and
//! `{"data", "format", "id"}` for media. Errors come back as
//! `{"error": {"code", "message"}}` with a non-2xx status.

use std::collections::BTreeMap;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::*;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Endpoint URL per modality: text, image, video, speech, music.
    pub endpoints: BTreeMap<String, String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    /// Model names forwarded per modality.
    pub models: BTreeMap<String, String>,
}

pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpBackendConfig,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ProviderError::Unavailable(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self {
            client: reqwest::Client::new(),
            config,
            api_key,
        })
    }

    fn endpoint(&self, m: Modality) -> Result<&str, ProviderError> {
        self.config
            .endpoints
            .get(&m.to_string())
            .map(String::as_str)
            .ok_or_else(|| ProviderError::Unavailable(format!("no endpoint configured for {m}")))
    }

    async fn post(&self, m: Modality, mut body: Value) -> Result<Value, ProviderError> {
        let url = self.endpoint(m)?;
        if let Some(model) = self.config.models.get(&m.to_string()) {
            body["model"] = json!(model);
        }
        tracing::debug!(%url, body = %elide_media(&body), "provider request");
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout {
                    modality: m,
                    after_ms: 0,
                }
            } else {
                ProviderError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        let reply: Value = resp
            .json()
            .await
            .map_err(|e| ProviderError::Unavailable(format!("unreadable reply ({status}): {e}")))?;
        tracing::debug!(%url, %status, body = %elide_media(&reply), "provider reply");
        if status.is_success() {
            return Ok(reply);
        }
        let code = reply["error"]["code"].as_str().unwrap_or_default();
        let message = reply["error"]["message"].as_str().unwrap_or("provider error").to_string();
        Err(match (status.as_u16(), code) {
            (_, "content_refused") | (451, _) => ProviderError::ContentRefused(message),
            (408 | 504, _) => ProviderError::Timeout {
                modality: m,
                after_ms: 0,
            },
            _ => ProviderError::Unavailable(format!("{status}: {message}")),
        })
    }

    fn media(reply: Value, default_ext: &str) -> Result<GeneratedMedia, ProviderError> {
        let data = reply["data"]
            .as_str()
            .ok_or_else(|| ProviderError::Unavailable("reply has no media data".into()))?;
        let bytes = B64
            .decode(data)
            .map_err(|e| ProviderError::Unavailable(format!("bad base64 media: {e}")))?;
        Ok(GeneratedMedia {
            bytes,
            ext: reply["format"].as_str().unwrap_or(default_ext).to_string(),
            echo: reply["id"].as_str().unwrap_or_default().to_string(),
        })
    }
}

fn encode_part(p: &Part) -> Result<Value, ProviderError> {
    Ok(match p {
        Part::Text { text } => json!({"type": "text", "text": text}),
        Part::Image {
            label, media_type, data, ..
        } => json!({"type": "image", "label": label, "media_type": media_type, "data": B64.encode(data.0.as_slice())}),
        Part::Video { label, path, .. } => {
            let bytes = std::fs::read(path).map_err(|e| ProviderError::Media(e.into()))?;
            json!({"type": "video", "label": label, "media_type": "video/mp4", "data": B64.encode(bytes)})
        }
    })
}

/// Copy of a JSON body with inline media replaced by its size.
pub fn elide_media(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, v)| match (k.as_str(), v) {
                    ("data", Value::String(s)) => (k.clone(), json!(format!("<{} base64 chars elided>", s.len()))),
                    _ => (k.clone(), elide_media(v)),
                })
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(elide_media).collect()),
        other => other.clone(),
    }
}

#[async_trait]
impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    async fn complete(&self, call: &CompletionCall<'_>) -> Result<Completion, ProviderError> {
        let req = call.request;
        let parts = req.user_parts.iter().map(encode_part).collect::<Result<Vec<_>, _>>()?;
        let mut body = json!({
            "stage": req.stage,
            "system": req.system_prompt,
            "parts": parts,
            "response_schema": req.schema.to_json_schema(),
            "temperature": req.creativity,
            "seed": call.seed,
        });
        if let Some(r) = &call.repair {
            body["repair"] = json!({
                "error": r.error,
                "previous": r.previous,
                "instruction": "The previous reply was rejected. Fix the error and reply again with JSON only.",
            });
        }
        let reply = self.post(Modality::Text, body).await?;
        let text = match &reply["text"] {
            Value::String(s) => s.clone(),
            Value::Null => return Err(ProviderError::Unavailable("reply has no text".into())),
            other => other.to_string(),
        };
        Ok(Completion {
            text,
            echo: reply["id"].as_str().unwrap_or_default().to_string(),
        })
    }

    async fn generate_image(&self, req: &ImageGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        let body = json!({
            "prompt": req.prompt,
            "seed": seed,
            "index": index,
            "width": req.width,
            "height": req.height,
            "base_image": req.base_image.as_ref().map(encode_part).transpose()?,
            "references": req.references.iter().map(encode_part).collect::<Result<Vec<_>, _>>()?,
        });
        Self::media(self.post(Modality::Image, body).await?, "png")
    }

    async fn generate_video(&self, req: &VideoGenRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        let keyframe = req
            .keyframe
            .as_ref()
            .ok_or_else(|| ProviderError::Precondition("video generation requires a keyframe".into()))?;
        let body = json!({
            "prompt": req.prompt,
            "seed": seed,
            "index": index,
            "keyframe": encode_part(keyframe)?,
            "duration_s": req.duration_hint_s,
        });
        Self::media(self.post(Modality::Video, body).await?, "mp4")
    }

    async fn synthesize_speech(&self, req: &SpeechRequest, seed: u64) -> Result<GeneratedMedia, ProviderError> {
        let body = json!({"script": req.script, "voice": req.voice, "seed": seed});
        Self::media(self.post(Modality::Speech, body).await?, "wav")
    }

    async fn synthesize_music(&self, req: &MusicRequest, seed: u64, index: u32) -> Result<GeneratedMedia, ProviderError> {
        let body = json!({"prompt": req.prompt, "duration_s": req.duration_s, "seed": seed, "index": index});
        Self::media(self.post(Modality::Music, body).await?, "wav")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::routing::post;
    use axum::{Json, Router};
    use std::sync::Arc;

    async fn serve(router: Router) -> String {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
        format!("http://{addr}")
    }

    #[tokio::test]
    async fn round_trip_through_gateway() {
        let png = crate::media::placeholder_png(4, 4, [9, 9, 9], "x");
        let png_b64 = B64.encode(&png);
        let router = Router::new()
            .route(
                "/text",
                post(|Json(body): Json<Value>| async move {
                    let ok = body["parts"][1]["data"].is_string() && body["response_schema"]["type"] == "object";
                    Json(json!({"text": if ok { "{\"title\":\"T\"}" } else { "{}" }, "id": "r1"}))
                }),
            )
            .route(
                "/image",
                post(move |Json(_): Json<Value>| {
                    let data = png_b64.clone();
                    async move { Json(json!({"data": data, "format": "png", "id": "i1"})) }
                }),
            );
        let base = serve(router).await;
        let mut endpoints = BTreeMap::new();
        endpoints.insert("text".to_string(), format!("{base}/text"));
        endpoints.insert("image".to_string(), format!("{base}/image"));
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoints,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hub = ProviderHub::new(Arc::new(backend), crate::store::AssetStore::new(dir.path()), 2);
        let req = StructuredRequest::new("t", "s", Schema::object(vec![("title", Schema::text(TextHint::Title))]))
            .part(Part::text("hello"))
            .part(Part::image_bytes("frame", png.clone()));
        let r = hub.complete_structured(&req).await.unwrap();
        assert_eq!(r.value["title"], "T");
        assert_eq!(r.raw_echo, "r1");
        let out = hub.generate_image(&ImageGenRequest::new("t", "p", 2)).await.unwrap();
        assert_eq!(out.outputs.len(), 2);
        assert_eq!(out.outputs[0].width, Some(4));
    }

    #[tokio::test]
    async fn refusal_and_missing_endpoint() {
        let router = Router::new().route(
            "/image",
            post(|| async {
                (
                    axum::http::StatusCode::BAD_REQUEST,
                    Json(json!({"error": {"code": "content_refused", "message": "no"}})),
                )
            }),
        );
        let base = serve(router).await;
        let mut endpoints = BTreeMap::new();
        endpoints.insert("image".to_string(), format!("{base}/image"));
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoints,
            ..Default::default()
        })
        .unwrap();
        let req = ImageGenRequest::new("t", "p", 1);
        assert!(matches!(
            backend.generate_image(&req, 0, 0).await,
            Err(ProviderError::ContentRefused(_))
        ));
        let speech = SpeechRequest {
            script: "x".into(),
            voice: "v".into(),
            seed: None,
        };
        assert!(matches!(
            backend.synthesize_speech(&speech, 0).await,
            Err(ProviderError::Unavailable(_))
        ));
    }

    #[test]
    fn missing_key_variable_is_reported() {
        let cfg = HttpBackendConfig {
            api_key_env: Some("STORYLOOM_TEST_UNSET_KEY_VAR".into()),
            ..Default::default()
        };
        assert!(HttpBackend::new(cfg).is_err());
    }

    #[test]
    fn media_is_elided_from_logs() {
        let v = json!({"parts": [{"type": "image", "data": "AAAA"}], "prompt": "p"});
        let e = elide_media(&v);
        assert_eq!(e["parts"][0]["data"], "<4 base64 chars elided>");
        assert_eq!(e["prompt"], "p");
    }
}
