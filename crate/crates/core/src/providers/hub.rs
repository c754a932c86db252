use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::Semaphore;

use super::*;
use crate::store::AssetStore;

/// Per-modality time budget for a single backend call.
#[derive(Debug, Clone, Copy)]
pub struct Timeouts {
    pub text: Duration,
    pub image: Duration,
    pub video: Duration,
    pub speech: Duration,
    pub music: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            text: Duration::from_secs(60),
            image: Duration::from_secs(30),
            video: Duration::from_secs(120),
            speech: Duration::from_secs(60),
            music: Duration::from_secs(120),
        }
    }
}

impl Timeouts {
    fn of(&self, m: Modality) -> Duration {
        match m {
            Modality::Text => self.text,
            Modality::Image => self.image,
            Modality::Video => self.video,
            Modality::Speech => self.speech,
            Modality::Music => self.music,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HubStats {
    pub in_flight: usize,
    pub max_in_flight: usize,
    pub calls: usize,
    pub limit: usize,
}

struct InFlight<'a>(&'a Counters);

impl<'a> InFlight<'a> {
    fn enter(c: &'a Counters) -> Self {
        let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        c.peak.fetch_max(now, Ordering::SeqCst);
        c.calls.fetch_add(1, Ordering::SeqCst);
        InFlight(c)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Front door to a model backend. Cheap to clone.
#[derive(Clone)]
pub struct ProviderHub {
    backend: Arc<dyn ModelBackend>,
    assets: AssetStore,
    permits: Arc<Semaphore>,
    limit: usize,
    counters: Arc<Counters>,
    timeouts: Timeouts,
    seed: u64,
}

impl std::fmt::Debug for ProviderHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderHub")
            .field("backend", &self.backend.name())
            .field("limit", &self.limit)
            .field("seed", &self.seed)
            .finish()
    }
}

impl ProviderHub {
    pub fn new(backend: Arc<dyn ModelBackend>, assets: AssetStore, max_in_flight: usize) -> Self {
        let limit = max_in_flight.max(1);
        Self {
            backend,
            assets,
            permits: Arc::new(Semaphore::new(limit)),
            limit,
            counters: Arc::new(Counters::default()),
            timeouts: Timeouts::default(),
            seed: 0,
        }
    }

    pub fn with_timeouts(mut self, timeouts: Timeouts) -> Self {
        self.timeouts = timeouts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }

    pub fn provider_name(&self) -> &str {
        self.backend.name()
    }

    pub fn stats(&self) -> HubStats {
        HubStats {
            in_flight: self.counters.in_flight.load(Ordering::SeqCst),
            max_in_flight: self.counters.peak.load(Ordering::SeqCst),
            calls: self.counters.calls.load(Ordering::SeqCst),
            limit: self.limit,
        }
    }

    pub fn reset_stats(&self) {
        self.counters.peak.store(0, Ordering::SeqCst);
        self.counters.calls.store(0, Ordering::SeqCst);
    }

    /// Runs one backend call under the global permit and its time budget.
    async fn call<T, F>(&self, modality: Modality, fut: F) -> Result<T, ProviderError>
    where
        F: Future<Output = Result<T, ProviderError>>,
    {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| ProviderError::Unavailable("provider hub closed".into()))?;
        let _guard = InFlight::enter(&self.counters);
        let budget = self.timeouts.of(modality);
        match tokio::time::timeout(budget, fut).await {
            Ok(r) => r,
            Err(_) => Err(ProviderError::Timeout {
                modality,
                after_ms: budget.as_millis() as u64,
            }),
        }
    }

    pub async fn complete_structured(&self, req: &StructuredRequest) -> Result<StructuredResult, ProviderError> {
        self.complete_structured_with(req, |_| Ok(())).await
    }

    /// Structured completion with an extra semantic check. Schema or check
    /// failures re-prompt with the error appended, at most `max_retries`
    /// times beyond the first call.
    pub async fn complete_structured_with<C>(&self, req: &StructuredRequest, check: C) -> Result<StructuredResult, ProviderError>
    where
        C: Fn(&Value) -> Result<(), String>,
    {
        req.schema.check_well_formed().map_err(ProviderError::InvalidSchema)?;
        let started = Instant::now();
        let mut repair: Option<Repair> = None;
        let mut last_error = String::new();
        let mut last_raw = String::new();
        for attempt in 0..=req.max_retries {
            let call = CompletionCall {
                request: req,
                attempt,
                seed: self.seed,
                repair: repair.take(),
            };
            let completion = self.call(Modality::Text, self.backend.complete(&call)).await?;
            let outcome = parse_json(&completion.text).and_then(|v| {
                req.schema.validate(&v)?;
                check(&v)?;
                Ok(v)
            });
            match outcome {
                Ok(value) => {
                    return Ok(StructuredResult {
                        value,
                        retries_used: attempt,
                        latency_ms: started.elapsed().as_millis() as u64,
                        provider_name: self.backend.name().to_string(),
                        raw_echo: completion.echo,
                    })
                }
                Err(error) => {
                    tracing::debug!(stage = %req.stage, attempt, %error, "structured output rejected");
                    last_error = error.clone();
                    last_raw = completion.text.clone();
                    repair = Some(Repair {
                        error,
                        previous: completion.text,
                    });
                }
            }
        }
        Err(ProviderError::SchemaValidationExhausted {
            attempts: req.max_retries + 1,
            error: last_error,
            last_raw,
        })
    }

    fn seed_for(&self, seed: Option<u64>) -> u64 {
        seed.unwrap_or(self.seed)
    }

    /// Fans out `n` single-output calls and stores what comes back.
    async fn fan_out<F, Fut>(&self, modality: Modality, n: u32, make: F) -> Result<ProviderResult, ProviderError>
    where
        F: Fn(u32) -> Fut,
        Fut: Future<Output = Result<GeneratedMedia, ProviderError>>,
    {
        if n == 0 {
            return Err(ProviderError::Precondition("n must be at least 1".into()));
        }
        let started = Instant::now();
        let results = join_all((0..n).map(|i| self.call(modality, make(i)))).await;
        let mut outputs = Vec::new();
        let mut echoes = Vec::new();
        let mut failures = Vec::new();
        let mut first_err = None;
        for r in results {
            match r.and_then(|m| {
                let asset = self
                    .assets
                    .put(&m.bytes, &m.ext)
                    .map_err(|e| ProviderError::Storage(e.to_string()))?;
                Ok((asset, m.echo))
            }) {
                Ok((asset, echo)) => {
                    outputs.push(asset);
                    echoes.push(echo);
                }
                Err(e) => {
                    failures.push(e.to_string());
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            None => Ok(ProviderResult {
                outputs,
                latency_ms: started.elapsed().as_millis() as u64,
                provider_name: self.backend.name().to_string(),
                raw_echo: echoes,
            }),
            Some(e) if outputs.is_empty() => Err(e),
            Some(_) => Err(ProviderError::PartialFailure {
                requested: n,
                outputs,
                failures,
            }),
        }
    }

    pub async fn generate_image(&self, req: &ImageGenRequest) -> Result<ProviderResult, ProviderError> {
        let seed = self.seed_for(req.seed);
        self.fan_out(Modality::Image, req.n, |i| self.backend.generate_image(req, seed, i))
            .await
    }

    pub async fn generate_video(&self, req: &VideoGenRequest) -> Result<ProviderResult, ProviderError> {
        if req.keyframe.is_none() {
            return Err(ProviderError::Precondition("video generation requires a keyframe".into()));
        }
        let seed = self.seed_for(req.seed);
        self.fan_out(Modality::Video, req.n, |i| self.backend.generate_video(req, seed, i))
            .await
    }

    pub async fn synthesize_speech(&self, req: &SpeechRequest) -> Result<ProviderResult, ProviderError> {
        if req.script.trim().is_empty() {
            return Err(ProviderError::EmptyScript);
        }
        let seed = self.seed_for(req.seed);
        self.fan_out(Modality::Speech, 1, |_| self.backend.synthesize_speech(req, seed))
            .await
    }

    pub async fn synthesize_music(&self, req: &MusicRequest) -> Result<ProviderResult, ProviderError> {
        if !(req.duration_s.is_finite() && req.duration_s > 0.0) {
            return Err(ProviderError::Precondition("music duration must be positive".into()));
        }
        let seed = self.seed_for(req.seed);
        self.fan_out(Modality::Music, req.n, |i| self.backend.synthesize_music(req, seed, i))
            .await
    }
}

/// Parses a model reply, tolerating a surrounding Markdown code fence.
fn parse_json(text: &str) -> Result<Value, String> {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(t);
    serde_json::from_str(t.trim()).map_err(|e| format!("$: invalid JSON ({e})"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use parking_lot::Mutex;

    /// Returns scripted replies in order, then repeats the last one.
    struct Scripted {
        replies: Vec<&'static str>,
        seen: Mutex<Vec<Option<Repair>>>,
    }

    #[async_trait]
    impl ModelBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        async fn complete(&self, call: &CompletionCall<'_>) -> Result<Completion, ProviderError> {
            self.seen.lock().push(call.repair.clone());
            let i = (call.attempt as usize).min(self.replies.len() - 1);
            Ok(Completion {
                text: self.replies[i].to_string(),
                echo: format!("r{i}"),
            })
        }
        async fn generate_image(&self, _: &ImageGenRequest, _: u64, i: u32) -> Result<GeneratedMedia, ProviderError> {
            if i == 1 {
                return Err(ProviderError::ContentRefused("nope".into()));
            }
            Ok(GeneratedMedia {
                bytes: crate::media::placeholder_png(4, 4, [i as u8, 0, 0], "x"),
                ext: "png".into(),
                echo: String::new(),
            })
        }
        async fn generate_video(&self, _: &VideoGenRequest, _: u64, _: u32) -> Result<GeneratedMedia, ProviderError> {
            unreachable!()
        }
        async fn synthesize_speech(&self, _: &SpeechRequest, _: u64) -> Result<GeneratedMedia, ProviderError> {
            unreachable!()
        }
        async fn synthesize_music(&self, _: &MusicRequest, _: u64, _: u32) -> Result<GeneratedMedia, ProviderError> {
            unreachable!()
        }
    }

    fn hub(replies: Vec<&'static str>) -> (ProviderHub, Arc<Scripted>, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(Scripted {
            replies,
            seen: Mutex::new(Vec::new()),
        });
        (
            ProviderHub::new(backend.clone(), AssetStore::new(dir.path()), 4),
            backend,
            dir,
        )
    }

    fn title_request() -> StructuredRequest {
        StructuredRequest::new("t", "sys", Schema::object(vec![("title", Schema::text(TextHint::Title))]))
    }

    #[tokio::test]
    async fn repair_loop_recovers_after_two_bad_replies() {
        let (hub, backend, _d) = hub(vec!["not json", "{\"name\": 1}", "```json\n{\"title\": \"Ok\"}\n```"]);
        let r = hub.complete_structured(&title_request()).await.unwrap();
        assert_eq!(r.retries_used, 2);
        assert_eq!(r.value["title"], "Ok");
        let seen = backend.seen.lock();
        assert!(seen[0].is_none());
        assert!(seen[1].as_ref().unwrap().error.contains("invalid JSON"));
        assert!(seen[2].as_ref().unwrap().error.contains("$.title"));
    }

    #[tokio::test]
    async fn repair_loop_is_bounded() {
        let (hub, backend, _d) = hub(vec!["[]"]);
        let err = hub.complete_structured(&title_request()).await.unwrap_err();
        match err {
            ProviderError::SchemaValidationExhausted { attempts, last_raw, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "[]");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(backend.seen.lock().len(), 3);
    }

    #[tokio::test]
    async fn malformed_schema_fails_before_any_call() {
        let (hub, backend, _d) = hub(vec!["{}"]);
        let req = StructuredRequest::new("t", "s", Schema::array(Schema::Boolean, 2, Some(1)));
        assert!(matches!(
            hub.complete_structured(&req).await,
            Err(ProviderError::InvalidSchema(_))
        ));
        assert!(backend.seen.lock().is_empty());
    }

    #[tokio::test]
    async fn partial_failure_keeps_survivors() {
        let (hub, _, _d) = hub(vec!["{}"]);
        let err = hub.generate_image(&ImageGenRequest::new("t", "p", 3)).await.unwrap_err();
        match err {
            ProviderError::PartialFailure { outputs, failures, .. } => {
                assert_eq!(outputs.len(), 2);
                assert_eq!(failures.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[tokio::test]
    async fn preconditions() {
        let (hub, _, _d) = hub(vec!["{}"]);
        assert!(matches!(
            hub.generate_image(&ImageGenRequest::new("t", "p", 0)).await,
            Err(ProviderError::Precondition(_))
        ));
        let speech = SpeechRequest {
            script: "  ".into(),
            voice: "v".into(),
            seed: None,
        };
        assert!(matches!(
            hub.synthesize_speech(&speech).await,
            Err(ProviderError::EmptyScript)
        ));
        let video = VideoGenRequest {
            stage: "t".into(),
            prompt: "p".into(),
            n: 2,
            seed: None,
            keyframe: None,
            duration_hint_s: None,
        };
        assert!(matches!(
            hub.generate_video(&video).await,
            Err(ProviderError::Precondition(_))
        ));
    }
}
