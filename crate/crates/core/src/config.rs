//! Runtime configuration: a TOML file plus `STORYLOOM_*` environment
//! overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::providers::http::{HttpBackend, HttpBackendConfig};
use crate::providers::mock::MockBackend;
use crate::providers::{ModelBackend, ProviderError, ProviderHub, Timeouts};
use crate::store::AssetStore;

pub const CONFIG_FILE: &str = "storyloom.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "http" => Ok(ProviderKind::Http),
            other => Err(format!("unknown provider {other:?} (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Artificial delay per call.
    pub latency_ms: u64,
    /// Prompts containing this text are refused.
    pub refuse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeoutConfig {
    pub text_s: f64,
    pub image_s: f64,
    pub video_s: f64,
    pub speech_s: f64,
    pub music_s: f64,
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        let t = Timeouts::default();
        Self {
            text_s: t.text.as_secs_f64(),
            image_s: t.image.as_secs_f64(),
            video_s: t.video.as_secs_f64(),
            speech_s: t.speech.as_secs_f64(),
            music_s: t.music.as_secs_f64(),
        }
    }
}

impl TimeoutConfig {
    pub fn to_timeouts(&self) -> Timeouts {
        let d = |s: f64| Duration::from_secs_f64(s.max(0.001));
        Timeouts {
            text: d(self.text_s),
            image: d(self.image_s),
            video: d(self.video_s),
            speech: d(self.speech_s),
            music: d(self.music_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Shell command with `{edl}`, `{out}` and `{root}` placeholders; runs
    /// in the project directory.
    pub command: Option<String>,
    /// Shell command extracting one frame: `{video}`, `{time}`, `{out}`.
    pub frame_command: Option<String>,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            command: None,
            frame_command: None,
            width: 1920,
            height: 1080,
            fps: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Directory whose `<name>.txt` files override built-in templates.
    pub template_dir: Option<PathBuf>,
    /// Replacement narrative-principles document.
    pub principles: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub provider: ProviderKind,
    pub seed: u64,
    pub max_in_flight: usize,
    pub mock: MockConfig,
    pub http: HttpBackendConfig,
    pub timeouts: TimeoutConfig,
    pub render: RenderConfig,
    pub prompts: PromptConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            seed: 0,
            max_in_flight: 4,
            mock: MockConfig::default(),
            http: HttpBackendConfig::default(),
            timeouts: TimeoutConfig::default(),
            render: RenderConfig::default(),
            prompts: PromptConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for {var}: {message}")]
    Env { var: String, message: String },
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `path` when it exists, falling back to defaults.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        if !path.exists() {
            return Ok(Config::default());
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    /// Applies `STORYLOOM_PROVIDER`, `STORYLOOM_SEED`,
    /// `STORYLOOM_MAX_IN_FLIGHT`, `STORYLOOM_MOCK_LATENCY_MS` and
    /// `STORYLOOM_RENDER_COMMAND`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env {
                var: var.into(),
                message: e.to_string(),
            })
        }
        if let Some(v) = get("STORYLOOM_PROVIDER") {
            self.provider = parse("STORYLOOM_PROVIDER", &v)?;
        }
        if let Some(v) = get("STORYLOOM_SEED") {
            self.seed = parse("STORYLOOM_SEED", &v)?;
        }
        if let Some(v) = get("STORYLOOM_MAX_IN_FLIGHT") {
            self.max_in_flight = parse("STORYLOOM_MAX_IN_FLIGHT", &v)?;
        }
        if let Some(v) = get("STORYLOOM_MOCK_LATENCY_MS") {
            self.mock.latency_ms = parse("STORYLOOM_MOCK_LATENCY_MS", &v)?;
        }
        if let Some(v) = get("STORYLOOM_RENDER_COMMAND") {
            self.render.command = Some(v).filter(|s| !s.is_empty());
        }
        Ok(())
    }

    pub fn with_process_env(mut self) -> Result<Config, ConfigError> {
        self.apply_env(|k| std::env::var(k).ok())?;
        Ok(self)
    }

    pub fn mock_backend(&self) -> MockBackend {
        let mut m = MockBackend::new().with_latency(Duration::from_millis(self.mock.latency_ms));
        if let Some(r) = &self.mock.refuse {
            m = m.refusing(r.clone());
        }
        m
    }

    /// Builds the provider hub. The mock backend is also returned so callers
    /// can inspect its request log.
    pub fn build_hub(&self, assets: AssetStore) -> Result<(ProviderHub, Option<Arc<MockBackend>>), ProviderError> {
        let (backend, mock): (Arc<dyn ModelBackend>, _) = match self.provider {
            ProviderKind::Mock => {
                let m = Arc::new(self.mock_backend());
                (m.clone(), Some(m))
            }
            ProviderKind::Http => (Arc::new(HttpBackend::new(self.http.clone())?), None),
        };
        let hub = ProviderHub::new(backend, assets, self.max_in_flight)
            .with_timeouts(self.timeouts.to_timeouts())
            .with_seed(self.seed);
        Ok((hub, mock))
    }
}
