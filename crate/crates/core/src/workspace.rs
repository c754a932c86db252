//! A project directory opened for work: configuration, provider hub,
//! session and the typed operation set shared by the CLI and the service.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::compiler::{self, CompileError, OutputFormat, RenderError, RenderMode};
use crate::config::{Config, CONFIG_FILE};
use crate::ids::{JobId, SceneId, ShotId, VersionId};
use crate::jobs::{ErrorBody, JobRunner};
use crate::model::{Category, Commit, Mutation, Project, ProjectSession, SessionError, StoryError};
use crate::pipelines::{self, Annotations, Outcome, PipelineError, Prompts, Studio, TemplateError};
use crate::providers::mock::MockBackend;
use crate::providers::ProviderError;
use crate::store::{self, AssetStore, IngestReport, StoreError};

/// Directory for compiled EDLs and renders, relative to the project root.
pub const RENDER_DIR: &str = "renders";

/// How an error should be reported to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Malformed request.
    Invalid,
    NotFound,
    /// Stale revision.
    Conflict,
    /// Well-formed but not applicable to the current project state.
    Unprocessable,
    /// The model provider failed or broke its output contract.
    Upstream,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpError {
    pub class: ErrorClass,
    #[serde(flatten)]
    pub body: ErrorBody,
}

impl std::fmt::Display for OpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.body.code, self.body.message)
    }
}

impl std::error::Error for OpError {}

impl OpError {
    pub fn new(class: ErrorClass, code: &str, message: impl Into<String>) -> Self {
        OpError {
            class,
            body: ErrorBody::new(code, message),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        OpError::new(ErrorClass::Invalid, "invalid_request", message)
    }
}

fn story_class(e: &StoryError) -> ErrorClass {
    match e {
        StoryError::UnknownId { .. } => ErrorClass::NotFound,
        _ => ErrorClass::Unprocessable,
    }
}

impl From<PipelineError> for OpError {
    fn from(e: PipelineError) -> Self {
        let class = match &e {
            PipelineError::Precondition(_) | PipelineError::EmptyScript | PipelineError::Media(_) => ErrorClass::Unprocessable,
            PipelineError::UnknownId { .. } => ErrorClass::NotFound,
            PipelineError::Story(s) => story_class(s),
            PipelineError::Template(_) => ErrorClass::Internal,
            PipelineError::Provider(p) if p.is_client_error() => ErrorClass::Unprocessable,
            _ => ErrorClass::Upstream,
        };
        let mut body = ErrorBody::new(e.code(), e.to_string());
        if let Some(d) = e.details() {
            body = body.with_details(d);
        }
        OpError { class, body }
    }
}

impl From<SessionError> for OpError {
    fn from(e: SessionError) -> Self {
        match &e {
            SessionError::StaleRevision { expected, actual } => OpError {
                class: ErrorClass::Conflict,
                body: ErrorBody::new("stale_revision", e.to_string())
                    .with_details(json!({ "expected": expected, "actual": actual })),
            },
            SessionError::Story(s) => OpError::from(s.clone()),
        }
    }
}

impl From<StoryError> for OpError {
    fn from(e: StoryError) -> Self {
        let code = match &e {
            StoryError::UnknownId { .. } => "not_found",
            StoryError::InvariantViolation(_) => "invariant_violation",
            StoryError::NothingToUndo => "nothing_to_undo",
            StoryError::NothingToRedo => "nothing_to_redo",
        };
        OpError::new(story_class(&e), code, e.to_string())
    }
}

impl From<StoreError> for OpError {
    fn from(e: StoreError) -> Self {
        let class = match e {
            StoreError::Io { .. } => ErrorClass::Internal,
            _ => ErrorClass::Unprocessable,
        };
        OpError::new(class, e.code(), e.to_string())
    }
}

impl From<CompileError> for OpError {
    fn from(e: CompileError) -> Self {
        let class = match e {
            CompileError::UnknownId { .. } => ErrorClass::NotFound,
            _ => ErrorClass::Unprocessable,
        };
        OpError::new(class, e.code(), e.to_string())
    }
}

impl From<RenderError> for OpError {
    fn from(e: RenderError) -> Self {
        let class = match e {
            RenderError::MissingRenderCommand => ErrorClass::Unprocessable,
            _ => ErrorClass::Internal,
        };
        OpError::new(class, e.code(), e.to_string())
    }
}

impl From<ProviderError> for OpError {
    fn from(e: ProviderError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<TemplateError> for OpError {
    fn from(e: TemplateError) -> Self {
        PipelineError::from(e).into()
    }
}

/// Every model-backed or derived operation, as a serializable request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    Ingest {
        paths: Vec<PathBuf>,
    },
    Describe {
        #[serde(default)]
        shot_ids: Option<Vec<ShotId>>,
        #[serde(default)]
        force: bool,
    },
    Group {
        #[serde(default)]
        shot_ids: Option<Vec<ShotId>>,
    },
    SequenceScenes {
        #[serde(default)]
        version_id: Option<VersionId>,
    },
    ContextualScene {
        #[serde(default)]
        before: Option<SceneId>,
        #[serde(default)]
        after: Option<SceneId>,
    },
    AcceptSceneProposal {
        job_id: JobId,
        #[serde(default)]
        index: usize,
    },
    StoryVariation {
        prompt: String,
    },
    CompareVersions {
        version_ids: Vec<VersionId>,
    },
    StorySuggestions {
        #[serde(default)]
        category: Option<Category>,
    },
    SceneSuggestions {
        scene_id: SceneId,
        #[serde(default)]
        category: Option<Category>,
    },
    SyncNotes {
        #[serde(default)]
        confirm: bool,
    },
    RefineText {
        text: String,
        #[serde(default)]
        prompt: Option<String>,
    },
    AutoAlign {
        scene_id: SceneId,
    },
    Narration {
        scene_id: SceneId,
    },
    Music {
        scene_id: SceneId,
        #[serde(default)]
        duration_s: Option<f64>,
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        n: Option<u32>,
    },
    SelectMusic {
        job_id: JobId,
        index: usize,
    },
    SequenceVisuals {
        scene_id: SceneId,
    },
    ContextualShot {
        scene_id: SceneId,
        #[serde(default)]
        before: Option<ShotId>,
        #[serde(default)]
        after: Option<ShotId>,
        #[serde(default)]
        prompt: Option<String>,
    },
    AcceptShotCandidate {
        job_id: JobId,
        #[serde(default)]
        proposal: usize,
        candidate: usize,
    },
    ImageVariations {
        shot_id: ShotId,
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        n: Option<u32>,
    },
    VideoVariations {
        shot_id: ShotId,
        /// Base64 PNG of the annotated keyframe.
        #[serde(default)]
        annotations_png: Option<String>,
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        n: Option<u32>,
    },
    SuggestVideoPrompt {
        shot_id: ShotId,
        #[serde(default)]
        annotations_png: Option<String>,
    },
    SelectVariation {
        job_id: JobId,
        index: usize,
    },
    Compile {
        /// Scene to compile; the active version's story when absent.
        #[serde(default)]
        scene_id: Option<SceneId>,
        #[serde(default)]
        render: bool,
    },
}

impl Op {
    pub const NAMES: &'static [&'static str] = &[
        "ingest",
        "describe",
        "group",
        "sequence_scenes",
        "contextual_scene",
        "accept_scene_proposal",
        "story_variation",
        "compare_versions",
        "story_suggestions",
        "scene_suggestions",
        "sync_notes",
        "refine_text",
        "auto_align",
        "narration",
        "music",
        "select_music",
        "sequence_visuals",
        "contextual_shot",
        "accept_shot_candidate",
        "image_variations",
        "video_variations",
        "suggest_video_prompt",
        "select_variation",
        "compile",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Op::Ingest { .. } => "ingest",
            Op::Describe { .. } => "describe",
            Op::Group { .. } => "group",
            Op::SequenceScenes { .. } => "sequence_scenes",
            Op::ContextualScene { .. } => "contextual_scene",
            Op::AcceptSceneProposal { .. } => "accept_scene_proposal",
            Op::StoryVariation { .. } => "story_variation",
            Op::CompareVersions { .. } => "compare_versions",
            Op::StorySuggestions { .. } => "story_suggestions",
            Op::SceneSuggestions { .. } => "scene_suggestions",
            Op::SyncNotes { .. } => "sync_notes",
            Op::RefineText { .. } => "refine_text",
            Op::AutoAlign { .. } => "auto_align",
            Op::Narration { .. } => "narration",
            Op::Music { .. } => "music",
            Op::SelectMusic { .. } => "select_music",
            Op::SequenceVisuals { .. } => "sequence_visuals",
            Op::ContextualShot { .. } => "contextual_shot",
            Op::AcceptShotCandidate { .. } => "accept_shot_candidate",
            Op::ImageVariations { .. } => "image_variations",
            Op::VideoVariations { .. } => "video_variations",
            Op::SuggestVideoPrompt { .. } => "suggest_video_prompt",
            Op::SelectVariation { .. } => "select_variation",
            Op::Compile { .. } => "compile",
        }
    }

    /// Builds an op from its name and a JSON object of parameters.
    pub fn from_parts(name: &str, params: Value) -> Result<Op, OpError> {
        if !Op::NAMES.contains(&name) {
            return Err(OpError::new(
                ErrorClass::NotFound,
                "unknown_operation",
                format!("unknown operation {name:?}"),
            ));
        }
        let mut obj = match params {
            Value::Object(m) => m,
            Value::Null => Default::default(),
            _ => return Err(OpError::invalid("parameters must be a JSON object")),
        };
        obj.insert("op".into(), Value::String(name.into()));
        serde_path_to_error::deserialize(Value::Object(obj)).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.into_inner().to_string();
            OpError::invalid(format!("{path}: {msg}"))
        })
    }
}

/// What an operation produced once committed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpResult {
    pub op: String,
    /// Generation job recorded in the project, if the op called a model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job_id: Option<JobId>,
    /// Project revision after the op.
    pub revision: u64,
    pub result: Value,
}

/// An opened project directory.
pub struct Workspace {
    root: PathBuf,
    config: Config,
    session: Arc<ProjectSession>,
    studio: Studio,
    runner: Arc<JobRunner>,
    mock: Option<Arc<MockBackend>>,
    persist_lock: Mutex<()>,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("root", &self.root).finish()
    }
}

/// Reads `storyloom.toml` under `root` (or `config_path`) and applies
/// environment overrides.
pub fn load_config(root: &Path, config_path: Option<&Path>) -> Result<Config, OpError> {
    let path = config_path.map_or_else(|| root.join(CONFIG_FILE), Path::to_path_buf);
    Config::load(&path)
        .and_then(Config::with_process_env)
        .map_err(|e| OpError::new(ErrorClass::Invalid, "configuration_error", e.to_string()))
}

impl Workspace {
    /// Creates a new empty project at `root`.
    pub fn init(root: &Path, config: Config) -> Result<Workspace, OpError> {
        if store::project_path(root).exists() {
            return Err(OpError::new(
                ErrorClass::Conflict,
                "already_exists",
                format!("{} already holds a project", root.display()),
            ));
        }
        let id = root
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .or_else(|| root.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "project".into());
        let project = Project::new(id);
        store::save(root, &project)?;
        Workspace::with_session(root, config, ProjectSession::new(project))
    }

    /// Opens the project stored at `root`.
    pub fn open(root: &Path, config: Config) -> Result<Workspace, OpError> {
        if !store::project_path(root).exists() {
            return Err(OpError::new(
                ErrorClass::NotFound,
                "no_project",
                format!("no project in {}; run init first", root.display()),
            ));
        }
        let loaded = store::load(root)?;
        let history = store::read_events(root)?;
        Workspace::with_session(root, config, ProjectSession::restore(loaded.project, history))
    }

    fn with_session(root: &Path, config: Config, session: ProjectSession) -> Result<Workspace, OpError> {
        let (hub, mock) = config.build_hub(AssetStore::new(root))?;
        let prompts = Prompts::load(&config.prompts)?;
        let studio = Studio::new(Arc::new(hub), prompts).with_frame_command(config.render.frame_command.clone());
        let session = Arc::new(session);
        Ok(Workspace {
            root: root.to_path_buf(),
            config,
            runner: JobRunner::new(session.clone()),
            session,
            studio,
            mock,
            persist_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn session(&self) -> &Arc<ProjectSession> {
        &self.session
    }

    pub fn studio(&self) -> &Studio {
        &self.studio
    }

    pub fn runner(&self) -> &Arc<JobRunner> {
        &self.runner
    }

    pub fn assets(&self) -> &AssetStore {
        self.studio.hub().assets()
    }

    /// The mock backend, when the mock provider is configured.
    pub fn mock(&self) -> Option<&Arc<MockBackend>> {
        self.mock.as_ref()
    }

    pub fn snapshot(&self) -> Arc<Project> {
        self.session.snapshot()
    }

    /// Writes `project.json` and appends new jobs and events to the logs.
    pub fn persist(&self) -> Result<(), OpError> {
        let _guard = self.persist_lock.lock();
        let (project, _) = self.session.snapshot_at();
        store::save(&self.root, &project)?;
        store::append_events(&self.root, &self.session.events().since(0))?;
        Ok(())
    }

    /// Applies a direct edit and persists it.
    pub fn apply(&self, mutation: Mutation, expected_revision: Option<u64>) -> Result<Commit, OpError> {
        let commit = self.session.apply(mutation, expected_revision)?;
        self.persist()?;
        Ok(commit)
    }

    pub fn undo(&self, expected_revision: Option<u64>) -> Result<Commit, OpError> {
        let commit = self.session.undo(expected_revision)?;
        self.persist()?;
        Ok(commit)
    }

    pub fn redo(&self, expected_revision: Option<u64>) -> Result<Commit, OpError> {
        let commit = self.session.redo(expected_revision)?;
        self.persist()?;
        Ok(commit)
    }

    fn commit<T: Serialize>(&self, op: &Op, outcome: Outcome<T>) -> Result<OpResult, OpError> {
        let result =
            serde_json::to_value(&outcome.value).map_err(|e| OpError::new(ErrorClass::Internal, "internal", e.to_string()))?;
        let revision = match outcome.mutation {
            Some(m) => {
                let commit = self.session.apply(m, None)?;
                self.persist()?;
                commit.revision
            }
            None => self.session.revision(),
        };
        Ok(OpResult {
            op: op.name().to_string(),
            job_id: outcome.job_id,
            revision,
            result,
        })
    }

    /// Runs `op` against the current snapshot and commits its mutation.
    pub async fn run(&self, op: Op) -> Result<OpResult, OpError> {
        let p = self.snapshot();
        let s = &self.studio;
        match &op {
            Op::Ingest { paths } => {
                let (report, m): (IngestReport, Mutation) = store::ingest(&p, self.assets(), paths);
                self.commit(
                    &op,
                    Outcome {
                        value: report,
                        mutation: Some(m),
                        job_id: None,
                    },
                )
            }
            Op::Describe { shot_ids, force } => {
                let o = s.describe_shots(&p, shot_ids.as_deref(), *force).await?;
                self.commit(&op, o)
            }
            Op::Group { shot_ids } => self.commit(&op, s.group_shots(&p, shot_ids.as_deref()).await?),
            Op::SequenceScenes { version_id } => self.commit(&op, s.sequence_scenes(&p, version_id.as_ref()).await?),
            Op::ContextualScene { before, after } => {
                self.commit(&op, s.contextual_scene(&p, before.as_ref(), after.as_ref()).await?)
            }
            Op::AcceptSceneProposal { job_id, index } => self.commit(&op, pipelines::accept_scene_proposal(&p, job_id, *index)?),
            Op::StoryVariation { prompt } => self.commit(&op, s.create_story_variation(&p, prompt).await?),
            Op::CompareVersions { version_ids } => self.commit(&op, s.compare_versions(&p, version_ids).await?),
            Op::StorySuggestions { category } => self.commit(&op, s.story_suggestions(&p, *category).await?),
            Op::SceneSuggestions { scene_id, category } => self.commit(&op, s.scene_suggestions(&p, scene_id, *category).await?),
            Op::SyncNotes { confirm } => self.commit(&op, s.sync_notes(&p, *confirm).await?),
            Op::RefineText { text, prompt } => self.commit(&op, s.refine_text(&p, text, prompt.as_deref()).await?),
            Op::AutoAlign { scene_id } => self.commit(&op, s.auto_align(&p, scene_id).await?),
            Op::Narration { scene_id } => self.commit(&op, s.narration(&p, scene_id).await?),
            Op::Music {
                scene_id,
                duration_s,
                prompt,
                n,
            } => self.commit(&op, s.music(&p, scene_id, *duration_s, prompt.as_deref(), *n).await?),
            Op::SelectMusic { job_id, index } => self.commit(&op, pipelines::select_music(&p, job_id, *index)?),
            Op::SequenceVisuals { scene_id } => self.commit(&op, s.sequence_visuals(&p, scene_id).await?),
            Op::ContextualShot {
                scene_id,
                before,
                after,
                prompt,
            } => self.commit(
                &op,
                s.contextual_shot(&p, scene_id, before.as_ref(), after.as_ref(), prompt.as_deref())
                    .await?,
            ),
            Op::AcceptShotCandidate {
                job_id,
                proposal,
                candidate,
            } => self.commit(&op, pipelines::accept_shot_candidate(&p, job_id, *proposal, *candidate)?),
            Op::ImageVariations { shot_id, prompt, n } => {
                self.commit(&op, s.image_variations(&p, shot_id, prompt.as_deref(), *n).await?)
            }
            Op::VideoVariations {
                shot_id,
                annotations_png,
                prompt,
                n,
            } => {
                let a = decode_annotations(annotations_png.as_deref())?;
                self.commit(&op, s.video_variations(&p, shot_id, a.as_ref(), prompt.as_deref(), *n).await?)
            }
            Op::SuggestVideoPrompt {
                shot_id,
                annotations_png,
            } => {
                let a = decode_annotations(annotations_png.as_deref())?;
                self.commit(&op, s.suggest_video_prompt(&p, shot_id, a.as_ref()).await?)
            }
            Op::SelectVariation { job_id, index } => self.commit(&op, pipelines::select_variation(&p, job_id, *index)?),
            Op::Compile { scene_id, render } => {
                let value = self.compile(&p, scene_id.as_ref(), *render)?;
                self.commit(&op, Outcome::unchanged(value))
            }
        }
    }

    fn compile(&self, project: &Project, scene_id: Option<&SceneId>, render: bool) -> Result<Value, OpError> {
        let r = &self.config.render;
        let format = OutputFormat {
            width: r.width,
            height: r.height,
            frame_rate: r.fps,
        };
        let (edl, stem) = match scene_id {
            Some(id) => (compiler::compile_scene(project, id, format)?, id.to_string()),
            None => (
                compiler::compile_story(project, &project.active_version, format)?,
                format!("story-{}", project.active_version),
            ),
        };
        let mode = if render { RenderMode::Render } else { RenderMode::EdlOnly };
        let out = compiler::render(
            &edl,
            mode,
            &self.root.join(RENDER_DIR),
            &stem,
            r.command.as_deref(),
            &self.root,
        )?;
        let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).display().to_string();
        Ok(json!({
            "edl_path": rel(&out.edl_path),
            "video_path": out.video_path.as_deref().map(rel),
            "probed_duration_s": out.probed_duration_s,
            "total_duration_s": edl.total_duration_s,
            "entries": edl.entries.len(),
            "edl": serde_json::to_value(&edl).expect("edl serializes"),
        }))
    }
}

fn decode_annotations(b64: Option<&str>) -> Result<Option<Annotations>, OpError> {
    let Some(text) = b64 else { return Ok(None) };
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| OpError::invalid(format!("annotations_png: {e}")))?;
    Ok(Some(Annotations::from_png(bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media;

    fn fixture_dir() -> (tempfile::TempDir, Vec<PathBuf>) {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..3u8 {
            let path = dir.path().join(format!("in-{i}.png"));
            std::fs::write(&path, media::placeholder_png(48, 27, [40 * i, 100, 160], &format!("f{i}"))).unwrap();
            paths.push(path);
        }
        (dir, paths)
    }

    #[tokio::test]
    async fn ops_commit_and_persist() {
        let (src, paths) = fixture_dir();
        let root = src.path().join("proj");
        let ws = Workspace::init(&root, Config::default()).unwrap();
        let r = ws.run(Op::Ingest { paths }).await.unwrap();
        assert_eq!(r.result["added"].as_array().unwrap().len(), 3);
        ws.run(Op::Describe {
            shot_ids: None,
            force: false,
        })
        .await
        .unwrap();
        let g = ws.run(Op::Group { shot_ids: None }).await.unwrap();
        assert!(g.job_id.is_some());

        let reopened = Workspace::open(&root, Config::default()).unwrap();
        assert_eq!(reopened.snapshot().to_canonical_json(), ws.snapshot().to_canonical_json());
        assert_eq!(reopened.session().revision(), ws.session().revision());
        assert_eq!(reopened.session().events().last_seq(), ws.session().events().last_seq());
    }

    #[test]
    fn ops_parse_from_name_and_params() {
        let op = Op::from_parts("contextual_shot", json!({"scene_id": "s", "before": "a"})).unwrap();
        assert_eq!(op.name(), "contextual_shot");
        let e = Op::from_parts("nope", json!({})).unwrap_err();
        assert_eq!(e.class, ErrorClass::NotFound);
        let e = Op::from_parts("auto_align", json!({})).unwrap_err();
        assert_eq!(e.class, ErrorClass::Invalid);
        let e = Op::from_parts("auto_align", json!({"scene_id": "s", "extra": 1})).unwrap_err();
        assert_eq!(e.class, ErrorClass::Invalid);
    }

    #[tokio::test]
    async fn precondition_failures_are_unprocessable() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path(), Config::default()).unwrap();
        let e = ws
            .run(Op::Compile {
                scene_id: None,
                render: false,
            })
            .await
            .unwrap_err();
        assert_eq!((e.class, e.body.code.as_str()), (ErrorClass::Unprocessable, "empty_version"));
        let e = ws
            .run(Op::AutoAlign {
                scene_id: SceneId::new("x"),
            })
            .await
            .unwrap_err();
        assert_eq!(e.class, ErrorClass::NotFound);
        assert!(Workspace::init(dir.path(), Config::default()).is_err());
    }
}
