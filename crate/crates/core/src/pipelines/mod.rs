//! Model-backed story operations.
//!
//! Every operation reads a project snapshot, talks to the provider hub and
//! returns an [`Outcome`]: a typed value plus the mutation that applies it.
//! Nothing here touches the live project; callers commit the mutation
//! through the session. Each provider-backed outcome starts with a
//! `RecordJob` carrying every prompt sent, so generated assets always trace
//! back to the prompts that produced them.

pub mod context;
mod prompts;
mod script;
mod structure;
mod visuals;

use std::sync::Arc;

use serde_json::{json, Value};

pub use prompts::{Prompts, Template, TemplateError};
pub use script::{select_music, SyncReport, NARRATOR_VOICE, REFINEMENTS, SUGGESTION_RANGE_SCENE, SUGGESTION_RANGE_STORY};
pub use structure::{accept_scene_proposal, DescribeFailure, DescribeReport, ScenePlan, MAX_SCENE_PROPOSALS};
pub use visuals::{
    accept_shot_candidate, select_variation, Annotations, VisualPlan, DEFAULT_IMAGE_VARIANTS, DEFAULT_VIDEO_VARIANTS,
    KEYFRAME_CANDIDATES, MAX_SHOT_PROPOSALS,
};

use crate::alignment::AlignError;
use crate::ids::{short_hash, unique_id, JobId};
use crate::media::{self, MediaError};
use crate::model::{AssetRef, GenerationJob, JobOutput, MediaKind, Mutation, Project, PromptRecord, Shot, StoryError};
use crate::providers::{Part, ProviderError, ProviderHub, Schema, StructuredRequest};

/// Creativity for open-ended ideation.
pub const IDEATION: f32 = 0.7;
/// Creativity for extraction and classification.
pub const EXTRACTION: f32 = 0.2;
/// Long edge of images sent for description.
pub const DESCRIBE_EDGE: u32 = 1024;
/// Long edge of neighbor frames attached for continuity.
pub const NEIGHBOR_EDGE: u32 = 512;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown {kind} {id}")]
    UnknownId { kind: &'static str, id: String },
    #[error(transparent)]
    Provider(ProviderError),
    #[error("media error: {0}")]
    Media(#[from] MediaError),
    #[error("grouping left shots unassigned: {}", .orphans.join(", "))]
    IncompleteGrouping { orphans: Vec<String> },
    #[error("output is not a permutation: {0}")]
    PermutationViolation(String),
    #[error("output references unknown shot ids: {}", .ids.join(", "))]
    UnknownShotId { ids: Vec<String> },
    #[error("count contract violated: {0}")]
    CountViolation(String),
    #[error("options are not distinct: {0}")]
    DistinctnessViolation(String),
    #[error("span violation: {0}")]
    SpanViolation(String),
    #[error("scene script is empty")]
    EmptyScript,
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("malformed model output: {0}")]
    BadOutput(String),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Precondition(_) => "precondition_failed",
            PipelineError::UnknownId { .. } => "not_found",
            PipelineError::Provider(e) => e.code(),
            PipelineError::Media(_) => "media_probe_error",
            PipelineError::IncompleteGrouping { .. } => "incomplete_grouping",
            PipelineError::PermutationViolation(_) => "permutation_violation",
            PipelineError::UnknownShotId { .. } => "unknown_shot_id",
            PipelineError::CountViolation(_) => "count_violation",
            PipelineError::DistinctnessViolation(_) => "distinctness_violation",
            PipelineError::SpanViolation(_) => "span_violation",
            PipelineError::EmptyScript => "empty_script",
            PipelineError::Story(StoryError::UnknownId { .. }) => "not_found",
            PipelineError::Story(_) => "invariant_violation",
            PipelineError::Template(_) => "template_error",
            PipelineError::BadOutput(_) => "bad_model_output",
        }
    }

    /// Structured extras for error bodies.
    pub fn details(&self) -> Option<Value> {
        match self {
            PipelineError::IncompleteGrouping { orphans } => Some(json!({ "orphans": orphans })),
            PipelineError::UnknownShotId { ids } => Some(json!({ "ids": ids })),
            PipelineError::UnknownId { kind, id } => Some(json!({ "kind": kind, "id": id })),
            PipelineError::Provider(ProviderError::PartialFailure {
                requested,
                outputs,
                failures,
            }) => Some(json!({ "requested": requested, "outputs": outputs, "failures": failures })),
            PipelineError::Provider(ProviderError::SchemaValidationExhausted { attempts, error, .. }) => {
                Some(json!({ "attempts": attempts, "error": error }))
            }
            _ => None,
        }
    }

    pub(crate) fn unknown(kind: &'static str, id: impl ToString) -> Self {
        PipelineError::UnknownId {
            kind,
            id: id.to_string(),
        }
    }
}

impl From<ProviderError> for PipelineError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::EmptyScript => PipelineError::EmptyScript,
            ProviderError::Media(m) => PipelineError::Media(m),
            ProviderError::Precondition(m) => PipelineError::Precondition(m),
            other => PipelineError::Provider(other),
        }
    }
}

impl From<AlignError> for PipelineError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::EmptyScript => PipelineError::EmptyScript,
            AlignError::SpanViolation(m) => PipelineError::SpanViolation(m),
            other => PipelineError::Precondition(other.to_string()),
        }
    }
}

/// Result of an operation: the value shown to the user and the mutation
/// that applies it. `mutation` is `None` when nothing changes.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub value: T,
    pub mutation: Option<Mutation>,
    pub job_id: Option<JobId>,
}

impl<T> Outcome<T> {
    pub(crate) fn unchanged(value: T) -> Self {
        Outcome {
            value,
            mutation: None,
            job_id: None,
        }
    }

    pub(crate) fn applying(value: T, mutation: Mutation) -> Self {
        Outcome {
            value,
            mutation: Some(mutation),
            job_id: None,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Outcome<U> {
        Outcome {
            value: f(self.value),
            mutation: self.mutation,
            job_id: self.job_id,
        }
    }
}

/// Audit record being assembled while a pipeline runs.
#[derive(Debug, Default)]
pub(crate) struct JobDraft {
    kind: String,
    prompts: Vec<PromptRecord>,
    intermediate: Vec<String>,
    candidates: Vec<AssetRef>,
    explanations: Vec<String>,
}

impl JobDraft {
    pub(crate) fn new(kind: &str) -> Self {
        JobDraft {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub(crate) fn record(&mut self, stage: &str, system: &str, parts: &[Part]) {
        let user = parts
            .iter()
            .map(|p| match p {
                Part::Text { text } => text.clone(),
                Part::Image { label, checksum, .. } => format!("[image {label} sha256:{checksum}]"),
                Part::Video { label, checksum, .. } => format!("[video {label} sha256:{checksum}]"),
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        self.prompts.push(PromptRecord {
            stage: stage.into(),
            system: system.into(),
            user,
        });
    }

    pub(crate) fn intermediate(&mut self, prompt: impl Into<String>) {
        self.intermediate.push(prompt.into());
    }

    pub(crate) fn candidates(&mut self, assets: &[AssetRef]) {
        self.candidates.extend(assets.iter().cloned());
    }

    pub(crate) fn explain(&mut self, text: impl Into<String>) {
        self.explanations.push(text.into());
    }

    /// Builds the job id and the batch `[RegisterAsset.., RecordJob, effects..]`.
    pub(crate) fn finish(self, project: &Project, seed: u64, output: JobOutput, effects: Vec<Mutation>) -> (JobId, Mutation) {
        let fingerprint = serde_json::to_string(&json!({
            "prompts": self.prompts,
            "intermediate": self.intermediate,
            "candidates": self.candidates.iter().map(|a| a.asset_id.as_str()).collect::<Vec<_>>(),
            "output": output,
        }))
        .expect("job fingerprint serializes");
        let job_id = unique_id(
            JobId::derive(&[&self.kind, &seed.to_string(), &short_hash(&[&fingerprint])]),
            |s| project.jobs.keys().any(|k| k.as_str() == s),
        );
        let mut mutations: Vec<Mutation> = self
            .candidates
            .iter()
            .map(|a| Mutation::RegisterAsset { asset: a.clone() })
            .collect();
        mutations.push(Mutation::RecordJob {
            job: Box::new(GenerationJob {
                job_id: job_id.clone(),
                kind: self.kind,
                seed,
                prompts: self.prompts,
                intermediate_prompts: self.intermediate,
                candidates: self.candidates.iter().map(|a| a.asset_id.clone()).collect(),
                explanations: self.explanations,
                output,
            }),
        });
        mutations.extend(effects);
        (job_id, Mutation::batch(mutations))
    }
}

/// Runs model-backed operations against project snapshots.
#[derive(Clone)]
pub struct Studio {
    hub: Arc<ProviderHub>,
    prompts: Arc<Prompts>,
    frame_command: Option<String>,
}

impl Studio {
    pub fn new(hub: Arc<ProviderHub>, prompts: Prompts) -> Self {
        Studio {
            hub,
            prompts: Arc::new(prompts),
            frame_command: None,
        }
    }

    /// Shell command used to pull frames out of videos without a poster.
    pub fn with_frame_command(mut self, command: Option<String>) -> Self {
        self.frame_command = command;
        self
    }

    pub fn hub(&self) -> &Arc<ProviderHub> {
        &self.hub
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub(crate) fn seed(&self) -> u64 {
        self.hub.seed()
    }

    pub(crate) fn request(
        &self,
        stage: &str,
        template: &str,
        vars: &[(&str, &str)],
        schema: Schema,
        creativity: f32,
    ) -> Result<StructuredRequest, PipelineError> {
        let user = self.prompts.render(template, vars)?;
        Ok(StructuredRequest::new(stage, self.prompts.system(), schema)
            .part(Part::text(user))
            .creativity(creativity))
    }

    /// Structured call with an extra check inside the repair loop. The
    /// prompt is recorded on `draft` whether or not the call succeeds.
    pub(crate) async fn ask<C>(&self, draft: &mut JobDraft, req: &StructuredRequest, check: C) -> Result<Value, ProviderError>
    where
        C: Fn(&Value) -> Result<(), String>,
    {
        draft.record(&req.stage, &req.system_prompt, &req.user_parts);
        self.hub.complete_structured_with(req, check).await.map(|r| r.value)
    }

    /// Reads a still of `shot`: the image itself, or a frame of a video at
    /// `at` (0 = first, 1 = last). Stills are identified by the source
    /// asset's checksum. Returns `None` for videos whose frames cannot be
    /// extracted here.
    pub(crate) fn still(&self, shot: &Shot, at: f64, max_edge: Option<u32>, label: &str) -> Result<Option<Part>, PipelineError> {
        let path = self.hub.assets().path_of(&shot.asset);
        let bytes = match shot.asset.kind {
            MediaKind::Image => std::fs::read(&path).map_err(|e| MediaError::Probe {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?,
            MediaKind::Video => match media::sample_frames(&path, &[at], self.frame_command.as_deref()) {
                Ok(mut frames) => frames.remove(0),
                Err(MediaError::NoFrames(_)) => return Ok(None),
                Err(e) => return Err(e.into()),
            },
            MediaKind::Audio => return Err(PipelineError::Precondition(format!("{} is not visual", shot.shot_id))),
        };
        let bytes = match max_edge {
            Some(edge) => media::downscale_png(&bytes, edge)?,
            None => bytes,
        };
        Ok(Some(Part::image(label, shot.asset.checksum.clone(), bytes)))
    }
}

/// Deserializes a validated model value into its typed form.
pub(crate) fn decode<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, PipelineError> {
    serde_json::from_value(value).map_err(|e| PipelineError::BadOutput(e.to_string()))
}

/// The raw JSON of the last rejected answer, if it parses.
pub(crate) fn last_answer(e: &ProviderError) -> Option<Value> {
    match e {
        ProviderError::SchemaValidationExhausted { last_raw, .. } => {
            let t = last_raw.trim();
            let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
            let t = t.strip_suffix("```").unwrap_or(t);
            serde_json::from_str(t.trim()).ok()
        }
        _ => None,
    }
}

pub(crate) fn exhausted_error(e: &ProviderError) -> Option<&str> {
    match e {
        ProviderError::SchemaValidationExhausted { error, .. } => Some(error),
        _ => None,
    }
}

#[cfg(test)]
pub(crate) mod testkit {
    use std::sync::Arc;
    use std::time::Duration;

    use super::*;
    use crate::ids::ShotId;
    use crate::model::{apply_mutation, CanvasPos, Provenance, Scene, SceneOrigin};
    use crate::providers::mock::MockBackend;
    use crate::store::AssetStore;

    pub struct Kit {
        pub studio: Studio,
        pub mock: Arc<MockBackend>,
        pub _dir: tempfile::TempDir,
    }

    pub fn kit_with(latency_ms: u64, seed: u64) -> Kit {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::new().with_latency(Duration::from_millis(latency_ms)));
        let hub = ProviderHub::new(mock.clone(), AssetStore::new(dir.path()), 4).with_seed(seed);
        Kit {
            studio: Studio::new(Arc::new(hub), Prompts::builtin()),
            mock,
            _dir: dir,
        }
    }

    pub fn kit() -> Kit {
        kit_with(0, 7)
    }

    pub fn apply(p: &Project, o: &Option<Mutation>) -> Project {
        match o {
            Some(m) => apply_mutation(p, m).unwrap().project,
            None => p.clone(),
        }
    }

    /// A project with `n` real image assets stored under the kit's root,
    /// all described, optionally grouped into one scene.
    pub fn real_project(kit: &Kit, n: usize, grouped: bool) -> Project {
        let store = kit.studio.hub().assets().clone();
        let mut p = Project::new("test");
        p.story_context = "A weekend trip to the coast with my sister. We got lost and found a lighthouse.".into();
        let mut ids = Vec::new();
        for i in 0..n {
            let png = media::placeholder_png(64, 36, [20 * i as u8, 90, 140], &format!("img{i}"));
            let asset = store.put(&png, "png").unwrap();
            p.assets.insert(asset.asset_id.clone(), asset.clone());
            let shot_id = ShotId::new(format!("shot-{}", i + 1));
            p.shots.insert(
                shot_id.clone(),
                Shot {
                    shot_id: shot_id.clone(),
                    asset,
                    provenance: Provenance::Captured,
                    description: format!("A photo of the coast number {i}, waves and rocks."),
                    canvas_pos: CanvasPos::default(),
                    generation: None,
                    trim: None,
                    asset_history: Vec::new(),
                },
            );
            ids.push(shot_id);
        }
        if grouped {
            let mut s = Scene::new(crate::ids::SceneId::new("scene-1"), "Coast", crate::model::palette_color(0));
            s.shots = ids;
            s.origin = SceneOrigin::User;
            let m = Mutation::AddScene {
                version_id: p.active_version.clone(),
                index: 0,
                scene: s,
            };
            p = apply_mutation(&p, &m).unwrap().project;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::two_scene_project;

    #[test]
    fn job_batch_registers_before_recording() {
        let p = two_scene_project();
        let mut d = JobDraft::new("test");
        d.record("s", "sys", &[Part::text("hi")]);
        let (id, m) = d.finish(&p, 1, JobOutput::Grouping { scenes: vec![] }, vec![]);
        let Mutation::Batch { mutations } = &m else { panic!() };
        assert!(matches!(mutations.last(), Some(Mutation::RecordJob { .. })));
        let next = crate::model::apply_mutation(&p, &m).unwrap().project;
        assert_eq!(next.jobs[&id].prompts[0].user, "hi");

        // The same draft on the updated project gets a fresh id.
        let mut d = JobDraft::new("test");
        d.record("s", "sys", &[Part::text("hi")]);
        let (id2, _) = d.finish(&next, 1, JobOutput::Grouping { scenes: vec![] }, vec![]);
        assert_ne!(id, id2);
    }

    #[test]
    fn error_codes_are_stable() {
        assert_eq!(PipelineError::EmptyScript.code(), "empty_script");
        assert_eq!(PipelineError::from(ProviderError::EmptyScript).code(), "empty_script");
        let e = PipelineError::IncompleteGrouping {
            orphans: vec!["shot-9".into()],
        };
        assert_eq!(e.details().unwrap()["orphans"][0], "shot-9");
        assert!(e.to_string().contains("shot-9"));
    }
}
