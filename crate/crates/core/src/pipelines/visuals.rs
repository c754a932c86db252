//! Visual operations: shot planning, keyframes and media variations.

use futures::future::join_all;
use serde::Deserialize;

use super::structure::permutation_error;
use super::{context, decode, JobDraft, Outcome, PipelineError, Studio, DESCRIBE_EDGE, EXTRACTION, IDEATION, NEIGHBOR_EDGE};
use crate::ids::{unique_id, JobId, SceneId, ShotId};
use crate::model::{
    AssetRef, CanvasPos, GenerationProvenance, JobOutput, MediaCandidates, MediaKind, Mutation, Project, Provenance, Scene, Shot,
    ShotProposal, ShotSlot, VideoPromptFields,
};
use crate::providers::{ImageGenRequest, Part, ProviderError, Schema, TextHint, VideoGenRequest};

/// Keyframe options generated per proposed shot.
pub const KEYFRAME_CANDIDATES: usize = 3;
/// Clips generated per video variation request unless told otherwise.
pub const DEFAULT_VIDEO_VARIANTS: u32 = 2;
/// New shots `sequence_visuals` may propose per run.
pub const MAX_SHOT_PROPOSALS: usize = 2;
/// Image variations generated unless told otherwise.
pub const DEFAULT_IMAGE_VARIANTS: u32 = 3;

const START: &str = "start";
const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// A drawing over a keyframe, as PNG bytes. Only the language model sees
/// it; video models always receive the clean keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations(Vec<u8>);

impl Annotations {
    pub fn from_png(bytes: Vec<u8>) -> Result<Annotations, PipelineError> {
        if !bytes.starts_with(PNG_MAGIC) {
            return Err(PipelineError::Precondition("annotations must be a PNG image".into()));
        }
        Ok(Annotations(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VisualPlan {
    pub scene_id: SceneId,
    pub order: Vec<ShotId>,
    pub proposals: Vec<ShotProposal>,
}

#[derive(Deserialize)]
struct ShotOption {
    image_prompt: String,
    description: String,
    explanation: String,
}

#[derive(Deserialize)]
struct Ideated {
    explanation: String,
    options: Vec<ShotOption>,
}

#[derive(Deserialize)]
struct PlannedShot {
    after_shot: String,
    explanation: String,
    options: Vec<ShotOption>,
}

#[derive(Deserialize)]
struct Plan {
    order: Vec<String>,
    proposals: Vec<PlannedShot>,
}

#[derive(Deserialize)]
struct Augmented {
    prompt: String,
}

fn option_schema() -> Schema {
    Schema::array(
        Schema::object(vec![
            ("image_prompt", Schema::text(TextHint::VisualPrompt)),
            ("description", Schema::text(TextHint::Sentence)),
            ("explanation", Schema::text(TextHint::Sentence)),
        ]),
        KEYFRAME_CANDIDATES,
        Some(KEYFRAME_CANDIDATES),
    )
}

/// A shot proposal whose keyframes are still to be rendered.
struct Pending {
    scene_id: SceneId,
    slot: usize,
    after: Option<ShotId>,
    before: Option<ShotId>,
    explanation: String,
    prompts: Vec<String>,
    options: Vec<ShotOption>,
    refs: Vec<Part>,
}

fn scene_in_active<'a>(project: &'a Project, scene_id: &SceneId) -> Result<&'a Scene, PipelineError> {
    let scene = project
        .scenes
        .get(scene_id)
        .ok_or_else(|| PipelineError::unknown("scene", scene_id))?;
    if !project.active().scenes.contains(scene_id) {
        return Err(PipelineError::Precondition(format!(
            "scene {scene_id} is not in the active version"
        )));
    }
    Ok(scene)
}

fn visual_shot<'a>(project: &'a Project, shot_id: &ShotId) -> Result<&'a Shot, PipelineError> {
    let shot = project
        .shots
        .get(shot_id)
        .ok_or_else(|| PipelineError::unknown("shot", shot_id))?;
    if shot.asset.kind == MediaKind::Audio {
        return Err(PipelineError::Precondition(format!("{shot_id} is not visual")));
    }
    Ok(shot)
}

fn scene_text(project: &Project, shot_id: &ShotId) -> String {
    project
        .scene_of_shot(&project.active_version, shot_id)
        .map_or_else(|| "(none)".into(), |s| context::scene(project, s))
}

impl Studio {
    /// Continuity frames around a gap: the last frame of the previous shot
    /// and the first frame of the next one.
    fn neighbor_refs(&self, project: &Project, prev: Option<&ShotId>, next: Option<&ShotId>) -> Result<Vec<Part>, PipelineError> {
        let mut refs = Vec::new();
        for (id, at, label) in [(prev, 1.0, "previous shot"), (next, 0.0, "next shot")] {
            if let Some(shot) = id.and_then(|id| project.shots.get(id)) {
                if let Some(part) = self.still(shot, at, Some(NEIGHBOR_EDGE), label)? {
                    refs.push(part);
                }
            }
        }
        Ok(refs)
    }

    /// The clean first frame of a shot at full resolution.
    fn keyframe_of(&self, shot: &Shot) -> Result<Part, PipelineError> {
        self.still(shot, 0.0, None, "keyframe")?.ok_or_else(|| {
            PipelineError::Precondition(format!(
                "cannot extract a frame from {}; configure a frame command",
                shot.shot_id
            ))
        })
    }

    /// Renders every option of every pending proposal concurrently, one
    /// image call per option.
    async fn render_keyframes(&self, draft: &mut JobDraft, pending: Vec<Pending>) -> Result<Vec<ShotProposal>, PipelineError> {
        let mut requests = Vec::new();
        for (p, item) in pending.iter().enumerate() {
            for prompt in &item.prompts {
                let mut req = ImageGenRequest::new("keyframe", prompt.clone(), 1);
                req.references = item.refs.clone();
                draft.intermediate(prompt.clone());
                draft.record(
                    "keyframe",
                    "",
                    &std::iter::once(Part::text(prompt))
                        .chain(item.refs.iter().cloned())
                        .collect::<Vec<_>>(),
                );
                requests.push((p, req));
            }
        }
        let results = join_all(requests.iter().map(|(_, r)| self.hub().generate_image(r))).await;
        let mut per_proposal: Vec<Vec<AssetRef>> = vec![Vec::new(); pending.len()];
        let mut outputs = Vec::new();
        let mut failures = Vec::new();
        for ((p, _), r) in requests.iter().zip(results) {
            match r {
                Ok(res) => {
                    outputs.extend(res.outputs.iter().cloned());
                    per_proposal[*p].extend(res.outputs);
                }
                Err(ProviderError::PartialFailure {
                    outputs: o, failures: f, ..
                }) => {
                    outputs.extend(o);
                    failures.extend(f);
                }
                Err(e) => failures.push(e.to_string()),
            }
        }
        if !failures.is_empty() {
            return Err(PipelineError::Provider(ProviderError::PartialFailure {
                requested: requests.len() as u32,
                outputs,
                failures,
            }));
        }
        let mut proposals = Vec::new();
        for (item, assets) in pending.into_iter().zip(per_proposal) {
            draft.candidates(&assets);
            draft.explain(item.explanation.clone());
            proposals.push(ShotProposal {
                scene_id: item.scene_id,
                slot: item.slot,
                after_shot: item.after,
                before_shot: item.before,
                image_prompt: item
                    .options
                    .first()
                    .map(|o| o.image_prompt.trim().to_string())
                    .unwrap_or_default(),
                candidates: assets.iter().map(|a| a.asset_id.clone()).collect(),
                image_prompts: item.prompts,
                descriptions: item.options.iter().map(|o| o.description.trim().to_string()).collect(),
                explanations: item.options.iter().map(|o| o.explanation.trim().to_string()).collect(),
                explanation: item.explanation.trim().to_string(),
                chosen: None,
            });
        }
        Ok(proposals)
    }

    /// Orders a scene's shots and proposes up to two new shots, each with
    /// three rendered keyframe options.
    pub async fn sequence_visuals(&self, project: &Project, scene_id: &SceneId) -> Result<Outcome<VisualPlan>, PipelineError> {
        let scene = scene_in_active(project, scene_id)?;
        if scene.shots.is_empty() {
            return Err(PipelineError::Precondition(format!("scene {scene_id} has no shots")));
        }
        if let Some(s) = scene
            .shots
            .iter()
            .find(|s| !project.shots.get(*s).is_some_and(Shot::is_described))
        {
            return Err(PipelineError::Precondition(format!("shot {s} has no description yet")));
        }
        let ids: Vec<String> = scene.shots.iter().map(|s| s.to_string()).collect();
        let mut anchors = vec![START.to_string()];
        anchors.extend(ids.iter().cloned());
        let schema = Schema::object(vec![
            ("order", Schema::permutation(&ids)),
            (
                "proposals",
                Schema::array(
                    Schema::object(vec![
                        ("after_shot", Schema::one_of(&anchors)),
                        ("explanation", Schema::text(TextHint::Sentence)),
                        ("options", option_schema()),
                    ]),
                    0,
                    Some(MAX_SHOT_PROPOSALS),
                ),
            ),
        ]);
        let story = context::story(project);
        let block = context::scene(project, scene);
        let shots = context::shots(project, &scene.shots);
        let max = MAX_SHOT_PROPOSALS.to_string();
        let req = self.request(
            "sequence_visuals",
            "sequence_visuals",
            &[
                ("max_proposals", &max),
                ("context", &story),
                ("scene", &block),
                ("shots", &shots),
            ],
            schema,
            IDEATION,
        )?;
        let mut draft = JobDraft::new("sequence_visuals");
        let plan: Plan = decode(self.ask(&mut draft, &req, |_| Ok(())).await.map_err(permutation_error)?)?;
        let order: Vec<ShotId> = plan.order.into_iter().map(ShotId::new).collect();
        let mut pending = Vec::new();
        for p in plan.proposals {
            let after = (p.after_shot != START).then(|| ShotId::new(p.after_shot));
            let slot = after
                .as_ref()
                .and_then(|a| order.iter().position(|s| s == a))
                .map_or(0, |k| k + 1);
            let before = order.get(slot).cloned();
            let refs = self.neighbor_refs(project, after.as_ref(), before.as_ref())?;
            pending.push(Pending {
                scene_id: scene_id.clone(),
                slot,
                after,
                before,
                explanation: p.explanation,
                prompts: p.options.iter().map(|o| o.image_prompt.trim().to_string()).collect(),
                options: p.options,
                refs,
            });
        }
        let proposals = self.render_keyframes(&mut draft, pending).await?;
        let mut effects = Vec::new();
        if order != scene.shots {
            effects.push(Mutation::ReorderShots {
                scene_id: scene_id.clone(),
                order: order.clone(),
            });
        }
        let plan = VisualPlan {
            scene_id: scene_id.clone(),
            order,
            proposals,
        };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::VisualSequence {
                scene_id: scene_id.clone(),
                order: plan.order.clone(),
                proposals: plan.proposals.clone(),
            },
            effects,
        );
        Ok(Outcome {
            value: plan,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Ideates a shot for the gap between two adjacent shots of a scene and
    /// renders three keyframe options. `None` stands for the scene boundary;
    /// at least one neighbor is required.
    pub async fn contextual_shot(
        &self,
        project: &Project,
        scene_id: &SceneId,
        before: Option<&ShotId>,
        after: Option<&ShotId>,
        prompt: Option<&str>,
    ) -> Result<Outcome<ShotProposal>, PipelineError> {
        let scene = scene_in_active(project, scene_id)?;
        let index_of = |id: &ShotId| -> Result<usize, PipelineError> {
            if !project.shots.contains_key(id) {
                return Err(PipelineError::unknown("shot", id));
            }
            scene
                .shots
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| PipelineError::Precondition(format!("shot {id} is not in scene {scene_id}")))
        };
        let slot = match (before, after) {
            (None, None) => return Err(PipelineError::Precondition("give at least one neighboring shot".into())),
            (Some(a), Some(b)) => {
                let (i, j) = (index_of(a)?, index_of(b)?);
                if j != i + 1 {
                    return Err(PipelineError::Precondition(format!("shots {a} and {b} are not adjacent")));
                }
                j
            }
            (Some(a), None) => {
                let i = index_of(a)?;
                if i + 1 != scene.shots.len() {
                    return Err(PipelineError::Precondition(format!(
                        "shot {a} is not the last shot of the scene"
                    )));
                }
                i + 1
            }
            (None, Some(b)) => {
                if index_of(b)? != 0 {
                    return Err(PipelineError::Precondition(format!(
                        "shot {b} is not the first shot of the scene"
                    )));
                }
                0
            }
        };
        let refs = self.neighbor_refs(project, before, after)?;
        let line = |id: Option<&ShotId>| {
            id.and_then(|id| project.shots.get(id))
                .map_or_else(|| "(scene boundary)".into(), context::shot_line)
        };
        let schema = Schema::object(vec![
            ("explanation", Schema::text(TextHint::Sentence)),
            ("options", option_schema()),
        ]);
        let direction = context::or_none(prompt);
        let story = context::story(project);
        let block = context::scene(project, scene);
        let (b, a) = (line(before), line(after));
        let req = self
            .request(
                "contextual_shot",
                "contextual_shot",
                &[
                    ("prompt", &direction),
                    ("context", &story),
                    ("scene", &block),
                    ("before", &b),
                    ("after", &a),
                ],
                schema,
                IDEATION,
            )?
            .parts(refs.iter().cloned());
        let mut draft = JobDraft::new("contextual_shot");
        let idea: Ideated = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let extra = prompt.map(str::trim).filter(|p| !p.is_empty());
        let prompts = idea
            .options
            .iter()
            .map(|o| match extra {
                Some(x) => format!("{}. {x}", o.image_prompt.trim().trim_end_matches('.')),
                None => o.image_prompt.trim().to_string(),
            })
            .collect();
        let pending = Pending {
            scene_id: scene_id.clone(),
            slot,
            after: before.cloned(),
            before: after.cloned(),
            explanation: idea.explanation,
            prompts,
            options: idea.options,
            refs,
        };
        let proposal = self.render_keyframes(&mut draft, vec![pending]).await?.remove(0);
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::ContextualShot {
                proposal: proposal.clone(),
            },
            Vec::new(),
        );
        Ok(Outcome {
            value: proposal,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Edits of a shot's image, or of a video's first frame.
    pub async fn image_variations(
        &self,
        project: &Project,
        shot_id: &ShotId,
        prompt: Option<&str>,
        n: Option<u32>,
    ) -> Result<Outcome<MediaCandidates>, PipelineError> {
        let shot = visual_shot(project, shot_id)?;
        let n = n.unwrap_or(DEFAULT_IMAGE_VARIANTS);
        if n == 0 {
            return Err(PipelineError::Precondition("n must be at least 1".into()));
        }
        let base = self.keyframe_of(shot)?;
        let description = if shot.is_described() {
            shot.description.trim().to_string()
        } else {
            "(not described)".into()
        };
        let direction = context::or_none(prompt);
        let text = self
            .prompts()
            .render("image_variation", &[("description", &description), ("prompt", &direction)])?;
        let mut req = ImageGenRequest::new("image_variation", text.clone(), n);
        req.base_image = Some(base.clone());
        let mut draft = JobDraft::new("image_variations");
        draft.record("image_variation", "", &[Part::text(&text), base]);
        let result = self.hub().generate_image(&req).await?;
        draft.candidates(&result.outputs);
        let candidates = MediaCandidates {
            base_shot: Some(shot_id.clone()),
            scene_id: None,
            prompt: text,
            assets: result.outputs.iter().map(|a| a.asset_id.clone()).collect(),
            descriptions: Vec::new(),
            explanations: Vec::new(),
        };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::ImageVariations {
                candidates: candidates.clone(),
            },
            Vec::new(),
        );
        Ok(Outcome {
            value: candidates,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Animates a shot's keyframe. The language model rewrites the direction
    /// into a video prompt, seeing the annotated frame if there is one; the
    /// video model receives only the clean keyframe.
    pub async fn video_variations(
        &self,
        project: &Project,
        shot_id: &ShotId,
        annotations: Option<&Annotations>,
        prompt: Option<&str>,
        n: Option<u32>,
    ) -> Result<Outcome<MediaCandidates>, PipelineError> {
        let shot = visual_shot(project, shot_id)?;
        let n = n.unwrap_or(DEFAULT_VIDEO_VARIANTS);
        if n == 0 {
            return Err(PipelineError::Precondition("n must be at least 1".into()));
        }
        let keyframe = self.keyframe_of(shot)?;
        let preview = match self.still(shot, 0.0, Some(DESCRIBE_EDGE), "keyframe")? {
            Some(p) => p,
            None => keyframe.clone(),
        };
        let description = context::or_none(Some(&shot.description));
        let note = match annotations {
            Some(_) => "An annotated copy of the keyframe is attached.".to_string(),
            None => "(none)".to_string(),
        };
        let direction = context::or_none(prompt);
        let story = context::story(project);
        let scene = scene_text(project, shot_id);
        let mut req = self
            .request(
                "augment_video_prompt",
                "augment_video_prompt",
                &[
                    ("prompt", &direction),
                    ("description", &description),
                    ("annotations", &note),
                    ("scene", &scene),
                    ("context", &story),
                ],
                Schema::object(vec![("prompt", Schema::text(TextHint::VisualPrompt))]),
                IDEATION,
            )?
            .part(preview);
        if let Some(a) = annotations {
            req = req.part(Part::image_bytes("annotated keyframe", a.bytes().to_vec()));
        }
        let mut draft = JobDraft::new("video_variations");
        let augmented: Augmented = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let video_prompt = augmented.prompt.trim().to_string();
        draft.intermediate(video_prompt.clone());
        let video = VideoGenRequest {
            stage: "video_variation".into(),
            prompt: video_prompt.clone(),
            n,
            seed: None,
            keyframe: Some(keyframe.clone()),
            duration_hint_s: None,
        };
        draft.record("video_variation", "", &[Part::text(&video_prompt), keyframe]);
        let result = self.hub().generate_video(&video).await?;
        draft.candidates(&result.outputs);
        let candidates = MediaCandidates {
            base_shot: Some(shot_id.clone()),
            scene_id: None,
            prompt: video_prompt.clone(),
            assets: result.outputs.iter().map(|a| a.asset_id.clone()).collect(),
            descriptions: Vec::new(),
            explanations: Vec::new(),
        };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::VideoVariations {
                augmented_prompt: video_prompt,
                candidates: candidates.clone(),
            },
            Vec::new(),
        );
        Ok(Outcome {
            value: candidates,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Fills the four video prompt fields for a keyframe.
    pub async fn suggest_video_prompt(
        &self,
        project: &Project,
        shot_id: &ShotId,
        annotations: Option<&Annotations>,
    ) -> Result<Outcome<VideoPromptFields>, PipelineError> {
        let shot = visual_shot(project, shot_id)?;
        let description = context::or_none(Some(&shot.description));
        let note = match annotations {
            Some(_) => "An annotated copy of the keyframe is attached.".to_string(),
            None => "(none)".to_string(),
        };
        let story = context::story(project);
        let field = || Schema::text(TextHint::Sentence);
        let mut req = self.request(
            "video_prompt_fields",
            "video_prompt_fields",
            &[("description", &description), ("annotations", &note), ("context", &story)],
            Schema::object(vec![
                ("camera_movement", field()),
                ("lighting", field()),
                ("style", field()),
                ("action", field()),
            ]),
            EXTRACTION,
        )?;
        if let Some(p) = self.still(shot, 0.0, Some(DESCRIBE_EDGE), "keyframe")? {
            req = req.part(p);
        }
        if let Some(a) = annotations {
            req = req.part(Part::image_bytes("annotated keyframe", a.bytes().to_vec()));
        }
        let mut draft = JobDraft::new("video_prompt_fields");
        let fields: VideoPromptFields = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::VideoPrompt { fields: fields.clone() },
            Vec::new(),
        );
        Ok(Outcome {
            value: fields,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }
}

/// Turns keyframe option `candidate` of proposal `proposal` into a new
/// generated shot placed in its slot.
pub fn accept_shot_candidate(
    project: &Project,
    job_id: &JobId,
    proposal: usize,
    candidate: usize,
) -> Result<Outcome<ShotId>, PipelineError> {
    let job = project
        .jobs
        .get(job_id)
        .ok_or_else(|| PipelineError::unknown("job", job_id))?;
    let p = match &job.output {
        JobOutput::VisualSequence { proposals, .. } => proposals
            .get(proposal)
            .ok_or_else(|| PipelineError::unknown("proposal", format!("{job_id}#{proposal}")))?,
        JobOutput::ContextualShot { proposal: p } if proposal == 0 => p,
        JobOutput::ContextualShot { .. } => return Err(PipelineError::unknown("proposal", format!("{job_id}#{proposal}"))),
        _ => return Err(PipelineError::Precondition(format!("job {job_id} has no shot proposals"))),
    };
    let asset_id = p
        .candidates
        .get(candidate)
        .ok_or_else(|| PipelineError::unknown("candidate", format!("{job_id}#{proposal}.{candidate}")))?;
    let asset = project
        .assets
        .get(asset_id)
        .ok_or_else(|| PipelineError::unknown("asset", asset_id))?;
    let scene = project
        .scenes
        .get(&p.scene_id)
        .ok_or_else(|| PipelineError::unknown("scene", &p.scene_id))?;
    // Neighbors may have moved since the proposal; anchor on them first.
    let slot = p
        .after_shot
        .as_ref()
        .and_then(|a| scene.shots.iter().position(|s| s == a))
        .map(|i| i + 1)
        .or_else(|| p.before_shot.as_ref().and_then(|b| scene.shots.iter().position(|s| s == b)))
        .unwrap_or(p.slot.min(scene.shots.len()));
    let shot_id = unique_id(
        ShotId::derive(&[job_id.as_str(), &proposal.to_string(), &candidate.to_string()]),
        |s| project.shots.keys().any(|k| k.as_str() == s),
    );
    let pos = p
        .after_shot
        .as_ref()
        .and_then(|a| project.shots.get(a))
        .map_or_else(CanvasPos::default, |s| CanvasPos {
            x: s.canvas_pos.x + 40.0,
            y: s.canvas_pos.y + 40.0,
        });
    let shot = Shot {
        shot_id: shot_id.clone(),
        asset: asset.clone(),
        provenance: Provenance::Generated,
        description: p.descriptions.get(candidate).cloned().unwrap_or_default(),
        canvas_pos: pos,
        generation: Some(GenerationProvenance {
            job_id: job_id.clone(),
            source_prompt: p
                .image_prompts
                .get(candidate)
                .cloned()
                .unwrap_or_else(|| p.image_prompt.clone()),
            base_keyframe: None,
            neighbor_shots: Some((p.after_shot.clone(), p.before_shot.clone())),
            explanation: p
                .explanations
                .get(candidate)
                .cloned()
                .unwrap_or_else(|| p.explanation.clone()),
        }),
        trim: None,
        asset_history: Vec::new(),
    };
    Ok(Outcome::applying(
        shot_id.clone(),
        Mutation::batch(vec![
            Mutation::AddShot { shot },
            Mutation::MoveShot {
                shot_id,
                to: Some(ShotSlot {
                    scene_id: p.scene_id.clone(),
                    index: slot,
                }),
                version_id: None,
            },
        ]),
    ))
}

/// Applies variation `index` of an image or video variation job. A
/// generated base shot swaps its asset; a captured one stays as it is and
/// the variation becomes a new generated shot right after it.
pub fn select_variation(project: &Project, job_id: &JobId, index: usize) -> Result<Outcome<ShotId>, PipelineError> {
    let job = project
        .jobs
        .get(job_id)
        .ok_or_else(|| PipelineError::unknown("job", job_id))?;
    let (candidates, source_prompt) = match &job.output {
        JobOutput::ImageVariations { candidates } => (candidates, candidates.prompt.clone()),
        JobOutput::VideoVariations {
            augmented_prompt,
            candidates,
        } => (candidates, augmented_prompt.clone()),
        _ => return Err(PipelineError::Precondition(format!("job {job_id} is not a variation job"))),
    };
    let base_id = candidates
        .base_shot
        .as_ref()
        .ok_or_else(|| PipelineError::Precondition("variation job has no base shot".into()))?;
    let base = project
        .shots
        .get(base_id)
        .ok_or_else(|| PipelineError::unknown("shot", base_id))?;
    let asset_id = candidates
        .assets
        .get(index)
        .ok_or_else(|| PipelineError::unknown("candidate", format!("{job_id}#{index}")))?;
    let asset = project
        .assets
        .get(asset_id)
        .ok_or_else(|| PipelineError::unknown("asset", asset_id))?;
    let generation = GenerationProvenance {
        job_id: job_id.clone(),
        source_prompt,
        base_keyframe: Some(base.asset.asset_id.clone()),
        neighbor_shots: None,
        explanation: format!("variation of {base_id}"),
    };
    if base.provenance == Provenance::Generated {
        return Ok(Outcome::applying(
            base_id.clone(),
            Mutation::ReplaceShotAsset {
                shot_id: base_id.clone(),
                asset: asset.clone(),
                generation,
            },
        ));
    }
    let shot_id = unique_id(ShotId::derive(&[job_id.as_str(), &index.to_string()]), |s| {
        project.shots.keys().any(|k| k.as_str() == s)
    });
    let mut effects = vec![Mutation::AddShot {
        shot: Shot {
            shot_id: shot_id.clone(),
            asset: asset.clone(),
            provenance: Provenance::Generated,
            description: String::new(),
            canvas_pos: CanvasPos {
                x: base.canvas_pos.x + 40.0,
                y: base.canvas_pos.y + 40.0,
            },
            generation: Some(generation),
            trim: None,
            asset_history: Vec::new(),
        },
    }];
    if let Some(scene) = project.scene_of_shot(&project.active_version, base_id) {
        let i = scene.shots.iter().position(|s| s == base_id).expect("scene holds the shot");
        effects.push(Mutation::MoveShot {
            shot_id: shot_id.clone(),
            to: Some(ShotSlot {
                scene_id: scene.scene_id.clone(),
                index: i + 1,
            }),
            version_id: None,
        });
    }
    Ok(Outcome::applying(shot_id, Mutation::batch(effects)))
}
