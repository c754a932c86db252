//! Story structure: describing, grouping, ordering and varying.

use std::collections::BTreeSet;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    context, decode, exhausted_error, last_answer, JobDraft, Outcome, PipelineError, Studio, DESCRIBE_EDGE, EXTRACTION, IDEATION,
};
use crate::ids::{unique_id, JobId, SceneId, ShotId, VersionId};
use crate::media::{self, MediaError};
use crate::model::{
    palette_color, CompareEntry, CompareReport, JobOutput, MediaKind, Mutation, NewSceneProposal, Project, Scene, SceneOrigin,
    Shot, StoryVersion, VersionOrigin,
};
use crate::providers::{KeyRule, Part, ProviderError, Schema, TextHint};

/// New scenes `sequence_scenes` may propose per run.
pub const MAX_SCENE_PROPOSALS: usize = 3;

const START: &str = "start";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescribeFailure {
    pub shot_id: ShotId,
    pub code: String,
    pub message: String,
}

/// Outcome of describing many shots; failed shots stay undescribed and can
/// be retried.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DescribeReport {
    pub described: Vec<ShotId>,
    pub cached: Vec<ShotId>,
    pub failed: Vec<DescribeFailure>,
    pub job_ids: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenePlan {
    pub order: Vec<SceneId>,
    pub proposals: Vec<NewSceneProposal>,
}

#[derive(Deserialize)]
struct Described {
    description: String,
}

#[derive(Deserialize)]
struct Titled {
    title: String,
    description: String,
}

#[derive(Deserialize)]
struct Group {
    title: String,
    description: String,
    shot_ids: Vec<String>,
}

#[derive(Deserialize)]
struct Grouping {
    scenes: Vec<Group>,
}

#[derive(Deserialize)]
struct Variation {
    name: String,
    scenes: Vec<Group>,
}

#[derive(Deserialize)]
struct SceneIdea {
    title: String,
    description: String,
    after_scene: String,
}

#[derive(Deserialize)]
struct Sequence {
    order: Vec<String>,
    proposals: Vec<SceneIdea>,
}

#[derive(Deserialize)]
struct Assessment {
    version_id: String,
    summary: String,
    strengths: Vec<String>,
    weaknesses: Vec<String>,
}

#[derive(Deserialize)]
struct Comparison {
    entries: Vec<Assessment>,
}

fn scene_schema(ids: &[String]) -> Schema {
    Schema::object(vec![
        ("title", Schema::text(TextHint::Title)),
        ("description", Schema::text(TextHint::Sentence)),
        ("shot_ids", Schema::id_set(ids, 1, None)),
    ])
}

/// Every shot-id string found under `scenes[*].shot_ids` of a raw answer.
fn mentioned_ids(raw: &Value) -> Vec<String> {
    raw["scenes"]
        .as_array()
        .into_iter()
        .flatten()
        .flat_map(|s| s["shot_ids"].as_array().into_iter().flatten())
        .filter_map(|v| v.as_str().map(str::to_string))
        .collect()
}

fn fresh_scene_id(project: &Project, taken: &[SceneId], parts: &[&str]) -> SceneId {
    unique_id(SceneId::derive(parts), |s| {
        project.scenes.keys().any(|k| k.as_str() == s) || taken.iter().any(|t| t.as_str() == s)
    })
}

impl Studio {
    fn describe_parts(&self, shot: &Shot) -> Result<(&'static str, Vec<Part>), PipelineError> {
        let path = self.hub().assets().path_of(&shot.asset);
        let checksum = shot.asset.checksum.clone();
        match shot.asset.kind {
            MediaKind::Image => {
                let part = self
                    .still(shot, 0.0, Some(DESCRIBE_EDGE), "image")?
                    .expect("images always yield a still");
                Ok(("image", vec![part]))
            }
            MediaKind::Video => {
                if !path.exists() {
                    return Err(MediaError::Probe {
                        path: path.display().to_string(),
                        reason: "file not found".into(),
                    }
                    .into());
                }
                match media::sample_frames(&path, &[0.0, 0.5, 1.0], self.frame_command.as_deref()) {
                    Ok(frames) => {
                        let labels = ["first frame", "middle frame", "last frame"];
                        let parts = frames
                            .into_iter()
                            .zip(labels)
                            .map(|(f, l)| Ok(Part::image(l, checksum.clone(), media::downscale_png(&f, DESCRIBE_EDGE)?)))
                            .collect::<Result<Vec<_>, PipelineError>>()?;
                        Ok(("video clip, shown as its first, middle and last frames", parts))
                    }
                    Err(MediaError::NoFrames(_)) => Ok((
                        "video clip",
                        vec![Part::Video {
                            label: "clip".into(),
                            checksum,
                            path,
                        }],
                    )),
                    Err(e) => Err(e.into()),
                }
            }
            MediaKind::Audio => Err(PipelineError::Precondition(format!("{} is not visual", shot.shot_id))),
        }
    }

    /// Describes one shot from its pixels. A described shot is returned
    /// from cache unless `force` is set.
    pub async fn describe_shot(
        &self,
        project: &Project,
        shot_id: &ShotId,
        force: bool,
    ) -> Result<Outcome<String>, PipelineError> {
        let shot = project
            .shots
            .get(shot_id)
            .ok_or_else(|| PipelineError::unknown("shot", shot_id))?;
        if shot.is_described() && !force {
            return Ok(Outcome::unchanged(shot.description.clone()));
        }
        let (media_label, parts) = self.describe_parts(shot)?;
        let schema = Schema::object(vec![("description", Schema::text(TextHint::ImageDescription))]);
        let story = context::story(project);
        let req = self
            .request(
                "describe_shot",
                "describe_shot",
                &[("media", media_label), ("context", &story)],
                schema,
                EXTRACTION,
            )?
            .parts(parts);
        let mut draft = JobDraft::new("describe_shot");
        let out: Described = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let description = out.description.trim().to_string();
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::ShotDescription {
                shot_id: shot_id.clone(),
                description: description.clone(),
            },
            vec![Mutation::DescribeShot {
                shot_id: shot_id.clone(),
                description: description.clone(),
            }],
        );
        Ok(Outcome {
            value: description,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Describes the given shots (default: all undescribed) concurrently.
    /// Failures are reported per shot and do not abort the rest.
    pub async fn describe_shots(
        &self,
        project: &Project,
        ids: Option<&[ShotId]>,
        force: bool,
    ) -> Result<Outcome<DescribeReport>, PipelineError> {
        let ids: Vec<ShotId> = match ids {
            Some(ids) => {
                for id in ids {
                    if !project.shots.contains_key(id) {
                        return Err(PipelineError::unknown("shot", id));
                    }
                }
                ids.to_vec()
            }
            None => project.shots.keys().cloned().collect(),
        };
        let results = join_all(ids.iter().map(|id| self.describe_shot(project, id, force))).await;
        let mut report = DescribeReport::default();
        let mut mutations = Vec::new();
        for (id, r) in ids.into_iter().zip(results) {
            match r {
                Ok(Outcome {
                    mutation: Some(m),
                    job_id,
                    ..
                }) => {
                    mutations.push(m);
                    report.job_ids.extend(job_id);
                    report.described.push(id);
                }
                Ok(_) => report.cached.push(id),
                Err(e) => report.failed.push(DescribeFailure {
                    shot_id: id,
                    code: e.code().into(),
                    message: e.to_string(),
                }),
            }
        }
        let mutation = (!mutations.is_empty()).then(|| Mutation::batch(mutations));
        Ok(Outcome {
            value: report,
            mutation,
            job_id: None,
        })
    }

    /// Groups shots (default: the ungrouped shots of the active version)
    /// into new scenes that partition them.
    pub async fn group_shots(&self, project: &Project, ids: Option<&[ShotId]>) -> Result<Outcome<Vec<SceneId>>, PipelineError> {
        let ungrouped = project.ungrouped_shots();
        let ids: Vec<ShotId> = ids.map(<[ShotId]>::to_vec).unwrap_or_else(|| ungrouped.clone());
        if ids.is_empty() {
            return Err(PipelineError::Precondition("no ungrouped shots to group".into()));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            let shot = project.shots.get(id).ok_or_else(|| PipelineError::unknown("shot", id))?;
            if !ungrouped.contains(id) {
                return Err(PipelineError::Precondition(format!("shot {id} already belongs to a scene")));
            }
            if !shot.is_described() {
                return Err(PipelineError::Precondition(format!("shot {id} has no description")));
            }
            if !seen.insert(id) {
                return Err(PipelineError::Precondition(format!("shot {id} listed twice")));
            }
        }
        let domain: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        let schema = Schema::object(vec![(
            "scenes",
            Schema::array(scene_schema(&domain), 1, Some(domain.len())).keyed(KeyRule::PartitionBy("shot_ids".into())),
        )]);
        let story = context::story(project);
        let shots = context::shots(project, &ids);
        let req = self.request(
            "group_shots",
            "group_shots",
            &[("context", &story), ("shots", &shots)],
            schema,
            IDEATION,
        )?;
        let mut draft = JobDraft::new("group_shots");
        let value = match self.ask(&mut draft, &req, |_| Ok(())).await {
            Ok(v) => v,
            Err(e) => {
                if let Some(raw) = last_answer(&e) {
                    let present = mentioned_ids(&raw);
                    let orphans: Vec<String> = domain.iter().filter(|id| !present.contains(id)).cloned().collect();
                    if !orphans.is_empty() {
                        return Err(PipelineError::IncompleteGrouping { orphans });
                    }
                }
                return Err(e.into());
            }
        };
        let grouping: Grouping = decode(value)?;
        let version = project.active();
        let base = version.scenes.len();
        let mut scene_ids: Vec<SceneId> = Vec::new();
        let mut effects = Vec::new();
        for (i, g) in grouping.scenes.into_iter().enumerate() {
            let id = fresh_scene_id(
                project,
                &scene_ids,
                &[&version.version_id.0, &g.shot_ids.join(","), "grouped"],
            );
            let mut scene = Scene::new(id.clone(), g.title.trim(), palette_color(base + i));
            scene.description = g.description.trim().to_string();
            scene.shots = g.shot_ids.into_iter().map(ShotId::new).collect();
            scene.origin = SceneOrigin::Grouped;
            effects.push(Mutation::AddScene {
                version_id: version.version_id.clone(),
                index: base + i,
                scene,
            });
            scene_ids.push(id);
        }
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Grouping {
                scenes: scene_ids.clone(),
            },
            effects,
        );
        Ok(Outcome {
            value: scene_ids,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Reorders the scenes of a version (default: active) and proposes
    /// connective scenes for the gaps. The order is applied; proposals wait
    /// for [`Studio::accept_scene_proposal`].
    pub async fn sequence_scenes(
        &self,
        project: &Project,
        version_id: Option<&VersionId>,
    ) -> Result<Outcome<ScenePlan>, PipelineError> {
        let version = match version_id {
            Some(v) => project.version(v).ok_or_else(|| PipelineError::unknown("version", v))?,
            None => project.active(),
        };
        if version.scenes.is_empty() {
            return Err(PipelineError::Precondition("version has no scenes to sequence".into()));
        }
        let ids: Vec<String> = version.scenes.iter().map(|s| s.to_string()).collect();
        let mut anchors = vec![START.to_string()];
        anchors.extend(ids.iter().cloned());
        let schema = Schema::object(vec![
            ("order", Schema::permutation(&ids)),
            (
                "proposals",
                Schema::array(
                    Schema::object(vec![
                        ("title", Schema::text(TextHint::Title)),
                        ("description", Schema::text(TextHint::Sentence)),
                        ("after_scene", Schema::one_of(&anchors)),
                    ]),
                    0,
                    Some(MAX_SCENE_PROPOSALS),
                ),
            ),
        ]);
        let story = context::story(project);
        let scenes = context::scenes(project, version);
        let max = MAX_SCENE_PROPOSALS.to_string();
        let req = self.request(
            "sequence_scenes",
            "sequence_scenes",
            &[("context", &story), ("scenes", &scenes), ("max_proposals", &max)],
            schema,
            IDEATION,
        )?;
        let mut draft = JobDraft::new("sequence_scenes");
        let value = self.ask(&mut draft, &req, |_| Ok(())).await.map_err(permutation_error)?;
        let seq: Sequence = decode(value)?;
        let order: Vec<SceneId> = seq.order.into_iter().map(SceneId::new).collect();
        let proposals: Vec<NewSceneProposal> = seq
            .proposals
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let after = (p.after_scene != START).then(|| SceneId::new(p.after_scene));
                let insert_index = after
                    .as_ref()
                    .and_then(|a| order.iter().position(|s| s == a))
                    .map_or(0, |k| k + 1);
                NewSceneProposal {
                    title: p.title.trim().to_string(),
                    description: p.description.trim().to_string(),
                    color: palette_color(order.len() + i),
                    insert_index,
                    after_scene: after,
                }
            })
            .collect();
        let mut effects = Vec::new();
        if order != version.scenes {
            effects.push(Mutation::ReorderScenes {
                version_id: version.version_id.clone(),
                order: order.clone(),
            });
        }
        let plan = ScenePlan { order, proposals };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::SceneSequence {
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

    /// Proposes a scene for the gap between two adjacent scenes of the
    /// active version. `None` stands for the story start or end.
    pub async fn contextual_scene(
        &self,
        project: &Project,
        before: Option<&SceneId>,
        after: Option<&SceneId>,
    ) -> Result<Outcome<NewSceneProposal>, PipelineError> {
        let version = project.active();
        let index_of = |id: &SceneId| -> Result<usize, PipelineError> {
            if !project.scenes.contains_key(id) {
                return Err(PipelineError::unknown("scene", id));
            }
            version
                .scenes
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| PipelineError::Precondition(format!("scene {id} is not in the active version")))
        };
        let n = version.scenes.len();
        let insert_index = match (before, after) {
            (Some(a), Some(b)) if a == b => {
                return Err(PipelineError::Precondition("previous and next scene are the same".into()))
            }
            (Some(a), Some(b)) => {
                let (i, j) = (index_of(a)?, index_of(b)?);
                if j != i + 1 {
                    return Err(PipelineError::Precondition(format!("scenes {a} and {b} are not adjacent")));
                }
                j
            }
            (None, Some(b)) => {
                if index_of(b)? != 0 {
                    return Err(PipelineError::Precondition(format!("scene {b} is not the first scene")));
                }
                0
            }
            (Some(a), None) => {
                let i = index_of(a)?;
                if i + 1 != n {
                    return Err(PipelineError::Precondition(format!("scene {a} is not the last scene")));
                }
                n
            }
            (None, None) if n == 0 => 0,
            (None, None) => return Err(PipelineError::Precondition("name at least one neighboring scene".into())),
        };
        let block = |id: Option<&SceneId>, edge: &str| match id.and_then(|i| project.scenes.get(i)) {
            Some(s) => context::scene(project, s),
            None => format!("(none: this is the {edge} of the story)"),
        };
        let before_text = block(before, "start");
        let after_text = block(after, "end");
        let story = context::story(project);
        let scenes = context::scenes(project, version);
        let schema = Schema::object(vec![
            ("title", Schema::text(TextHint::Title)),
            ("description", Schema::text(TextHint::Sentence)),
        ]);
        let req = self.request(
            "contextual_scene",
            "contextual_scene",
            &[
                ("context", &story),
                ("before", &before_text),
                ("after", &after_text),
                ("scenes", &scenes),
            ],
            schema,
            IDEATION,
        )?;
        let mut draft = JobDraft::new("contextual_scene");
        let idea: Titled = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let proposal = NewSceneProposal {
            title: idea.title.trim().to_string(),
            description: idea.description.trim().to_string(),
            color: palette_color(n),
            insert_index,
            after_scene: before.cloned(),
        };
        draft.explain(proposal.description.clone());
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::ContextualScene {
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

    /// Turns a pending scene proposal into an empty generated scene of the
    /// active version, placed after the scene it was proposed to follow.
    pub fn accept_scene_proposal(
        &self,
        project: &Project,
        job_id: &JobId,
        index: usize,
    ) -> Result<Outcome<SceneId>, PipelineError> {
        accept_scene_proposal(project, job_id, index)
    }

    /// Builds an alternative version from existing shots following
    /// `prompt`. Shots may be left out but never invented.
    pub async fn create_story_variation(&self, project: &Project, prompt: &str) -> Result<Outcome<VersionId>, PipelineError> {
        if project.shots.is_empty() {
            return Err(PipelineError::Precondition("project has no shots".into()));
        }
        let described: Vec<ShotId> = project
            .shots
            .values()
            .filter(|s| s.is_described())
            .map(|s| s.shot_id.clone())
            .collect();
        if described.is_empty() {
            return Err(PipelineError::Precondition("no shot has a description yet".into()));
        }
        let domain: Vec<String> = described.iter().map(|s| s.to_string()).collect();
        let schema = Schema::object(vec![
            ("name", Schema::text(TextHint::Title)),
            (
                "scenes",
                Schema::array(scene_schema(&domain), 1, None).keyed(KeyRule::DisjointBy("shot_ids".into())),
            ),
        ]);
        let story = context::story(project);
        let scenes = context::scenes(project, project.active());
        let shots = context::shots(project, &described);
        let direction = if prompt.trim().is_empty() {
            "(no specific direction: propose a fresh but faithful regrouping)".to_string()
        } else {
            prompt.trim().to_string()
        };
        let req = self.request(
            "story_variation",
            "story_variation",
            &[
                ("prompt", &direction),
                ("context", &story),
                ("scenes", &scenes),
                ("shots", &shots),
            ],
            schema,
            IDEATION,
        )?;
        let mut draft = JobDraft::new("story_variation");
        let value = match self.ask(&mut draft, &req, |_| Ok(())).await {
            Ok(v) => v,
            Err(e) => {
                if let Some(raw) = last_answer(&e) {
                    let mut unknown: Vec<String> = mentioned_ids(&raw).into_iter().filter(|id| !domain.contains(id)).collect();
                    unknown.dedup();
                    if !unknown.is_empty() {
                        return Err(PipelineError::UnknownShotId { ids: unknown });
                    }
                }
                return Err(e.into());
            }
        };
        let variation: Variation = decode(value)?;
        let version_id = unique_id(
            VersionId::derive(&[&project.project_id, prompt, &project.versions.len().to_string()]),
            |s| project.versions.iter().any(|v| v.version_id.as_str() == s),
        );
        let mut scenes: Vec<Scene> = Vec::new();
        for (i, g) in variation.scenes.into_iter().enumerate() {
            let taken: Vec<SceneId> = scenes.iter().map(|s| s.scene_id.clone()).collect();
            let id = fresh_scene_id(project, &taken, &[&version_id.0, &i.to_string()]);
            let mut scene = Scene::new(id, g.title.trim(), palette_color(i));
            scene.description = g.description.trim().to_string();
            scene.shots = g.shot_ids.into_iter().map(ShotId::new).collect();
            scene.origin = SceneOrigin::Variation;
            scenes.push(scene);
        }
        let name = match variation.name.trim() {
            "" => format!("Variation {}", project.versions.len()),
            n => n.to_string(),
        };
        let version = StoryVersion {
            version_id: version_id.clone(),
            name,
            scenes: scenes.iter().map(|s| s.scene_id.clone()).collect(),
            origin: VersionOrigin::PromptedVariation,
            variation_prompt: Some(prompt.to_string()),
        };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Variation {
                version_id: version_id.clone(),
            },
            vec![Mutation::AddVersion { version, scenes }],
        );
        Ok(Outcome {
            value: version_id,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Summarizes strengths and weaknesses of each version, in the order
    /// given (default: all versions).
    pub async fn compare_versions(&self, project: &Project, ids: &[VersionId]) -> Result<Outcome<CompareReport>, PipelineError> {
        let ids: Vec<VersionId> = if ids.is_empty() {
            project.versions.iter().map(|v| v.version_id.clone()).collect()
        } else {
            ids.to_vec()
        };
        let mut versions = Vec::new();
        for id in &ids {
            let v = project.version(id).ok_or_else(|| PipelineError::unknown("version", id))?;
            if versions.iter().any(|x: &&StoryVersion| &x.version_id == id) {
                return Err(PipelineError::Precondition(format!("version {id} listed twice")));
            }
            versions.push(v);
        }
        if versions.len() < 2 {
            return Err(PipelineError::Precondition("comparison needs at least two versions".into()));
        }
        let domain: Vec<String> = ids.iter().map(|v| v.to_string()).collect();
        let points = |min| Schema::array(Schema::text(TextHint::Sentence), min, Some(3));
        let schema = Schema::object(vec![(
            "entries",
            Schema::array(
                Schema::object(vec![
                    ("version_id", Schema::one_of(&domain)),
                    ("summary", Schema::text(TextHint::Sentence)),
                    ("strengths", points(1)),
                    ("weaknesses", points(1)),
                ]),
                domain.len(),
                Some(domain.len()),
            )
            .keyed(KeyRule::UniqueBy("version_id".into())),
        )]);
        let story = context::story(project);
        let blocks = versions
            .iter()
            .map(|v| context::version(project, v))
            .collect::<Vec<_>>()
            .join("\n\n");
        let req = self.request(
            "compare_versions",
            "compare_versions",
            &[("context", &story), ("versions", &blocks)],
            schema,
            EXTRACTION,
        )?;
        let mut draft = JobDraft::new("compare_versions");
        let cmp: Comparison = decode(self.ask(&mut draft, &req, |_| Ok(())).await?)?;
        let entries = versions
            .iter()
            .map(|v| {
                let a = cmp
                    .entries
                    .iter()
                    .find(|e| e.version_id == v.version_id.as_str())
                    .ok_or_else(|| PipelineError::BadOutput(format!("no entry for {}", v.version_id)))?;
                Ok(CompareEntry {
                    version_id: v.version_id.clone(),
                    name: v.name.clone(),
                    summary: a.summary.trim().to_string(),
                    strengths: a.strengths.clone(),
                    weaknesses: a.weaknesses.clone(),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let report = CompareReport { entries };
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Comparison { report: report.clone() },
            Vec::new(),
        );
        Ok(Outcome {
            value: report,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }
}

/// Maps exhausted retries over an order field to a permutation violation.
pub(crate) fn permutation_error(e: ProviderError) -> PipelineError {
    match exhausted_error(&e) {
        Some(msg) if msg.starts_with("$.order") => PipelineError::PermutationViolation(msg.to_string()),
        _ => e.into(),
    }
}

pub fn accept_scene_proposal(project: &Project, job_id: &JobId, index: usize) -> Result<Outcome<SceneId>, PipelineError> {
    let job = project
        .jobs
        .get(job_id)
        .ok_or_else(|| PipelineError::unknown("job", job_id))?;
    let proposals: Vec<&NewSceneProposal> = match &job.output {
        JobOutput::SceneSequence { proposals, .. } => proposals.iter().collect(),
        JobOutput::ContextualScene { proposal } => vec![proposal],
        _ => return Err(PipelineError::Precondition(format!("job {job_id} has no scene proposals"))),
    };
    let p = proposals
        .get(index)
        .ok_or_else(|| PipelineError::unknown("proposal", format!("{job_id}#{index}")))?;
    let version = project.active();
    let index_in_version = match &p.after_scene {
        Some(a) => version
            .scenes
            .iter()
            .position(|s| s == a)
            .map_or(p.insert_index.min(version.scenes.len()), |k| k + 1),
        None => 0,
    };
    let id = fresh_scene_id(project, &[], &[job_id.as_str(), &index.to_string()]);
    let mut scene = Scene::new(id.clone(), p.title.clone(), p.color.clone());
    scene.description = p.description.clone();
    scene.origin = SceneOrigin::Generated;
    Ok(Outcome::applying(
        id,
        Mutation::AddScene {
            version_id: version.version_id.clone(),
            index: index_in_version,
            scene,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{apply, kit, real_project};
    use super::*;
    use crate::providers::Modality;

    #[tokio::test]
    async fn describe_is_deterministic_and_cached() {
        let k = kit();
        let mut p = real_project(&k, 1, false);
        let id = ShotId::new("shot-1");
        p.shots.get_mut(&id).unwrap().description.clear();
        let a = k.studio.describe_shot(&p, &id, false).await.unwrap();
        let b = k.studio.describe_shot(&p, &id, false).await.unwrap();
        assert_eq!(a.value, b.value);
        let checksum = &p.shots[&id].asset.checksum;
        assert!(a.value.contains(&checksum[..8]), "{}", a.value);
        let p2 = apply(&p, &a.mutation);
        assert_eq!(p2.shots[&id].description, a.value);
        assert!(p2.jobs.contains_key(a.job_id.as_ref().unwrap()));
        k.mock.clear_calls();
        let cached = k.studio.describe_shot(&p2, &id, false).await.unwrap();
        assert!(cached.mutation.is_none());
        assert!(k.mock.calls().is_empty());
    }

    #[tokio::test]
    async fn video_shots_are_described_from_three_frames() {
        let k = kit();
        let mut p = real_project(&k, 0, false);
        let poster = media::placeholder_png(32, 18, [1, 2, 3], "poster");
        let asset = k
            .studio
            .hub()
            .assets()
            .put(&media::placeholder_mp4(4000, 320, 180, &poster, "v"), "mp4")
            .unwrap();
        p.assets.insert(asset.asset_id.clone(), asset.clone());
        let shot = crate::model::fixtures::captured_shot("shot-v", &asset, "");
        p.shots.insert(shot.shot_id.clone(), shot);
        k.studio.describe_shot(&p, &ShotId::new("shot-v"), false).await.unwrap();
        let call = &k.mock.calls()[0];
        assert_eq!(call.image_checksums.len(), 3);
        assert!(call.image_checksums.iter().all(|c| c == &asset.checksum));
    }

    #[tokio::test]
    async fn unreadable_asset_is_a_media_error() {
        let k = kit();
        let p = crate::model::fixtures::two_scene_project();
        let e = k.studio.describe_shot(&p, &ShotId::new("shot-1"), true).await.unwrap_err();
        assert_eq!(e.code(), "media_probe_error");
    }

    #[tokio::test]
    async fn grouping_partitions_the_input() {
        let k = kit();
        let p = real_project(&k, 6, false);
        let out = k.studio.group_shots(&p, None).await.unwrap();
        let p2 = apply(&p, &out.mutation);
        let mut members: Vec<ShotId> = out.value.iter().flat_map(|s| p2.scenes[s].shots.clone()).collect();
        assert!(out.value.iter().all(|s| !p2.scenes[s].shots.is_empty()));
        members.sort();
        let mut all: Vec<ShotId> = p.shots.keys().cloned().collect();
        all.sort();
        assert_eq!(members, all);
        assert!(p2.ungrouped_shots().is_empty());
    }

    #[tokio::test]
    async fn singleton_grouping_and_undescribed_precondition() {
        let k = kit();
        let mut p = real_project(&k, 1, false);
        let out = k.studio.group_shots(&p, None).await.unwrap();
        assert_eq!(out.value.len(), 1);
        p.shots.values_mut().for_each(|s| s.description.clear());
        let e = k.studio.group_shots(&p, None).await.unwrap_err();
        assert_eq!(e.code(), "precondition_failed");
    }

    #[tokio::test]
    async fn sequencing_yields_a_permutation_and_proposals_can_be_accepted() {
        let k = kit();
        let p = real_project(&k, 6, false);
        let p = apply(&p, &k.studio.group_shots(&p, None).await.unwrap().mutation);
        let before: BTreeSet<SceneId> = p.active().scenes.iter().cloned().collect();
        let out = k.studio.sequence_scenes(&p, None).await.unwrap();
        let after: BTreeSet<SceneId> = out.value.order.iter().cloned().collect();
        assert_eq!(before, after);
        assert_eq!(out.value.order.len(), before.len());
        assert!(out.value.proposals.len() <= MAX_SCENE_PROPOSALS);
        let p2 = apply(&p, &out.mutation);
        assert_eq!(p2.active().scenes, out.value.order);
        if let Some(prop) = out.value.proposals.first() {
            assert!(!prop.title.is_empty());
            let acc = accept_scene_proposal(&p2, out.job_id.as_ref().unwrap(), 0).unwrap();
            let p3 = apply(&p2, &acc.mutation);
            let pos = p3.active().scenes.iter().position(|s| s == &acc.value).unwrap();
            assert_eq!(pos, prop.insert_index);
            assert_eq!(p3.scenes[&acc.value].origin, SceneOrigin::Generated);
            assert!(p3.scenes[&acc.value].shots.is_empty());
        }
    }

    #[tokio::test]
    async fn contextual_scene_checks_adjacency() {
        let k = kit();
        let p = crate::model::fixtures::two_scene_project();
        let a = SceneId::new("scene-a");
        let b = SceneId::new("scene-b");
        let out = k.studio.contextual_scene(&p, Some(&a), Some(&b)).await.unwrap();
        assert_eq!(out.value.insert_index, 1);
        assert!(!out.value.description.is_empty());
        let first = k.studio.contextual_scene(&p, None, Some(&a)).await.unwrap();
        assert_eq!(first.value.insert_index, 0);
        for (x, y) in [(Some(&a), Some(&a)), (Some(&b), Some(&a)), (None, Some(&b))] {
            assert_eq!(
                k.studio.contextual_scene(&p, x, y).await.unwrap_err().code(),
                "precondition_failed"
            );
        }
    }

    #[tokio::test]
    async fn variation_uses_only_existing_shots() {
        let k = kit();
        let p = real_project(&k, 5, true);
        let out = k.studio.create_story_variation(&p, "focus on nature imagery").await.unwrap();
        let p2 = apply(&p, &out.mutation);
        let v = p2.version(&out.value).unwrap();
        assert_eq!(v.origin, VersionOrigin::PromptedVariation);
        assert_eq!(v.variation_prompt.as_deref(), Some("focus on nature imagery"));
        for s in &v.scenes {
            assert!(p2.scenes[s].shots.iter().all(|id| p.shots.contains_key(id)));
        }
        assert!(k.studio.create_story_variation(&p, "").await.is_ok());
        let empty = Project::new("e");
        assert_eq!(
            k.studio.create_story_variation(&empty, "x").await.unwrap_err().code(),
            "precondition_failed"
        );
    }

    #[tokio::test]
    async fn comparison_keeps_order_and_needs_two_versions() {
        let k = kit();
        let p = real_project(&k, 4, true);
        assert_eq!(
            k.studio.compare_versions(&p, &[]).await.unwrap_err().code(),
            "precondition_failed"
        );
        let mut p = p;
        for prompt in ["calmer", "faster"] {
            let o = k.studio.create_story_variation(&p, prompt).await.unwrap();
            p = apply(&p, &o.mutation);
        }
        let ids: Vec<VersionId> = p.versions.iter().rev().map(|v| v.version_id.clone()).collect();
        let r = k.studio.compare_versions(&p, &ids).await.unwrap().value;
        let got: Vec<VersionId> = r.entries.iter().map(|e| e.version_id.clone()).collect();
        assert_eq!(got, ids);
        assert!(r.entries.iter().all(|e| !e.strengths.is_empty() && !e.weaknesses.is_empty()));
        assert!(k.mock.calls().iter().all(|c| c.modality == Modality::Text));
    }
}
