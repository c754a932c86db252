//! Script-side operations: suggestions, notes, refinement, alignment and audio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{context, decode, exhausted_error, JobDraft, Outcome, PipelineError, Studio, EXTRACTION, IDEATION};
use crate::alignment::{resolve_excerpts, scene_timings, single_shot};
use crate::ids::{unique_id, JobId, SceneId, ShotId, SuggestionId};
use crate::model::{
    AssetRef, Category, Correspondence, JobOutput, MediaCandidates, Mutation, Project, Script, Suggestion, SuggestionLevel,
    SuggestionStatus,
};
use crate::providers::{KeyRule, MusicRequest, Schema, SpeechRequest, TextHint};

/// Allowed number of story-level suggestions per run.
pub const SUGGESTION_RANGE_STORY: (usize, usize) = (3, 5);
/// Allowed number of scene-level suggestions per run.
pub const SUGGESTION_RANGE_SCENE: (usize, usize) = (1, 2);
/// Options returned by `refine_text`.
pub const REFINEMENTS: usize = 3;
pub const NARRATOR_VOICE: &str = "narrator";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SyncReport {
    pub segments: BTreeMap<SceneId, String>,
    /// Scenes whose script was written.
    pub applied: Vec<SceneId>,
    /// Scenes with an existing script left untouched for lack of confirmation.
    pub skipped: Vec<SceneId>,
}

#[derive(Deserialize)]
struct Idea {
    category: String,
    text: String,
    explanation: String,
    tips: Vec<String>,
    #[serde(default)]
    relevant_shot_ids: Vec<String>,
}

#[derive(Deserialize)]
struct Ideas {
    suggestions: Vec<Idea>,
}

#[derive(Deserialize)]
struct Segment {
    scene_id: String,
    text: String,
}

#[derive(Deserialize)]
struct Segments {
    segments: Vec<Segment>,
}

#[derive(Deserialize)]
struct Options {
    options: Vec<String>,
}

#[derive(Deserialize)]
struct Match {
    shot_id: String,
    excerpt: String,
}

#[derive(Deserialize)]
struct Matches {
    items: Vec<Match>,
}

fn suggestion_schema(category: Option<Category>, range: (usize, usize), shots: Option<&[String]>) -> Schema {
    let categories: Vec<&str> = match category {
        Some(c) => vec![c.as_str()],
        None => Category::ALL.iter().map(|c| c.as_str()).collect(),
    };
    let mut fields = vec![
        ("category", Schema::one_of(&categories)),
        ("text", Schema::text(TextHint::Question)),
        ("explanation", Schema::text(TextHint::Sentence)),
        ("tips", Schema::array(Schema::text(TextHint::Sentence), 1, Some(2))),
    ];
    if let Some(ids) = shots {
        fields.push(("relevant_shot_ids", Schema::id_set(ids, 1, Some(ids.len()))));
    }
    Schema::object(vec![(
        "suggestions",
        Schema::array(Schema::object(fields), range.0, Some(range.1)),
    )])
}

/// Rejects answers that repeat a disliked suggestion verbatim.
fn reject_disliked(disliked: &[String]) -> impl Fn(&Value) -> Result<(), String> + '_ {
    move |v: &Value| {
        for (i, s) in v["suggestions"].as_array().into_iter().flatten().enumerate() {
            if let Some(t) = s["text"].as_str() {
                if disliked.iter().any(|d| d.trim() == t.trim()) {
                    return Err(format!("$.suggestions[{i}].text: repeats a disliked suggestion"));
                }
            }
        }
        Ok(())
    }
}

fn count_error(e: crate::providers::ProviderError) -> PipelineError {
    match exhausted_error(&e) {
        Some(m) if m.contains("items, at") => PipelineError::CountViolation(m.to_string()),
        _ => e.into(),
    }
}

impl Studio {
    async fn suggest(
        &self,
        project: &Project,
        scene_id: Option<&SceneId>,
        category: Option<Category>,
    ) -> Result<Outcome<Vec<Suggestion>>, PipelineError> {
        let disliked = &project.disliked_suggestions;
        let disliked_text = context::list_or_none(disliked);
        let category_text = match category {
            Some(c) => format!("{c}: {}", c.description()),
            None => "any of structure, plot, imagery, character, dialogue, pacing, emotion, setting, theme, other".into(),
        };
        let story = context::story(project);
        let (level, range, req) = match scene_id {
            None => {
                let described: Vec<ShotId> = project
                    .shots
                    .values()
                    .filter(|s| s.is_described())
                    .map(|s| s.shot_id.clone())
                    .collect();
                if described.is_empty() {
                    return Err(PipelineError::Precondition("no shot has a description yet".into()));
                }
                let range = SUGGESTION_RANGE_STORY;
                let scenes = context::scenes(project, project.active());
                let shots = context::shots(project, &described);
                let req = self.request(
                    "story_suggestions",
                    "story_suggestions",
                    &[
                        ("category", &category_text),
                        ("disliked", &disliked_text),
                        ("context", &story),
                        ("scenes", &scenes),
                        ("shots", &shots),
                    ],
                    suggestion_schema(category, range, None),
                    IDEATION,
                )?;
                (SuggestionLevel::Story, range, req)
            }
            Some(id) => {
                let scene = project.scenes.get(id).ok_or_else(|| PipelineError::unknown("scene", id))?;
                let range = SUGGESTION_RANGE_SCENE;
                let ids: Vec<String> = scene.shots.iter().map(|s| s.to_string()).collect();
                let block = context::scene(project, scene);
                let shots = context::shots(project, &scene.shots);
                let req = self.request(
                    "scene_suggestions",
                    "scene_suggestions",
                    &[
                        ("category", &category_text),
                        ("disliked", &disliked_text),
                        ("context", &story),
                        ("scene", &block),
                        ("shots", &shots),
                    ],
                    suggestion_schema(category, range, (!ids.is_empty()).then_some(ids.as_slice())),
                    IDEATION,
                )?;
                (SuggestionLevel::Scene, range, req)
            }
        };
        let mut draft = JobDraft::new(match level {
            SuggestionLevel::Story => "story_suggestions",
            SuggestionLevel::Scene => "scene_suggestions",
        });
        let ideas: Ideas = decode(
            self.ask(&mut draft, &req, reject_disliked(disliked))
                .await
                .map_err(count_error)?,
        )?;
        let kept: Vec<Idea> = ideas
            .suggestions
            .into_iter()
            .filter(|i| !disliked.iter().any(|d| d.trim() == i.text.trim()))
            .collect();
        if kept.len() < range.0 || kept.len() > range.1 {
            return Err(PipelineError::CountViolation(format!(
                "{} suggestions after filtering, expected {}-{}",
                kept.len(),
                range.0,
                range.1
            )));
        }
        let mut suggestions: Vec<Suggestion> = Vec::new();
        for (i, idea) in kept.into_iter().enumerate() {
            let scope = scene_id.map_or("story", |s| s.as_str());
            let id = unique_id(SuggestionId::derive(&[scope, &idea.text, &i.to_string()]), |s| {
                project.suggestions.iter().any(|x| x.suggestion_id.as_str() == s)
                    || suggestions.iter().any(|x| x.suggestion_id.as_str() == s)
            });
            let category = Category::parse(&idea.category)
                .ok_or_else(|| PipelineError::BadOutput(format!("unknown category {:?}", idea.category)))?;
            draft.explain(idea.explanation.clone());
            suggestions.push(Suggestion {
                suggestion_id: id,
                level,
                scene_id: scene_id.cloned(),
                category,
                text: idea.text.trim().to_string(),
                explanation: idea.explanation.trim().to_string(),
                tips: idea.tips.iter().map(|t| t.trim().to_string()).collect(),
                relevant_shot_ids: idea.relevant_shot_ids.into_iter().map(ShotId::new).collect(),
                status: SuggestionStatus::Active,
            });
        }
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Suggestions {
                suggestions: suggestions.iter().map(|s| s.suggestion_id.clone()).collect(),
            },
            vec![Mutation::AddSuggestions {
                suggestions: suggestions.clone(),
            }],
        );
        Ok(Outcome {
            value: suggestions,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Three to five Socratic suggestions for the whole story.
    pub async fn story_suggestions(
        &self,
        project: &Project,
        category: Option<Category>,
    ) -> Result<Outcome<Vec<Suggestion>>, PipelineError> {
        self.suggest(project, None, category).await
    }

    /// One or two suggestions for a scene, each tied to shots of that scene.
    pub async fn scene_suggestions(
        &self,
        project: &Project,
        scene_id: &SceneId,
        category: Option<Category>,
    ) -> Result<Outcome<Vec<Suggestion>>, PipelineError> {
        self.suggest(project, Some(scene_id), category).await
    }

    /// Splits the story notes into per-scene script segments. Existing
    /// scripts are replaced only when `confirm` is set.
    pub async fn sync_notes(&self, project: &Project, confirm: bool) -> Result<Outcome<SyncReport>, PipelineError> {
        let notes = project.story_context.trim();
        if notes.is_empty() {
            return Err(PipelineError::Precondition("story notes are empty".into()));
        }
        let scenes = project.active_scenes();
        if scenes.is_empty() {
            return Err(PipelineError::Precondition("active version has no scenes".into()));
        }
        let mut draft = None;
        let segments: BTreeMap<SceneId, String> = if scenes.len() == 1 {
            BTreeMap::from([(scenes[0].scene_id.clone(), notes.to_string())])
        } else {
            let ids: Vec<String> = scenes.iter().map(|s| s.scene_id.to_string()).collect();
            let schema = Schema::object(vec![(
                "segments",
                Schema::array(
                    Schema::object(vec![
                        ("scene_id", Schema::one_of(&ids)),
                        (
                            "text",
                            Schema::String {
                                enum_values: None,
                                min_len: 0,
                                hint: TextHint::PassageOf(notes.to_string()),
                            },
                        ),
                    ]),
                    ids.len(),
                    Some(ids.len()),
                )
                .keyed(KeyRule::UniqueBy("scene_id".into())),
            )]);
            let listing = context::scenes(project, project.active());
            let req = self.request(
                "sync_notes",
                "sync_notes",
                &[("notes", notes), ("scenes", &listing)],
                schema,
                EXTRACTION,
            )?;
            let mut d = JobDraft::new("sync_notes");
            let out: Segments = decode(self.ask(&mut d, &req, |_| Ok(())).await?)?;
            draft = Some(d);
            out.segments
                .into_iter()
                .map(|s| (SceneId::new(s.scene_id), s.text.trim().to_string()))
                .collect()
        };
        let mut report = SyncReport {
            segments,
            ..Default::default()
        };
        let mut effects = Vec::new();
        for scene in &scenes {
            let text = report.segments.get(&scene.scene_id).cloned().unwrap_or_default();
            if !scene.script.is_blank() && !confirm {
                report.skipped.push(scene.scene_id.clone());
                continue;
            }
            if scene.script.text != text {
                effects.push(Mutation::SetSceneScript {
                    scene_id: scene.scene_id.clone(),
                    script: Script::plain(text),
                });
            }
            report.applied.push(scene.scene_id.clone());
        }
        match draft {
            None => Ok(Outcome {
                value: report,
                mutation: (!effects.is_empty()).then(|| Mutation::batch(effects)),
                job_id: None,
            }),
            Some(d) => {
                let (job_id, m) = d.finish(
                    project,
                    self.seed(),
                    JobOutput::ScriptSync {
                        segments: report.segments.clone(),
                        applied: report.applied.clone(),
                    },
                    effects,
                );
                Ok(Outcome {
                    value: report,
                    mutation: Some(m),
                    job_id: Some(job_id),
                })
            }
        }
    }

    /// Exactly three distinct rewrites of `original`.
    pub async fn refine_text(
        &self,
        project: &Project,
        original: &str,
        prompt: Option<&str>,
    ) -> Result<Outcome<Vec<String>>, PipelineError> {
        if original.trim().is_empty() {
            return Err(PipelineError::Precondition("text to refine is empty".into()));
        }
        let schema = Schema::object(vec![(
            "options",
            Schema::Array {
                items: Box::new(Schema::text(TextHint::RewriteOf(original.to_string()))),
                min: REFINEMENTS,
                max: Some(REFINEMENTS),
                unique: true,
                key: None,
            },
        )]);
        let story = context::story(project);
        let direction = context::or_none(prompt);
        let req = self.request(
            "refine_text",
            "refine_text",
            &[("prompt", &direction), ("context", &story), ("original", original.trim())],
            schema,
            IDEATION,
        )?;
        let distinct = |v: &Value| {
            let mut seen: Vec<String> = Vec::new();
            for (i, o) in v["options"].as_array().into_iter().flatten().enumerate() {
                let norm = o.as_str().unwrap_or_default().trim().to_lowercase();
                if seen.contains(&norm) {
                    return Err(format!("$.options[{i}]: same as an earlier option"));
                }
                seen.push(norm);
            }
            Ok(())
        };
        let mut draft = JobDraft::new("refine_text");
        let out: Options = match self.ask(&mut draft, &req, distinct).await {
            Ok(v) => decode(v)?,
            Err(e) => {
                return Err(match exhausted_error(&e) {
                    Some(m) if m.starts_with("$.options") => PipelineError::DistinctnessViolation(m.to_string()),
                    _ => e.into(),
                })
            }
        };
        let options: Vec<String> = out.options.iter().map(|o| o.trim().to_string()).collect();
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Refinements {
                original: original.to_string(),
                options: options.clone(),
            },
            Vec::new(),
        );
        Ok(Outcome {
            value: options,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Maps the scene's shots onto spans of its script. A single shot takes
    /// the whole script without a model call.
    pub async fn auto_align(&self, project: &Project, scene_id: &SceneId) -> Result<Outcome<Vec<Correspondence>>, PipelineError> {
        let scene = project
            .scenes
            .get(scene_id)
            .ok_or_else(|| PipelineError::unknown("scene", scene_id))?;
        if scene.script.is_blank() {
            return Err(PipelineError::EmptyScript);
        }
        if scene.shots.is_empty() {
            return Err(PipelineError::Precondition(format!("scene {scene_id} has no shots")));
        }
        let set = |c: Vec<Correspondence>| Mutation::SetCorrespondences {
            scene_id: scene_id.clone(),
            correspondences: c,
        };
        if scene.shots.len() == 1 {
            let c = single_shot(scene)?;
            return Ok(Outcome::applying(c.clone(), set(c)));
        }
        let text = scene.script.text.clone();
        let ids: Vec<String> = scene.shots.iter().map(|s| s.to_string()).collect();
        let schema = Schema::object(vec![(
            "items",
            Schema::array(
                Schema::object(vec![
                    ("shot_id", Schema::one_of(&ids)),
                    ("excerpt", Schema::text(TextHint::ExcerptOf(text.clone()))),
                ]),
                1,
                Some(ids.len()),
            )
            .keyed(KeyRule::UniqueBy("shot_id".into())),
        )]);
        let shots = context::shots(project, &scene.shots);
        let req = self.request(
            "align_script",
            "align_script",
            &[("script", &text), ("shots", &shots)],
            schema,
            EXTRACTION,
        )?;
        let pairs = |v: &Value| -> Vec<(ShotId, String)> {
            v["items"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|m| {
                    (
                        ShotId::new(m["shot_id"].as_str().unwrap_or_default()),
                        m["excerpt"].as_str().unwrap_or_default().to_string(),
                    )
                })
                .collect()
        };
        let resolves = |v: &Value| match resolve_excerpts(&text, &pairs(v)) {
            Ok(c) if c.is_empty() => Err("$.items: no excerpt matched the script".to_string()),
            Ok(_) => Ok(()),
            Err(e) => Err(e.replacen("$[", "$.items[", 1)),
        };
        let mut draft = JobDraft::new("align_script");
        let value = match self.ask(&mut draft, &req, resolves).await {
            Ok(v) => v,
            Err(e) => {
                return Err(match exhausted_error(&e) {
                    Some(m) if m.contains("excerpt") => PipelineError::SpanViolation(m.to_string()),
                    _ => e.into(),
                })
            }
        };
        let matches: Matches = decode(value)?;
        let items: Vec<(ShotId, String)> = matches
            .items
            .into_iter()
            .map(|m| (ShotId::new(m.shot_id), m.excerpt))
            .collect();
        let correspondences = resolve_excerpts(&text, &items).map_err(PipelineError::SpanViolation)?;
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Alignment {
                scene_id: scene_id.clone(),
                correspondences: correspondences.clone(),
            },
            vec![set(correspondences.clone())],
        );
        Ok(Outcome {
            value: correspondences,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Voices the scene script and attaches it as the scene narration.
    pub async fn narration(&self, project: &Project, scene_id: &SceneId) -> Result<Outcome<AssetRef>, PipelineError> {
        let scene = project
            .scenes
            .get(scene_id)
            .ok_or_else(|| PipelineError::unknown("scene", scene_id))?;
        if scene.script.is_blank() {
            return Err(PipelineError::EmptyScript);
        }
        let req = SpeechRequest {
            script: scene.script.text.trim().to_string(),
            voice: NARRATOR_VOICE.into(),
            seed: None,
        };
        let mut draft = JobDraft::new("narration");
        draft.record(
            "narration",
            &format!("voice: {}", req.voice),
            &[crate::providers::Part::text(&req.script)],
        );
        let result = self.hub().synthesize_speech(&req).await?;
        let asset = result
            .outputs
            .into_iter()
            .next()
            .ok_or_else(|| PipelineError::BadOutput("no audio".into()))?;
        draft.candidates(std::slice::from_ref(&asset));
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Narration {
                scene_id: scene_id.clone(),
                asset_id: asset.asset_id.clone(),
            },
            vec![Mutation::SetSceneNarration {
                scene_id: scene_id.clone(),
                narration: Some(asset.clone()),
            }],
        );
        Ok(Outcome {
            value: asset,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }

    /// Background music candidates for a scene. With a single candidate it
    /// is attached right away; otherwise pick one with [`select_music`].
    pub async fn music(
        &self,
        project: &Project,
        scene_id: &SceneId,
        duration_s: Option<f64>,
        prompt: Option<&str>,
        n: Option<u32>,
    ) -> Result<Outcome<MediaCandidates>, PipelineError> {
        let scene = project
            .scenes
            .get(scene_id)
            .ok_or_else(|| PipelineError::unknown("scene", scene_id))?;
        let n = n.unwrap_or(1);
        if n == 0 {
            return Err(PipelineError::Precondition("n must be at least 1".into()));
        }
        let duration_s = match duration_s {
            Some(d) => d,
            None => {
                let ms: u64 = scene_timings(scene)
                    .map(|t| t.iter().map(|s| s.duration_ms).sum())
                    .unwrap_or(0);
                if ms == 0 {
                    return Err(PipelineError::Precondition(format!(
                        "scene {scene_id} has no length yet; give a duration"
                    )));
                }
                ms as f64 / 1000.0
            }
        };
        let story = context::story(project);
        let scene_text = format!("{}: {}", scene.title, scene.description);
        let direction = context::or_none(prompt);
        let text = self.prompts().render(
            "music",
            &[("scene", &scene_text), ("context", &story), ("prompt", &direction)],
        )?;
        let req = MusicRequest {
            prompt: text.clone(),
            duration_s,
            n,
            seed: None,
        };
        let mut draft = JobDraft::new("music");
        draft.record("music", "", &[crate::providers::Part::text(&text)]);
        let result = self.hub().synthesize_music(&req).await?;
        draft.candidates(&result.outputs);
        let candidates = MediaCandidates {
            base_shot: None,
            scene_id: Some(scene_id.clone()),
            prompt: text,
            assets: result.outputs.iter().map(|a| a.asset_id.clone()).collect(),
            descriptions: Vec::new(),
            explanations: Vec::new(),
        };
        let mut effects = Vec::new();
        if let [only] = result.outputs.as_slice() {
            effects.push(Mutation::SetSceneMusic {
                scene_id: scene_id.clone(),
                music: Some(only.clone()),
            });
        }
        let (job_id, m) = draft.finish(
            project,
            self.seed(),
            JobOutput::Music {
                candidates: candidates.clone(),
            },
            effects,
        );
        Ok(Outcome {
            value: candidates,
            mutation: Some(m),
            job_id: Some(job_id),
        })
    }
}

/// Attaches music candidate `index` of a music job to its scene.
pub fn select_music(project: &Project, job_id: &JobId, index: usize) -> Result<Outcome<AssetRef>, PipelineError> {
    let job = project
        .jobs
        .get(job_id)
        .ok_or_else(|| PipelineError::unknown("job", job_id))?;
    let JobOutput::Music { candidates } = &job.output else {
        return Err(PipelineError::Precondition(format!("job {job_id} is not a music job")));
    };
    let scene_id = candidates
        .scene_id
        .clone()
        .ok_or_else(|| PipelineError::Precondition("music job has no scene".into()))?;
    let asset_id = candidates
        .assets
        .get(index)
        .ok_or_else(|| PipelineError::unknown("candidate", format!("{job_id}#{index}")))?;
    let asset = project
        .assets
        .get(asset_id)
        .ok_or_else(|| PipelineError::unknown("asset", asset_id))?
        .clone();
    Ok(Outcome::applying(
        asset.clone(),
        Mutation::SetSceneMusic {
            scene_id,
            music: Some(asset),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{apply, kit, real_project};
    use super::*;
    use crate::alignment::compute_timings;
    use crate::model::fixtures::two_scene_project;
    use crate::providers::mock::SPEECH_MS_PER_CHAR;

    #[tokio::test]
    async fn suggestion_counts_hold() {
        let k = kit();
        let p = real_project(&k, 4, true);
        let story = k.studio.story_suggestions(&p, None).await.unwrap();
        assert!((3..=5).contains(&story.value.len()));
        let scene = SceneId::new("scene-1");
        let local = k.studio.scene_suggestions(&p, &scene, Some(Category::Pacing)).await.unwrap();
        assert!((1..=2).contains(&local.value.len()));
        for s in &local.value {
            assert_eq!(s.category, Category::Pacing);
            assert!(!s.relevant_shot_ids.is_empty());
            assert!(s.relevant_shot_ids.iter().all(|id| p.scenes[&scene].shots.contains(id)));
            assert!((1..=2).contains(&s.tips.len()));
        }
        apply(&apply(&p, &story.mutation), &local.mutation);
    }

    #[tokio::test]
    async fn disliked_text_never_returns() {
        let k = kit();
        let p = real_project(&k, 4, true);
        let first = k.studio.story_suggestions(&p, None).await.unwrap();
        let mut p = apply(&p, &first.mutation);
        let target = first.value[0].clone();
        p = apply(
            &p,
            &Some(Mutation::DislikeSuggestion {
                suggestion_id: target.suggestion_id.clone(),
            }),
        );
        for _ in 0..5 {
            let again = k.studio.story_suggestions(&p, None).await.unwrap();
            assert!(again.value.iter().all(|s| s.text != target.text));
            p = apply(&p, &again.mutation);
        }
        let prompt = k.mock.calls().last().unwrap().prompt.clone();
        assert!(prompt.contains(&target.text));
    }

    #[tokio::test]
    async fn sync_fills_blank_scripts_and_respects_confirmation() {
        let k = kit();
        let mut p = two_scene_project();
        p.story_context = "We arrived at dawn. The market opened. We left at dusk.".into();
        let out = k.studio.sync_notes(&p, false).await.unwrap();
        assert_eq!(out.value.segments.len(), 2);
        assert!(out.value.segments.values().all(|t| !t.is_empty()));
        let p2 = apply(&p, &out.mutation);
        assert!(p2.active_scenes().iter().all(|s| !s.script.is_blank()));
        let again = k.studio.sync_notes(&p2, false).await.unwrap();
        assert_eq!(again.value.skipped.len(), 2);
        assert!(again.value.applied.is_empty());

        p.story_context.clear();
        assert_eq!(
            k.studio.sync_notes(&p, false).await.unwrap_err().code(),
            "precondition_failed"
        );
    }

    #[tokio::test]
    async fn single_scene_takes_all_notes() {
        let k = kit();
        let mut p = real_project(&k, 2, true);
        p.story_context = "  Everything in one place.  ".into();
        let out = k.studio.sync_notes(&p, false).await.unwrap();
        assert_eq!(out.value.segments[&SceneId::new("scene-1")], "Everything in one place.");
        assert!(k.mock.calls().is_empty());
    }

    #[tokio::test]
    async fn refine_gives_three_distinct_options() {
        let k = kit();
        let p = two_scene_project();
        let out = k
            .studio
            .refine_text(&p, "The boats left early.", Some("more vivid"))
            .await
            .unwrap();
        assert_eq!(out.value.len(), 3);
        let mut d = out.value.clone();
        d.dedup();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 3);
        assert!(k.studio.refine_text(&p, "  ", None).await.is_err());
    }

    #[tokio::test]
    async fn alignment_covers_the_script() {
        let k = kit();
        let mut p = two_scene_project();
        let text = "The sun rises over the water. Boats slip out one by one.";
        p.scenes.get_mut(&SceneId::new("scene-a")).unwrap().script = Script::plain(text);
        let out = k.studio.auto_align(&p, &SceneId::new("scene-a")).await.unwrap();
        let c = &out.value;
        assert_eq!(c.first().unwrap().span.0, 0);
        assert_eq!(c.last().unwrap().span.1, text.chars().count());
        let p2 = apply(&p, &out.mutation);
        let t = compute_timings(c, Some(10_000), 4_000).unwrap();
        assert_eq!(t.iter().map(|s| s.duration_ms).sum::<u64>(), 10_000);
        assert_eq!(p2.scenes[&SceneId::new("scene-a")].correspondences, *c);

        let e = k.studio.auto_align(&p, &SceneId::new("scene-b")).await.unwrap_err();
        assert_eq!(e.code(), "empty_script");
    }

    #[tokio::test]
    async fn narration_length_follows_the_script() {
        let k = kit();
        let mut p = real_project(&k, 1, true);
        let script = "Twenty-one characters";
        p.scenes.get_mut(&SceneId::new("scene-1")).unwrap().script = Script::plain(script);
        let out = k.studio.narration(&p, &SceneId::new("scene-1")).await.unwrap();
        let expected = script.chars().count() as u64 * SPEECH_MS_PER_CHAR;
        assert_eq!(out.value.duration_ms(), Some(expected));
        let p2 = apply(&p, &out.mutation);
        assert_eq!(p2.scenes[&SceneId::new("scene-1")].narration.as_ref(), Some(&out.value));

        p.scenes.get_mut(&SceneId::new("scene-1")).unwrap().script = Script::default();
        assert_eq!(
            k.studio.narration(&p, &SceneId::new("scene-1")).await.unwrap_err().code(),
            "empty_script"
        );
    }

    #[tokio::test]
    async fn music_candidates_and_selection() {
        let k = kit();
        let p = real_project(&k, 2, true);
        let scene = SceneId::new("scene-1");
        let out = k.studio.music(&p, &scene, None, Some("gentle"), Some(2)).await.unwrap();
        assert_eq!(out.value.assets.len(), 2);
        let p2 = apply(&p, &out.mutation);
        assert!(p2.scenes[&scene].music.is_none());
        let pick = select_music(&p2, out.job_id.as_ref().unwrap(), 1).unwrap();
        let p3 = apply(&p2, &pick.mutation);
        assert_eq!(p3.scenes[&scene].music.as_ref().unwrap().asset_id, out.value.assets[1]);
        assert_eq!(pick.value.duration_ms(), Some(8_000));
    }
}
