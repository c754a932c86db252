//! Story-graph edits and their inverses.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::types::*;
use super::validate::{validate, Invariant, InvariantViolation};
use crate::ids::{AssetId, JobId, SceneId, ShotId, SuggestionId, VersionId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoryError {
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: String },
    #[error(transparent)]
    InvariantViolation(#[from] InvariantViolation),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
}

impl StoryError {
    fn unknown(kind: &'static str, id: impl ToString) -> Self {
        StoryError::UnknownId {
            kind,
            id: id.to_string(),
        }
    }
}

/// Entity-level write used to express inverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "patch", rename_all = "snake_case")]
pub enum Patch {
    PutShot { shot: Shot },
    RemoveShot { shot_id: ShotId },
    PutScene { scene: Scene },
    RemoveScene { scene_id: SceneId },
    PutAsset { asset: AssetRef },
    RemoveAsset { asset_id: AssetId },
    PutJob { job: Box<GenerationJob> },
    RemoveJob { job_id: JobId },
    SetVersions { versions: Vec<StoryVersion> },
    SetActiveVersion { version_id: VersionId },
    SetStoryContext { text: String },
    SetSuggestions { suggestions: Vec<Suggestion> },
    SetDisliked { texts: Vec<String> },
}

/// Target position for [`Mutation::MoveShot`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSlot {
    pub scene_id: SceneId,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    SetStoryContext {
        text: String,
    },
    RegisterAsset {
        asset: AssetRef,
    },
    AddShot {
        shot: Shot,
    },
    RemoveShot {
        shot_id: ShotId,
    },
    DescribeShot {
        shot_id: ShotId,
        description: String,
    },
    MoveShotOnCanvas {
        shot_id: ShotId,
        pos: CanvasPos,
    },
    SetShotTrim {
        shot_id: ShotId,
        trim: Option<Trim>,
    },
    ReplaceShotAsset {
        shot_id: ShotId,
        asset: AssetRef,
        generation: GenerationProvenance,
    },
    AddScene {
        version_id: VersionId,
        index: usize,
        scene: Scene,
    },
    DeleteScene {
        scene_id: SceneId,
    },
    RenameScene {
        scene_id: SceneId,
        title: String,
    },
    SetSceneDescription {
        scene_id: SceneId,
        description: String,
    },
    SetSceneColor {
        scene_id: SceneId,
        color: String,
    },
    SetSceneScript {
        scene_id: SceneId,
        script: Script,
    },
    SetSceneNarration {
        scene_id: SceneId,
        narration: Option<AssetRef>,
    },
    SetSceneMusic {
        scene_id: SceneId,
        music: Option<AssetRef>,
    },
    SetCorrespondences {
        scene_id: SceneId,
        correspondences: Vec<Correspondence>,
    },
    SetSceneTiming {
        scene_id: SceneId,
        timing: Option<Vec<TimedSegment>>,
    },
    SetKeyframeShot {
        scene_id: SceneId,
        shot_id: ShotId,
    },
    /// Moves a shot into a scene slot, or back to the ungrouped pool of
    /// `version_id` (default: active) when `to` is `None`.
    MoveShot {
        shot_id: ShotId,
        to: Option<ShotSlot>,
        #[serde(default)]
        version_id: Option<VersionId>,
    },
    ReorderShots {
        scene_id: SceneId,
        order: Vec<ShotId>,
    },
    ReorderScenes {
        version_id: VersionId,
        order: Vec<SceneId>,
    },
    AddVersion {
        version: StoryVersion,
        scenes: Vec<Scene>,
    },
    RemoveVersion {
        version_id: VersionId,
    },
    RenameVersion {
        version_id: VersionId,
        name: String,
    },
    SetActiveVersion {
        version_id: VersionId,
    },
    AddSuggestions {
        suggestions: Vec<Suggestion>,
    },
    SetSuggestionStatus {
        suggestion_id: SuggestionId,
        status: SuggestionStatus,
    },
    DislikeSuggestion {
        suggestion_id: SuggestionId,
    },
    RecordJob {
        job: Box<GenerationJob>,
    },
    Restore {
        patches: Vec<Patch>,
    },
    Batch {
        mutations: Vec<Mutation>,
    },
}

impl Mutation {
    pub fn batch(mutations: Vec<Mutation>) -> Mutation {
        Mutation::Batch { mutations }
    }

    /// Short name used in event streams.
    pub fn name(&self) -> &'static str {
        match self {
            Mutation::SetStoryContext { .. } => "set_story_context",
            Mutation::RegisterAsset { .. } => "register_asset",
            Mutation::AddShot { .. } => "add_shot",
            Mutation::RemoveShot { .. } => "remove_shot",
            Mutation::DescribeShot { .. } => "describe_shot",
            Mutation::MoveShotOnCanvas { .. } => "move_shot_on_canvas",
            Mutation::SetShotTrim { .. } => "set_shot_trim",
            Mutation::ReplaceShotAsset { .. } => "replace_shot_asset",
            Mutation::AddScene { .. } => "add_scene",
            Mutation::DeleteScene { .. } => "delete_scene",
            Mutation::RenameScene { .. } => "rename_scene",
            Mutation::SetSceneDescription { .. } => "set_scene_description",
            Mutation::SetSceneColor { .. } => "set_scene_color",
            Mutation::SetSceneScript { .. } => "set_scene_script",
            Mutation::SetSceneNarration { .. } => "set_scene_narration",
            Mutation::SetSceneMusic { .. } => "set_scene_music",
            Mutation::SetCorrespondences { .. } => "set_correspondences",
            Mutation::SetSceneTiming { .. } => "set_scene_timing",
            Mutation::SetKeyframeShot { .. } => "set_keyframe_shot",
            Mutation::MoveShot { .. } => "move_shot",
            Mutation::ReorderShots { .. } => "reorder_shots",
            Mutation::ReorderScenes { .. } => "reorder_scenes",
            Mutation::AddVersion { .. } => "add_version",
            Mutation::RemoveVersion { .. } => "remove_version",
            Mutation::RenameVersion { .. } => "rename_version",
            Mutation::SetActiveVersion { .. } => "set_active_version",
            Mutation::AddSuggestions { .. } => "add_suggestions",
            Mutation::SetSuggestionStatus { .. } => "set_suggestion_status",
            Mutation::DislikeSuggestion { .. } => "dislike_suggestion",
            Mutation::RecordJob { .. } => "record_job",
            Mutation::Restore { .. } => "restore",
            Mutation::Batch { .. } => "batch",
        }
    }
}

/// Result of a successful mutation.
#[derive(Debug, Clone)]
pub struct Applied {
    pub project: Project,
    /// Mutation that restores the previous state.
    pub inverse: Mutation,
}

/// Applies `mutation` to a copy of `project`, re-validates every invariant
/// and returns the new state plus its inverse. On error `project` is
/// untouched.
pub fn apply_mutation(project: &Project, mutation: &Mutation) -> Result<Applied, StoryError> {
    let mut next = project.clone();
    apply_in_place(&mut next, mutation)?;
    validate(&next)?;
    let inverse = Mutation::Restore {
        patches: diff(&next, project),
    };
    Ok(Applied { project: next, inverse })
}

fn scene_mut<'a>(p: &'a mut Project, id: &SceneId) -> Result<&'a mut Scene, StoryError> {
    p.scenes.get_mut(id).ok_or_else(|| StoryError::unknown("scene", id))
}

fn shot_mut<'a>(p: &'a mut Project, id: &ShotId) -> Result<&'a mut Shot, StoryError> {
    p.shots.get_mut(id).ok_or_else(|| StoryError::unknown("shot", id))
}

fn require_version(p: &Project, id: &VersionId) -> Result<(), StoryError> {
    p.version(id).map(|_| ()).ok_or_else(|| StoryError::unknown("version", id))
}

fn is_permutation<T: Eq + std::hash::Hash>(current: &[T], order: &[T]) -> bool {
    if current.len() != order.len() {
        return false;
    }
    let a: HashSet<&T> = current.iter().collect();
    let b: HashSet<&T> = order.iter().collect();
    a == b && b.len() == order.len()
}

fn fresh(exists: bool, kind: &str, id: impl std::fmt::Display) -> Result<(), StoryError> {
    if exists {
        return Err(InvariantViolation {
            invariant: Invariant::UniqueIds,
            path: kind.to_string(),
            detail: format!("{kind} id {id} already exists"),
        }
        .into());
    }
    Ok(())
}

/// Removes `shot` from every scene of `version`, fixing keyframes and spans.
fn detach_shot(p: &mut Project, version: &VersionId, shot: &ShotId) {
    let scene_ids: Vec<SceneId> = p.version(version).map(|v| v.scenes.clone()).unwrap_or_default();
    for sid in scene_ids {
        if let Some(scene) = p.scenes.get_mut(&sid) {
            if let Some(pos) = scene.shots.iter().position(|s| s == shot) {
                scene.shots.remove(pos);
                scene.normalize_keyframe();
                scene.prune_correspondences();
                if let Some(t) = &scene.timing {
                    if t.iter().any(|s| &s.shot_id == shot) {
                        scene.timing = None;
                    }
                }
            }
        }
    }
}

fn apply_in_place(p: &mut Project, m: &Mutation) -> Result<(), StoryError> {
    match m {
        Mutation::SetStoryContext { text } => p.story_context = text.clone(),
        Mutation::RegisterAsset { asset } => match p.assets.get(&asset.asset_id) {
            Some(existing) if existing == asset => {}
            Some(_) => fresh(true, "asset", &asset.asset_id)?,
            None => {
                p.assets.insert(asset.asset_id.clone(), asset.clone());
            }
        },
        Mutation::AddShot { shot } => {
            fresh(p.shots.contains_key(&shot.shot_id), "shot", &shot.shot_id)?;
            p.shots.insert(shot.shot_id.clone(), shot.clone());
        }
        Mutation::RemoveShot { shot_id } => {
            if p.shots.remove(shot_id).is_none() {
                return Err(StoryError::unknown("shot", shot_id));
            }
            let versions: Vec<VersionId> = p.versions.iter().map(|v| v.version_id.clone()).collect();
            for v in versions {
                detach_shot(p, &v, shot_id);
            }
            for s in &mut p.suggestions {
                s.relevant_shot_ids.retain(|id| id != shot_id);
            }
        }
        Mutation::DescribeShot { shot_id, description } => {
            shot_mut(p, shot_id)?.description = description.clone();
        }
        Mutation::MoveShotOnCanvas { shot_id, pos } => {
            shot_mut(p, shot_id)?.canvas_pos = *pos;
        }
        Mutation::SetShotTrim { shot_id, trim } => {
            shot_mut(p, shot_id)?.trim = *trim;
        }
        Mutation::ReplaceShotAsset {
            shot_id,
            asset,
            generation,
        } => {
            let shot = shot_mut(p, shot_id)?;
            if shot.provenance != Provenance::Generated {
                return Err(InvariantViolation {
                    invariant: Invariant::ProvenanceMonotonic,
                    path: format!("shots.{shot_id}.provenance"),
                    detail: "only generated shots can swap their asset".into(),
                }
                .into());
            }
            let old = std::mem::replace(&mut shot.asset, asset.clone());
            if old != *asset {
                shot.asset_history.push(old);
            }
            shot.generation = Some(generation.clone());
            if shot.trim.is_some() {
                shot.trim = None;
            }
        }
        Mutation::AddScene {
            version_id,
            index,
            scene,
        } => {
            require_version(p, version_id)?;
            fresh(p.scenes.contains_key(&scene.scene_id), "scene", &scene.scene_id)?;
            let mut scene = scene.clone();
            scene.normalize_keyframe();
            let version = p.version_mut(version_id).expect("checked");
            if *index > version.scenes.len() {
                return Err(InvariantViolation {
                    invariant: Invariant::VersionSceneUnique,
                    path: format!("versions.{version_id}.scenes"),
                    detail: format!("insert index {index} beyond {} scenes", version.scenes.len()),
                }
                .into());
            }
            version.scenes.insert(*index, scene.scene_id.clone());
            p.scenes.insert(scene.scene_id.clone(), scene);
        }
        Mutation::DeleteScene { scene_id } => {
            if p.scenes.remove(scene_id).is_none() {
                return Err(StoryError::unknown("scene", scene_id));
            }
            for v in &mut p.versions {
                v.scenes.retain(|s| s != scene_id);
            }
            p.suggestions.retain(|s| s.scene_id.as_ref() != Some(scene_id));
        }
        Mutation::RenameScene { scene_id, title } => scene_mut(p, scene_id)?.title = title.clone(),
        Mutation::SetSceneDescription { scene_id, description } => scene_mut(p, scene_id)?.description = description.clone(),
        Mutation::SetSceneColor { scene_id, color } => scene_mut(p, scene_id)?.color = color.clone(),
        Mutation::SetSceneScript { scene_id, script } => {
            let scene = scene_mut(p, scene_id)?;
            if scene.script.text != script.text {
                scene.correspondences.clear();
                scene.timing = None;
            }
            scene.script = script.clone();
        }
        Mutation::SetSceneNarration { scene_id, narration } => {
            let scene = scene_mut(p, scene_id)?;
            if scene.narration != *narration {
                scene.timing = None;
            }
            scene.narration = narration.clone();
        }
        Mutation::SetSceneMusic { scene_id, music } => scene_mut(p, scene_id)?.music = music.clone(),
        Mutation::SetCorrespondences {
            scene_id,
            correspondences,
        } => {
            let scene = scene_mut(p, scene_id)?;
            scene.correspondences = correspondences.clone();
            scene.timing = None;
        }
        Mutation::SetSceneTiming { scene_id, timing } => scene_mut(p, scene_id)?.timing = timing.clone(),
        Mutation::SetKeyframeShot { scene_id, shot_id } => {
            let scene = scene_mut(p, scene_id)?;
            if !scene.shots.contains(shot_id) {
                return Err(InvariantViolation {
                    invariant: Invariant::KeyframeMembership,
                    path: format!("scenes.{scene_id}.keyframe_shot"),
                    detail: format!("{shot_id} is not in the scene"),
                }
                .into());
            }
            scene.keyframe_shot = Some(shot_id.clone());
        }
        Mutation::MoveShot { shot_id, to, version_id } => {
            if !p.shots.contains_key(shot_id) {
                return Err(StoryError::unknown("shot", shot_id));
            }
            let version = match (to, version_id) {
                (Some(slot), _) => {
                    if !p.scenes.contains_key(&slot.scene_id) {
                        return Err(StoryError::unknown("scene", &slot.scene_id));
                    }
                    p.version_of_scene(&slot.scene_id)
                        .map(|v| v.version_id.clone())
                        .ok_or_else(|| StoryError::unknown("scene", &slot.scene_id))?
                }
                (None, Some(v)) => {
                    require_version(p, v)?;
                    v.clone()
                }
                (None, None) => p.active_version.clone(),
            };
            detach_shot(p, &version, shot_id);
            if let Some(slot) = to {
                let scene = scene_mut(p, &slot.scene_id)?;
                if slot.index > scene.shots.len() {
                    return Err(InvariantViolation {
                        invariant: Invariant::SceneShotsUnique,
                        path: format!("scenes.{}.shots", slot.scene_id),
                        detail: format!("insert index {} beyond {} shots", slot.index, scene.shots.len()),
                    }
                    .into());
                }
                scene.shots.insert(slot.index, shot_id.clone());
                scene.normalize_keyframe();
                scene.timing = None;
            }
        }
        Mutation::ReorderShots { scene_id, order } => {
            let scene = scene_mut(p, scene_id)?;
            if !is_permutation(&scene.shots, order) {
                return Err(InvariantViolation {
                    invariant: Invariant::Permutation,
                    path: format!("scenes.{scene_id}.shots"),
                    detail: "new order is not a permutation of the scene's shots".into(),
                }
                .into());
            }
            if scene.shots != *order {
                scene.shots = order.clone();
                scene.timing = None;
            }
        }
        Mutation::ReorderScenes { version_id, order } => {
            let version = p
                .version_mut(version_id)
                .ok_or_else(|| StoryError::unknown("version", version_id))?;
            if !is_permutation(&version.scenes, order) {
                return Err(InvariantViolation {
                    invariant: Invariant::Permutation,
                    path: format!("versions.{version_id}.scenes"),
                    detail: "new order is not a permutation of the version's scenes".into(),
                }
                .into());
            }
            version.scenes = order.clone();
        }
        Mutation::AddVersion { version, scenes } => {
            fresh(p.version(&version.version_id).is_some(), "version", &version.version_id)?;
            for scene in scenes {
                fresh(p.scenes.contains_key(&scene.scene_id), "scene", &scene.scene_id)?;
                let mut scene = scene.clone();
                scene.normalize_keyframe();
                p.scenes.insert(scene.scene_id.clone(), scene);
            }
            p.versions.push(version.clone());
        }
        Mutation::RemoveVersion { version_id } => {
            require_version(p, version_id)?;
            if *version_id == p.active_version {
                return Err(InvariantViolation {
                    invariant: Invariant::ActiveVersion,
                    path: "active_version".into(),
                    detail: "cannot remove the active version".into(),
                }
                .into());
            }
            let idx = p.versions.iter().position(|v| &v.version_id == version_id).expect("checked");
            let removed = p.versions.remove(idx);
            for sid in &removed.scenes {
                p.scenes.remove(sid);
            }
            p.suggestions
                .retain(|s| s.scene_id.as_ref().is_none_or(|sid| !removed.scenes.contains(sid)));
        }
        Mutation::RenameVersion { version_id, name } => {
            p.version_mut(version_id)
                .ok_or_else(|| StoryError::unknown("version", version_id))?
                .name = name.clone();
        }
        Mutation::SetActiveVersion { version_id } => {
            require_version(p, version_id)?;
            p.active_version = version_id.clone();
        }
        Mutation::AddSuggestions { suggestions } => {
            for s in suggestions {
                let exists = p.suggestions.iter().any(|o| o.suggestion_id == s.suggestion_id);
                fresh(exists, "suggestion", &s.suggestion_id)?;
                p.suggestions.push(s.clone());
            }
        }
        Mutation::SetSuggestionStatus { suggestion_id, status } => {
            let s = p
                .suggestions
                .iter_mut()
                .find(|s| &s.suggestion_id == suggestion_id)
                .ok_or_else(|| StoryError::unknown("suggestion", suggestion_id))?;
            s.status = *status;
        }
        Mutation::DislikeSuggestion { suggestion_id } => {
            let s = p
                .suggestions
                .iter_mut()
                .find(|s| &s.suggestion_id == suggestion_id)
                .ok_or_else(|| StoryError::unknown("suggestion", suggestion_id))?;
            s.status = SuggestionStatus::Disliked;
            let text = s.text.clone();
            if !p.disliked_suggestions.contains(&text) {
                p.disliked_suggestions.push(text);
            }
        }
        Mutation::RecordJob { job } => {
            fresh(p.jobs.contains_key(&job.job_id), "job", &job.job_id)?;
            p.jobs.insert(job.job_id.clone(), (**job).clone());
        }
        Mutation::Restore { patches } => {
            for patch in patches {
                apply_patch(p, patch);
            }
        }
        Mutation::Batch { mutations } => {
            for m in mutations {
                apply_in_place(p, m)?;
            }
        }
    }
    Ok(())
}

fn apply_patch(p: &mut Project, patch: &Patch) {
    match patch {
        Patch::PutShot { shot } => {
            p.shots.insert(shot.shot_id.clone(), shot.clone());
        }
        Patch::RemoveShot { shot_id } => {
            p.shots.remove(shot_id);
        }
        Patch::PutScene { scene } => {
            p.scenes.insert(scene.scene_id.clone(), scene.clone());
        }
        Patch::RemoveScene { scene_id } => {
            p.scenes.remove(scene_id);
        }
        Patch::PutAsset { asset } => {
            p.assets.insert(asset.asset_id.clone(), asset.clone());
        }
        Patch::RemoveAsset { asset_id } => {
            p.assets.remove(asset_id);
        }
        Patch::PutJob { job } => {
            p.jobs.insert(job.job_id.clone(), (**job).clone());
        }
        Patch::RemoveJob { job_id } => {
            p.jobs.remove(job_id);
        }
        Patch::SetVersions { versions } => p.versions = versions.clone(),
        Patch::SetActiveVersion { version_id } => p.active_version = version_id.clone(),
        Patch::SetStoryContext { text } => p.story_context = text.clone(),
        Patch::SetSuggestions { suggestions } => p.suggestions = suggestions.clone(),
        Patch::SetDisliked { texts } => p.disliked_suggestions = texts.clone(),
    }
}

fn diff_map<K: Ord + Clone, V: Clone + PartialEq>(
    from: &BTreeMap<K, V>,
    to: &BTreeMap<K, V>,
    put: impl Fn(&V) -> Patch,
    remove: impl Fn(&K) -> Patch,
    out: &mut Vec<Patch>,
) {
    for (k, v) in to {
        if from.get(k) != Some(v) {
            out.push(put(v));
        }
    }
    for k in from.keys() {
        if !to.contains_key(k) {
            out.push(remove(k));
        }
    }
}

/// Patches that turn `from` into `to`.
pub fn diff(from: &Project, to: &Project) -> Vec<Patch> {
    let mut out = Vec::new();
    diff_map(
        &from.assets,
        &to.assets,
        |a| Patch::PutAsset { asset: a.clone() },
        |k| Patch::RemoveAsset { asset_id: k.clone() },
        &mut out,
    );
    diff_map(
        &from.jobs,
        &to.jobs,
        |j| Patch::PutJob {
            job: Box::new(j.clone()),
        },
        |k| Patch::RemoveJob { job_id: k.clone() },
        &mut out,
    );
    diff_map(
        &from.shots,
        &to.shots,
        |s| Patch::PutShot { shot: s.clone() },
        |k| Patch::RemoveShot { shot_id: k.clone() },
        &mut out,
    );
    diff_map(
        &from.scenes,
        &to.scenes,
        |s| Patch::PutScene { scene: s.clone() },
        |k| Patch::RemoveScene { scene_id: k.clone() },
        &mut out,
    );
    if from.versions != to.versions {
        out.push(Patch::SetVersions {
            versions: to.versions.clone(),
        });
    }
    if from.active_version != to.active_version {
        out.push(Patch::SetActiveVersion {
            version_id: to.active_version.clone(),
        });
    }
    if from.story_context != to.story_context {
        out.push(Patch::SetStoryContext {
            text: to.story_context.clone(),
        });
    }
    if from.suggestions != to.suggestions {
        out.push(Patch::SetSuggestions {
            suggestions: to.suggestions.clone(),
        });
    }
    if from.disliked_suggestions != to.disliked_suggestions {
        out.push(Patch::SetDisliked {
            texts: to.disliked_suggestions.clone(),
        });
    }
    out
}
