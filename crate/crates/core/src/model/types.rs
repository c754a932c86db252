use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, JobId, SceneId, ShotId, SuggestionId, VersionId};

/// Current on-disk format of `project.json`.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed scene palette. Grouping assigns entries round-robin.
pub const PALETTE: [&str; 12] = [
    "#E4572E", "#F3A712", "#A8C686", "#669BBC", "#29335C", "#7B2D26", "#D81E5B", "#3BB273", "#7768AE", "#E1BC29", "#4D9DE0",
    "#8C5383",
];

pub fn palette_color(index: usize) -> String {
    PALETTE[index % PALETTE.len()].to_string()
}

pub fn is_palette_color(color: &str) -> bool {
    PALETTE.contains(&color)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
    Audio,
}

impl MediaKind {
    pub fn is_visual(self) -> bool {
        matches!(self, MediaKind::Image | MediaKind::Video)
    }

    pub fn is_timed(self) -> bool {
        matches!(self, MediaKind::Video | MediaKind::Audio)
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
            MediaKind::Audio => "audio",
        })
    }
}

/// A media file stored under the project's `assets/` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRef {
    pub asset_id: AssetId,
    pub kind: MediaKind,
    /// Project-relative path, always `assets/<file>`.
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    /// Hex SHA-256 of the file contents.
    pub checksum: String,
}

impl AssetRef {
    pub fn duration_ms(&self) -> Option<u64> {
        self.duration_s.map(secs_to_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Captured,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CanvasPos {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trim {
    pub in_s: f64,
    pub out_s: f64,
}

/// Where a generated shot came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub job_id: JobId,
    pub source_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_keyframe: Option<AssetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_shots: Option<(Option<ShotId>, Option<ShotId>)>,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub shot_id: ShotId,
    pub asset: AssetRef,
    pub provenance: Provenance,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub canvas_pos: CanvasPos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim: Option<Trim>,
    /// Assets this shot displayed before a variation was selected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub asset_history: Vec<AssetRef>,
}

impl Shot {
    pub fn is_described(&self) -> bool {
        !self.description.trim().is_empty()
    }
}

/// Marked range of the script, e.g. a suggestion highlight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSpan {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

/// Script text plus span annotations. Offsets are char indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Script {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<ScriptSpan>,
}

impl Script {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            spans: Vec::new(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// A shot mapped onto a char range of its scene's script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pub shot_id: ShotId,
    pub span: (usize, usize),
}

impl Correspondence {
    pub fn len(&self) -> usize {
        self.span.1.saturating_sub(self.span.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One timed slot on a scene timeline. Times are on a millisecond grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedSegment {
    pub shot_id: ShotId,
    pub start_ms: u64,
    pub duration_ms: u64,
}

impl TimedSegment {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }

    pub fn start_s(&self) -> f64 {
        ms_to_secs(self.start_ms)
    }

    pub fn duration_s(&self) -> f64 {
        ms_to_secs(self.duration_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneOrigin {
    #[default]
    User,
    Grouped,
    Generated,
    Duplicated,
    Variation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: SceneId,
    pub title: String,
    pub color: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub shots: Vec<ShotId>,
    #[serde(default)]
    pub script: Script,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<AssetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub music: Option<AssetRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correspondences: Vec<Correspondence>,
    /// Manually adjusted timing; cleared whenever correspondences change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Vec<TimedSegment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_shot: Option<ShotId>,
    #[serde(default)]
    pub origin: SceneOrigin,
}

impl Scene {
    pub fn new(scene_id: SceneId, title: impl Into<String>, color: impl Into<String>) -> Self {
        Self {
            scene_id,
            title: title.into(),
            color: color.into(),
            description: String::new(),
            shots: Vec::new(),
            script: Script::default(),
            narration: None,
            music: None,
            correspondences: Vec::new(),
            timing: None,
            keyframe_shot: None,
            origin: SceneOrigin::User,
        }
    }

    /// Re-establishes the keyframe default after the shot list changes.
    pub(crate) fn normalize_keyframe(&mut self) {
        let valid = self.keyframe_shot.as_ref().is_some_and(|k| self.shots.contains(k));
        if !valid {
            self.keyframe_shot = self.shots.first().cloned();
        }
    }

    /// Drops correspondences that no longer point into this scene.
    pub(crate) fn prune_correspondences(&mut self) {
        let before = self.correspondences.len();
        let shots = &self.shots;
        self.correspondences.retain(|c| shots.contains(&c.shot_id));
        if self.correspondences.len() != before {
            self.timing = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VersionOrigin {
    Original,
    Duplicate,
    PromptedVariation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryVersion {
    pub version_id: VersionId,
    pub name: String,
    pub scenes: Vec<SceneId>,
    pub origin: VersionOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation_prompt: Option<String>,
}

/// Narrative categories for script suggestions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Structure,
    Plot,
    Imagery,
    Character,
    Dialogue,
    Pacing,
    Emotion,
    Setting,
    Theme,
    Other,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Structure,
        Category::Plot,
        Category::Imagery,
        Category::Character,
        Category::Dialogue,
        Category::Pacing,
        Category::Emotion,
        Category::Setting,
        Category::Theme,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Structure => "structure",
            Category::Plot => "plot",
            Category::Imagery => "imagery",
            Category::Character => "character",
            Category::Dialogue => "dialogue",
            Category::Pacing => "pacing",
            Category::Emotion => "emotion",
            Category::Setting => "setting",
            Category::Theme => "theme",
            Category::Other => "other",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Category::Structure => "Story chronology or organization",
            Category::Plot => "Story progression or narrative flow (conflicts, rising action, falling action)",
            Category::Imagery => "Visual details or descriptive elements",
            Category::Character => "Character development or motivations",
            Category::Dialogue => "Conversation or speech patterns",
            Category::Pacing => "Story timing, rhythm, or tempo",
            Category::Emotion => "Feelings, mood, or emotional impact",
            Category::Setting => "Story location, atmosphere, or environment",
            Category::Theme => "Underlying messages or meaning in the story",
            Category::Other => "Other aspects not covered by the listed categories",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionLevel {
    Story,
    Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionStatus {
    Active,
    Disliked,
    Addressed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub suggestion_id: SuggestionId,
    pub level: SuggestionLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<SceneId>,
    pub category: Category,
    pub text: String,
    pub explanation: String,
    pub tips: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relevant_shot_ids: Vec<ShotId>,
    pub status: SuggestionStatus,
}

/// A proposed scene waiting for the user to accept it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSceneProposal {
    pub title: String,
    pub description: String,
    pub color: String,
    /// Position in the version's scene list at the time of proposal.
    pub insert_index: usize,
    /// Scene the proposal follows; `None` means the story start.
    #[serde(default)]
    pub after_scene: Option<SceneId>,
}

/// A proposed new shot with its three keyframe candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotProposal {
    pub scene_id: SceneId,
    /// Insertion index in the scene's shot list.
    pub slot: usize,
    /// Shot the proposal follows, if any.
    #[serde(default)]
    pub after_shot: Option<ShotId>,
    #[serde(default)]
    pub before_shot: Option<ShotId>,
    pub image_prompt: String,
    pub candidates: Vec<AssetId>,
    pub image_prompts: Vec<String>,
    pub descriptions: Vec<String>,
    pub explanations: Vec<String>,
    pub explanation: String,
    #[serde(default)]
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub version_id: VersionId,
    pub name: String,
    pub summary: String,
    pub strengths: Vec<String>,
    pub weaknesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub entries: Vec<CompareEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoPromptFields {
    pub camera_movement: String,
    pub lighting: String,
    pub style: String,
    pub action: String,
}

impl VideoPromptFields {
    pub fn all_filled(&self) -> bool {
        [&self.camera_movement, &self.lighting, &self.style, &self.action]
            .iter()
            .all(|f| !f.trim().is_empty())
    }

    pub fn render(&self) -> String {
        format!(
            "Camera movement: {}. Lighting: {}. Style: {}. Action: {}.",
            self.camera_movement.trim_end_matches('.'),
            self.lighting.trim_end_matches('.'),
            self.style.trim_end_matches('.'),
            self.action.trim_end_matches('.')
        )
    }
}

/// Candidate media produced by a generation job, with per-candidate text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaCandidates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_shot: Option<ShotId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<SceneId>,
    pub prompt: String,
    pub assets: Vec<AssetId>,
    #[serde(default)]
    pub descriptions: Vec<String>,
    #[serde(default)]
    pub explanations: Vec<String>,
}

/// Typed result payload of a generation job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobOutput {
    ShotDescription {
        shot_id: ShotId,
        description: String,
    },
    Grouping {
        scenes: Vec<SceneId>,
    },
    SceneSequence {
        order: Vec<SceneId>,
        proposals: Vec<NewSceneProposal>,
    },
    ContextualScene {
        proposal: NewSceneProposal,
    },
    Variation {
        version_id: VersionId,
    },
    Comparison {
        report: CompareReport,
    },
    Suggestions {
        suggestions: Vec<SuggestionId>,
    },
    ScriptSync {
        segments: BTreeMap<SceneId, String>,
        applied: Vec<SceneId>,
    },
    Refinements {
        original: String,
        options: Vec<String>,
    },
    VisualSequence {
        scene_id: SceneId,
        order: Vec<ShotId>,
        proposals: Vec<ShotProposal>,
    },
    ContextualShot {
        proposal: ShotProposal,
    },
    ImageVariations {
        candidates: MediaCandidates,
    },
    VideoVariations {
        augmented_prompt: String,
        candidates: MediaCandidates,
    },
    VideoPrompt {
        fields: VideoPromptFields,
    },
    Narration {
        scene_id: SceneId,
        asset_id: AssetId,
    },
    Music {
        candidates: MediaCandidates,
    },
    Alignment {
        scene_id: SceneId,
        correspondences: Vec<Correspondence>,
    },
}

/// One prompt sent to a model, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub stage: String,
    pub system: String,
    pub user: String,
}

/// Persisted record of a completed provider-backed operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: JobId,
    pub kind: String,
    pub seed: u64,
    pub prompts: Vec<PromptRecord>,
    /// Intermediate prompts (image-generation prompts, augmented video prompt).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intermediate_prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<AssetId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<String>,
    pub output: JobOutput,
}

/// Root project document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub project_id: String,
    #[serde(default)]
    pub story_context: String,
    pub versions: Vec<StoryVersion>,
    pub active_version: VersionId,
    #[serde(default)]
    pub scenes: BTreeMap<SceneId, Scene>,
    #[serde(default)]
    pub shots: BTreeMap<ShotId, Shot>,
    #[serde(default)]
    pub assets: BTreeMap<AssetId, AssetRef>,
    #[serde(default)]
    pub suggestions: Vec<Suggestion>,
    #[serde(default)]
    pub disliked_suggestions: Vec<String>,
    #[serde(default)]
    pub jobs: BTreeMap<JobId, GenerationJob>,
}

impl Project {
    /// Empty project with a single "Original" version.
    pub fn new(project_id: impl Into<String>) -> Self {
        let project_id = project_id.into();
        let version_id = VersionId::derive(&[&project_id, "original"]);
        Self {
            schema_version: SCHEMA_VERSION,
            project_id,
            story_context: String::new(),
            versions: vec![StoryVersion {
                version_id: version_id.clone(),
                name: "Original".into(),
                scenes: Vec::new(),
                origin: VersionOrigin::Original,
                variation_prompt: None,
            }],
            active_version: version_id,
            scenes: BTreeMap::new(),
            shots: BTreeMap::new(),
            assets: BTreeMap::new(),
            suggestions: Vec::new(),
            disliked_suggestions: Vec::new(),
            jobs: BTreeMap::new(),
        }
    }

    pub fn version(&self, id: &VersionId) -> Option<&StoryVersion> {
        self.versions.iter().find(|v| &v.version_id == id)
    }

    pub fn version_mut(&mut self, id: &VersionId) -> Option<&mut StoryVersion> {
        self.versions.iter_mut().find(|v| &v.version_id == id)
    }

    pub fn active(&self) -> &StoryVersion {
        self.version(&self.active_version).expect("active version exists")
    }

    /// Scenes of the active version, in story order.
    pub fn active_scenes(&self) -> Vec<&Scene> {
        self.active().scenes.iter().filter_map(|id| self.scenes.get(id)).collect()
    }

    /// Version that owns the scene.
    pub fn version_of_scene(&self, scene: &SceneId) -> Option<&StoryVersion> {
        self.versions.iter().find(|v| v.scenes.contains(scene))
    }

    /// Scene holding the shot within the given version.
    pub fn scene_of_shot(&self, version: &VersionId, shot: &ShotId) -> Option<&Scene> {
        self.version(version)?
            .scenes
            .iter()
            .filter_map(|id| self.scenes.get(id))
            .find(|s| s.shots.contains(shot))
    }

    /// Shots not assigned to any scene of the active version.
    pub fn ungrouped_shots(&self) -> Vec<ShotId> {
        let grouped: Vec<&ShotId> = self.active_scenes().into_iter().flat_map(|s| s.shots.iter()).collect();
        self.shots.keys().filter(|id| !grouped.contains(id)).cloned().collect()
    }

    /// Canonical serialization: pretty JSON with sorted maps and a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("project serializes");
        out.push('\n');
        out
    }
}

pub fn secs_to_ms(secs: f64) -> u64 {
    (secs * 1000.0).round().max(0.0) as u64
}

pub fn ms_to_secs(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_roundtrip() {
        for c in Category::ALL {
            assert_eq!(Category::parse(c.as_str()), Some(c));
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert_eq!(Category::parse("Pacing"), Some(Category::Pacing));
        assert_eq!(Category::parse("genre"), None);
    }

    #[test]
    fn palette_wraps() {
        assert_eq!(palette_color(0), palette_color(12));
        assert!(is_palette_color(&palette_color(5)));
        assert!(!is_palette_color("#000000"));
    }

    #[test]
    fn keyframe_defaults_to_first_shot() {
        let mut scene = Scene::new(SceneId::new("s"), "t", palette_color(0));
        scene.shots = vec![ShotId::new("a"), ShotId::new("b")];
        scene.normalize_keyframe();
        assert_eq!(scene.keyframe_shot, Some(ShotId::new("a")));
        scene.shots.remove(0);
        scene.normalize_keyframe();
        assert_eq!(scene.keyframe_shot, Some(ShotId::new("b")));
        scene.shots.clear();
        scene.normalize_keyframe();
        assert_eq!(scene.keyframe_shot, None);
    }
}
