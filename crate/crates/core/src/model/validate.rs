//! Structural invariants of the story graph.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    SchemaVersion,
    ActiveVersion,
    ReferentialIntegrity,
    AssetLocation,
    AssetMetadata,
    GeneratedProvenance,
    TrimRange,
    SceneShotsUnique,
    KeyframeMembership,
    CorrespondenceSpans,
    SceneColor,
    TimingContiguity,
    VersionSceneUnique,
    SceneOwnership,
    ShotMembershipPerVersion,
    SuggestionShape,
    IdKeyMismatch,
    UniqueIds,
    Permutation,
    ProvenanceMonotonic,
}

impl Invariant {
    pub fn name(self) -> &'static str {
        match self {
            Invariant::SchemaVersion => "schema-version",
            Invariant::ActiveVersion => "active-version",
            Invariant::ReferentialIntegrity => "referential-integrity",
            Invariant::AssetLocation => "asset-location",
            Invariant::AssetMetadata => "asset-metadata",
            Invariant::GeneratedProvenance => "generated-provenance",
            Invariant::TrimRange => "trim-range",
            Invariant::SceneShotsUnique => "scene-shots-unique",
            Invariant::KeyframeMembership => "keyframe-membership",
            Invariant::CorrespondenceSpans => "correspondence-spans",
            Invariant::SceneColor => "scene-color",
            Invariant::TimingContiguity => "timing-contiguity",
            Invariant::VersionSceneUnique => "version-scene-unique",
            Invariant::SceneOwnership => "scene-ownership",
            Invariant::ShotMembershipPerVersion => "shot-membership-per-version",
            Invariant::SuggestionShape => "suggestion-shape",
            Invariant::IdKeyMismatch => "id-key-mismatch",
            Invariant::UniqueIds => "unique-ids",
            Invariant::Permutation => "permutation",
            Invariant::ProvenanceMonotonic => "provenance-monotonic",
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A violated invariant plus the offending location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("invariant {invariant} violated: {detail}")]
pub struct InvariantViolation {
    pub invariant: Invariant,
    /// Path to the failing field, e.g. `scenes.scene-1.shots[2]`.
    pub path: String,
    pub detail: String,
}

pub(crate) fn fail<T>(invariant: Invariant, path: impl Into<String>, detail: impl Into<String>) -> Result<T, InvariantViolation> {
    Err(InvariantViolation {
        invariant,
        path: path.into(),
        detail: detail.into(),
    })
}

/// Checks a span list: in bounds, ordered, non-overlapping.
pub fn check_spans(correspondences: &[Correspondence], text_len: usize) -> Result<(), String> {
    let mut prev_end = 0usize;
    let mut seen = HashSet::new();
    for (i, c) in correspondences.iter().enumerate() {
        let (start, end) = c.span;
        if start >= end {
            return Err(format!("span {i} is empty or inverted ({start}..{end})"));
        }
        if end > text_len {
            return Err(format!("span {i} ends at {end} beyond script length {text_len}"));
        }
        if start < prev_end {
            return Err(format!("span {i} starts at {start} before previous end {prev_end}"));
        }
        if !seen.insert(&c.shot_id) {
            return Err(format!("shot {} appears in more than one span", c.shot_id));
        }
        prev_end = end;
    }
    Ok(())
}

/// Checks that segments start at zero, are contiguous and strictly positive.
pub fn check_segments(segments: &[TimedSegment]) -> Result<(), String> {
    let mut cursor = 0u64;
    for (i, s) in segments.iter().enumerate() {
        if s.duration_ms == 0 {
            return Err(format!("segment {i} has zero duration"));
        }
        if s.start_ms != cursor {
            return Err(format!("segment {i} starts at {} ms, expected {cursor} ms", s.start_ms));
        }
        cursor = s.end_ms();
    }
    Ok(())
}

fn check_asset(path: &str, asset: &AssetRef) -> Result<(), InvariantViolation> {
    let rel = asset.uri.strip_prefix("assets/");
    let inside = rel.is_some_and(|r| !r.is_empty() && !r.contains("..") && !r.contains('\\') && !r.starts_with('/'));
    if !inside {
        return fail(
            Invariant::AssetLocation,
            format!("{path}.uri"),
            format!("{} is outside assets/", asset.uri),
        );
    }
    match (asset.kind.is_timed(), asset.duration_s) {
        (true, None) => {
            return fail(
                Invariant::AssetMetadata,
                format!("{path}.duration_s"),
                "timed media requires a duration",
            )
        }
        (false, Some(_)) => {
            return fail(
                Invariant::AssetMetadata,
                format!("{path}.duration_s"),
                "images carry no duration",
            )
        }
        (true, Some(d)) if !d.is_finite() || d < 0.0 => {
            return fail(
                Invariant::AssetMetadata,
                format!("{path}.duration_s"),
                format!("invalid duration {d}"),
            )
        }
        _ => {}
    }
    let has_dims = asset.width.is_some() && asset.height.is_some();
    if asset.kind.is_visual() != has_dims {
        return fail(
            Invariant::AssetMetadata,
            format!("{path}.width"),
            "dimensions present iff visual",
        );
    }
    if asset.checksum.len() != 64 || !asset.checksum.bytes().all(|b| b.is_ascii_hexdigit()) {
        return fail(
            Invariant::AssetMetadata,
            format!("{path}.checksum"),
            "checksum must be hex sha-256",
        );
    }
    Ok(())
}

fn check_registered(project: &Project, path: &str, asset: &AssetRef) -> Result<(), InvariantViolation> {
    match project.assets.get(&asset.asset_id) {
        None => fail(
            Invariant::ReferentialIntegrity,
            path,
            format!("unknown asset {}", asset.asset_id),
        ),
        Some(registered) if registered != asset => fail(
            Invariant::ReferentialIntegrity,
            path,
            format!("asset {} differs from its registry entry", asset.asset_id),
        ),
        Some(_) => Ok(()),
    }
}

/// Validates every invariant of the project; returns the first violation.
pub fn validate(project: &Project) -> Result<(), InvariantViolation> {
    if project.schema_version != SCHEMA_VERSION {
        return fail(
            Invariant::SchemaVersion,
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", project.schema_version),
        );
    }

    let mut version_ids = HashSet::new();
    for (i, v) in project.versions.iter().enumerate() {
        if !version_ids.insert(&v.version_id) {
            return fail(
                Invariant::ActiveVersion,
                format!("versions[{i}]"),
                format!("duplicate version id {}", v.version_id),
            );
        }
    }
    if !version_ids.contains(&project.active_version) {
        return fail(
            Invariant::ActiveVersion,
            "active_version",
            format!("unknown version {}", project.active_version),
        );
    }

    for (id, asset) in &project.assets {
        let path = format!("assets.{id}");
        if id != &asset.asset_id {
            return fail(
                Invariant::IdKeyMismatch,
                path,
                format!("keyed as {id} but id is {}", asset.asset_id),
            );
        }
        check_asset(&path, asset)?;
    }

    for (id, job) in &project.jobs {
        let path = format!("jobs.{id}");
        if id != &job.job_id {
            return fail(
                Invariant::IdKeyMismatch,
                path,
                format!("keyed as {id} but id is {}", job.job_id),
            );
        }
        for (i, a) in job.candidates.iter().enumerate() {
            if !project.assets.contains_key(a) {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.candidates[{i}]"),
                    format!("unknown asset {a}"),
                );
            }
        }
    }

    for (id, shot) in &project.shots {
        let path = format!("shots.{id}");
        if id != &shot.shot_id {
            return fail(
                Invariant::IdKeyMismatch,
                path,
                format!("keyed as {id} but id is {}", shot.shot_id),
            );
        }
        check_registered(project, &format!("{path}.asset"), &shot.asset)?;
        if !shot.asset.kind.is_visual() {
            return fail(
                Invariant::AssetMetadata,
                format!("{path}.asset"),
                "shots hold image or video assets",
            );
        }
        for (i, old) in shot.asset_history.iter().enumerate() {
            check_registered(project, &format!("{path}.asset_history[{i}]"), old)?;
        }
        match (&shot.provenance, &shot.generation) {
            (Provenance::Generated, None) => {
                return fail(
                    Invariant::GeneratedProvenance,
                    format!("{path}.generation"),
                    "generated shot lacks provenance",
                );
            }
            (_, Some(g)) => {
                if !project.jobs.contains_key(&g.job_id) {
                    return fail(
                        Invariant::ReferentialIntegrity,
                        format!("{path}.generation.job_id"),
                        format!("unknown job {}", g.job_id),
                    );
                }
                if let Some(k) = &g.base_keyframe {
                    if !project.assets.contains_key(k) {
                        return fail(
                            Invariant::ReferentialIntegrity,
                            format!("{path}.generation.base_keyframe"),
                            format!("unknown asset {k}"),
                        );
                    }
                }
            }
            _ => {}
        }
        if let Some(trim) = shot.trim {
            let max = shot.asset.duration_s.unwrap_or(0.0);
            let ok =
                shot.asset.kind == MediaKind::Video && trim.in_s >= 0.0 && trim.in_s < trim.out_s && trim.out_s <= max + 1e-9;
            if !ok {
                return fail(
                    Invariant::TrimRange,
                    format!("{path}.trim"),
                    format!("trim {}..{} outside 0..{max}", trim.in_s, trim.out_s),
                );
            }
        }
    }

    for (id, scene) in &project.scenes {
        let path = format!("scenes.{id}");
        if id != &scene.scene_id {
            return fail(
                Invariant::IdKeyMismatch,
                path,
                format!("keyed as {id} but id is {}", scene.scene_id),
            );
        }
        if !is_palette_color(&scene.color) {
            return fail(
                Invariant::SceneColor,
                format!("{path}.color"),
                format!("{} is not a palette entry", scene.color),
            );
        }
        let mut seen = HashSet::new();
        for (i, shot) in scene.shots.iter().enumerate() {
            if !project.shots.contains_key(shot) {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.shots[{i}]"),
                    format!("unknown shot {shot}"),
                );
            }
            if !seen.insert(shot) {
                return fail(
                    Invariant::SceneShotsUnique,
                    format!("{path}.shots[{i}]"),
                    format!("duplicate shot {shot}"),
                );
            }
        }
        match (&scene.keyframe_shot, scene.shots.is_empty()) {
            (Some(k), false) if !scene.shots.contains(k) => {
                return fail(
                    Invariant::KeyframeMembership,
                    format!("{path}.keyframe_shot"),
                    format!("{k} is not in the scene"),
                );
            }
            (None, false) => {
                return fail(
                    Invariant::KeyframeMembership,
                    format!("{path}.keyframe_shot"),
                    "non-empty scene needs a keyframe",
                );
            }
            (Some(k), true) => {
                return fail(
                    Invariant::KeyframeMembership,
                    format!("{path}.keyframe_shot"),
                    format!("empty scene has keyframe {k}"),
                );
            }
            _ => {}
        }
        for (i, c) in scene.correspondences.iter().enumerate() {
            if !scene.shots.contains(&c.shot_id) {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.correspondences[{i}]"),
                    format!("shot {} is not in the scene", c.shot_id),
                );
            }
        }
        if let Err(e) = check_spans(&scene.correspondences, scene.script.char_len()) {
            return fail(Invariant::CorrespondenceSpans, format!("{path}.correspondences"), e);
        }
        let len = scene.script.char_len();
        for (i, span) in scene.script.spans.iter().enumerate() {
            if span.start > span.end || span.end > len {
                return fail(
                    Invariant::CorrespondenceSpans,
                    format!("{path}.script.spans[{i}]"),
                    "span outside script",
                );
            }
        }
        for (field, audio) in [("narration", &scene.narration), ("music", &scene.music)] {
            if let Some(a) = audio {
                check_registered(project, &format!("{path}.{field}"), a)?;
                if a.kind != MediaKind::Audio {
                    return fail(Invariant::AssetMetadata, format!("{path}.{field}"), "expected an audio asset");
                }
            }
        }
        if let Some(timing) = &scene.timing {
            if let Err(e) = check_segments(timing) {
                return fail(Invariant::TimingContiguity, format!("{path}.timing"), e);
            }
            for (i, s) in timing.iter().enumerate() {
                if !scene.shots.contains(&s.shot_id) {
                    return fail(
                        Invariant::ReferentialIntegrity,
                        format!("{path}.timing[{i}]"),
                        format!("shot {} is not in the scene", s.shot_id),
                    );
                }
            }
        }
    }

    let mut owned = BTreeSet::new();
    for (vi, version) in project.versions.iter().enumerate() {
        let path = format!("versions[{vi}]");
        let mut in_version = HashSet::new();
        let mut shot_owner = HashSet::new();
        for (i, scene_id) in version.scenes.iter().enumerate() {
            let Some(scene) = project.scenes.get(scene_id) else {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.scenes[{i}]"),
                    format!("unknown scene {scene_id}"),
                );
            };
            if !in_version.insert(scene_id) {
                return fail(
                    Invariant::VersionSceneUnique,
                    format!("{path}.scenes[{i}]"),
                    format!("scene {scene_id} repeated"),
                );
            }
            if !owned.insert(scene_id.clone()) {
                return fail(
                    Invariant::SceneOwnership,
                    format!("{path}.scenes[{i}]"),
                    format!("scene {scene_id} belongs to more than one version"),
                );
            }
            for shot in &scene.shots {
                if !shot_owner.insert(shot) {
                    return fail(
                        Invariant::ShotMembershipPerVersion,
                        format!("{path}.scenes[{i}]"),
                        format!("shot {shot} is in more than one scene of version {}", version.version_id),
                    );
                }
            }
        }
    }
    if let Some(orphan) = project.scenes.keys().find(|k| !owned.contains(*k)) {
        return fail(
            Invariant::SceneOwnership,
            format!("scenes.{orphan}"),
            "scene belongs to no version",
        );
    }

    let mut suggestion_ids = HashSet::new();
    for (i, s) in project.suggestions.iter().enumerate() {
        let path = format!("suggestions[{i}]");
        if !suggestion_ids.insert(&s.suggestion_id) {
            return fail(
                Invariant::SuggestionShape,
                path,
                format!("duplicate suggestion id {}", s.suggestion_id),
            );
        }
        if s.tips.is_empty() || s.tips.len() > 2 {
            return fail(
                Invariant::SuggestionShape,
                format!("{path}.tips"),
                format!("{} tips, expected 1-2", s.tips.len()),
            );
        }
        match (s.level, &s.scene_id) {
            (SuggestionLevel::Scene, None) => {
                return fail(
                    Invariant::SuggestionShape,
                    format!("{path}.scene_id"),
                    "scene-level suggestion without scene",
                );
            }
            (SuggestionLevel::Scene, Some(scene)) if !project.scenes.contains_key(scene) => {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.scene_id"),
                    format!("unknown scene {scene}"),
                );
            }
            (SuggestionLevel::Story, Some(_)) => {
                return fail(
                    Invariant::SuggestionShape,
                    format!("{path}.scene_id"),
                    "story-level suggestion bound to a scene",
                );
            }
            _ => {}
        }
        for (j, shot) in s.relevant_shot_ids.iter().enumerate() {
            if !project.shots.contains_key(shot) {
                return fail(
                    Invariant::ReferentialIntegrity,
                    format!("{path}.relevant_shot_ids[{j}]"),
                    format!("unknown shot {shot}"),
                );
            }
        }
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::*;

    fn asset(id: &str, kind: MediaKind) -> AssetRef {
        AssetRef {
            asset_id: AssetId::new(id),
            kind,
            uri: format!("assets/{id}.bin"),
            duration_s: kind.is_timed().then_some(3.0),
            width: kind.is_visual().then_some(640),
            height: kind.is_visual().then_some(360),
            checksum: "a".repeat(64),
        }
    }

    fn sample() -> Project {
        let mut p = Project::new("p");
        let a = asset("a1", MediaKind::Video);
        p.assets.insert(a.asset_id.clone(), a.clone());
        let shot = Shot {
            shot_id: ShotId::new("s1"),
            asset: a,
            provenance: Provenance::Captured,
            description: "d".into(),
            canvas_pos: CanvasPos::default(),
            generation: None,
            trim: None,
            asset_history: vec![],
        };
        p.shots.insert(shot.shot_id.clone(), shot);
        let mut scene = Scene::new(SceneId::new("c1"), "Intro", palette_color(0));
        scene.shots.push(ShotId::new("s1"));
        scene.normalize_keyframe();
        p.scenes.insert(scene.scene_id.clone(), scene);
        let active = p.active_version.clone();
        p.version_mut(&active).unwrap().scenes.push(SceneId::new("c1"));
        p
    }

    #[test]
    fn sample_is_valid() {
        validate(&sample()).unwrap();
    }

    #[test]
    fn dangling_shot_reference_is_named() {
        let mut p = sample();
        p.scenes
            .get_mut(&SceneId::new("c1"))
            .unwrap()
            .shots
            .push(ShotId::new("ghost"));
        let err = validate(&p).unwrap_err();
        assert_eq!(err.invariant, Invariant::ReferentialIntegrity);
        assert!(err.detail.contains("ghost"));
    }

    #[test]
    fn trim_outside_duration_rejected() {
        let mut p = sample();
        p.shots.get_mut(&ShotId::new("s1")).unwrap().trim = Some(Trim { in_s: 1.0, out_s: 4.0 });
        assert_eq!(validate(&p).unwrap_err().invariant, Invariant::TrimRange);
    }

    #[test]
    fn generated_shot_requires_provenance() {
        let mut p = sample();
        p.shots.get_mut(&ShotId::new("s1")).unwrap().provenance = Provenance::Generated;
        assert_eq!(validate(&p).unwrap_err().invariant, Invariant::GeneratedProvenance);
    }

    #[test]
    fn shot_in_two_scenes_of_one_version_rejected() {
        let mut p = sample();
        let mut other = Scene::new(SceneId::new("c2"), "Other", palette_color(1));
        other.shots.push(ShotId::new("s1"));
        other.normalize_keyframe();
        p.scenes.insert(other.scene_id.clone(), other);
        let active = p.active_version.clone();
        p.version_mut(&active).unwrap().scenes.push(SceneId::new("c2"));
        assert_eq!(validate(&p).unwrap_err().invariant, Invariant::ShotMembershipPerVersion);
    }

    #[test]
    fn asset_uri_must_stay_inside_assets() {
        let mut p = sample();
        let mut a = asset("a2", MediaKind::Image);
        a.uri = "assets/../secret.png".into();
        p.assets.insert(a.asset_id.clone(), a);
        assert_eq!(validate(&p).unwrap_err().invariant, Invariant::AssetLocation);
    }

    #[test]
    fn spans_must_be_ordered() {
        let c = |id: &str, s, e| Correspondence {
            shot_id: ShotId::new(id),
            span: (s, e),
        };
        assert!(check_spans(&[c("a", 0, 5), c("b", 5, 9)], 9).is_ok());
        assert!(check_spans(&[c("a", 0, 5), c("b", 4, 9)], 9).is_err());
        assert!(check_spans(&[c("a", 0, 5), c("a", 5, 9)], 9).is_err());
        assert!(check_spans(&[c("a", 0, 10)], 9).is_err());
        assert!(check_spans(&[c("a", 3, 3)], 9).is_err());
    }
}
