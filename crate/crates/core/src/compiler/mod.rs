//! Edit decision lists and rough-cut rendering.
//!
//! All timeline values are integer milliseconds so that durations add up
//! exactly at every level. Rendering is delegated to an external command.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::alignment::{scene_timings, AlignError};
use crate::ids::{AssetId, SceneId, ShotId, VersionId};
use crate::media::{self, shell_quote};
use crate::model::{secs_to_ms, AssetRef, MediaKind, Project, Provenance, Scene, TimedSegment};

pub const EDL_SCHEMA: &str = "storyloom.edl/1";
/// Music level relative to narration.
pub const MUSIC_GAIN_DB: f64 = -18.0;
pub const DURATION_TOLERANCE_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFormat {
    pub width: u32,
    pub height: u32,
    pub frame_rate: u32,
}

impl Default for OutputFormat {
    fn default() -> Self {
        Self {
            width: 1920,
            height: 1080,
            frame_rate: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryMode {
    /// Plays the source from `source_in_ms` to `source_out_ms`.
    Play,
    /// Shows the still frame at `source_in_ms` for the whole entry.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdlEntry {
    pub scene_id: SceneId,
    pub shot_id: ShotId,
    pub asset_id: AssetId,
    pub uri: String,
    pub media: MediaKind,
    pub mode: EntryMode,
    pub source_in_ms: u64,
    pub source_out_ms: u64,
    pub timeline_start_ms: u64,
    pub duration_ms: u64,
    /// Source audio is dropped.
    pub mute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub scene_id: SceneId,
    pub asset_id: AssetId,
    pub uri: String,
    pub timeline_start_ms: u64,
    pub source_in_ms: u64,
    pub duration_ms: u64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpan {
    pub scene_id: SceneId,
    pub title: String,
    pub timeline_start_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edl {
    pub schema: String,
    pub width: u32,
    pub height: u32,
    pub frame_rate: u32,
    /// Sources with another aspect ratio are letterboxed or pillarboxed.
    pub fit: String,
    pub scenes: Vec<SceneSpan>,
    pub entries: Vec<EdlEntry>,
    pub narration: Vec<AudioClip>,
    pub music: Vec<AudioClip>,
    pub total_duration_ms: u64,
    pub total_duration_s: f64,
}

impl Edl {
    fn empty(format: OutputFormat) -> Self {
        Self {
            schema: EDL_SCHEMA.into(),
            width: format.width,
            height: format.height,
            frame_rate: format.frame_rate,
            fit: "letterbox".into(),
            scenes: Vec::new(),
            entries: Vec::new(),
            narration: Vec::new(),
            music: Vec::new(),
            total_duration_ms: 0,
            total_duration_s: 0.0,
        }
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("edl serializes");
        s.push('\n');
        s
    }

    fn append(&mut self, other: Edl) {
        let offset = self.total_duration_ms;
        self.scenes.extend(other.scenes.into_iter().map(|mut s| {
            s.timeline_start_ms += offset;
            s
        }));
        self.entries.extend(other.entries.into_iter().map(|mut e| {
            e.timeline_start_ms += offset;
            e
        }));
        let shift = |mut c: AudioClip| {
            c.timeline_start_ms += offset;
            c
        };
        self.narration.extend(other.narration.into_iter().map(shift));
        self.music.extend(other.music.into_iter().map(shift));
        self.total_duration_ms += other.total_duration_ms;
        self.total_duration_s = self.total_duration_ms as f64 / 1000.0;
    }

    /// Checks contiguity and duration accounting.
    pub fn check(&self) -> Result<(), String> {
        let mut at = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.timeline_start_ms != at {
                return Err(format!("entries[{i}] starts at {} instead of {at}", e.timeline_start_ms));
            }
            if e.duration_ms == 0 {
                return Err(format!("entries[{i}] is empty"));
            }
            match e.mode {
                EntryMode::Play if e.source_out_ms - e.source_in_ms != e.duration_ms => {
                    return Err(format!("entries[{i}] source range does not match its duration"))
                }
                EntryMode::Hold if e.source_in_ms != e.source_out_ms => {
                    return Err(format!("entries[{i}] hold has a source range"))
                }
                _ => {}
            }
            at += e.duration_ms;
        }
        if at != self.total_duration_ms {
            return Err(format!("entries sum to {at} ms, total says {}", self.total_duration_ms));
        }
        let scenes: u64 = self.scenes.iter().map(|s| s.duration_ms).sum();
        if scenes != self.total_duration_ms {
            return Err("scene spans do not sum to the total".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("scene {0} has no shots")]
    EmptyScene(SceneId),
    #[error("version {0} has no scenes")]
    EmptyVersion(VersionId),
    #[error("unknown {kind} {id}")]
    UnknownId { kind: &'static str, id: String },
    #[error("asset {0} is missing")]
    MissingAsset(AssetId),
    #[error("timing: {0}")]
    Timing(#[from] AlignError),
    #[error("segments do not match scene shots: {0}")]
    BadSegments(String),
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::EmptyScene(_) => "empty_scene",
            CompileError::EmptyVersion(_) => "empty_version",
            CompileError::UnknownId { .. } => "unknown_id",
            CompileError::MissingAsset(_) => "missing_asset",
            CompileError::Timing(_) => "timing_error",
            CompileError::BadSegments(_) => "invalid_segments",
        }
    }
}

fn registered<'a>(project: &'a Project, asset: &AssetRef) -> Result<&'a AssetRef, CompileError> {
    project
        .assets
        .get(&asset.asset_id)
        .ok_or_else(|| CompileError::MissingAsset(asset.asset_id.clone()))
}

/// EDL for one scene laid out by `segments`.
pub fn build_edl(project: &Project, scene: &Scene, segments: &[TimedSegment], format: OutputFormat) -> Result<Edl, CompileError> {
    if scene.shots.is_empty() || segments.is_empty() {
        return Err(CompileError::EmptyScene(scene.scene_id.clone()));
    }
    crate::model::check_segments(segments).map_err(CompileError::BadSegments)?;
    let mut edl = Edl::empty(format);
    let mut at = 0u64;
    for seg in segments {
        if !scene.shots.contains(&seg.shot_id) {
            return Err(CompileError::BadSegments(format!("shot {} is not in the scene", seg.shot_id)));
        }
        let shot = project.shots.get(&seg.shot_id).ok_or_else(|| CompileError::UnknownId {
            kind: "shot",
            id: seg.shot_id.to_string(),
        })?;
        let asset = registered(project, &shot.asset)?;
        let entry = |mode, source_in_ms, source_out_ms, start, duration_ms| EdlEntry {
            scene_id: scene.scene_id.clone(),
            shot_id: shot.shot_id.clone(),
            asset_id: asset.asset_id.clone(),
            uri: asset.uri.clone(),
            media: asset.kind,
            mode,
            source_in_ms,
            source_out_ms,
            timeline_start_ms: start,
            duration_ms,
            mute: asset.kind == MediaKind::Image || shot.provenance == Provenance::Generated,
        };
        match asset.kind {
            MediaKind::Video => {
                let length = asset.duration_ms().unwrap_or(0);
                let (src_in, src_out) = match &shot.trim {
                    Some(t) => (secs_to_ms(t.in_s), secs_to_ms(t.out_s).min(length)),
                    None => (0, length),
                };
                let available = src_out.saturating_sub(src_in);
                let play = available.min(seg.duration_ms);
                if play > 0 {
                    edl.entries.push(entry(EntryMode::Play, src_in, src_in + play, at, play));
                }
                if play < seg.duration_ms {
                    let frame = src_in + play;
                    edl.entries
                        .push(entry(EntryMode::Hold, frame, frame, at + play, seg.duration_ms - play));
                }
            }
            _ => edl.entries.push(entry(EntryMode::Hold, 0, 0, at, seg.duration_ms)),
        }
        at += seg.duration_ms;
    }
    edl.scenes.push(SceneSpan {
        scene_id: scene.scene_id.clone(),
        title: scene.title.clone(),
        timeline_start_ms: 0,
        duration_ms: at,
    });
    let clip = |asset: &AssetRef, gain_db| -> Result<AudioClip, CompileError> {
        let a = registered(project, asset)?;
        Ok(AudioClip {
            scene_id: scene.scene_id.clone(),
            asset_id: a.asset_id.clone(),
            uri: a.uri.clone(),
            timeline_start_ms: 0,
            source_in_ms: 0,
            // Longer audio is cut at the scene end; shorter audio leaves silence.
            duration_ms: a.duration_ms().unwrap_or(0).min(at),
            gain_db,
        })
    };
    if let Some(n) = &scene.narration {
        edl.narration.push(clip(n, 0.0)?);
    }
    if let Some(m) = &scene.music {
        edl.music.push(clip(m, MUSIC_GAIN_DB)?);
    }
    edl.narration.retain(|c| c.duration_ms > 0);
    edl.music.retain(|c| c.duration_ms > 0);
    edl.total_duration_ms = at;
    edl.total_duration_s = at as f64 / 1000.0;
    Ok(edl)
}

/// EDL for a scene using its stored or derived timings.
pub fn compile_scene(project: &Project, scene_id: &SceneId, format: OutputFormat) -> Result<Edl, CompileError> {
    let scene = project.scenes.get(scene_id).ok_or_else(|| CompileError::UnknownId {
        kind: "scene",
        id: scene_id.to_string(),
    })?;
    if scene.shots.is_empty() {
        return Err(CompileError::EmptyScene(scene_id.clone()));
    }
    let segments = scene_timings(scene)?;
    build_edl(project, scene, &segments, format)
}

/// Scene EDLs of a version concatenated in story order.
pub fn compile_story(project: &Project, version_id: &VersionId, format: OutputFormat) -> Result<Edl, CompileError> {
    let version = project.version(version_id).ok_or_else(|| CompileError::UnknownId {
        kind: "version",
        id: version_id.to_string(),
    })?;
    if version.scenes.is_empty() {
        return Err(CompileError::EmptyVersion(version_id.clone()));
    }
    let mut edl = Edl::empty(format);
    for scene_id in &version.scenes {
        edl.append(compile_scene(project, scene_id, format)?);
    }
    Ok(edl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    EdlOnly,
    Render,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderOutput {
    pub edl_path: PathBuf,
    pub video_path: Option<PathBuf>,
    pub probed_duration_s: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("render mode needs a configured render command")]
    MissingRenderCommand,
    #[error("render command failed ({status}): {log}")]
    RenderCommandFailed { status: String, log: String },
    #[error("rendered duration {actual_s:.3} s differs from {expected_s:.3} s")]
    DurationMismatch { expected_s: f64, actual_s: f64 },
    #[error("cannot probe render output: {0}")]
    Probe(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RenderError {
    pub fn code(&self) -> &'static str {
        match self {
            RenderError::MissingRenderCommand => "configuration_error",
            RenderError::RenderCommandFailed { .. } => "render_command_failed",
            RenderError::DurationMismatch { .. } => "duration_mismatch",
            RenderError::Probe(_) => "media_probe_error",
            RenderError::Io(_) => "io_error",
        }
    }
}

/// Writes `<stem>.edl.json` under `out_dir` and, in render mode, runs the
/// render command (`{edl}`, `{out}`, `{root}` placeholders) to produce
/// `<stem>.mp4`, whose probed length must match the EDL.
pub fn render(
    edl: &Edl,
    mode: RenderMode,
    out_dir: &Path,
    stem: &str,
    command: Option<&str>,
    project_root: &Path,
) -> Result<RenderOutput, RenderError> {
    if mode == RenderMode::Render && command.is_none() {
        return Err(RenderError::MissingRenderCommand);
    }
    std::fs::create_dir_all(out_dir)?;
    let edl_path = out_dir.join(format!("{stem}.edl.json"));
    std::fs::write(&edl_path, edl.to_canonical_json())?;
    let Some(template) = command.filter(|_| mode == RenderMode::Render) else {
        return Ok(RenderOutput {
            edl_path,
            video_path: None,
            probed_duration_s: None,
        });
    };
    let video_path = out_dir.join(format!("{stem}.mp4"));
    // The command runs inside the project, so hand it absolute paths.
    let abs = |p: &Path| std::path::absolute(p).map(|p| shell_quote(&p.display().to_string()));
    let cmd = template
        .replace("{edl}", &abs(&edl_path)?)
        .replace("{out}", &abs(&video_path)?)
        .replace("{root}", &abs(project_root)?);
    let output = Command::new("sh").arg("-c").arg(&cmd).current_dir(project_root).output()?;
    if !output.status.success() {
        let mut log = String::from_utf8_lossy(&output.stderr).into_owned();
        log.push_str(&String::from_utf8_lossy(&output.stdout));
        return Err(RenderError::RenderCommandFailed {
            status: output.status.to_string(),
            log,
        });
    }
    let bytes = std::fs::read(&video_path)?;
    let info = media::probe_mp4(&bytes).map_err(RenderError::Probe)?;
    if (info.duration_s - edl.total_duration_s).abs() > DURATION_TOLERANCE_S {
        return Err(RenderError::DurationMismatch {
            expected_s: edl.total_duration_s,
            actual_s: info.duration_s,
        });
    }
    Ok(RenderOutput {
        edl_path,
        video_path: Some(video_path),
        probed_duration_s: Some(info.duration_s),
    })
}

/// Codec-free stand-in renderer: writes an MP4 container whose header
/// declares the EDL's total length and format.
pub fn render_placeholder(edl_path: &Path, out: &Path) -> Result<(), RenderError> {
    let text = std::fs::read_to_string(edl_path)?;
    let edl: Edl = serde_json::from_str(&text).map_err(|e| RenderError::Probe(e.to_string()))?;
    let bytes = media::placeholder_mp4(edl.total_duration_ms, edl.width, edl.height, &[], "rough-cut");
    std::fs::write(out, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{captured_shot, fake_asset, two_scene_project};
    use crate::model::{apply_mutation, Mutation, Trim};

    fn seg(id: &str, start: u64, d: u64) -> TimedSegment {
        TimedSegment {
            shot_id: ShotId::new(id),
            start_ms: start,
            duration_ms: d,
        }
    }

    #[test]
    fn two_four_second_segments_make_eight() {
        let p = two_scene_project();
        let scene = &p.scenes[&SceneId::new("scene-a")];
        let edl = build_edl(
            &p,
            scene,
            &[seg("shot-1", 0, 4000), seg("shot-2", 4000, 4000)],
            OutputFormat::default(),
        )
        .unwrap();
        assert_eq!(edl.total_duration_s, 8.0);
        assert!(edl.check().is_ok());
    }

    #[test]
    fn short_video_plays_then_holds_last_frame() {
        let mut p = two_scene_project();
        let clip = fake_asset("clip", MediaKind::Video, Some(3.0));
        let m = Mutation::batch(vec![
            Mutation::RegisterAsset { asset: clip.clone() },
            Mutation::AddShot {
                shot: captured_shot("shot-v", &clip, "clip"),
            },
            Mutation::MoveShot {
                shot_id: ShotId::new("shot-v"),
                to: Some(crate::model::ShotSlot {
                    scene_id: SceneId::new("scene-b"),
                    index: 0,
                }),
                version_id: None,
            },
        ]);
        p = apply_mutation(&p, &m).unwrap().project;
        let scene = &p.scenes[&SceneId::new("scene-b")];
        let edl = build_edl(&p, scene, &[seg("shot-v", 0, 5000)], OutputFormat::default()).unwrap();
        let modes: Vec<(EntryMode, u64)> = edl.entries.iter().map(|e| (e.mode, e.duration_ms)).collect();
        assert_eq!(modes, vec![(EntryMode::Play, 3000), (EntryMode::Hold, 2000)]);
        assert_eq!(edl.entries[1].source_in_ms, 3000);
        assert_eq!(edl.total_duration_ms, 5000);
        assert!(edl.check().is_ok());

        // A trim shifts the source window.
        let trim = Mutation::SetShotTrim {
            shot_id: ShotId::new("shot-v"),
            trim: Some(Trim { in_s: 1.0, out_s: 2.5 }),
        };
        let p = apply_mutation(&p, &trim).unwrap().project;
        let edl = build_edl(
            &p,
            &p.scenes[&SceneId::new("scene-b")],
            &[seg("shot-v", 0, 1000)],
            OutputFormat::default(),
        )
        .unwrap();
        assert_eq!((edl.entries[0].source_in_ms, edl.entries[0].source_out_ms), (1000, 2000));
    }

    #[test]
    fn empty_scene_and_version() {
        let p = two_scene_project();
        let mut empty = p.scenes[&SceneId::new("scene-a")].clone();
        empty.shots.clear();
        assert!(matches!(
            build_edl(&p, &empty, &[], OutputFormat::default()),
            Err(CompileError::EmptyScene(_))
        ));
        let mut q = p.clone();
        let v = q.active_version.clone();
        q.version_mut(&v).unwrap().scenes.clear();
        assert!(matches!(
            compile_story(&q, &v, OutputFormat::default()),
            Err(CompileError::EmptyVersion(_))
        ));
    }

    #[test]
    fn story_concatenates_and_follows_scene_order() {
        let p = two_scene_project();
        let v = p.active_version.clone();
        let edl = compile_story(&p, &v, OutputFormat::default()).unwrap();
        assert_eq!(edl.total_duration_ms, 12_000);
        assert!(edl.check().is_ok());
        let order: Vec<&str> = edl.entries.iter().map(|e| e.scene_id.as_str()).collect();
        assert_eq!(order, vec!["scene-a", "scene-a", "scene-b"]);
        let swapped = apply_mutation(
            &p,
            &Mutation::ReorderScenes {
                version_id: v.clone(),
                order: vec![SceneId::new("scene-b"), SceneId::new("scene-a")],
            },
        )
        .unwrap()
        .project;
        let edl2 = compile_story(&swapped, &v, OutputFormat::default()).unwrap();
        let order: Vec<&str> = edl2.entries.iter().map(|e| e.scene_id.as_str()).collect();
        assert_eq!(order, vec!["scene-b", "scene-a", "scene-a"]);
        assert_eq!(edl2.entries[1].timeline_start_ms, 4000);
    }

    #[test]
    fn music_is_cut_at_scene_end_and_attenuated() {
        let mut p = two_scene_project();
        let music = fake_asset("song", MediaKind::Audio, Some(30.0));
        let m = Mutation::batch(vec![
            Mutation::RegisterAsset { asset: music.clone() },
            Mutation::SetSceneMusic {
                scene_id: SceneId::new("scene-b"),
                music: Some(music),
            },
        ]);
        p = apply_mutation(&p, &m).unwrap().project;
        let edl = compile_story(&p, &p.active_version.clone(), OutputFormat::default()).unwrap();
        assert_eq!(edl.music.len(), 1);
        assert_eq!(edl.music[0].timeline_start_ms, 8000);
        assert_eq!(edl.music[0].duration_ms, 4000);
        assert_eq!(edl.music[0].gain_db, MUSIC_GAIN_DB);
    }

    #[test]
    fn render_modes() {
        let p = two_scene_project();
        let edl = compile_story(&p, &p.active_version.clone(), OutputFormat::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            render(&edl, RenderMode::Render, dir.path(), "x", None, dir.path()),
            Err(RenderError::MissingRenderCommand)
        ));
        let out = render(&edl, RenderMode::EdlOnly, dir.path(), "x", None, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(out.edl_path).unwrap(), edl.to_canonical_json());
        let failing = render(
            &edl,
            RenderMode::Render,
            dir.path(),
            "x",
            Some("echo broken >&2; exit 3"),
            dir.path(),
        );
        match failing {
            Err(RenderError::RenderCommandFailed { log, .. }) => assert!(log.contains("broken")),
            other => panic!("{other:?}"),
        }
    }
}
