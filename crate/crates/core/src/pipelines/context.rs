//! Plain-text renderings of project state for prompts.

use crate::ids::ShotId;
use crate::model::{Project, Scene, Shot, StoryVersion};

pub fn story(project: &Project) -> String {
    let t = project.story_context.trim();
    if t.is_empty() {
        "(none yet)".into()
    } else {
        t.to_string()
    }
}

pub fn shot_line(shot: &Shot) -> String {
    let mut meta = format!("{}, {:?}", shot.asset.kind, shot.provenance).to_lowercase();
    if let Some(d) = shot.asset.duration_s {
        meta.push_str(&format!(", {d:.1} s"));
    }
    let desc = if shot.is_described() {
        shot.description.trim()
    } else {
        "(not described)"
    };
    format!("- {} ({meta}): {desc}", shot.shot_id)
}

pub fn shots(project: &Project, ids: &[ShotId]) -> String {
    let lines: Vec<String> = ids.iter().filter_map(|id| project.shots.get(id)).map(shot_line).collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

/// One scene with its script and shots.
pub fn scene(project: &Project, scene: &Scene) -> String {
    let mut out = format!("Scene {} \"{}\"", scene.scene_id, scene.title);
    if !scene.description.trim().is_empty() {
        out.push_str(&format!(": {}", scene.description.trim()));
    }
    if !scene.script.is_blank() {
        out.push_str(&format!("\n  Script: {}", scene.script.text.trim()));
    }
    for id in &scene.shots {
        if let Some(shot) = project.shots.get(id) {
            out.push_str(&format!("\n  {}", shot_line(shot)));
        }
    }
    out
}

pub fn scenes(project: &Project, version: &StoryVersion) -> String {
    let blocks: Vec<String> = version
        .scenes
        .iter()
        .filter_map(|id| project.scenes.get(id))
        .map(|s| scene(project, s))
        .collect();
    if blocks.is_empty() {
        "(no scenes yet)".into()
    } else {
        blocks.join("\n")
    }
}

pub fn version(project: &Project, version: &StoryVersion) -> String {
    let mut out = format!("Version {} \"{}\"", version.version_id, version.name);
    if let Some(p) = &version.variation_prompt {
        out.push_str(&format!(" (direction: {p})"));
    }
    out.push('\n');
    out.push_str(&scenes(project, version));
    out
}

pub fn list_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".into()
    } else {
        items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    }
}

pub fn or_none(text: Option<&str>) -> String {
    match text.map(str::trim) {
        Some(t) if !t.is_empty() => t.to_string(),
        _ => "(none)".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::two_scene_project;

    #[test]
    fn scene_block_lists_shots_in_order() {
        let p = two_scene_project();
        let block = scenes(&p, p.active());
        let a = block.find("shot-1").unwrap();
        let b = block.find("shot-2").unwrap();
        let c = block.find("shot-3").unwrap();
        assert!(a < b && b < c);
        assert!(block.contains("Morning at the harbor"));
        assert!(!block.contains("shot-4"));
    }
}
