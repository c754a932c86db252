//! Hand-built and randomly generated projects for tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use super::mutation::{apply_mutation, Mutation, ShotSlot};
use super::types::*;
use super::version::duplicate_version;
use crate::ids::{AssetId, SceneId, ShotId, SuggestionId};

/// An asset entry with plausible metadata and a checksum derived from `id`.
pub fn fake_asset(id: &str, kind: MediaKind, duration_s: Option<f64>) -> AssetRef {
    AssetRef {
        asset_id: AssetId::new(id),
        kind,
        uri: format!(
            "assets/{id}.{}",
            match kind {
                MediaKind::Image => "png",
                MediaKind::Video => "mp4",
                MediaKind::Audio => "wav",
            }
        ),
        duration_s: if kind.is_timed() {
            Some(duration_s.unwrap_or(4.0))
        } else {
            None
        },
        width: kind.is_visual().then_some(1280),
        height: kind.is_visual().then_some(720),
        checksum: crate::ids::sha256_hex(id.as_bytes()),
    }
}

pub fn captured_shot(id: &str, asset: &AssetRef, description: &str) -> Shot {
    Shot {
        shot_id: ShotId::new(id),
        asset: asset.clone(),
        provenance: Provenance::Captured,
        description: description.into(),
        canvas_pos: CanvasPos::default(),
        generation: None,
        trim: None,
        asset_history: Vec::new(),
    }
}

/// Scenes "scene-a" (shot-1, shot-2) and "scene-b" (shot-3) in the active
/// version, plus one ungrouped shot-4.
pub fn two_scene_project() -> Project {
    let mut p = Project::new("fixture");
    let descriptions = [
        "Sunrise over the harbor",
        "Boats leaving the pier",
        "Market stalls opening",
        "A quiet alley at dusk",
    ];
    for (i, d) in descriptions.iter().enumerate() {
        let kind = if i % 2 == 0 { MediaKind::Image } else { MediaKind::Video };
        let asset = fake_asset(&format!("asset-{}", i + 1), kind, Some(3.0 + i as f64));
        p.assets.insert(asset.asset_id.clone(), asset.clone());
        let shot = captured_shot(&format!("shot-{}", i + 1), &asset, d);
        p.shots.insert(shot.shot_id.clone(), shot);
    }
    let mut a = Scene::new(SceneId::new("scene-a"), "A", palette_color(0));
    a.shots = vec![ShotId::new("shot-1"), ShotId::new("shot-2")];
    a.description = "Morning at the harbor".into();
    a.normalize_keyframe();
    let mut b = Scene::new(SceneId::new("scene-b"), "B", palette_color(1));
    b.shots = vec![ShotId::new("shot-3")];
    b.description = "The market wakes".into();
    b.normalize_keyframe();
    let active = p.active_version.clone();
    let v = p.version_mut(&active).expect("active");
    v.scenes = vec![a.scene_id.clone(), b.scene_id.clone()];
    p.scenes.insert(a.scene_id.clone(), a);
    p.scenes.insert(b.scene_id.clone(), b);
    p
}

const WORDS: [&str; 16] = [
    "harbor", "light", "we", "walked", "slowly", "toward", "the", "pier", "fog", "lifted", "and", "gulls", "circled", "above",
    "quiet", "boats",
];

fn words<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("nonempty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fresh(rng: &mut impl Rng, prefix: &str) -> String {
    format!("{prefix}-{:08x}", rng.random::<u32>())
}

fn pick<'a, T, R: Rng>(rng: &mut R, items: impl IntoIterator<Item = &'a T>) -> Option<&'a T>
where
    T: 'a,
{
    items.into_iter().collect::<Vec<_>>().choose(rng).copied()
}

/// Contiguous spans covering `text`, one per shot, in order.
fn partition_spans<R: Rng>(rng: &mut R, text_len: usize, shots: &[ShotId]) -> Vec<Correspondence> {
    let mut cuts: Vec<usize> = (0..shots.len().saturating_sub(1))
        .map(|_| rng.random_range(0..=text_len))
        .collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(text_len);
    shots
        .iter()
        .zip(bounds.windows(2))
        .filter(|(_, w)| w[1] > w[0])
        .map(|(s, w)| Correspondence {
            shot_id: s.clone(),
            span: (w[0], w[1]),
        })
        .collect()
}

/// A random edit against `p`. Most are valid; some reference missing ids
/// or break an invariant and are expected to be rejected.
pub fn random_mutation<R: Rng>(p: &Project, rng: &mut R) -> Mutation {
    let shot_ids: Vec<&ShotId> = p.shots.keys().collect();
    let scene_ids: Vec<&SceneId> = p.scenes.keys().collect();
    let any_shot = |rng: &mut R| {
        shot_ids
            .choose(rng)
            .map(|s| (*s).clone())
            .unwrap_or_else(|| ShotId::new("shot-missing"))
    };
    let any_scene = |rng: &mut R| {
        scene_ids
            .choose(rng)
            .map(|s| (*s).clone())
            .unwrap_or_else(|| SceneId::new("scene-missing"))
    };
    match rng.random_range(0..26u32) {
        0..=3 => {
            let kind = if rng.random_bool(0.5) {
                MediaKind::Image
            } else {
                MediaKind::Video
            };
            let asset = fake_asset(&fresh(rng, "asset"), kind, Some(rng.random_range(1..12) as f64));
            let mut shot = captured_shot(&fresh(rng, "shot"), &asset, &words(rng, 4));
            if rng.random_bool(0.3) {
                shot.description.clear();
            }
            Mutation::batch(vec![Mutation::RegisterAsset { asset }, Mutation::AddShot { shot }])
        }
        4 | 5 => {
            let v = pick(rng, &p.versions).expect("a project has a version");
            let index = rng.random_range(0..=v.scenes.len());
            let mut scene = Scene::new(
                SceneId::new(fresh(rng, "scene")),
                words(rng, 2),
                palette_color(rng.random_range(0..8)),
            );
            scene.description = words(rng, 5);
            Mutation::AddScene {
                version_id: v.version_id.clone(),
                index,
                scene,
            }
        }
        6..=8 => {
            let shot_id = any_shot(rng);
            let v = pick(rng, &p.versions).expect("a project has a version");
            let to = pick(rng, &v.scenes).and_then(|sid| p.scenes.get(sid)).map(|s| ShotSlot {
                scene_id: s.scene_id.clone(),
                index: rng.random_range(0..=s.shots.len()),
            });
            Mutation::MoveShot {
                shot_id,
                to,
                version_id: Some(v.version_id.clone()),
            }
        }
        9 => Mutation::RemoveShot { shot_id: any_shot(rng) },
        10 => Mutation::DescribeShot {
            shot_id: any_shot(rng),
            description: words(rng, 6),
        },
        11 => Mutation::MoveShotOnCanvas {
            shot_id: any_shot(rng),
            pos: CanvasPos {
                x: rng.random_range(-500..500) as f64,
                y: rng.random_range(-500..500) as f64,
            },
        },
        12 => {
            let shot_id = any_shot(rng);
            let trim = p.shots.get(&shot_id).and_then(|s| s.asset.duration_s).map(|d| {
                let a = rng.random_range(0.0..d / 2.0);
                Trim {
                    in_s: (a * 10.0).round() / 10.0,
                    out_s: d,
                }
            });
            Mutation::SetShotTrim { shot_id, trim }
        }
        13 => Mutation::DeleteScene {
            scene_id: any_scene(rng),
        },
        14 => Mutation::RenameScene {
            scene_id: any_scene(rng),
            title: words(rng, 3),
        },
        15 => Mutation::SetSceneDescription {
            scene_id: any_scene(rng),
            description: words(rng, 8),
        },
        16 => Mutation::SetSceneColor {
            scene_id: any_scene(rng),
            color: palette_color(rng.random_range(0..8)),
        },
        17 => {
            let n = rng.random_range(0..20);
            Mutation::SetSceneScript {
                scene_id: any_scene(rng),
                script: Script::plain(words(rng, n)),
            }
        }
        18 => {
            let scene_id = any_scene(rng);
            let correspondences = match p.scenes.get(&scene_id) {
                Some(s) => partition_spans(rng, s.script.text.chars().count(), &s.shots),
                None => Vec::new(),
            };
            Mutation::SetCorrespondences {
                scene_id,
                correspondences,
            }
        }
        19 => {
            let scene_id = any_scene(rng);
            let mut start = 0;
            let timing = p.scenes.get(&scene_id).map(|s| {
                s.shots
                    .iter()
                    .map(|id| {
                        let duration_ms = rng.random_range(200..6000);
                        let seg = TimedSegment {
                            shot_id: id.clone(),
                            start_ms: start,
                            duration_ms,
                        };
                        start += duration_ms;
                        seg
                    })
                    .collect()
            });
            Mutation::SetSceneTiming { scene_id, timing }
        }
        20 => {
            let scene_id = any_scene(rng);
            let shot_id = p
                .scenes
                .get(&scene_id)
                .and_then(|s| s.shots.choose(rng).cloned())
                .unwrap_or_else(|| any_shot(rng));
            Mutation::SetKeyframeShot { scene_id, shot_id }
        }
        21 => {
            let scene_id = any_scene(rng);
            let mut order = p.scenes.get(&scene_id).map(|s| s.shots.clone()).unwrap_or_default();
            order.shuffle(rng);
            Mutation::ReorderShots { scene_id, order }
        }
        22 => {
            let v = pick(rng, &p.versions).expect("a project has a version");
            let mut order = v.scenes.clone();
            order.shuffle(rng);
            Mutation::ReorderScenes {
                version_id: v.version_id.clone(),
                order,
            }
        }
        23 => {
            let v = pick(rng, &p.versions).expect("a project has a version").version_id.clone();
            match rng.random_range(0..4) {
                0 => duplicate_version(p, &v, &words(rng, 2))
                    .map(|(_, m)| m)
                    .unwrap_or(Mutation::SetActiveVersion { version_id: v }),
                1 => Mutation::RemoveVersion { version_id: v },
                2 => Mutation::RenameVersion {
                    version_id: v,
                    name: words(rng, 2),
                },
                _ => Mutation::SetActiveVersion { version_id: v },
            }
        }
        24 => {
            let n = rng.random_range(1..4);
            let suggestions = (0..n)
                .map(|_| {
                    let scene = scene_ids.choose(rng).map(|s| (*s).clone());
                    let relevant = match scene.as_ref().and_then(|s| p.scenes.get(s)) {
                        Some(s) => s.shots.iter().take(2).cloned().collect(),
                        None => Vec::new(),
                    };
                    Suggestion {
                        suggestion_id: SuggestionId::new(fresh(rng, "sugg")),
                        level: if scene.is_some() {
                            SuggestionLevel::Scene
                        } else {
                            SuggestionLevel::Story
                        },
                        scene_id: scene,
                        category: *Category::ALL.choose(rng).expect("nonempty"),
                        text: format!("{}?", words(rng, 6)),
                        explanation: words(rng, 8),
                        tips: vec![words(rng, 4)],
                        relevant_shot_ids: relevant,
                        status: SuggestionStatus::Active,
                    }
                })
                .collect();
            Mutation::AddSuggestions { suggestions }
        }
        _ => match pick(rng, &p.suggestions).map(|s| s.suggestion_id.clone()) {
            Some(id) if rng.random_bool(0.5) => Mutation::DislikeSuggestion { suggestion_id: id },
            Some(id) => Mutation::SetSuggestionStatus {
                suggestion_id: id,
                status: SuggestionStatus::Addressed,
            },
            None => Mutation::SetStoryContext { text: words(rng, 10) },
        },
    }
}

/// A valid project built by applying `steps` random mutations to an empty
/// one and keeping those the model accepts.
pub fn random_project(seed: u64, steps: usize) -> Project {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = Project::new(format!("fuzz-{seed}"));
    for _ in 0..steps {
        let m = random_mutation(&p, &mut rng);
        if let Ok(a) = apply_mutation(&p, &m) {
            p = a.project;
        }
    }
    p
}
