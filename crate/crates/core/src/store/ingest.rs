//! Bringing captured media into a project.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::AssetStore;
use crate::ids::{sha256_hex, AssetId, ShotId};
use crate::media;
use crate::model::{CanvasPos, MediaKind, Mutation, Project, Provenance, Shot};

/// Columns of the auto-layout grid for new shots.
const GRID_COLUMNS: usize = 6;
const GRID_DX: f64 = 320.0;
const GRID_DY: f64 = 220.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub added: Vec<AssetId>,
    /// Shots created for visual assets, in input order.
    pub shots: Vec<ShotId>,
    pub skipped: Vec<Skipped>,
    /// Describe jobs queued by the caller for the new shots.
    pub describe_jobs: Vec<String>,
}

/// Grid position of the `k`-th shot on the canvas.
pub fn grid_position(k: usize) -> CanvasPos {
    CanvasPos {
        x: (k % GRID_COLUMNS) as f64 * GRID_DX,
        y: (k / GRID_COLUMNS) as f64 * GRID_DY,
    }
}

/// Copies supported files into the asset store and returns the mutation
/// registering them. Problems with one file never abort the batch.
pub fn ingest(project: &Project, assets: &AssetStore, paths: &[PathBuf]) -> (IngestReport, Mutation) {
    let mut report = IngestReport::default();
    let mut mutations = Vec::new();
    let mut known: BTreeSet<String> = project.assets.values().map(|a| a.checksum.clone()).collect();
    let mut next_slot = project.shots.len();
    for path in paths {
        let skip = |reason: String| Skipped {
            path: path.display().to_string(),
            reason,
        };
        match ingest_one(assets, path, &known) {
            Ok(asset) => {
                known.insert(asset.checksum.clone());
                report.added.push(asset.asset_id.clone());
                mutations.push(Mutation::RegisterAsset { asset: asset.clone() });
                if asset.kind.is_visual() {
                    let shot_id = ShotId::derive(&[&asset.checksum]);
                    report.shots.push(shot_id.clone());
                    mutations.push(Mutation::AddShot {
                        shot: Shot {
                            shot_id,
                            asset,
                            provenance: Provenance::Captured,
                            description: String::new(),
                            canvas_pos: grid_position(next_slot),
                            generation: None,
                            trim: None,
                            asset_history: Vec::new(),
                        },
                    });
                    next_slot += 1;
                }
            }
            Err(reason) => report.skipped.push(skip(reason)),
        }
    }
    (report, Mutation::batch(mutations))
}

fn ingest_one(assets: &AssetStore, path: &Path, known: &BTreeSet<String>) -> Result<crate::model::AssetRef, String> {
    let ext = media::extension_of(path);
    if media::kind_for_extension(&ext).is_none() {
        return Err(format!(
            "unsupported file type {:?}; expected jpg, png, mp4, wav or mp3",
            if ext.is_empty() { "(none)" } else { ext.as_str() }
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| format!("unreadable: {e}"))?;
    let checksum = sha256_hex(&bytes);
    if known.contains(&checksum) {
        return Err(format!("duplicate of an existing asset (checksum {})", &checksum[..12]));
    }
    let asset = assets.put(&bytes, &ext).map_err(|e| e.to_string())?;
    if asset.kind == MediaKind::Video && asset.width.unwrap_or(0) == 0 {
        return Err("video has no visual track".into());
    }
    Ok(asset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::apply_mutation;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn adds_skips_and_deduplicates() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let store = AssetStore::new(root.path());
        let png = media::placeholder_png(16, 9, [10, 10, 10], "a");
        let paths = vec![
            write(src.path(), "a.png", &png),
            write(src.path(), "copy.png", &png),
            write(src.path(), "notes.txt", b"hello"),
            write(src.path(), "clip.mp4", &media::placeholder_mp4(3000, 64, 36, &[], "c")),
            write(src.path(), "voice.wav", &media::placeholder_wav(500, 1)),
            write(src.path(), "broken.jpg", b"not a jpeg"),
        ];
        let project = Project::new("p");
        let (report, m) = ingest(&project, &store, &paths);
        assert_eq!(report.added.len(), 3);
        assert_eq!(report.shots.len(), 2);
        let reasons: Vec<&str> = report.skipped.iter().map(|s| s.reason.as_str()).collect();
        assert!(reasons[0].starts_with("duplicate"));
        assert!(reasons[1].starts_with("unsupported"));
        assert_eq!(reasons.len(), 3);
        let next = apply_mutation(&project, &m).unwrap().project;
        assert_eq!(next.ungrouped_shots().len(), 2);
        assert_eq!(next.assets.len(), 3);

        // Re-ingesting the same files adds nothing.
        let (again, _) = ingest(&next, &store, &paths[..1]);
        assert!(again.added.is_empty());
        assert_eq!(again.skipped.len(), 1);
    }
}
