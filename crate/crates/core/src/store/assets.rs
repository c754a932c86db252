//! Content-addressed asset directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::ids::{sha256_hex, AssetId};
use crate::media::{self, MediaError};
use crate::model::AssetRef;

pub const ASSET_DIR: &str = "assets";

/// Characters of the checksum used in file names and asset ids.
const PREFIX: usize = 16;

/// The `assets/` directory of one project.
#[derive(Debug, Clone)]
pub struct AssetStore {
    project_root: PathBuf,
}

impl AssetStore {
    pub fn new(project_root: impl Into<PathBuf>) -> Self {
        Self {
            project_root: project_root.into(),
        }
    }

    pub fn project_root(&self) -> &Path {
        &self.project_root
    }

    pub fn dir(&self) -> PathBuf {
        self.project_root.join(ASSET_DIR)
    }

    /// Absolute path of a project-relative asset uri.
    pub fn path_of(&self, asset: &AssetRef) -> PathBuf {
        self.project_root.join(&asset.uri)
    }

    pub fn read(&self, asset: &AssetRef) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.path_of(asset))
    }

    /// Id an asset with these bytes receives.
    pub fn id_for_checksum(checksum: &str) -> AssetId {
        AssetId::new(format!("asset-{}", &checksum[..PREFIX]))
    }

    /// Writes `bytes` under a checksum-derived name and probes the result.
    /// Writing identical bytes twice yields the same reference.
    pub fn put(&self, bytes: &[u8], ext: &str) -> Result<AssetRef, MediaError> {
        let ext = ext.to_ascii_lowercase();
        let kind = media::kind_for_extension(&ext).ok_or_else(|| MediaError::Unsupported(ext.clone()))?;
        let checksum = sha256_hex(bytes);
        let name = format!("{}.{ext}", &checksum[..PREFIX]);
        let dir = self.dir();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(&name);
        if !path.exists() {
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(bytes)?;
            tmp.persist(&path).map_err(|e| MediaError::Io(e.error))?;
        }
        let info = match media::probe(&path) {
            Ok(info) => info,
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                return Err(e);
            }
        };
        debug_assert_eq!(info.kind, kind);
        Ok(AssetRef {
            asset_id: Self::id_for_checksum(&checksum),
            kind: info.kind,
            uri: format!("{ASSET_DIR}/{name}"),
            duration_s: info.duration_s,
            width: info.width,
            height: info.height,
            checksum,
        })
    }

    /// Copies a file into the store.
    pub fn import(&self, source: &Path) -> Result<AssetRef, MediaError> {
        let ext = media::extension_of(source);
        if media::kind_for_extension(&ext).is_none() {
            return Err(MediaError::Unsupported(if ext.is_empty() { "(none)".into() } else { ext }));
        }
        let bytes = std::fs::read(source)?;
        self.put(&bytes, &ext)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MediaKind;

    #[test]
    fn put_is_content_addressed_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        let png = media::placeholder_png(16, 9, [1, 2, 3], "a");
        let a = store.put(&png, "png").unwrap();
        let b = store.put(&png, "PNG").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kind, MediaKind::Image);
        assert!(a.uri.starts_with("assets/"));
        assert!(a.uri.contains(&a.checksum[..16]));
        assert_eq!(store.read(&a).unwrap(), png);
    }

    #[test]
    fn unprobeable_bytes_leave_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        assert!(store.put(b"garbage", "png").is_err());
        assert_eq!(std::fs::read_dir(store.dir()).unwrap().count(), 0);
    }
}
