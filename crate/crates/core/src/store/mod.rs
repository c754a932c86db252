//! Project persistence and media ingestion.

mod assets;
mod ingest;
mod persist;

pub use assets::{AssetStore, ASSET_DIR};
pub use ingest::{grid_position, ingest, IngestReport, Skipped};
pub use persist::{
    append_events, load, parse_project, project_path, read_events, read_jobs_log, save, Loaded, StoreError, EVENTS_LOG, JOBS_LOG,
    PROJECT_FILE,
};
