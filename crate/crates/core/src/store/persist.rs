//! `project.json` plus the append-only `jobs.log` and `events.log`.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::events::Event;
use crate::model::{validate, InvariantViolation, Project, SCHEMA_VERSION};

pub const PROJECT_FILE: &str = "project.json";
pub const JOBS_LOG: &str = "jobs.log";
pub const EVENTS_LOG: &str = "events.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt document at {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("schema version {found:?} is not supported (expected {expected})")]
    SchemaMismatch { found: Option<u64>, expected: u32 },
    #[error("integrity error at {}: {}", .0.path, .0.detail)]
    Integrity(InvariantViolation),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "io_error",
            StoreError::Corrupt { .. } => "corrupt_document",
            StoreError::SchemaMismatch { .. } => "schema_mismatch",
            StoreError::Integrity(_) => "integrity_error",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A project as found on disk.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub project: Project,
    /// Revision of the last persisted event, 0 for a fresh project.
    pub revision: u64,
    /// Sequence number of the last persisted event.
    pub last_seq: u64,
}

pub fn project_path(root: &Path) -> PathBuf {
    root.join(PROJECT_FILE)
}

/// Parses and fully validates a project document.
pub fn parse_project(text: &str) -> Result<Project, StoreError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let found = raw.get("schema_version").and_then(Value::as_u64);
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(StoreError::SchemaMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let project: Project = serde_path_to_error::deserialize(&raw).map_err(|e| StoreError::Corrupt {
        path: format!("$.{}", e.path()),
        message: e.inner().to_string(),
    })?;
    validate(&project).map_err(StoreError::Integrity)?;
    Ok(project)
}

pub fn load(root: &Path) -> Result<Loaded, StoreError> {
    let path = project_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
    let project = parse_project(&text)?;
    let (revision, last_seq) = read_events(root)?.last().map(|e| (e.revision, e.seq)).unwrap_or((0, 0));
    Ok(Loaded {
        project,
        revision,
        last_seq,
    })
}

/// Atomically replaces `project.json` and appends jobs not yet logged.
pub fn save(root: &Path, project: &Project) -> Result<PathBuf, StoreError> {
    std::fs::create_dir_all(root).map_err(|e| StoreError::io(root, e))?;
    let path = project_path(root);
    let mut tmp = tempfile::NamedTempFile::new_in(root).map_err(|e| StoreError::io(root, e))?;
    tmp.write_all(project.to_canonical_json().as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| StoreError::io(&path, e))?;
    tmp.persist(&path).map_err(|e| StoreError::io(&path, e.error))?;
    append_jobs(root, project)?;
    Ok(path)
}

fn append_jobs(root: &Path, project: &Project) -> Result<(), StoreError> {
    let path = root.join(JOBS_LOG);
    let mut logged = BTreeSet::new();
    if path.exists() {
        let f = std::fs::File::open(&path).map_err(|e| StoreError::io(&path, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| StoreError::io(&path, e))?;
            if let Some(id) = serde_json::from_str::<Value>(&line)
                .ok()
                .and_then(|v| v["job_id"].as_str().map(str::to_string))
            {
                logged.insert(id);
            }
        }
    }
    let fresh: Vec<String> = project
        .jobs
        .values()
        .filter(|j| !logged.contains(j.job_id.as_str()))
        .map(|j| serde_json::to_string(j).expect("job serializes"))
        .collect();
    append_lines(&path, &fresh)
}

fn append_lines(path: &Path, lines: &[String]) -> Result<(), StoreError> {
    if lines.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| StoreError::io(path, e))?;
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| StoreError::io(path, e))
}

/// Appends events with a sequence number above the last persisted one.
pub fn append_events(root: &Path, events: &[Event]) -> Result<(), StoreError> {
    let last = read_events(root)?.last().map(|e| e.seq).unwrap_or(0);
    let lines: Vec<String> = events
        .iter()
        .filter(|e| e.seq > last)
        .map(|e| serde_json::to_string(e).expect("event serializes"))
        .collect();
    append_lines(&root.join(EVENTS_LOG), &lines)
}

pub fn read_events(root: &Path) -> Result<Vec<Event>, StoreError> {
    let path = root.join(EVENTS_LOG);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(&path).map_err(|e| StoreError::io(&path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| StoreError::io(&path, e))?;
            serde_json::from_str(&l).map_err(|e| StoreError::Corrupt {
                path: format!("{EVENTS_LOG}:{}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jobs_log(root: &Path) -> Result<Vec<Value>, StoreError> {
    let path = root.join(JOBS_LOG);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                path: format!("{JOBS_LOG}:{}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventKind;
    use crate::model::fixtures::two_scene_project;
    use crate::model::{Invariant, Mutation};

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = two_scene_project();
        save(dir.path(), &p).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.project, p);
        assert_eq!(loaded.project.to_canonical_json(), p.to_canonical_json());
        assert_eq!(loaded.revision, 0);
    }

    #[test]
    fn tampered_reference_names_the_id() {
        let p = two_scene_project();
        let text = p.to_canonical_json().replace("\"shot-3\"\n", "\"shot-zz\"\n");
        match parse_project(&text) {
            Err(StoreError::Integrity(v)) => {
                assert_eq!(v.invariant, Invariant::ReferentialIntegrity);
                assert!(v.detail.contains("shot-zz"), "{}", v.detail);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn future_schema_is_rejected() {
        let p = two_scene_project();
        let text = p
            .to_canonical_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            parse_project(&text),
            Err(StoreError::SchemaMismatch { found: Some(2), .. })
        ));
    }

    #[test]
    fn type_errors_report_field_path() {
        let p = two_scene_project();
        let mut v: Value = serde_json::from_str(&p.to_canonical_json()).unwrap();
        v["scenes"]["scene-a"]["shots"] = serde_json::json!(7);
        match parse_project(&v.to_string()) {
            Err(StoreError::Corrupt { path, .. }) => assert_eq!(path, "$.scenes.scene-a.shots"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn event_log_appends_only_new_events() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |seq, revision| Event {
            seq,
            revision,
            kind: EventKind::Mutation {
                name: "set_story_context".into(),
                mutation: Mutation::SetStoryContext { text: "x".into() },
                inverse: None,
            },
        };
        append_events(dir.path(), &[mk(1, 1), mk(2, 2)]).unwrap();
        append_events(dir.path(), &[mk(1, 1), mk(2, 2), mk(3, 3)]).unwrap();
        let seqs: Vec<u64> = read_events(dir.path()).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        save(dir.path(), &two_scene_project()).unwrap();
        assert_eq!(load(dir.path()).unwrap().revision, 3);
    }
}
