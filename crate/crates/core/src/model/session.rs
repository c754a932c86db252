//! Single-writer project session with undo/redo and revisions.

use std::sync::Arc;

use parking_lot::RwLock;

use super::mutation::{apply_mutation, Mutation, StoryError};
use super::types::Project;
use crate::events::{EventBus, EventKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error("stale revision: expected {expected}, project is at {actual}")]
    StaleRevision { expected: u64, actual: u64 },
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    seq: u64,
    forward: Mutation,
    inverse: Mutation,
}

#[derive(Debug)]
struct State {
    project: Arc<Project>,
    revision: u64,
    undo: Vec<HistoryEntry>,
    redo: Vec<HistoryEntry>,
}

/// Outcome of a committed change.
#[derive(Debug, Clone)]
pub struct Commit {
    pub revision: u64,
    pub seq: u64,
    pub project: Arc<Project>,
}

/// Owns one project. Writes are serialized; readers get immutable
/// snapshots that stay consistent while later writes land.
#[derive(Debug)]
pub struct ProjectSession {
    state: RwLock<State>,
    events: Arc<EventBus>,
}

impl ProjectSession {
    pub fn new(project: Project) -> Self {
        Self::resume(project, 0)
    }

    /// Continues a project whose event log already reached `revision`.
    pub fn resume(project: Project, revision: u64) -> Self {
        Self {
            state: RwLock::new(State {
                project: Arc::new(project),
                revision,
                undo: Vec::new(),
                redo: Vec::new(),
            }),
            events: Arc::new(EventBus::starting_at(revision + 1)),
        }
    }

    /// Continues a project with its persisted event history, so replay
    /// and undo reach back past the restart.
    pub fn restore(project: Project, history: Vec<crate::events::Event>) -> Self {
        let revision = history.last().map_or(0, |e| e.revision);
        let (undo, redo) = Self::replay_history(&history);
        Self {
            state: RwLock::new(State {
                project: Arc::new(project),
                revision,
                undo,
                redo,
            }),
            events: Arc::new(EventBus::from_log(history)),
        }
    }

    /// Rebuilds the undo and redo stacks from the log. An entry logged
    /// without its inverse cuts history off at that point.
    fn replay_history(history: &[crate::events::Event]) -> (Vec<HistoryEntry>, Vec<HistoryEntry>) {
        let (mut undo, mut redo) = (Vec::new(), Vec::<HistoryEntry>::new());
        for e in history {
            match &e.kind {
                EventKind::Mutation {
                    mutation,
                    inverse: Some(inverse),
                    ..
                } => {
                    undo.push(HistoryEntry {
                        seq: e.seq,
                        forward: mutation.clone(),
                        inverse: inverse.clone(),
                    });
                    redo.clear();
                }
                EventKind::Mutation { inverse: None, .. } => {
                    undo.clear();
                    redo.clear();
                }
                // Undo restores the exact prior state, so the logged inverse
                // still applies after a redo.
                EventKind::Undo { of_seq } => match undo.pop() {
                    Some(entry) if entry.seq == *of_seq => redo.push(entry),
                    _ => (undo, redo) = (Vec::new(), Vec::new()),
                },
                EventKind::Redo { of_seq } => match redo.pop() {
                    Some(entry) if entry.seq == *of_seq => undo.push(entry),
                    _ => (undo, redo) = (Vec::new(), Vec::new()),
                },
                EventKind::Job { .. } => {}
            }
        }
        (undo, redo)
    }

    pub fn snapshot(&self) -> Arc<Project> {
        self.state.read().project.clone()
    }

    pub fn revision(&self) -> u64 {
        self.state.read().revision
    }

    /// Snapshot together with the revision it belongs to.
    pub fn snapshot_at(&self) -> (Arc<Project>, u64) {
        let s = self.state.read();
        (s.project.clone(), s.revision)
    }

    pub fn events(&self) -> &Arc<EventBus> {
        &self.events
    }

    fn check_revision(state: &State, expected: Option<u64>) -> Result<(), SessionError> {
        match expected {
            Some(e) if e != state.revision => Err(SessionError::StaleRevision {
                expected: e,
                actual: state.revision,
            }),
            _ => Ok(()),
        }
    }

    fn bump(&self, state: &mut State, project: Project, kind: EventKind) -> Commit {
        state.project = Arc::new(project);
        state.revision += 1;
        let event = self.events.publish(state.revision, kind);
        Commit {
            revision: state.revision,
            seq: event.seq,
            project: state.project.clone(),
        }
    }

    /// Applies a mutation. With `expected_revision` set the write is
    /// rejected unless the project is still at that revision.
    pub fn apply(&self, mutation: Mutation, expected_revision: Option<u64>) -> Result<Commit, SessionError> {
        let mut state = self.state.write();
        Self::check_revision(&state, expected_revision)?;
        let applied = apply_mutation(&state.project, &mutation)?;
        let kind = EventKind::Mutation {
            name: mutation.name().to_string(),
            mutation: mutation.clone(),
            inverse: Some(applied.inverse.clone()),
        };
        let commit = self.bump(&mut state, applied.project, kind);
        state.undo.push(HistoryEntry {
            seq: commit.seq,
            forward: mutation,
            inverse: applied.inverse,
        });
        state.redo.clear();
        Ok(commit)
    }

    pub fn undo(&self, expected_revision: Option<u64>) -> Result<Commit, SessionError> {
        let mut state = self.state.write();
        Self::check_revision(&state, expected_revision)?;
        let entry = state.undo.last().cloned().ok_or(StoryError::NothingToUndo)?;
        let applied = apply_mutation(&state.project, &entry.inverse)?;
        state.undo.pop();
        let commit = self.bump(&mut state, applied.project, EventKind::Undo { of_seq: entry.seq });
        state.redo.push(entry);
        Ok(commit)
    }

    pub fn redo(&self, expected_revision: Option<u64>) -> Result<Commit, SessionError> {
        let mut state = self.state.write();
        Self::check_revision(&state, expected_revision)?;
        let entry = state.redo.last().cloned().ok_or(StoryError::NothingToRedo)?;
        let applied = apply_mutation(&state.project, &entry.forward)?;
        state.redo.pop();
        let commit = self.bump(&mut state, applied.project, EventKind::Redo { of_seq: entry.seq });
        state.undo.push(HistoryEntry {
            seq: entry.seq,
            forward: entry.forward,
            inverse: applied.inverse,
        });
        Ok(commit)
    }

    pub fn can_undo(&self) -> bool {
        !self.state.read().undo.is_empty()
    }
}
