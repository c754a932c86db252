//! Background job tracking. Every long-running operation is submitted here
//! and reported through the project's event stream.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::events::EventKind;
use crate::model::ProjectSession;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

/// Structured error carried by failed jobs and API responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl ErrorBody {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            details: serde_json::Value::Null,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = details;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEnvelope {
    pub job_id: String,
    pub kind: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<f32>,
    /// Result payload once done, usually naming the generation job and the
    /// created entities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

struct Slot {
    tx: watch::Sender<JobEnvelope>,
}

/// Runs jobs on the tokio runtime and tracks their envelopes.
pub struct JobRunner {
    session: Arc<ProjectSession>,
    jobs: Mutex<BTreeMap<String, Slot>>,
    counter: AtomicU64,
}

impl JobRunner {
    pub fn new(session: Arc<ProjectSession>) -> Arc<Self> {
        Arc::new(Self {
            session,
            jobs: Mutex::new(BTreeMap::new()),
            counter: AtomicU64::new(1),
        })
    }

    pub fn session(&self) -> &Arc<ProjectSession> {
        &self.session
    }

    /// Queues `work` and returns the envelope in its `queued` state.
    pub fn submit<F>(self: &Arc<Self>, kind: &str, work: F) -> JobEnvelope
    where
        F: Future<Output = Result<serde_json::Value, ErrorBody>> + Send + 'static,
    {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let envelope = JobEnvelope {
            job_id: format!("run-{n:06}"),
            kind: kind.to_string(),
            status: JobStatus::Queued,
            progress: None,
            result: None,
            error: None,
        };
        let (tx, _) = watch::channel(envelope.clone());
        self.jobs.lock().insert(envelope.job_id.clone(), Slot { tx });
        self.publish(&envelope);

        let runner = Arc::clone(self);
        let id = envelope.job_id.clone();
        tokio::spawn(async move {
            runner.transition(&id, |e| e.status = JobStatus::Running);
            let outcome = work.await;
            runner.transition(&id, |e| match outcome {
                Ok(result) => {
                    e.status = JobStatus::Done;
                    e.progress = Some(1.0);
                    e.result = Some(result);
                }
                Err(err) => {
                    e.status = JobStatus::Failed;
                    e.error = Some(err);
                }
            });
        });
        envelope
    }

    fn transition(&self, id: &str, f: impl FnOnce(&mut JobEnvelope)) {
        let updated = {
            let jobs = self.jobs.lock();
            let Some(slot) = jobs.get(id) else { return };
            let mut env = slot.tx.borrow().clone();
            // Terminal states are final.
            if env.status.is_terminal() {
                return;
            }
            f(&mut env);
            slot.tx.send_replace(env.clone());
            env
        };
        self.publish(&updated);
    }

    fn publish(&self, envelope: &JobEnvelope) {
        self.session
            .events()
            .publish(self.session.revision(), EventKind::Job { job: envelope.clone() });
    }

    pub fn get(&self, id: &str) -> Option<JobEnvelope> {
        self.jobs.lock().get(id).map(|s| s.tx.borrow().clone())
    }

    pub fn list(&self) -> Vec<JobEnvelope> {
        self.jobs.lock().values().map(|s| s.tx.borrow().clone()).collect()
    }

    /// Waits until the job reaches a terminal state.
    pub async fn wait(&self, id: &str) -> Option<JobEnvelope> {
        let mut rx = self.jobs.lock().get(id)?.tx.subscribe();
        let env = rx.wait_for(|e| e.status.is_terminal()).await.ok()?.clone();
        Some(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Project;

    fn runner() -> Arc<JobRunner> {
        JobRunner::new(Arc::new(ProjectSession::new(Project::new("p"))))
    }

    #[tokio::test]
    async fn job_lifecycle_is_reported_in_order() {
        let r = runner();
        let env = r.submit("describe_shot", async { Ok(serde_json::json!({"ok": true})) });
        assert_eq!(env.status, JobStatus::Queued);
        let done = r.wait(&env.job_id).await.unwrap();
        assert_eq!(done.status, JobStatus::Done);
        let statuses: Vec<JobStatus> = r
            .session()
            .events()
            .since(0)
            .into_iter()
            .filter_map(|e| match e.kind {
                EventKind::Job { job } => Some(job.status),
                _ => None,
            })
            .collect();
        assert_eq!(statuses, vec![JobStatus::Queued, JobStatus::Running, JobStatus::Done]);
    }

    #[tokio::test]
    async fn failures_carry_structured_error() {
        let r = runner();
        let env = r.submit("x", async { Err(ErrorBody::new("provider_error", "boom")) });
        let done = r.wait(&env.job_id).await.unwrap();
        assert_eq!(done.status, JobStatus::Failed);
        assert_eq!(done.error.unwrap().code, "provider_error");
    }

    #[tokio::test]
    async fn terminal_state_is_immutable() {
        let r = runner();
        let env = r.submit("x", async { Ok(serde_json::Value::Null) });
        r.wait(&env.job_id).await.unwrap();
        r.transition(&env.job_id, |e| e.status = JobStatus::Running);
        assert_eq!(r.get(&env.job_id).unwrap().status, JobStatus::Done);
    }
}
