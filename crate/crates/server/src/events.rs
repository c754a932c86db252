//! Server-sent events: the project's ordered event log, replayed from a
//! client-supplied position and then followed live.

use std::collections::VecDeque;
use std::convert::Infallible;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use futures::stream::{self, Stream};
use serde::Deserialize;
use storyloom_core::events::{Event, EventKind};
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::routes::workspace;
use crate::AppState;

#[derive(Deserialize, Default)]
pub struct Resume {
    /// Replay events with a sequence number above this.
    after_seq: Option<u64>,
    /// Replay events recorded after this project revision.
    since_revision: Option<u64>,
}

fn event_name(e: &Event) -> &'static str {
    match e.kind {
        EventKind::Mutation { .. } => "mutation",
        EventKind::Undo { .. } => "undo",
        EventKind::Redo { .. } => "redo",
        EventKind::Job { .. } => "job",
    }
}

fn to_sse(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(event_name(e))
        .json_data(e)
        .expect("events serialize")
}

/// Backlog first, then live events. A subscriber that falls too far behind
/// is disconnected and resumes with `Last-Event-ID`.
fn follow(backlog: Vec<Event>, rx: broadcast::Receiver<Event>) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    stream::unfold((VecDeque::from(backlog), rx), |(mut backlog, mut rx)| async move {
        if let Some(e) = backlog.pop_front() {
            return Some((Ok(to_sse(&e)), (backlog, rx)));
        }
        match rx.recv().await {
            Ok(e) => Some((Ok(to_sse(&e)), (backlog, rx))),
            Err(_) => None,
        }
    })
}

pub async fn stream(
    State(state): State<AppState>,
    Path(pid): Path<String>,
    Query(resume): Query<Resume>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let (mut backlog, rx) = ws
        .session()
        .events()
        .subscribe_from(last_id.or(resume.after_seq).unwrap_or(0));
    if last_id.is_none() && resume.after_seq.is_none() {
        if let Some(r) = resume.since_revision {
            backlog.retain(|e| e.revision > r);
        }
    }
    Ok(Sse::new(follow(backlog, rx)).keep_alive(KeepAlive::default()).into_response())
}
