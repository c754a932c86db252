//! HTTP JSON API and server-sent event stream over opened projects.
//!
//! Every response carries the project revision (`x-revision` header and a
//! `revision` field). Writes accept an expected revision, in the body or an
//! `If-Match` header, and fail with 409 when the project has moved on.
//! Pipeline operations answer 202 with a job envelope whose progress is
//! reported on the event stream.

mod error;
mod events;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use storyloom_core::workspace::Workspace;

pub use error::{status_for, ApiError, REVISION_HEADER};

/// Projects served by one process, keyed by project id.
#[derive(Clone, Default)]
pub struct AppState {
    projects: Arc<BTreeMap<String, Arc<Workspace>>>,
}

impl AppState {
    pub fn new(workspaces: impl IntoIterator<Item = Arc<Workspace>>) -> Self {
        let projects = workspaces.into_iter().map(|w| (w.snapshot().project_id.clone(), w)).collect();
        AppState {
            projects: Arc::new(projects),
        }
    }

    pub fn project(&self, id: &str) -> Option<&Arc<Workspace>> {
        self.projects.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.projects.keys()
    }
}

pub fn router(state: AppState) -> Router {
    let project = Router::new()
        .route("/", get(routes::get_project))
        .route("/mutations", post(routes::post_mutation))
        .route("/undo", post(routes::undo))
        .route("/redo", post(routes::redo))
        .route("/versions", get(routes::list_versions))
        .route("/versions/{id}", get(routes::get_version).patch(routes::patch_version))
        .route("/versions/{id}/activate", post(routes::activate_version))
        .route(
            "/scenes/{id}",
            get(routes::get_scene).patch(routes::patch_scene).delete(routes::delete_scene),
        )
        .route("/scenes/{id}/timing", get(routes::get_timing).post(routes::adjust_timing))
        .route("/shots", get(routes::list_shots))
        .route(
            "/shots/{id}",
            get(routes::get_shot).patch(routes::patch_shot).delete(routes::delete_shot),
        )
        .route("/shots/{id}/move", post(routes::move_shot))
        .route("/suggestions", get(routes::list_suggestions))
        .route("/suggestions/{id}/dislike", post(routes::dislike_suggestion))
        .route("/suggestions/{id}/status", post(routes::suggestion_status))
        .route("/generation-jobs/{id}", get(routes::get_generation_job))
        .route("/jobs", get(routes::list_jobs))
        .route("/jobs/{id}", get(routes::get_job))
        .route("/ops", get(routes::list_ops))
        .route("/ops/{op}", post(routes::post_op))
        .route("/assets/{id}", get(routes::get_asset))
        .route("/events", get(events::stream));
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/api/projects", get(routes::list_projects))
        .nest("/api/projects/{pid}", project)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
