use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer};
use serde_json::{json, Value};
use storyloom_core::alignment::{manual_adjust, scene_timings, Edit};
use storyloom_core::ids::{SceneId, ShotId, SuggestionId, VersionId};
use storyloom_core::model::{CanvasPos, Commit, Mutation, Script, ShotSlot, SuggestionStatus, Trim};
use storyloom_core::pipelines::PipelineError;
use storyloom_core::workspace::{ErrorClass, Op, OpError, Workspace};

use crate::error::{ApiError, REVISION_HEADER};
use crate::AppState;

pub(crate) fn workspace(state: &AppState, pid: &str) -> Result<Arc<Workspace>, ApiError> {
    state
        .project(pid)
        .cloned()
        .ok_or_else(|| OpError::new(ErrorClass::NotFound, "not_found", format!("unknown project {pid}")).into())
}

/// JSON reply with the revision added to the body and headers.
fn reply(status: StatusCode, revision: u64, mut body: Value) -> Response {
    if let Value::Object(m) = &mut body {
        m.insert("revision".into(), json!(revision));
    }
    let mut res = (status, Json(body)).into_response();
    res.headers_mut().insert(REVISION_HEADER, HeaderValue::from(revision));
    res
}

fn ok(revision: u64, body: Value) -> Response {
    reply(StatusCode::OK, revision, body)
}

fn not_found(kind: &str, id: &str, revision: u64) -> ApiError {
    ApiError::at(
        OpError::new(ErrorClass::NotFound, "not_found", format!("unknown {kind} {id}")),
        revision,
    )
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let slice: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(slice).map_err(|e| OpError::invalid(format!("invalid body: {e}")).into())
}

/// Expected revision from the body or an `If-Match: "<n>"` header.
fn expected(headers: &HeaderMap, body: Option<u64>) -> Result<Option<u64>, ApiError> {
    if body.is_some() {
        return Ok(body);
    }
    match headers.get(header::IF_MATCH) {
        None => Ok(None),
        Some(v) => v
            .to_str()
            .ok()
            .map(|s| s.trim().trim_matches('"'))
            .and_then(|s| s.parse().ok())
            .map(Some)
            .ok_or_else(|| OpError::invalid("If-Match must carry a revision number").into()),
    }
}

fn commit(ws: &Workspace, mutation: Mutation, expected_rev: Option<u64>) -> Result<Commit, ApiError> {
    ws.apply(mutation, expected_rev)
        .map_err(|e| ApiError::at(e, ws.session().revision()))
}

fn some<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<T>, D::Error> {
    T::deserialize(d).map(Some)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RevisionOnly {
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn list_projects(State(state): State<AppState>) -> Json<Value> {
    let projects: Vec<Value> = state
        .ids()
        .filter_map(|id| state.project(id))
        .map(|w| {
            let (p, r) = w.session().snapshot_at();
            json!({ "project_id": p.project_id, "revision": r })
        })
        .collect();
    Json(json!({ "projects": projects }))
}

pub async fn get_project(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    Ok(ok(r, json!({ "project": &*p })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MutationBody {
    mutation: Mutation,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn post_mutation(
    State(state): State<AppState>,
    Path(pid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: MutationBody = parse(&body)?;
    let c = commit(&ws, b.mutation, expected(&headers, b.revision)?)?;
    Ok(ok(c.revision, json!({ "seq": c.seq, "project": &*c.project })))
}

pub async fn undo(
    State(state): State<AppState>,
    Path(pid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let c = ws
        .undo(expected(&headers, b.revision)?)
        .map_err(|e| ApiError::at(e, ws.session().revision()))?;
    Ok(ok(c.revision, json!({ "seq": c.seq, "project": &*c.project })))
}

pub async fn redo(
    State(state): State<AppState>,
    Path(pid): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let c = ws
        .redo(expected(&headers, b.revision)?)
        .map_err(|e| ApiError::at(e, ws.session().revision()))?;
    Ok(ok(c.revision, json!({ "seq": c.seq, "project": &*c.project })))
}

pub async fn list_versions(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    Ok(ok(r, json!({ "active_version": p.active_version, "versions": p.versions })))
}

fn version_body(ws: &Workspace, id: &str) -> Result<Response, ApiError> {
    let (p, r) = ws.session().snapshot_at();
    let v = p.version(&VersionId::new(id)).ok_or_else(|| not_found("version", id, r))?;
    let scenes: Vec<_> = v.scenes.iter().filter_map(|s| p.scenes.get(s)).collect();
    Ok(ok(
        r,
        json!({ "version": v, "scenes": scenes, "active": p.active_version == v.version_id }),
    ))
}

pub async fn get_version(State(state): State<AppState>, Path((pid, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    version_body(&ws, &id)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionPatch {
    name: String,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn patch_version(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: VersionPatch = parse(&body)?;
    let m = Mutation::RenameVersion {
        version_id: VersionId::new(&id),
        name: b.name,
    };
    commit(&ws, m, expected(&headers, b.revision)?)?;
    version_body(&ws, &id)
}

pub async fn activate_version(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let m = Mutation::SetActiveVersion {
        version_id: VersionId::new(&id),
    };
    commit(&ws, m, expected(&headers, b.revision)?)?;
    version_body(&ws, &id)
}

fn scene_body(ws: &Workspace, id: &str) -> Result<Response, ApiError> {
    let (p, r) = ws.session().snapshot_at();
    let s = p.scenes.get(&SceneId::new(id)).ok_or_else(|| not_found("scene", id, r))?;
    Ok(ok(r, json!({ "scene": s })))
}

pub async fn get_scene(State(state): State<AppState>, Path((pid, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    scene_body(&ws, &id)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenePatch {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    color: Option<String>,
    #[serde(default)]
    script: Option<Script>,
    #[serde(default)]
    keyframe_shot: Option<ShotId>,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn patch_scene(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: ScenePatch = parse(&body)?;
    let scene_id = SceneId::new(&id);
    let mut ms = Vec::new();
    if let Some(title) = b.title {
        ms.push(Mutation::RenameScene {
            scene_id: scene_id.clone(),
            title,
        });
    }
    if let Some(description) = b.description {
        ms.push(Mutation::SetSceneDescription {
            scene_id: scene_id.clone(),
            description,
        });
    }
    if let Some(color) = b.color {
        ms.push(Mutation::SetSceneColor {
            scene_id: scene_id.clone(),
            color,
        });
    }
    if let Some(script) = b.script {
        ms.push(Mutation::SetSceneScript {
            scene_id: scene_id.clone(),
            script,
        });
    }
    if let Some(shot_id) = b.keyframe_shot {
        ms.push(Mutation::SetKeyframeShot {
            scene_id: scene_id.clone(),
            shot_id,
        });
    }
    if ms.is_empty() {
        return Err(OpError::invalid("nothing to change").into());
    }
    commit(&ws, Mutation::batch(ms), expected(&headers, b.revision)?)?;
    scene_body(&ws, &id)
}

pub async fn delete_scene(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let c = commit(
        &ws,
        Mutation::DeleteScene {
            scene_id: SceneId::new(&id),
        },
        expected(&headers, b.revision)?,
    )?;
    Ok(ok(c.revision, json!({ "deleted": id })))
}

pub async fn get_timing(State(state): State<AppState>, Path((pid, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    let s = p.scenes.get(&SceneId::new(&id)).ok_or_else(|| not_found("scene", &id, r))?;
    let timing = scene_timings(s).map_err(|e| ApiError::at(PipelineError::from(e), r))?;
    Ok(ok(
        r,
        json!({ "scene_id": id, "timing": timing, "manual": s.timing.is_some() }),
    ))
}

// `deny_unknown_fields` does not combine with `flatten`.
#[derive(Deserialize)]
struct TimingEdit {
    #[serde(flatten)]
    edit: Edit,
    #[serde(default = "yes")]
    conserve_total: bool,
    #[serde(default)]
    revision: Option<u64>,
}

fn yes() -> bool {
    true
}

pub async fn adjust_timing(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: TimingEdit = parse(&body)?;
    let (p, r) = ws.session().snapshot_at();
    let s = p.scenes.get(&SceneId::new(&id)).ok_or_else(|| not_found("scene", &id, r))?;
    let current = scene_timings(s).map_err(|e| ApiError::at(PipelineError::from(e), r))?;
    let timing = manual_adjust(&current, &b.edit, b.conserve_total).map_err(|e| ApiError::at(PipelineError::from(e), r))?;
    let m = Mutation::SetSceneTiming {
        scene_id: SceneId::new(&id),
        timing: Some(timing.clone()),
    };
    // Without an explicit revision the edit is anchored to the snapshot it
    // was computed from.
    let c = commit(&ws, m, Some(expected(&headers, b.revision)?.unwrap_or(r)))?;
    Ok(ok(c.revision, json!({ "scene_id": id, "timing": timing, "manual": true })))
}

pub async fn list_shots(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    let shots: Vec<_> = p.shots.values().collect();
    Ok(ok(r, json!({ "shots": shots, "ungrouped": p.ungrouped_shots() })))
}

fn shot_body(ws: &Workspace, id: &str) -> Result<Response, ApiError> {
    let (p, r) = ws.session().snapshot_at();
    let s = p.shots.get(&ShotId::new(id)).ok_or_else(|| not_found("shot", id, r))?;
    Ok(ok(r, json!({ "shot": s })))
}

pub async fn get_shot(State(state): State<AppState>, Path((pid, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    shot_body(&ws, &id)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotPatch {
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    canvas_pos: Option<CanvasPos>,
    /// `null` clears the trim.
    #[serde(default, deserialize_with = "some")]
    trim: Option<Option<Trim>>,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn patch_shot(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: ShotPatch = parse(&body)?;
    let shot_id = ShotId::new(&id);
    let mut ms = Vec::new();
    if let Some(description) = b.description {
        ms.push(Mutation::DescribeShot {
            shot_id: shot_id.clone(),
            description,
        });
    }
    if let Some(pos) = b.canvas_pos {
        ms.push(Mutation::MoveShotOnCanvas {
            shot_id: shot_id.clone(),
            pos,
        });
    }
    if let Some(trim) = b.trim {
        ms.push(Mutation::SetShotTrim {
            shot_id: shot_id.clone(),
            trim,
        });
    }
    if ms.is_empty() {
        return Err(OpError::invalid("nothing to change").into());
    }
    commit(&ws, Mutation::batch(ms), expected(&headers, b.revision)?)?;
    shot_body(&ws, &id)
}

pub async fn delete_shot(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let c = commit(
        &ws,
        Mutation::RemoveShot {
            shot_id: ShotId::new(&id),
        },
        expected(&headers, b.revision)?,
    )?;
    Ok(ok(c.revision, json!({ "deleted": id })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MoveBody {
    /// Target scene; the ungrouped pool when absent.
    #[serde(default)]
    scene_id: Option<SceneId>,
    /// Slot in the target scene; the end when absent.
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn move_shot(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: MoveBody = parse(&body)?;
    let (p, r) = ws.session().snapshot_at();
    let shot_id = ShotId::new(&id);
    let to = match b.scene_id {
        None => None,
        Some(scene_id) => {
            let scene = p
                .scenes
                .get(&scene_id)
                .ok_or_else(|| not_found("scene", scene_id.as_str(), r))?;
            let others = scene.shots.iter().filter(|s| **s != shot_id).count();
            Some(ShotSlot {
                index: b.index.unwrap_or(others),
                scene_id,
            })
        }
    };
    let m = Mutation::MoveShot {
        shot_id,
        to,
        version_id: None,
    };
    commit(&ws, m, expected(&headers, b.revision)?)?;
    shot_body(&ws, &id)
}

pub async fn list_suggestions(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    Ok(ok(
        r,
        json!({ "suggestions": p.suggestions, "disliked": p.disliked_suggestions }),
    ))
}

fn suggestion_body(ws: &Workspace, id: &str, revision: u64) -> Result<Response, ApiError> {
    let p = ws.snapshot();
    let s = p
        .suggestions
        .iter()
        .find(|s| s.suggestion_id.as_str() == id)
        .ok_or_else(|| not_found("suggestion", id, revision))?;
    Ok(ok(revision, json!({ "suggestion": s })))
}

pub async fn dislike_suggestion(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: RevisionOnly = parse(&body)?;
    let m = Mutation::DislikeSuggestion {
        suggestion_id: SuggestionId::new(&id),
    };
    let c = commit(&ws, m, expected(&headers, b.revision)?)?;
    suggestion_body(&ws, &id, c.revision)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatusBody {
    status: SuggestionStatus,
    #[serde(default)]
    revision: Option<u64>,
}

pub async fn suggestion_status(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let b: StatusBody = parse(&body)?;
    let m = Mutation::SetSuggestionStatus {
        suggestion_id: SuggestionId::new(&id),
        status: b.status,
    };
    let c = commit(&ws, m, expected(&headers, b.revision)?)?;
    suggestion_body(&ws, &id, c.revision)
}

pub async fn get_generation_job(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    let job = p
        .jobs
        .iter()
        .find(|(k, _)| k.as_str() == id)
        .map(|(_, j)| j)
        .ok_or_else(|| not_found("generation job", &id, r))?;
    Ok(ok(r, json!({ "job": job })))
}

pub async fn list_jobs(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    Ok(ok(ws.session().revision(), json!({ "jobs": ws.runner().list() })))
}

pub async fn get_job(State(state): State<AppState>, Path((pid, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let r = ws.session().revision();
    let job = ws.runner().get(&id).ok_or_else(|| not_found("job", &id, r))?;
    Ok(ok(r, json!({ "job": job })))
}

pub async fn list_ops(State(state): State<AppState>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    Ok(ok(ws.session().revision(), json!({ "ops": Op::NAMES })))
}

/// Queues a pipeline operation and answers 202 with its envelope.
pub async fn post_op(
    State(state): State<AppState>,
    Path((pid, op)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let mut params: Value = parse(&body)?;
    let body_rev = match params.as_object_mut().and_then(|m| m.remove("revision")) {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| OpError::invalid("revision must be a number"))?),
    };
    let current = ws.session().revision();
    if let Some(want) = expected(&headers, body_rev)? {
        if want != current {
            return Err(ApiError::at(
                OpError {
                    class: ErrorClass::Conflict,
                    body: storyloom_core::jobs::ErrorBody::new(
                        "stale_revision",
                        format!("stale revision: expected {want}, project is at {current}"),
                    )
                    .with_details(json!({ "expected": want, "actual": current })),
                },
                current,
            ));
        }
    }
    let op = Op::from_parts(&op, params).map_err(|e| ApiError::at(e, current))?;
    let runner_ws = ws.clone();
    let envelope = ws.runner().submit(op.name(), async move {
        match runner_ws.run(op).await {
            Ok(r) => Ok(serde_json::to_value(r).expect("op result serializes")),
            Err(e) => {
                let status = crate::status_for(e.class).as_u16();
                let mut body = e.body;
                if body.details.is_null() {
                    body.details = json!({});
                }
                if let Value::Object(m) = &mut body.details {
                    m.insert("status".into(), json!(status));
                }
                Err(body)
            }
        }
    });
    let mut res = reply(StatusCode::ACCEPTED, current, json!({ "job": envelope }));
    let location = format!("/api/projects/{pid}/jobs/{}", envelope.job_id);
    if let Ok(v) = HeaderValue::from_str(&location) {
        res.headers_mut().insert(header::LOCATION, v);
    }
    Ok(res)
}

fn content_type(uri: &str) -> &'static str {
    match uri.rsplit('.').next().map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("mp4") => "video/mp4",
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        _ => "application/octet-stream",
    }
}

/// Asset bytes with the content checksum as a strong ETag.
pub async fn get_asset(
    State(state): State<AppState>,
    Path((pid, id)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let ws = workspace(&state, &pid)?;
    let (p, r) = ws.session().snapshot_at();
    let asset = p
        .assets
        .iter()
        .find(|(k, _)| k.as_str() == id)
        .map(|(_, a)| a.clone())
        .ok_or_else(|| not_found("asset", &id, r))?;
    let etag = format!("\"{}\"", asset.checksum);
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"));
    let etag_value = HeaderValue::from_str(&etag).expect("hex etag is a valid header");
    if matches {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag_value)]).into_response());
    }
    let path = ws.assets().path_of(&asset);
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        ApiError::at(
            OpError::new(ErrorClass::Internal, "io_error", format!("{}: {e}", path.display())),
            r,
        )
    })?;
    Ok((
        StatusCode::OK,
        [
            (header::ETAG, etag_value),
            (header::CONTENT_TYPE, HeaderValue::from_static(content_type(&asset.uri))),
            (
                header::CACHE_CONTROL,
                HeaderValue::from_static("private, max-age=31536000, immutable"),
            ),
        ],
        bytes,
    )
        .into_response())
}
