use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, Response, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use storyloom_core::config::Config;
use storyloom_core::media;
use storyloom_core::workspace::{Op, Workspace};
use storyloom_server::{router, AppState, REVISION_HEADER};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    ws: Arc<Workspace>,
    app: Router,
    pid: String,
}

impl Fixture {
    fn url(&self, tail: &str) -> String {
        format!("/api/projects/{}{}", self.pid, tail)
    }
}

fn footage(dir: &std::path::Path, n: u8) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let path = dir.join(format!("clip-{i}.png"));
            std::fs::write(
                &path,
                media::placeholder_png(48, 27, [30 * i, 90, 200 - 10 * i], &format!("c{i}")),
            )
            .unwrap();
            path
        })
        .collect()
}

async fn fixture(shots: u8, grouped: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("demo");
    let ws = Workspace::init(&root, Config::default()).unwrap();
    if shots > 0 {
        let paths = footage(dir.path(), shots);
        ws.run(Op::Ingest { paths }).await.unwrap();
        ws.run(Op::Describe {
            shot_ids: None,
            force: false,
        })
        .await
        .unwrap();
        if grouped {
            ws.run(Op::Group { shot_ids: None }).await.unwrap();
        }
    }
    let ws = Arc::new(ws);
    let pid = ws.snapshot().project_id.clone();
    let app = router(AppState::new([ws.clone()]));
    Fixture { _dir: dir, ws, app, pid }
}

async fn send(app: &Router, req: Request<Body>) -> Response<Body> {
    app.clone().oneshot(req).await.unwrap()
}

async fn json_of(res: Response<Body>) -> Value {
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn revision_header(res: &Response<Body>) -> u64 {
    res.headers()[REVISION_HEADER].to_str().unwrap().parse().unwrap()
}

async fn wait_job(f: &Fixture, id: &str) -> Value {
    for _ in 0..500 {
        let v = json_of(send(&f.app, get(&f.url(&format!("/jobs/{id}")))).await).await;
        let status = v["job"]["status"].as_str().unwrap().to_string();
        if status == "done" || status == "failed" {
            return v["job"].clone();
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

/// Reads SSE frames until `want` events arrived.
async fn read_events(res: Response<Body>, want: usize) -> Vec<(u64, String, Value)> {
    let mut body = res.into_body();
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < want {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .expect("event stream stalled")
            .expect("stream ended")
            .unwrap();
        let Ok(data) = frame.into_data() else { continue };
        buf.push_str(std::str::from_utf8(&data).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut id, mut name, mut data) = (None, String::new(), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().parse::<u64>().unwrap());
                } else if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            if let Some(id) = id {
                out.push((id, name, serde_json::from_str(&data).unwrap()));
            }
        }
    }
    out
}

#[tokio::test]
async fn project_listing_and_health() {
    let f = fixture(2, false).await;
    let res = send(&f.app, get("/health")).await;
    assert_eq!(res.status(), StatusCode::OK);
    let v = json_of(send(&f.app, get("/api/projects")).await).await;
    assert_eq!(v["projects"][0]["project_id"], json!(f.pid));
    let res = send(&f.app, get(&f.url(""))).await;
    assert_eq!(res.status(), StatusCode::OK);
    let rev = revision_header(&res);
    let v = json_of(res).await;
    assert_eq!(v["revision"], json!(rev));
    assert_eq!(v["project"]["shots"].as_object().unwrap().len(), 2);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let f = fixture(1, false).await;
    for uri in [
        "/api/projects/nope".to_string(),
        f.url("/shots/missing"),
        f.url("/scenes/missing"),
        f.url("/versions/missing"),
        f.url("/jobs/missing"),
        f.url("/generation-jobs/missing"),
        f.url("/assets/missing"),
    ] {
        let res = send(&f.app, get(&uri)).await;
        assert_eq!(res.status(), StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(json_of(res).await["error"]["code"], "not_found");
    }
    let res = send(&f.app, post(&f.url("/ops/teleport"), json!({}))).await;
    assert_eq!(res.status(), StatusCode::NOT_FOUND);
    assert_eq!(json_of(res).await["error"]["code"], "unknown_operation");
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let f = fixture(1, false).await;
    let shot = f.ws.snapshot().shots.keys().next().unwrap().to_string();
    let bad = Request::patch(f.url(&format!("/shots/{shot}")))
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(&f.app, bad).await.status(), StatusCode::BAD_REQUEST);
    let res = send(&f.app, post(&f.url("/ops/auto_align"), json!({ "scene": "x" }))).await;
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    let res = send(&f.app, post(&f.url("/mutations"), json!({ "mutation": { "op": "explode" } }))).await;
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    let bad_if_match = Request::post(f.url("/undo"))
        .header(header::IF_MATCH, "yesterday")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&f.app, bad_if_match).await.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stale_revisions_conflict() {
    let f = fixture(2, false).await;
    let rev = f.ws.session().revision();
    let shot = f.ws.snapshot().shots.keys().next().unwrap().to_string();

    let patch = |body: Value| {
        Request::patch(f.url(&format!("/shots/{shot}")))
            .body(Body::from(body.to_string()))
            .unwrap()
    };
    let res = send(&f.app, patch(json!({ "description": "a gull", "revision": rev }))).await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(revision_header(&res), rev + 1);

    // Same expected revision again: the project has moved on.
    let res = send(&f.app, patch(json!({ "description": "a crow", "revision": rev }))).await;
    assert_eq!(res.status(), StatusCode::CONFLICT);
    assert_eq!(revision_header(&res), rev + 1);
    let v = json_of(res).await;
    assert_eq!(v["error"]["code"], "stale_revision");
    assert_eq!(v["revision"], json!(rev + 1));
    assert_eq!(
        f.ws.snapshot().shots[&storyloom_core::ids::ShotId::new(&shot)].description,
        "a gull"
    );

    let res = send(
        &f.app,
        Request::post(f.url("/undo"))
            .header(header::IF_MATCH, format!("\"{rev}\""))
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(res.status(), StatusCode::CONFLICT);

    let res = send(
        &f.app,
        post(&f.url("/ops/describe"), json!({ "force": true, "revision": rev })),
    )
    .await;
    assert_eq!(res.status(), StatusCode::CONFLICT);
    assert_eq!(json_of(res).await["error"]["details"]["actual"], json!(rev + 1));

    let res = send(&f.app, post(&f.url("/undo"), json!({ "revision": rev + 1 }))).await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(revision_header(&res), rev + 2);
}

#[tokio::test]
async fn ops_run_as_jobs_and_name_their_generation_job() {
    let f = fixture(3, false).await;
    let res = send(&f.app, post(&f.url("/ops/group"), json!({}))).await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);
    let location = res.headers()[header::LOCATION].to_str().unwrap().to_string();
    let v = json_of(res).await;
    let id = v["job"]["job_id"].as_str().unwrap().to_string();
    assert!(location.ends_with(&id));
    assert_eq!(v["job"]["kind"], "group");

    let job = wait_job(&f, &id).await;
    assert_eq!(job["status"], "done", "{job}");
    let gen = job["result"]["job_id"].as_str().unwrap();
    let res = send(&f.app, get(&f.url(&format!("/generation-jobs/{gen}")))).await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(json_of(res).await["job"]["kind"], "group_shots");
    assert!(!f.ws.snapshot().scenes.is_empty());
}

#[tokio::test]
async fn failing_ops_report_status_in_the_job() {
    let f = fixture(3, true).await;
    let scene = f.ws.snapshot().active().scenes[0].to_string();
    let res = send(&f.app, post(&f.url("/ops/auto_align"), json!({ "scene_id": scene }))).await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);
    let id = json_of(res).await["job"]["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&f, &id).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["code"], "empty_script");
    assert_eq!(job["error"]["details"]["status"], json!(422));
}

#[tokio::test]
async fn non_adjacent_contextual_scene_is_unprocessable() {
    let f = fixture(8, true).await;
    let scenes = f.ws.snapshot().active().scenes.clone();
    assert!(scenes.len() >= 3, "fixture needs three scenes, got {}", scenes.len());
    let body = json!({ "before": scenes[0], "after": scenes[2] });
    let res = send(&f.app, post(&f.url("/ops/contextual_scene"), body)).await;
    let id = json_of(res).await["job"]["job_id"].as_str().unwrap().to_string();
    let job = wait_job(&f, &id).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["details"]["status"], json!(422), "{job}");
}

#[tokio::test]
async fn event_stream_orders_job_lifecycle() {
    let f = fixture(3, false).await;
    let start = f.ws.session().events().last_seq();
    let sse = send(&f.app, get(&f.url(&format!("/events?after_seq={start}")))).await;
    assert_eq!(sse.status(), StatusCode::OK);
    assert!(sse.headers()[header::CONTENT_TYPE]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));

    let res = send(&f.app, post(&f.url("/ops/group"), json!({}))).await;
    let id = json_of(res).await["job"]["job_id"].as_str().unwrap().to_string();
    wait_job(&f, &id).await;

    let events = read_events(sse, 4).await;
    let seqs: Vec<u64> = events.iter().map(|e| e.0).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
    assert!(seqs[0] > start);
    let lifecycle: Vec<String> = events
        .iter()
        .filter(|e| e.1 == "job" && e.2["job"]["job_id"] == json!(id))
        .map(|e| e.2["job"]["status"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(lifecycle, ["queued", "running", "done"]);
    let mutation_pos = events.iter().position(|e| e.1 == "mutation").unwrap();
    let done_pos = events.iter().position(|e| e.2["job"]["status"] == "done").unwrap();
    assert!(mutation_pos < done_pos);
}

#[tokio::test]
async fn event_stream_resumes_and_is_identical_across_clients() {
    let f = fixture(2, false).await;
    let shot = f.ws.snapshot().shots.keys().next().unwrap().to_string();
    for text in ["one", "two", "three"] {
        let req = Request::patch(f.url(&format!("/shots/{shot}")))
            .body(Body::from(json!({ "description": text }).to_string()))
            .unwrap();
        assert_eq!(send(&f.app, req).await.status(), StatusCode::OK);
    }
    let log = f.ws.session().events().since(0);
    let total = log.len();

    let a = read_events(send(&f.app, get(&f.url("/events"))).await, total).await;
    let b = read_events(send(&f.app, get(&f.url("/events"))).await, total).await;
    assert_eq!(a, b);
    assert_eq!(
        a.iter().map(|e| e.0).collect::<Vec<_>>(),
        log.iter().map(|e| e.seq).collect::<Vec<_>>()
    );

    let resume_at = log[total - 2].seq;
    let req = Request::get(f.url("/events"))
        .header("last-event-id", resume_at.to_string())
        .body(Body::empty())
        .unwrap();
    let tail = read_events(send(&f.app, req).await, 1).await;
    assert_eq!(tail[0].0, log[total - 1].seq);

    let since = log[total - 2].revision;
    let tail = read_events(send(&f.app, get(&f.url(&format!("/events?since_revision={since}")))).await, 1).await;
    assert!(tail[0].2["revision"].as_u64().unwrap() > since);
    assert_eq!(tail[0].0, log[total - 1].seq);
}

#[tokio::test]
async fn assets_carry_checksum_etags() {
    let f = fixture(1, false).await;
    let (id, asset) =
        f.ws.snapshot()
            .assets
            .iter()
            .map(|(k, a)| (k.to_string(), a.clone()))
            .next()
            .unwrap();
    let res = send(&f.app, get(&f.url(&format!("/assets/{id}")))).await;
    assert_eq!(res.status(), StatusCode::OK);
    let etag = res.headers()[header::ETAG].to_str().unwrap().to_string();
    assert_eq!(etag, format!("\"{}\"", asset.checksum));
    assert_eq!(res.headers()[header::CONTENT_TYPE], "image/png");
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");

    let req = Request::get(f.url(&format!("/assets/{id}")))
        .header(header::IF_NONE_MATCH, &etag)
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&f.app, req).await.status(), StatusCode::NOT_MODIFIED);
}

#[tokio::test]
async fn timing_edits_conserve_the_scene_total() {
    let f = fixture(8, true).await;
    let p = f.ws.snapshot();
    let scene_id = p
        .active_scenes()
        .into_iter()
        .find(|s| s.shots.len() >= 2)
        .expect("a scene with two shots")
        .scene_id
        .clone();
    let uri = f.url(&format!("/scenes/{scene_id}/timing"));
    let before = json_of(send(&f.app, get(&uri)).await).await;
    assert_eq!(before["manual"], json!(false));
    let sum = |v: &Value| {
        v["timing"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["duration_ms"].as_u64().unwrap())
            .sum::<u64>()
    };
    let total = sum(&before);

    let res = send(&f.app, post(&uri, json!({ "edit": "resize", "index": 0, "delta_ms": 400 }))).await;
    assert_eq!(res.status(), StatusCode::OK);
    let after = json_of(res).await;
    assert_eq!(after["manual"], json!(true));
    assert_eq!(sum(&after), total);
    assert_eq!(
        after["timing"][0]["duration_ms"].as_u64().unwrap(),
        before["timing"][0]["duration_ms"].as_u64().unwrap() + 400
    );

    let res = send(
        &f.app,
        post(
            &uri,
            json!({ "edit": "resize", "index": 0, "delta_ms": 400, "conserve_total": false }),
        ),
    )
    .await;
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(sum(&json_of(res).await), total + 400);

    let res = send(&f.app, post(&uri, json!({ "edit": "resize", "index": 99, "delta_ms": 1 }))).await;
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
}
