use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pipescope::jobs::JobManager;
use pipescope::server::{router, AppState};
use pipescope_core::imageio::encode_rgb_png;
use pipescope_core::ingest::open_source;
use pipescope_core::synth::CylinderScene;
use pipescope_core::{preview_unwrap, AnnulusGeometry, UnwrapSpec};
use serde_json::{json, Value};
use tower::ServiceExt;

const GEOM: AnnulusGeometry = AnnulusGeometry {
    cx: 160.0,
    cy: 120.0,
    r_min: 30.0,
    r_max: 110.0,
};
const SPEC: UnwrapSpec = UnwrapSpec { w: 200, h: 80 };

fn write_fixture(dir: &Path, frames: usize) -> String {
    let scene = CylinderScene::new(GEOM, SPEC, 320, 240, 3.0, frames, 5);
    let src = dir.join("frames");
    scene.write_sequence(&src).unwrap();
    src.to_string_lossy().into_owned()
}

fn app(dir: &Path, default_source: Option<String>) -> Router {
    let jobs = JobManager::new(dir.join("jobs"));
    router(AppState::new(jobs, default_source), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_of(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn job_config(source: &str, n_interval: usize) -> Value {
    json!({
        "source": source,
        "n_interval": n_interval,
        "nominal_advance": 3.0 * n_interval as f64,
        "geometry": GEOM,
        "unwrap": SPEC,
    })
}

async fn wait_for(app: &Router, id: u64, pred: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let (s, job) = json_of(app, Method::GET, &format!("/api/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if pred(&job["state"]) || Instant::now() > deadline {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

fn terminal(state: &Value) -> bool {
    matches!(state["status"].as_str(), Some("done" | "failed"))
}

#[tokio::test]
async fn job_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_fixture(dir.path(), 30);
    let app = app(dir.path(), None);

    let (s, created) = json_of(&app, Method::POST, "/api/jobs", Some(job_config(&source, 5))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(created["warnings"], json!([]));
    let id = created["id"].as_u64().unwrap();

    let job = wait_for(&app, id, terminal).await;
    assert_eq!(job["state"]["status"], "done", "{job}");
    assert_eq!(job["state"]["report"]["m"], 6);

    let (s, report) = json_of(&app, Method::GET, &format!("/api/jobs/{id}/report"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["m"], 6);
    assert_eq!(report["alignments"].as_array().unwrap().len(), 5);
    assert_eq!(report["panorama_height"], 200);

    let (s, png) = call(&app, Method::GET, &format!("/api/jobs/{id}/panorama"), None).await;
    assert_eq!(s, StatusCode::OK);
    let out = Path::new(report["output_dir"].as_str().unwrap());
    assert_eq!(png, std::fs::read(out.join("panorama.png")).unwrap());

    let (s, list) = json_of(&app, Method::GET, "/api/jobs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn submission_errors_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_fixture(dir.path(), 10);
    let app = app(dir.path(), None);

    let mut bad = job_config(&source, 5);
    bad["geometry"]["r_min"] = json!(110.0);
    let (s, body) = json_of(&app, Method::POST, "/api/jobs", Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("r_min"));

    let (s, created) = json_of(&app, Method::POST, "/api/jobs", Some(job_config(&source, 2))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(created["warnings"].as_array().unwrap().len(), 1);

    let (s, _) = json_of(&app, Method::GET, "/api/jobs/999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_of(&app, Method::DELETE, "/api/jobs/999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = json_of(&app, Method::GET, "/api/config/default", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn unreadable_source_fails_in_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (_, created) = json_of(&app, Method::POST, "/api/jobs", Some(job_config("/no/such/dir", 5))).await;
    let id = created["id"].as_u64().unwrap();
    let job = wait_for(&app, id, terminal).await;
    assert_eq!(job["state"]["status"], "failed");
    assert_eq!(job["state"]["stage"], "ingest");
    let (s, _) = call(&app, Method::GET, &format!("/api/jobs/{id}/panorama"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn cancel_running_and_queued_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = CylinderScene::new(
        AnnulusGeometry {
            cx: 320.0,
            cy: 240.0,
            r_min: 60.0,
            r_max: 230.0,
        },
        UnwrapSpec { w: 500, h: 250 },
        640,
        480,
        3.0,
        80,
        9,
    );
    let src = dir.path().join("frames");
    scene.write_sequence(&src).unwrap();
    let app = app(dir.path(), None);
    let cfg = json!({
        "source": src.to_string_lossy(),
        "n_interval": 1,
        "geometry": scene.geometry,
        "unwrap": scene.spec,
    });

    let (_, a) = json_of(&app, Method::POST, "/api/jobs", Some(cfg.clone())).await;
    let (_, b) = json_of(&app, Method::POST, "/api/jobs", Some(cfg)).await;
    let (a, b) = (a["id"].as_u64().unwrap(), b["id"].as_u64().unwrap());

    // The second job waits behind the first and is cancelled before it starts.
    let (s, job_b) = json_of(&app, Method::DELETE, &format!("/api/jobs/{b}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(job_b["state"], json!({"status": "failed", "error": "cancelled", "stage": null}));

    let running = wait_for(&app, a, |s| s["status"] == "running" || terminal(s)).await;
    assert_eq!(running["state"]["status"], "running", "{running}");
    let (s, _) = json_of(&app, Method::DELETE, &format!("/api/jobs/{a}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let job_a = wait_for(&app, a, terminal).await;
    assert_eq!(job_a["state"]["status"], "failed");
    assert_eq!(job_a["state"]["error"], "cancelled");

    // Cancellation is final.
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (_, later) = json_of(&app, Method::GET, &format!("/api/jobs/{b}"), None).await;
    assert_eq!(later["state"]["error"], "cancelled");
}

#[tokio::test]
async fn progress_is_monotone_within_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_fixture(dir.path(), 40);
    let app = app(dir.path(), None);
    let (_, created) = json_of(&app, Method::POST, "/api/jobs", Some(job_config(&source, 2))).await;
    let id = created["id"].as_u64().unwrap();

    let order = ["ingest", "keyframes", "unwrap", "registration", "compose", "output"];
    let mut last: Option<(usize, f64)> = None;
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let (_, job) = json_of(&app, Method::GET, &format!("/api/jobs/{id}"), None).await;
        let state = &job["state"];
        if terminal(state) {
            assert_eq!(state["status"], "done");
            break;
        }
        if state["status"] == "running" {
            let rank = order.iter().position(|s| *s == state["stage"]).unwrap();
            let p = state["progress"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p));
            if let Some((r0, p0)) = last {
                assert!(rank > r0 || (rank == r0 && p >= p0), "{r0}/{p0} -> {rank}/{p}");
            }
            last = Some((rank, p));
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

#[tokio::test]
async fn concurrent_previews_match_direct_unwrap() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_fixture(dir.path(), 5);
    let app = app(dir.path(), Some(source.clone()));
    let frame = open_source(&source).unwrap().read_frame(3).unwrap();

    let geoms = [
        GEOM,
        AnnulusGeometry {
            cx: 150.0,
            cy: 125.0,
            r_min: 20.0,
            r_max: 90.0,
        },
    ];
    let specs = [SPEC, UnwrapSpec { w: 120, h: 60 }];
    let requests = geoms.iter().zip(specs).map(|(g, s)| {
        let app = app.clone();
        let body = json!({"frame": 3, "geometry": g, "unwrap": s});
        tokio::spawn(async move { call(&app, Method::POST, "/api/preview/unwrap", Some(body)).await })
    });
    let results: Vec<_> = futures_join(requests.collect()).await;
    for ((status, bytes), (g, s)) in results.into_iter().zip(geoms.iter().zip(specs)) {
        assert_eq!(status, StatusCode::OK);
        let direct = encode_rgb_png(&preview_unwrap(&frame, g, &s).unwrap().to_rgb_image()).unwrap();
        assert_eq!(bytes, direct);
    }

    let (s, body) = json_of(
        &app,
        Method::POST,
        "/api/preview/unwrap",
        Some(json!({"frame": 3, "geometry": {"cx": 160.0, "cy": 120.0, "r_min": 50.0, "r_max": 50.0}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string());

    let (s, _) = call(&app, Method::POST, "/api/preview/unwrap", Some(json!({"frame": 99}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn source_frames_are_served_as_png() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_fixture(dir.path(), 3);
    let app = app(dir.path(), None);
    let uri = format!("/api/source/frames/2?source={}", source.replace('/', "%2F"));
    let (s, bytes) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    let frame = open_source(&source).unwrap().read_frame(2).unwrap();
    assert_eq!(bytes, encode_rgb_png(&frame.to_rgb_image()).unwrap());

    let (s, _) = call(&app, Method::GET, "/api/source/frames/2", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

async fn futures_join<T>(handles: Vec<tokio::task::JoinHandle<T>>) -> Vec<T> {
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}
