use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::{engine::general_purpose::STANDARD as BASE64, Engine};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use motionforge::compose::compose;
use motionforge::formats::{encode_depth, DepthMap};
use motionforge::manifest::{load_manifest, read_json};
use motionforge::script::MotionScript;
use motionforge::tensor::ControlTensor;
use motionforge_service::{router, PreviewResponse, SessionView, Store};

fn depth_b64(w: u32, h: u32, f: impl Fn(u32, u32) -> f32) -> String {
    let values = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).map(|(u, v)| f(u, v)).collect();
    BASE64.encode(encode_depth(&DepthMap { width: w, height: h, values }))
}

fn upload(w: u32, h: u32, frames: usize) -> Value {
    json!({
        "intrinsics": {"fx": 40.0, "fy": 40.0, "cx": (w as f64 - 1.0) / 2.0, "cy": (h as f64 - 1.0) / 2.0},
        "depth": depth_b64(w, h, |u, v| 1.0 + 0.01 * (u + v) as f32),
        "frame_count": frames,
    })
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Bytes) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

fn as_json(bytes: &Bytes) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn create(app: &Router, body: Value) -> SessionView {
    let (status, bytes) = send(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn patch(app: &Router, id: &str, base: u64, op: Value) -> (StatusCode, Value) {
    let (status, bytes) = send(
        app,
        Method::PATCH,
        &format!("/sessions/{id}"),
        Some(json!({"base_revision": base, "op": op})),
    )
    .await;
    (status, as_json(&bytes))
}

fn add_rect(category: &str, rect: [u32; 4]) -> Value {
    json!({"type": "add_unit", "category": category, "mask": {"rect": rect}})
}

fn app() -> (Router, Arc<Store>) {
    let store = Arc::new(Store::in_memory());
    (router(store.clone()), store)
}

/// Session with a drag unit (translating) and a brush unit, fully scripted.
async fn scripted(app: &Router) -> SessionView {
    let s = create(app, upload(32, 24, 8)).await;
    let ops = [
        add_rect("drag", [2, 2, 10, 10]),
        add_rect("brush", [16, 4, 28, 14]),
        json!({"type": "set_drag_keyframes", "unit": 1, "keyframes": [
            {"frame": 7, "pose": {"translation": [0.05, 0.0, 0.0], "axis_angle": [0.0, 0.0, 0.1]}}
        ]}),
        json!({"type": "set_strength", "unit": 2, "curve": 0.3}),
        json!({"type": "set_camera_path", "keyframes": [
            {"frame": 7, "pose": {"translation": [0.0, 0.02, 0.0]}}
        ]}),
    ];
    for (k, op) in ops.into_iter().enumerate() {
        let (status, body) = patch(app, &s.id, k as u64, op).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    let (_, bytes) = send(app, Method::GET, &format!("/sessions/{}", s.id), None).await;
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test]
async fn create_and_get() {
    let (app, _) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    assert_eq!((s.width, s.height, s.frame_count, s.revision), (32, 24, 8, 0));
    assert_eq!(s.units.len(), 1);
    let (status, bytes) = send(&app, Method::GET, &format!("/sessions/{}", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(as_json(&bytes)["id"], json!(s.id));
    let (status, bytes) = send(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(as_json(&bytes)["error"], "NotFound");
}

#[tokio::test]
async fn malformed_uploads_are_rejected() {
    let (app, _) = app();
    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);

    let mut body = upload(32, 24, 8);
    body["depth"] = json!("@@@");
    let (status, _) = send(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let img = image::RgbImage::new(16, 16);
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
    let mut body = upload(32, 24, 8);
    body["image"] = json!(BASE64.encode(png));
    let (status, bytes) = send(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(as_json(&bytes)["error"], "DimensionMismatch");
}

#[tokio::test]
async fn oversized_body_is_413() {
    let (app, _) = app();
    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header("content-type", "application/json")
        .body(Body::from(vec![b' '; 65 * 1024 * 1024]))
        .unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let (app, store) = app();
    let a = create(&app, upload(32, 24, 8)).await;
    let b = create(&app, upload(32, 24, 8)).await;
    assert_ne!(a.id, b.id);
    let (status, _) = patch(&app, &a.id, 0, add_rect("drag", [0, 0, 4, 4])).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(store.get(&a.id).unwrap().revision, 1);
    let b_now = store.get(&b.id).unwrap();
    assert_eq!((b_now.revision, b_now.partition.unit_count()), (0, 1));
}

#[tokio::test]
async fn invariant_violation_leaves_state_unchanged() {
    let (app, store) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    patch(&app, &s.id, 0, add_rect("drag", [0, 0, 10, 10])).await;
    let before = store.get(&s.id).unwrap();
    let (status, body) = patch(&app, &s.id, 1, add_rect("brush", [5, 5, 15, 15])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "InvariantViolation");
    let after = store.get(&s.id).unwrap();
    assert_eq!(after.revision, 1);
    assert_eq!(after.partition, before.partition);

    let (status, _) = patch(&app, &s.id, 1, json!({"type": "remove_unit", "unit": 0})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = patch(&app, &s.id, 1, json!({"type": "explode"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(store.get(&s.id).unwrap().revision, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_patches_on_one_revision() {
    let (app, store) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    let tasks: Vec<_> = (0..8u32)
        .map(|k| {
            let (app, id) = (app.clone(), s.id.clone());
            tokio::spawn(async move { patch(&app, &id, 0, add_rect("drag", [k * 4, 0, k * 4 + 2, 2])).await })
        })
        .collect();
    let mut ok = 0;
    let mut conflicts = 0;
    for t in tasks {
        let (status, body) = t.await.unwrap();
        match status {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => {
                assert_eq!(body["error"], "RevisionConflict");
                assert_eq!(body["revision"], 1);
                conflicts += 1;
            }
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!((ok, conflicts), (1, 7));
    let state = store.get(&s.id).unwrap();
    assert_eq!((state.revision, state.partition.unit_count()), (1, 2));
}

#[tokio::test]
async fn preview_is_pure_and_identity_without_motion() {
    let (app, store) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    patch(&app, &s.id, 0, add_rect("drag", [2, 2, 10, 10])).await;
    let before = store.get(&s.id).unwrap();

    let uri = format!("/sessions/{}/preview?from=0&to=7&stride=2", s.id);
    let (status, first) = send(&app, Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, second) = send(&app, Method::GET, &uri, None).await;
    assert_eq!(first, second);
    let after = store.get(&s.id).unwrap();
    assert!(Arc::ptr_eq(&before, &after));

    let preview: PreviewResponse = serde_json::from_slice(&first).unwrap();
    assert_eq!(preview.frames.len(), 8);
    for frame in &preview.frames {
        assert_eq!(frame.points.len(), 16 * 12);
        let mut k = 0;
        for v in (0..24).step_by(2) {
            for u in (0..32).step_by(2) {
                let p = &frame.points[k];
                assert!((p.u - u as f32).abs() < 1e-6 && (p.v - v as f32).abs() < 1e-6);
                k += 1;
            }
        }
    }
}

#[tokio::test]
async fn dolly_in_grows_the_bounding_box() {
    let (app, _) = app();
    let (w, h) = (40u32, 30u32);
    let mut body = upload(w, h, 8);
    body["depth"] = json!(depth_b64(w, h, |u, v| {
        if (12..28).contains(&u) && (9..21).contains(&v) {
            1.0
        } else {
            0.0
        }
    }));
    let s = create(&app, body).await;
    let (status, _) = patch(
        &app,
        &s.id,
        0,
        json!({"type": "set_camera_path", "keyframes": [{"frame": 7, "pose": {"translation": [0.0, 0.0, 0.14]}}]}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, bytes) = send(&app, Method::GET, &format!("/sessions/{}/preview?from=0&to=7", s.id), None).await;
    let preview: PreviewResponse = serde_json::from_slice(&bytes).unwrap();
    let area = |b: [f32; 4]| (b[2] - b[0]) * (b[3] - b[1]);
    let areas: Vec<f32> = preview.frames.iter().map(|f| area(f.bounding_box().unwrap())).collect();
    assert!(areas.windows(2).all(|w| w[1] > w[0]), "{areas:?}");
}

#[tokio::test]
async fn preview_frame_range_and_raster() {
    let (app, _) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    let get = |q: &str| {
        let uri = format!("/sessions/{}/preview?{q}", s.id);
        let app = app.clone();
        async move { send(&app, Method::GET, &uri, None).await }
    };
    assert_eq!(get("from=8").await.0, StatusCode::RANGE_NOT_SATISFIABLE);
    assert_eq!(get("from=5&to=3").await.0, StatusCode::RANGE_NOT_SATISFIABLE);
    let (status, body) = get("from=0&to=99").await;
    assert_eq!(status, StatusCode::RANGE_NOT_SATISFIABLE);
    assert_eq!(as_json(&body)["error"], "FrameOutOfRange");
    assert_eq!(get("from=0&to=2&raster=true").await.0, StatusCode::BAD_REQUEST);

    let (status, png) = get("from=3&raster=true").await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (32, 24));
}

#[tokio::test]
async fn export_lists_missing_units() {
    let (app, _) = app();
    let s = create(&app, upload(32, 24, 8)).await;
    patch(&app, &s.id, 0, add_rect("drag", [0, 0, 4, 4])).await;
    patch(&app, &s.id, 1, add_rect("brush", [8, 0, 12, 4])).await;
    let (status, bytes) = send(&app, Method::GET, &format!("/sessions/{}/export", s.id), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = as_json(&bytes);
    assert_eq!(body["error"], "IncompleteScript");
    assert_eq!(body["missing_units"], json!([1, 2]));
}

#[tokio::test]
async fn export_matches_composing_the_dumped_files() {
    let (app, store) = app();
    let s = scripted(&app).await;
    assert!(s.missing_units.is_empty());
    let (status, bytes) = send(&app, Method::GET, &format!("/sessions/{}/export?part=tensor", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let tensor = ControlTensor::from_bytes(&bytes).unwrap();
    assert_eq!(tensor.shape(), [8, 5, 24, 32]);

    let dir = tempfile::tempdir().unwrap();
    let (scene_path, script_path) = store.get(&s.id).unwrap().dump(dir.path()).unwrap();
    let loaded = load_manifest(&scene_path).unwrap();
    let script: MotionScript = read_json(&script_path).unwrap();
    let offline = compose(&loaded.scene, &loaded.partition, &script).unwrap();
    assert_eq!(offline.to_bytes(), bytes.to_vec());

    let (status, manifest) = send(&app, Method::GET, &format!("/sessions/{}/export?part=manifest", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(as_json(&manifest)["shape"], json!([8, 5, 24, 32]));
    let (status, prov) = send(&app, Method::GET, &format!("/sessions/{}/export?part=provenance", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(as_json(&prov)["revision"], 5);
}

#[tokio::test]
async fn patch_log_replays_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let app = router(store.clone());
    let s = scripted(&app).await;
    let (_, exported) = send(&app, Method::GET, &format!("/sessions/{}/export", s.id), None).await;
    // A rejected patch must not reach the log.
    let (status, _) = patch(&app, &s.id, 0, add_rect("drag", [0, 20, 2, 22])).await;
    assert_eq!(status, StatusCode::CONFLICT);
    drop(app);
    drop(store);

    let reopened = Arc::new(Store::open(dir.path()).unwrap());
    assert_eq!(reopened.len(), 1);
    let app = router(reopened.clone());
    let (_, bytes) = send(&app, Method::GET, &format!("/sessions/{}", s.id), None).await;
    let view: SessionView = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(serde_json::to_value(&view).unwrap(), serde_json::to_value(&s).unwrap());
    let (_, replayed) = send(&app, Method::GET, &format!("/sessions/{}/export", s.id), None).await;
    assert_eq!(replayed, exported);
}

#[tokio::test]
async fn single_frame_preview_at_full_resolution_is_interactive() {
    let (app, _) = app();
    let s = create(&app, upload(704, 448, 24)).await;
    patch(&app, &s.id, 0, add_rect("brush", [100, 100, 300, 250])).await;
    patch(
        &app,
        &s.id,
        1,
        json!({"type": "set_camera_path", "keyframes": [{"frame": 23, "pose": {"axis_angle": [0.0, 0.1, 0.0], "translation": [0.0, 0.0, 0.0]}}]}),
    )
    .await;
    let start = std::time::Instant::now();
    let (status, _) = send(&app, Method::GET, &format!("/sessions/{}/preview?from=23&stride=4", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = send(&app, Method::GET, &format!("/sessions/{}/preview?from=12&raster=true", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 2.0, "{elapsed:?}");
}
