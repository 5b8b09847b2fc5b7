use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pupiltrack::raster::GrayImage;
use pupiltrack_harness::dataset::{write_trial, DatasetManifest, LabelRecord};
use pupiltrack_harness::server::{router, AppState};
use tower::ServiceExt;

struct Fixture {
    dir: tempfile::TempDir,
    manifest: DatasetManifest,
}

fn label(frame: usize, cx: f64) -> LabelRecord {
    LabelRecord { frame, cx, cy: 50.0, a: 12.0, b: 10.0, angle: 15.0 }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<GrayImage> = (0..3).map(|i| GrayImage::from_fn(40, 30, |x, y| (x * 3 + y + i * 50) as u8)).collect();
    let entry = write_trial(dir.path(), "t1", &frames, &[label(0, 20.0)]).unwrap();
    let manifest = DatasetManifest { fps: 250.0, width: 40, height: 30, trials: vec![entry], root: dir.path().into() };
    manifest.save(&dir.path().join("manifest.json")).unwrap();
    let manifest = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    Fixture { dir, manifest }
}

fn app(f: &Fixture) -> Router {
    router(AppState::new(f.manifest.clone(), None))
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let res = app.oneshot(req).await.unwrap();
    let status = res.status();
    let ctype = res.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: String) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body)).unwrap()
}

#[tokio::test]
async fn manifest_lists_trials() {
    let f = fixture();
    let (status, _, body) = send(app(&f), get("/manifest")).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["width"], 40);
    assert_eq!(v["height"], 30);
    assert_eq!(v["trials"][0]["id"], "t1");
    assert_eq!(v["trials"][0]["frames"], 3);
    assert_eq!(v["trials"][0]["has_results"], false);
}

#[tokio::test]
async fn frames_are_served_as_png() {
    let f = fixture();
    let (status, ctype, body) = send(app(&f), get("/frame/t1/2")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let path = f.dir.path().join("served.png");
    std::fs::write(&path, &body).unwrap();
    let img = GrayImage::load(&path).unwrap();
    assert_eq!(img, GrayImage::from_fn(40, 30, |x, y| (x * 3 + y + 100) as u8));

    assert_eq!(send(app(&f), get("/frame/t1/3")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(app(&f), get("/frame/nope/0")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn labels_round_trip() {
    let f = fixture();
    let (status, _, body) = send(app(&f), get("/labels/t1")).await;
    assert_eq!(status, StatusCode::OK);
    let labels: Vec<LabelRecord> = serde_json::from_slice(&body).unwrap();
    assert_eq!(labels, vec![label(0, 20.0)]);

    // Out of order with a repeated frame: sorted, last record wins.
    let posted = vec![label(2, 22.0), label(0, 19.0), label(2, 23.5)];
    let (status, _, body) = send(app(&f), post("/labels/t1", serde_json::to_string(&posted).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["saved"], 2);

    let (_, _, body) = send(app(&f), get("/labels/t1")).await;
    let labels: Vec<LabelRecord> = serde_json::from_slice(&body).unwrap();
    assert_eq!(labels, vec![label(0, 19.0), label(2, 23.5)]);
    let on_disk = pupiltrack_harness::dataset::load_labels(&f.manifest.labels_path(&f.manifest.trials[0])).unwrap();
    assert_eq!(on_disk, labels);
}

#[tokio::test]
async fn bad_label_posts_are_refused_and_leave_the_file_alone() {
    let f = fixture();
    let flipped = serde_json::json!([{ "frame": 0, "cx": 1.0, "cy": 1.0, "a": 3.0, "b": 5.0, "angle": 0.0 }]);
    let beyond = serde_json::to_string(&vec![label(3, 1.0)]).unwrap();
    let extra = serde_json::json!([{ "frame": 0, "cx": 1.0, "cy": 1.0, "a": 5.0, "b": 3.0, "angle": 0.0, "x": 1 }]);
    for body in [flipped.to_string(), beyond, extra.to_string(), "not json".to_string()] {
        let (status, _, _) = send(app(&f), post("/labels/t1", body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(send(app(&f), post("/labels/nope", "[]".into())).await.0, StatusCode::NOT_FOUND);
    let (_, _, body) = send(app(&f), get("/labels/t1")).await;
    assert_eq!(serde_json::from_slice::<Vec<LabelRecord>>(&body).unwrap(), vec![label(0, 20.0)]);
}

#[tokio::test]
async fn results_are_served_as_json_lines() {
    let f = fixture();
    assert_eq!(send(app(&f), get("/results/t1")).await.0, StatusCode::NOT_FOUND);
    let path = f.manifest.results_path(&f.manifest.trials[0]);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let lines = "{\"frame\":0,\"detected\":false}\n{\"frame\":1,\"detected\":true}\n";
    std::fs::write(&path, lines).unwrap();
    let (status, ctype, body) = send(app(&f), get("/results/t1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("application/jsonl"));
    assert_eq!(String::from_utf8(body).unwrap(), lines);
    let (_, _, body) = send(app(&f), get("/manifest")).await;
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["trials"][0]["has_results"], true);
}

#[tokio::test]
async fn index_and_static_assets() {
    let f = fixture();
    let (status, ctype, body) = send(app(&f), get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.unwrap().starts_with("text/html"));
    assert!(String::from_utf8(body).unwrap().contains("/manifest"));
    assert_eq!(send(app(&f), get("/nothing-here")).await.0, StatusCode::NOT_FOUND);

    let ui = f.dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<p>labeler</p>").unwrap();
    std::fs::write(ui.join("app.js"), "console.log(1);").unwrap();
    let with_ui = router(AppState::new(f.manifest.clone(), Some(ui)));
    let (status, _, body) = send(with_ui.clone(), get("/app.js")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"console.log(1);");
    let (_, _, body) = send(with_ui.clone(), get("/")).await;
    assert_eq!(body, b"<p>labeler</p>");
    assert_eq!(send(with_ui, get("/manifest")).await.0, StatusCode::OK);
}
