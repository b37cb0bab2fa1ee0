//! Data-root fixtures and request helpers shared by the service tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fcap_core::config::AnalysisConfig;
use fcap_core::docs::ResultsDoc;
use fcap_core::phantom::{generate, preset, GroundTruth, PhantomSpec};
use fcap_core::pipeline::{analyze_pullback, FrameInputs, LipidSource};
use fcap_core::store::{write_pullback, FrameFormat};
use fcap_service::{router, App};
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub app: Arc<App>,
    pub spec: PhantomSpec,
    pub truth: GroundTruth,
}

impl Fixture {
    pub fn router(&self) -> Router {
        router(self.app.clone(), None)
    }

    pub fn results_path(&self, id: &str) -> std::path::PathBuf {
        self.dir.path().join("pullbacks").join(id).join("results.json")
    }
}

/// Writes `spec` as pullback `id` under `root` and, when `analyze` is set,
/// its automated results with lipid arcs taken from the phantom truth.
pub fn add_pullback(root: &Path, id: &str, spec: &PhantomSpec, analyze: bool) -> GroundTruth {
    let (mut pb, truth) = generate(spec).unwrap();
    pb.id = id.into();
    let dir = root.join("pullbacks").join(id);
    write_pullback(&dir, &pb, FrameFormat::Png).unwrap();
    if analyze {
        let cfg = AnalysisConfig::default();
        let analysis = analyze_pullback(&pb, &cfg, 0, |k| FrameInputs {
            source: LipidSource::Arcs(&truth.frames[k].arcs),
            lumen: None,
        })
        .unwrap();
        let doc = ResultsDoc::from_analysis(id, &pb.calib, &cfg, "annotation", &analysis.frames).unwrap();
        doc.write(&dir.join("results.json")).unwrap();
    }
    truth
}

/// A preset cut down to its first `frames` frames.
pub fn trimmed(preset_name: &str, frames: Option<usize>) -> PhantomSpec {
    let mut spec = preset(preset_name).unwrap();
    if let Some(n) = frames {
        spec.n_frames = n;
        spec.lesions.retain(|l| l.frames[0] < n);
        for l in &mut spec.lesions {
            l.frames[1] = l.frames[1].min(n);
        }
    }
    spec
}

pub fn fixture(preset_name: &str, frames: Option<usize>) -> Fixture {
    let spec = trimmed(preset_name, frames);
    let dir = tempfile::tempdir().unwrap();
    let truth = add_pullback(dir.path(), "pb1", &spec, true);
    let app = Arc::new(App::new(dir.path()));
    Fixture { dir, app, spec, truth }
}

pub async fn send(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub async fn send_json(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(router, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

pub async fn new_session(router: &Router, analyst: &str, pullback: &str) -> String {
    let (status, v) = send_json(
        router,
        "POST",
        "/api/sessions",
        Some(serde_json::json!({ "analyst_id": analyst, "pullback_id": pullback })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}
