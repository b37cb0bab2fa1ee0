//! HTTP contract of the review service over phantom pullbacks.

mod common;

use axum::http::StatusCode;
use common::{add_pullback, fixture, new_session, send, send_json, trimmed};
use fcap_core::docs::{compare, AnnotationDoc, ResultsDoc};
use fcap_core::model::ScanGeometry;
use fcap_core::store::{read_frame, read_manifest};
use fcap_service::{replay, App, FrameView, Session};
use serde_json::{json, Value};

fn view(v: Value) -> FrameView {
    serde_json::from_value(v).unwrap()
}

/// A frame inside the first programmed lesion.
fn lesion_frame(f: &common::Fixture) -> usize {
    let l = &f.spec.lesions[0];
    (l.frames[0] + l.frames[1]) / 2
}

#[tokio::test]
async fn lists_pullbacks_and_serves_frame_images() {
    let f = fixture("tcfa_short", Some(6));
    add_pullback(f.dir.path(), "raw_only", &trimmed("no_lipid", Some(2)), false);
    let r = f.router();
    let (status, v) = send_json(&r, "GET", "/api/pullbacks", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<(&str, bool)> = v.as_array().unwrap().iter().map(|p| (p["id"].as_str().unwrap(), p["analyzed"].as_bool().unwrap())).collect();
    assert_eq!(ids, vec![("pb1", true), ("raw_only", false)]);

    let (status, bytes) = send(&r, "GET", "/api/pullbacks/pb1/frames/2?view=polar", None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width() as usize, img.height() as usize), (f.spec.n_samples, f.spec.n_alines));
    let (status, bytes) = send(&r, "GET", "/api/pullbacks/pb1/frames/2?view=cartesian&size=256", None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (256, 256));
    assert_eq!(send(&r, "GET", "/api/pullbacks/pb1/frames/2?view=sideways", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_ids_are_404_and_unanalyzed_is_409() {
    let f = fixture("tcfa_short", Some(4));
    add_pullback(f.dir.path(), "raw_only", &trimmed("no_lipid", Some(2)), false);
    let r = f.router();
    for uri in [
        "/api/pullbacks/nope/frames/0",
        "/api/pullbacks/pb1/frames/4",
        "/api/pullbacks/pb1/frames/99/analysis",
        "/api/pullbacks/nope/frames/0/analysis",
        "/api/pullbacks/..%2Fsessions/frames/0",
        "/api/sessions/nope",
        "/api/sessions/nope/export",
        "/api/not-an-endpoint",
    ] {
        assert_eq!(send(&r, "GET", uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, v) = send_json(&r, "GET", "/api/pullbacks/raw_only/frames/0/analysis", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("not been analyzed"));
    let (status, _) = send_json(&r, "POST", "/api/sessions", Some(json!({"analyst_id": "a", "pullback_id": "raw_only"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send_json(&r, "POST", "/api/sessions", Some(json!({"analyst_id": "a", "pullback_id": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send_json(&r, "PUT", "/api/sessions/nope/frames/0/edits", Some(json!({"accepted": true}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let sid = new_session(&r, "a", "pb1").await;
    let (status, _) = send_json(&r, "PUT", &format!("/api/sessions/{sid}/frames/4/edits"), Some(json!({"accepted": true}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn analysis_without_session_is_the_automated_frame() {
    let f = fixture("tcfa_short", Some(8));
    let results = ResultsDoc::read(&f.results_path("pb1")).unwrap();
    let r = f.router();
    for k in 0..8 {
        let (status, v) = send_json(&r, "GET", &format!("/api/pullbacks/pb1/frames/{k}/analysis"), None).await;
        assert_eq!(status, StatusCode::OK);
        let fv = view(v);
        let auto = results.frame(k).unwrap();
        assert_eq!(fv.measurements, auto.measurements);
        assert_eq!(fv.arcs, auto.arcs);
        assert_eq!(fv.revision, 0);
        assert_eq!(fv.accepted, None);
        assert_eq!(fv.lumen_polyline.len(), f.spec.n_alines);
        let want_row = results.thickness_map().values.row(k).to_vec();
        assert_eq!(fv.map_row, want_row);
        // polar overlays sit on pixel centres
        for (i, p) in fv.lumen_polyline.iter().enumerate() {
            assert_eq!(*p, [auto.lumen_px[i] + 0.5, i as f64 + 0.5]);
        }
        for (b, ab) in fv.boundaries.iter().zip(&auto.boundaries) {
            assert_eq!(b.r_abluminal, ab.r_abluminal);
        }
    }
}

#[tokio::test]
async fn cartesian_overlays_follow_the_scan_geometry() {
    let f = fixture("tcfa_short", Some(6));
    let r = f.router();
    let k = lesion_frame(&f);
    let size = 512usize;
    let (status, v) = send_json(&r, "GET", &format!("/api/pullbacks/pb1/frames/{k}/analysis?view=cartesian&size={size}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let fv = view(v);
    assert_eq!(fv.image_size, [size, size]);
    let results = ResultsDoc::read(&f.results_path("pb1")).unwrap();
    let auto = results.frame(k).unwrap();
    let n = f.spec.n_alines as f64;
    let centre = size as f64 / 2.0;
    let scale = centre / f.spec.n_samples as f64;
    // independent oracle: A-line 0 points up, angle grows clockwise
    let expect = |aline: f64, r: f64| {
        let t = std::f64::consts::TAU * aline / n;
        (centre + r * scale * t.sin(), centre - r * scale * t.cos())
    };
    let geo = ScanGeometry { n_alines: f.spec.n_alines, n_radial: f.spec.n_samples, out_size: size };
    let mut checked = 0;
    for (i, p) in fv.lumen_polyline.iter().enumerate() {
        let (x, y) = expect(i as f64, auto.lumen_px[i]);
        assert!((p[0] - x).hypot(p[1] - y) <= 1.0);
        let (a, rr) = geo.cartesian_to_polar(p[0], p[1]);
        let da = (a - i as f64).abs().min(n - (a - i as f64).abs());
        assert!(da * scale * rr / n * std::f64::consts::TAU <= 1.0 && (rr - auto.lumen_px[i]).abs() * scale <= 1.0);
        checked += 1;
    }
    for b in &fv.boundaries {
        for ((i, &r_acq), p) in b.arc.alines(f.spec.n_alines).zip(&b.r_acquisition).zip(&b.polyline) {
            let (x, y) = expect(i as f64, r_acq as f64);
            assert!((p[0] - x).hypot(p[1] - y) <= 1.0);
            checked += 1;
        }
    }
    assert!(checked > f.spec.n_alines);
}

#[tokio::test]
async fn no_edit_export_equals_automated_results() {
    let f = fixture("tcfa_short", Some(6));
    let r = f.router();
    let sid = new_session(&r, "alice", "pb1").await;
    let on_disk = std::fs::read(f.results_path("pb1")).unwrap();
    let (status, bytes) = send(&r, "GET", &format!("/api/sessions/{sid}/export?doc=results"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, on_disk);

    // accepting without geometry changes touches only the flag
    let (status, _) = send_json(&r, "PUT", &format!("/api/sessions/{sid}/frames/1/edits"), Some(json!({"accepted": true}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, v) = send_json(&r, "GET", &format!("/api/sessions/{sid}/export"), None).await;
    let exported: ResultsDoc = serde_json::from_value(v["results"].clone()).unwrap();
    let annotation: AnnotationDoc = serde_json::from_value(v["annotation"].clone()).unwrap();
    exported.validate().unwrap();
    annotation.validate().unwrap();
    let auto = ResultsDoc::read(&f.results_path("pb1")).unwrap();
    assert_eq!(exported.frame(1).unwrap().measurements, auto.frame(1).unwrap().measurements);
    assert_eq!(exported.frame(1).unwrap().accepted, Some(true));
    assert_eq!(annotation.frame(1).unwrap().accepted, Some(true));

    // export survives a disk round trip and leaves the automated file alone
    let path = f.dir.path().join("export.json");
    exported.write(&path).unwrap();
    assert_eq!(ResultsDoc::read(&path).unwrap(), exported);
    assert_eq!(std::fs::read(f.results_path("pb1")).unwrap(), on_disk);
    let (_, annot_bytes) = send(&r, "GET", &format!("/api/sessions/{sid}/export?doc=annotation"), None).await;
    assert_eq!(serde_json::from_slice::<AnnotationDoc>(&annot_bytes).unwrap(), annotation);
}

#[tokio::test]
async fn shrinking_an_arc_to_63_alines_gives_45_degrees() {
    let f = fixture("noisefree_step", None);
    let r = f.router();
    let k = lesion_frame(&f);
    let truth_arc = f.truth.frames[k].arcs[0];
    assert_eq!(f.spec.n_alines, 504);
    assert_eq!(truth_arc.length, 126);
    let sid = new_session(&r, "alice", "pb1").await;
    let (status, v) = send_json(
        &r,
        "PUT",
        &format!("/api/sessions/{sid}/frames/{k}/edits"),
        Some(json!({"arcs": [{"start": truth_arc.start, "length": 63}], "base_revision": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let fv = view(v);
    assert_eq!(fv.measurements.lipid_angle_deg, 45.0);
    assert_eq!(fv.measurements.thickness_um.len(), 63);
    assert_eq!(fv.revision, 1);
    let prov = fv.provenance.clone().unwrap();
    assert_eq!((prov.analyst_id.as_str(), prov.revision), ("alice", Some(1)));

    let (_, bytes) = send(&r, "GET", &format!("/api/sessions/{sid}/export?doc=results"), None).await;
    let exported: ResultsDoc = serde_json::from_slice(&bytes).unwrap();
    let frame = exported.frame(k).unwrap();
    assert_eq!(frame.measurements.lipid_angle_deg, 45.0);
    assert_eq!(frame.provenance.as_ref().unwrap().analyst_id, "alice");
    assert_eq!(frame.provenance.as_ref().unwrap().revision, Some(1));

    // the surviving half keeps the automated boundary
    let auto = ResultsDoc::read(&f.results_path("pb1")).unwrap();
    let auto_frame = auto.frame(k).unwrap();
    assert_eq!(frame.boundaries[0].r_abluminal[..], auto_frame.boundaries[0].r_abluminal[..63]);

    let (status, v) = send_json(&r, "PUT", &format!("/api/sessions/{sid}/frames/{k}/edits"), Some(json!({"arcs": "delete-all"}))).await;
    assert_eq!(status, StatusCode::OK);
    let fv = view(v);
    assert_eq!((fv.measurements.lipid_angle_deg, fv.measurements.min_thickness_um, fv.revision), (0.0, None, 2));
}

#[tokio::test]
async fn anchors_on_the_flat_edge_phantom() {
    let f = fixture("noisefree_step", None);
    let r = f.router();
    let k = 2;
    let truth = &f.truth.frames[k].boundaries[0];
    let n = f.spec.n_alines;
    let alines: Vec<usize> = truth.arc.alines(n).collect();
    let mid = alines.len() / 2;
    let (j, r_true) = (alines[mid], truth.r_abluminal[mid]);
    assert!(truth.r_abluminal.iter().all(|&x| x == r_true));
    let auto = ResultsDoc::read(&f.results_path("pb1")).unwrap();
    assert_eq!(auto.frame(k).unwrap().boundaries[0].r_abluminal, truth.r_abluminal);

    let sid = new_session(&r, "alice", "pb1").await;
    let uri = format!("/api/sessions/{sid}/frames/{k}/edits");
    let (status, v) = send_json(&r, "PUT", &uri, Some(json!({"anchors": [{"aline": j, "r": r_true}]}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let fv = view(v);
    assert_eq!(fv.boundaries[0].r_abluminal, truth.r_abluminal);
    assert_eq!(fv.measurements, auto.frame(k).unwrap().measurements);

    let lifted = r_true + 10;
    let (status, v) = send_json(&r, "PUT", &uri, Some(json!({"anchors": [{"aline": j, "r": lifted}]}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let path = view(v).boundaries[0].r_abluminal.clone();
    assert_eq!(path[mid], lifted);
    assert!(path.windows(2).all(|w| w[0].abs_diff(w[1]) <= 2));
    // oracle: the steepest admissible ramp leaves the edge for the fewest A-lines
    let ramp: Vec<usize> = (0..alines.len()).map(|m| lifted.saturating_sub(2 * m.abs_diff(mid)).max(r_true)).collect();
    assert_eq!(path, ramp);
}

#[tokio::test]
async fn invalid_edits_are_rejected_without_state_change() {
    let f = fixture("noisefree_step", None);
    let r = f.router();
    let sid = new_session(&r, "alice", "pb1").await;
    let uri = format!("/api/sessions/{sid}/frames/1/edits");
    let truth = &f.truth.frames[1].boundaries[0];
    let j = truth.arc.start + 20;
    let r0 = truth.r_abluminal[20];
    let (status, v) = send_json(&r, "PUT", &uri, Some(json!({"anchors": [{"aline": j, "r": r0}, {"aline": j + 1, "r": r0 + 9}]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    for body in [
        json!({"arcs": [{"start": 504, "length": 3}]}),
        json!({"arcs": [{"start": 0, "length": 20}, {"start": 10, "length": 20}]}),
        json!({"arcs": [{"start": 0, "length": 0}]}),
        json!({"arcs": "delete-some"}),
        json!({"anchors": [{"aline": 400, "r": 30}]}),
        json!({"anchors": [{"aline": j, "r": 2}]}),
        json!({"colour": "green"}),
    ] {
        let (status, v) = send_json(&r, "PUT", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {v}");
    }
    let (_, s) = send_json(&r, "GET", &format!("/api/sessions/{sid}"), None).await;
    let s: Session = serde_json::from_value(s).unwrap();
    assert_eq!((s.revision, s.frames.len(), s.log.len()), (0, 0, 0));
}

#[tokio::test]
async fn repeated_edit_is_idempotent() {
    let f = fixture("tcfa_short", Some(12));
    let r = f.router();
    let k = lesion_frame(&f);
    let arc = f.truth.frames[k].arcs[0];
    let sid = new_session(&r, "bob", "pb1").await;
    let uri = format!("/api/sessions/{sid}/frames/{k}/edits");
    let body = json!({"arcs": [{"start": arc.start + 5, "length": arc.length - 10}], "accepted": false});
    let (s1, v1) = send_json(&r, "PUT", &uri, Some(body.clone())).await;
    let (s2, v2) = send_json(&r, "PUT", &uri, Some(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(v1, v2);
    let (_, s) = send_json(&r, "GET", &format!("/api/sessions/{sid}"), None).await;
    let s: Session = serde_json::from_value(s).unwrap();
    assert_eq!((s.revision, s.log.len()), (1, 1));
}

#[tokio::test]
async fn stale_revision_loses_with_409() {
    let f = fixture("tcfa_short", Some(12));
    let r = f.router();
    let k = lesion_frame(&f);
    let arc = f.truth.frames[k].arcs[0];
    let sid = new_session(&r, "bob", "pb1").await;
    let uri = format!("/api/sessions/{sid}/frames/{k}/edits");
    let a = json!({"arcs": [{"start": arc.start, "length": 100}], "base_revision": 0});
    let b = json!({"arcs": [{"start": arc.start, "length": 90}], "base_revision": 0});
    let (ra, rb) = tokio::join!(send_json(&r, "PUT", &uri, Some(a)), send_json(&r, "PUT", &uri, Some(b)));
    let mut statuses = [ra.0, rb.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let loser = if ra.0 == StatusCode::CONFLICT { &ra.1 } else { &rb.1 };
    assert_eq!(loser["current_revision"], json!(1));

    // a retry based on the current revision goes through
    let c = json!({"arcs": [{"start": arc.start, "length": 80}], "base_revision": 1});
    let (status, v) = send_json(&r, "PUT", &uri, Some(c)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view(v).revision, 2);
    let (status, v) = send_json(&r, "PUT", &uri, Some(json!({"accepted": true, "base_revision": 1}))).await;
    assert_eq!((status, v["current_revision"].clone()), (StatusCode::CONFLICT, json!(2)));
}

#[tokio::test]
async fn replaying_the_log_reproduces_the_session() {
    let f = fixture("tcfa_short", Some(12));
    let r = f.router();
    let k = lesion_frame(&f);
    let arc = f.truth.frames[k].arcs[0];
    let sid = new_session(&r, "carol", "pb1").await;
    let edits = [
        (k, json!({"arcs": [{"start": arc.start, "length": 70}]})),
        (k - 1, json!({"accepted": true})),
        (k, json!({"anchors": [{"aline": arc.start + 10, "r": 14}]})),
        (k, json!({"arcs": [{"start": arc.start + 3, "length": 90}], "anchors": []})),
        (k + 1, json!({"arcs": "delete-all", "accepted": false})),
    ];
    for (frame, body) in edits {
        let (status, v) = send_json(&r, "PUT", &format!("/api/sessions/{sid}/frames/{frame}/edits"), Some(body)).await;
        assert_eq!(status, StatusCode::OK, "{v}");
    }
    let (_, s) = send_json(&r, "GET", &format!("/api/sessions/{sid}"), None).await;
    let session: Session = serde_json::from_value(s).unwrap();
    assert_eq!(session.log.len(), 5);
    let dir = f.dir.path().join("pullbacks/pb1");
    let manifest = read_manifest(&dir).unwrap();
    let results = ResultsDoc::read(&dir.join("results.json")).unwrap();
    // a fresh service instance has no cached state to lean on
    let fresh = App::new(f.dir.path());
    assert_eq!(fresh.session(&sid).unwrap(), session);
    let replayed = replay(&session, &results, &manifest.calibration(), &|i| read_frame(&dir, &manifest, i)).unwrap();
    assert_eq!(replayed, session.frames);
}

#[tokio::test]
async fn compare_matches_offline_comparison_of_exports() {
    let f = fixture("tcfa_short", Some(16));
    let r = f.router();
    let a = new_session(&r, "alice", "pb1").await;
    let b = new_session(&r, "bob", "pb1").await;
    let l = &f.spec.lesions[0];
    for k in l.frames[0]..l.frames[1] {
        let arc = f.truth.frames[k].arcs[0];
        let shrink = k % 4;
        let body = json!({"arcs": [{"start": arc.start + shrink, "length": arc.length - 2 * shrink}]});
        let (status, _) = send_json(&r, "PUT", &format!("/api/sessions/{b}/frames/{k}/edits"), Some(body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, body) = send(&r, "GET", &format!("/api/compare?a={a}&b={b}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let export = |sid: String| {
        let r = r.clone();
        async move {
            let (_, bytes) = send(&r, "GET", &format!("/api/sessions/{sid}/export?doc=results"), None).await;
            serde_json::from_slice::<ResultsDoc>(&bytes).unwrap()
        }
    };
    let offline = compare(&export(a.clone()).await, &export(b.clone()).await).unwrap();
    assert_eq!(body, fcap_core::store::to_canonical_json(&offline).unwrap());
    assert!(offline.lipid_angle_deg.stats.is_some());

    let (_, same) = send_json(&r, "GET", &format!("/api/compare?a={a}&b={a}"), None).await;
    assert_eq!(same["lipid_angle_deg"]["stats"]["bias"], json!(0.0));
    assert_eq!(same["min_thickness_um"]["stats"]["r2"], json!(1.0));

    add_pullback(f.dir.path(), "pb2", &trimmed("tcfa_short", Some(16)), true);
    let c = new_session(&r, "carol", "pb2").await;
    let (status, _) = send_json(&r, "GET", &format!("/api/compare?a={a}&b={c}"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(&r, "GET", &format!("/api/compare?a={a}&b=missing"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_bundle_is_served_at_the_root() {
    let f = fixture("tcfa_short", Some(4));
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>review</html>").unwrap();
    let r = fcap_service::router(f.app.clone(), Some(ui.path().to_path_buf()));
    let (status, body) = send(&r, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    assert_eq!(send(&r, "GET", "/api/pullbacks", None).await.0, StatusCode::OK);
}
