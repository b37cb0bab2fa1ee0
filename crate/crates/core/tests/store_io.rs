//! File formats: pullback containers, documents and thickness-map images.

use fcap_core::capseg::ThicknessMap;
use fcap_core::config::AnalysisConfig;
use fcap_core::docs::{AnnotationDoc, ResultsDoc};
use fcap_core::phantom::{generate, preset};
use fcap_core::pipeline::{analyze_pullback, FrameInputs, LipidSource};
use fcap_core::render::{render_thickness_map, write_png_rgb, SENTINEL_GRAY};
use fcap_core::store::{read_manifest, read_pullback, write_pullback, FrameFormat, MANIFEST_FILE};
use fcap_core::Error;

fn small_phantom(frames: usize) -> (fcap_core::Pullback, fcap_core::GroundTruth) {
    let mut spec = preset("tcfa_short").unwrap();
    spec.n_frames = frames;
    spec.lesions[0].frames = [1, frames - 1];
    generate(&spec).unwrap()
}

#[test]
fn png_and_raw_round_trips_are_exact() {
    let (pb, _) = small_phantom(4);
    for format in [FrameFormat::Png, FrameFormat::Raw] {
        let dir = tempfile::tempdir().unwrap();
        write_pullback(dir.path(), &pb, format).unwrap();
        let back = read_pullback(dir.path()).unwrap();
        assert_eq!(back, pb, "{format:?}");
        assert_eq!(read_manifest(dir.path()).unwrap().frame_format, format);
    }
}

#[test]
fn missing_frame_file_is_a_dimension_mismatch() {
    let (pb, _) = small_phantom(4);
    let dir = tempfile::tempdir().unwrap();
    let m = write_pullback(dir.path(), &pb, FrameFormat::Raw).unwrap();
    std::fs::remove_file(dir.path().join(m.frame_name(3).unwrap())).unwrap();
    match read_pullback(dir.path()) {
        Err(Error::DimensionMismatch { expected, found, .. }) => assert_eq!((expected.as_str(), found.as_str()), ("4", "3")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_raw_frame_and_missing_manifest_rejected() {
    let (pb, _) = small_phantom(3);
    let dir = tempfile::tempdir().unwrap();
    let m = write_pullback(dir.path(), &pb, FrameFormat::Raw).unwrap();
    let path = dir.path().join(m.frame_name(1).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(read_pullback(dir.path()), Err(Error::DimensionMismatch { .. })));
    std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(matches!(read_pullback(dir.path()), Err(Error::MissingManifest(_))));
}

#[test]
fn manifest_with_future_version_rejected() {
    let (pb, _) = small_phantom(3);
    let dir = tempfile::tempdir().unwrap();
    write_pullback(dir.path(), &pb, FrameFormat::Png).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replace("\"schema_version\": \"1\"", "\"schema_version\": \"9\"");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_pullback(dir.path()), Err(Error::UnsupportedVersion(v)) if v == "9"));
}

#[test]
fn phantom_directory_matches_truth_dimensions() {
    let (pb, gt) = small_phantom(5);
    let dir = tempfile::tempdir().unwrap();
    write_pullback(dir.path(), &pb, FrameFormat::Png).unwrap();
    let back = read_pullback(dir.path()).unwrap();
    assert_eq!(back.frames.len(), gt.frames.len());
    for (f, t) in back.frames.iter().zip(&gt.frames) {
        assert_eq!(f.n_alines(), t.lumen.len());
        assert_eq!(f.n_alines(), t.labels.len());
    }
}

#[test]
fn results_files_are_byte_identical_across_runs() {
    let (pb, _) = small_phantom(5);
    let cfg = AnalysisConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (run, threads) in [(0, 1), (1, 3)] {
        let an = analyze_pullback(&pb, &cfg, threads, |_| FrameInputs { source: LipidSource::Baseline, lumen: None }).unwrap();
        let doc = ResultsDoc::from_analysis(&pb.id, &pb.calib, &cfg, "baseline", &an.frames).unwrap();
        let path = dir.path().join(format!("results_{run}.json"));
        doc.write(&path).unwrap();
        assert_eq!(ResultsDoc::read(&path).unwrap(), doc);
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn reading_negative_thickness_is_a_schema_error() {
    let (pb, _) = small_phantom(4);
    let cfg = AnalysisConfig::default();
    let an = analyze_pullback(&pb, &cfg, 1, |_| FrameInputs { source: LipidSource::Baseline, lumen: None }).unwrap();
    let doc = ResultsDoc::from_analysis(&pb.id, &pb.calib, &cfg, "baseline", &an.frames).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.json");
    let mut v = serde_json::to_value(&doc).unwrap();
    let k = doc.frames.iter().position(|f| !f.measurements.thickness_um.is_empty()).unwrap();
    v["frames"][k]["measurements"]["thickness_um"][0] = serde_json::json!(-1.0);
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let err = ResultsDoc::read(&path).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
    assert!(err.to_string().contains("thickness_um[0]"), "{err}");
}

#[test]
fn unknown_fields_are_named() {
    let (_, gt) = small_phantom(3);
    let doc = AnnotationDoc::from_truth("p", 504, 300, &gt, "phantom").unwrap();
    let mut v = serde_json::to_value(&doc).unwrap();
    v["frames"][0]["lipid"] = serde_json::json!([]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let err = AnnotationDoc::read(&path).unwrap_err().to_string();
    assert!(err.contains("lipid"), "{err}");
}

#[test]
fn long_tcfa_map_shows_two_lesion_bands() {
    let mut spec = preset("tcfa_long").unwrap();
    spec.speckle = 0.0;
    let (pb, gt) = generate(&spec).unwrap();
    let cfg = AnalysisConfig::default();
    let an = analyze_pullback(&pb, &cfg, 0, |k| FrameInputs { source: LipidSource::Arcs(&gt.frames[k].arcs), lumen: None }).unwrap();
    let doc = ResultsDoc::from_analysis(&pb.id, &pb.calib, &cfg, "masks", &an.frames).unwrap();
    let map = doc.thickness_map();
    let has_lipid: Vec<bool> = (0..map.n_frames())
        .map(|f| map.values.row(f).iter().any(|&v| !ThicknessMap::is_sentinel(v)))
        .collect();
    let bands = fcap_core::lipid::circular_runs(&has_lipid);
    assert_eq!(bands, vec![(10, 75), (100, 25)]);

    let img = render_thickness_map(&map, (0.0, 300.0)).unwrap();
    assert_eq!(img.get_pixel(0, 0).0, SENTINEL_GRAY);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.png");
    write_png_rgb(&path, &img).unwrap();
    let back = image::open(&path).unwrap().to_rgb8();
    assert_eq!(back, img);
}
