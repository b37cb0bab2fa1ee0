//! Helpers shared by the command-line tests and the acceptance suite.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use fcap_core::capseg::CapBoundary;
use fcap_core::docs::{stored_measurements, ResultsDoc};
use fcap_core::lipid::LipidArc;
use fcap_core::pipeline::{FrameAnalysis, FrameStatus};
use fcap_core::{AnalysisConfig, CalibrationMeta};

pub fn fcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcap"))
        .args(args)
        .env_remove("FCAP_DATA_ROOT")
        .output()
        .expect("fcap runs")
}

pub fn fcap_ok(args: &[&str]) -> Output {
    let out = fcap(args);
    assert!(
        out.status.success(),
        "fcap {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// One frame per entry of `frames`: `(arc start, thickness per arc A-line)`.
/// Lumen and boundary geometry are placeholders; only the measurements
/// matter to the agreement statistics.
pub fn synthetic_results(id: &str, frames: &[(usize, Vec<f64>)]) -> ResultsDoc {
    let calib = CalibrationMeta::default();
    let cfg = AnalysisConfig::default();
    let n = calib.n_alines;
    let analyses: Vec<FrameAnalysis> = frames
        .iter()
        .enumerate()
        .map(|(k, (start, thickness))| {
            let arcs = if thickness.is_empty() { vec![] } else { vec![LipidArc::new(*start, thickness.len(), n).unwrap()] };
            let angle = 360.0 * thickness.len() as f64 / n as f64;
            let boundaries = arcs
                .iter()
                .map(|&arc| CapBoundary { arc, r_abluminal: vec![20; arc.length], anchors: vec![] })
                .collect();
            FrameAnalysis {
                frame_index: k,
                status: FrameStatus::Ok,
                lumen: vec![100.0; n],
                guidewire: vec![false; n],
                arcs,
                boundaries,
                measurements: stored_measurements(thickness, angle, &cfg).unwrap(),
            }
        })
        .collect();
    ResultsDoc::from_analysis(id, &calib, &cfg, "annotation", &analyses).unwrap()
}
