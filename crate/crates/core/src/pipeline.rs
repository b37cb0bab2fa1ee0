//! Per-frame and per-pullback analysis: preprocessing, lipid labelling and
//! cap measurement, with per-stage timing.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capseg::{cap_stats, cap_thickness, dp_abluminal, gradient_map, Anchor, CapBoundary, FrameMeasurements};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::lipid::{baseline_classify, detect_guidewire, extract_arcs, labels_from_mask, lipid_angle, LipidArc, PixelMask};
use crate::model::{CalibrationMeta, PolarFrame, Pullback};
use crate::preprocess::{preprocess_pipeline, LumenBoundary, PreprocessedFrame};

/// Where lipid labels come from for one frame.
#[derive(Debug, Clone, Copy)]
pub enum LipidSource<'a> {
    /// Built-in attenuation classifier.
    Baseline,
    /// Arcs used as given.
    Arcs(&'a [LipidArc]),
    /// Pixel mask in preprocessed geometry, reduced per A-line then grouped.
    Mask(&'a PixelMask),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Ok,
    LumenFailed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub preprocess: Duration,
    pub lipid: Duration,
    pub cap: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.preprocess + self.lipid + self.cap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnalysis {
    pub frame_index: usize,
    pub status: FrameStatus,
    pub lumen: Vec<f64>,
    pub guidewire: Vec<bool>,
    pub arcs: Vec<LipidArc>,
    pub boundaries: Vec<CapBoundary>,
    pub measurements: FrameMeasurements,
}

impl FrameAnalysis {
    fn lumen_failed(frame_index: usize, n_alines: usize) -> Self {
        Self {
            frame_index,
            status: FrameStatus::LumenFailed,
            lumen: Vec::new(),
            guidewire: vec![false; n_alines],
            arcs: Vec::new(),
            boundaries: Vec::new(),
            measurements: FrameMeasurements::without_cap(0.0),
        }
    }
}

/// Boundaries and measurements for given arcs on a preprocessed frame.
/// Each anchor is routed to the arc containing its A-line.
pub fn measure_arcs(
    pre: &PreprocessedFrame,
    arcs: &[LipidArc],
    anchors: &[Anchor],
    config: &AnalysisConfig,
) -> Result<(Vec<CapBoundary>, FrameMeasurements)> {
    let n = pre.n_alines();
    let angle = lipid_angle(arcs, n)?;
    if let Some(a) = anchors.iter().find(|a| !arcs.iter().any(|arc| arc.position(a.aline, n).is_some())) {
        return Err(Error::InvalidAnchor(format!("A-line {} is not inside a lipid arc", a.aline)));
    }
    if arcs.is_empty() {
        return Ok((Vec::new(), FrameMeasurements::without_cap(angle)));
    }
    let g = gradient_map(pre, config.dp.sigma_r);
    let calib = CalibrationMeta { n_alines: n, ..pre.calib };
    let mut boundaries = Vec::with_capacity(arcs.len());
    let mut thickness = Vec::new();
    for arc in arcs {
        let own: Vec<Anchor> = anchors
            .iter()
            .copied()
            .filter(|a| arc.position(a.aline, n).is_some())
            .collect();
        let b = dp_abluminal(&g, arc, &config.dp, &own)?;
        thickness.extend(cap_thickness(&b, &calib, &pre.residuals));
        boundaries.push(b);
    }
    let m = cap_stats(&thickness, angle, config)?;
    Ok((boundaries, m))
}

/// Full analysis of one frame. A lumen detection failure is reported as a
/// [`FrameStatus::LumenFailed`] frame rather than an error.
pub fn analyze_frame(
    frame: &PolarFrame,
    calib: &CalibrationMeta,
    config: &AnalysisConfig,
    source: LipidSource<'_>,
    external_lumen: Option<&LumenBoundary>,
) -> Result<(FrameAnalysis, StageTimings)> {
    let mut timings = StageTimings::default();
    let t0 = Instant::now();
    let pre = match preprocess_pipeline(frame, calib, config, external_lumen) {
        Ok(p) => p,
        Err(Error::NoLumenFound { .. }) => {
            timings.preprocess = t0.elapsed();
            return Ok((FrameAnalysis::lumen_failed(frame.frame_index, frame.n_alines()), timings));
        }
        Err(e) => return Err(e),
    };
    timings.preprocess = t0.elapsed();

    let t1 = Instant::now();
    let p = &config.lipid;
    let (arcs, guidewire) = match source {
        LipidSource::Baseline => {
            let labels = baseline_classify(&pre, p);
            (extract_arcs(&labels, p.bridge_max, p.min_width), labels.guidewire)
        }
        LipidSource::Arcs(arcs) => {
            for a in arcs {
                a.validate(pre.n_alines())?;
            }
            let gw = detect_guidewire(&pre, p.guidewire_tau_frac, p.guidewire_min_run, p.guidewire_depth_px);
            (arcs.to_vec(), gw)
        }
        LipidSource::Mask(mask) => {
            let gw = detect_guidewire(&pre, p.guidewire_tau_frac, p.guidewire_min_run, p.guidewire_depth_px);
            let labels = labels_from_mask(mask, pre.tissue.shape(), p.min_pixels)?;
            (extract_arcs(&labels, p.bridge_max, p.min_width), gw)
        }
    };
    timings.lipid = t1.elapsed();

    let t2 = Instant::now();
    let (boundaries, measurements) = measure_arcs(&pre, &arcs, &[], config)?;
    timings.cap = t2.elapsed();

    Ok((
        FrameAnalysis {
            frame_index: frame.frame_index,
            status: FrameStatus::Ok,
            lumen: pre.lumen.r_lumen,
            guidewire,
            arcs,
            boundaries,
            measurements,
        },
        timings,
    ))
}

#[derive(Debug, Clone)]
pub struct PullbackAnalysis {
    pub frames: Vec<FrameAnalysis>,
    pub timings: Vec<StageTimings>,
}

impl PullbackAnalysis {
    pub fn failed_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .filter(|f| f.status == FrameStatus::LumenFailed)
            .map(|f| f.frame_index)
            .collect()
    }
}

/// Per-frame inputs for [`analyze_pullback`].
pub struct FrameInputs<'a> {
    pub source: LipidSource<'a>,
    pub lumen: Option<&'a LumenBoundary>,
}

/// Analyzes every frame on `threads` worker threads (0 = all cores).
/// Output order follows frame order whatever the thread count.
pub fn analyze_pullback<'a, F>(pullback: &Pullback, config: &AnalysisConfig, threads: usize, inputs: F) -> Result<PullbackAnalysis>
where
    F: Fn(usize) -> FrameInputs<'a> + Sync,
{
    config.validate()?;
    let run = || -> Result<Vec<(FrameAnalysis, StageTimings)>> {
        pullback
            .frames
            .par_iter()
            .map(|frame| {
                let input = inputs(frame.frame_index);
                analyze_frame(frame, &pullback.calib, config, input.source, input.lumen)
            })
            .collect()
    };
    let results = if threads == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run)?
    };
    let (frames, timings) = results.into_iter().unzip();
    Ok(PullbackAnalysis { frames, timings })
}

/// Median of a duration sample (upper median for even counts).
pub fn median_duration(samples: impl IntoIterator<Item = Duration>) -> Duration {
    let mut v: Vec<Duration> = samples.into_iter().collect();
    if v.is_empty() {
        return Duration::ZERO;
    }
    v.sort_unstable();
    v[v.len() / 2]
}
