//! Versioned JSON documents and the builders shared by the command line and
//! the review service: analysis results, annotations, evaluation metrics
//! and inter-session agreement.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capseg::{cap_stats, thickness_map, CapBoundary, FrameMeasurements, ThicknessMap};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lipid::{circular_runs, lipid_angle, ALineLabels, LipidArc, PixelMask};
use crate::metrics::{aline_confusion, agreement, classification_scores, AgreementStats, ClassificationScores, ConfusionCounts};
use crate::model::CalibrationMeta;
use crate::phantom::GroundTruth;
use crate::pipeline::{FrameAnalysis, FrameStatus};
use crate::store::{canonicalize, read_json, round_sig, write_json, SCHEMA_VERSION};

pub const RESULTS_KIND: &str = "results";
pub const ANNOTATION_KIND: &str = "annotation";
pub const METRICS_KIND: &str = "metrics";
pub const AGREEMENT_KIND: &str = "agreement";

/// Analyst id recorded on unedited automated frames.
pub const AUTO_ANALYST: &str = "auto";

/// `[start, length]` of a circular run of A-lines.
pub type AlineRun = [usize; 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub analyst_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl Provenance {
    pub fn auto() -> Self {
        Self {
            analyst_id: AUTO_ANALYST.into(),
            revision: None,
            timestamp: None,
        }
    }
}

pub fn runs_from_flags(flags: &[bool]) -> Vec<AlineRun> {
    circular_runs(flags).into_iter().map(|(s, l)| [s, l]).collect()
}

pub fn flags_from_runs(runs: &[AlineRun], n_alines: usize, field: &str) -> Result<Vec<bool>> {
    let mut flags = vec![false; n_alines];
    for (k, &[start, len]) in runs.iter().enumerate() {
        if start >= n_alines || len == 0 || len > n_alines {
            return Err(Error::schema(format!("{field}[{k}]"), format!("run [{start}, {len}] outside {n_alines} A-lines")));
        }
        for j in 0..len {
            flags[(start + j) % n_alines] = true;
        }
    }
    Ok(flags)
}

fn check_arcs(arcs: &[LipidArc], n_alines: usize, field: &str) -> Result<f64> {
    for (k, a) in arcs.iter().enumerate() {
        a.validate(n_alines).map_err(|e| Error::schema(format!("{field}[{k}]"), e.to_string()))?;
    }
    lipid_angle(arcs, n_alines).map_err(|e| Error::schema(field, e.to_string()))
}

fn check_boundaries(boundaries: &[CapBoundary], n_alines: usize, field: &str) -> Result<()> {
    for (k, b) in boundaries.iter().enumerate() {
        let f = format!("{field}[{k}]");
        b.arc.validate(n_alines).map_err(|e| Error::schema(format!("{f}.arc"), e.to_string()))?;
        if b.r_abluminal.len() != b.arc.length {
            return Err(Error::schema(
                format!("{f}.r_abluminal"),
                format!("{} radii for an arc of {} A-lines", b.r_abluminal.len(), b.arc.length),
            ));
        }
        for (j, a) in b.anchors.iter().enumerate() {
            if b.arc.position(a.aline, n_alines).is_none() {
                return Err(Error::schema(format!("{f}.anchors[{j}]"), format!("A-line {} outside the arc", a.aline)));
            }
        }
    }
    Ok(())
}

fn check_increasing(indices: impl Iterator<Item = usize>, field: &str) -> Result<()> {
    let mut prev: Option<usize> = None;
    for (k, i) in indices.enumerate() {
        if prev.is_some_and(|p| i <= p) {
            return Err(Error::schema(format!("{field}[{k}].frame_index"), "frame indices must be strictly increasing"));
        }
        prev = Some(i);
    }
    Ok(())
}

fn check_header(schema_version: &str, kind: &str, expected: &str) -> Result<()> {
    if schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion(schema_version.into()));
    }
    if kind != expected {
        return Err(Error::schema("kind", format!("expected {expected:?}, found {kind:?}")));
    }
    Ok(())
}

/// Measurements from unrounded thickness samples, rounded the way the
/// document stores them so that min, mean and the TCFA flag can be
/// recomputed from the stored values.
pub fn stored_measurements(thickness_um: &[f64], lipid_angle_deg: f64, config: &AnalysisConfig) -> Result<FrameMeasurements> {
    let angle = round_sig(lipid_angle_deg);
    if thickness_um.is_empty() {
        return Ok(FrameMeasurements::without_cap(angle));
    }
    let th: Vec<f64> = thickness_um.iter().map(|&t| round_sig(t)).collect();
    let mut m = cap_stats(&th, angle, config)?;
    m.mean_thickness_um = m.mean_thickness_um.map(round_sig);
    Ok(m)
}

fn rounded_arc(a: &LipidArc) -> LipidArc {
    LipidArc {
        angle_deg: round_sig(a.angle_deg),
        ..*a
    }
}

/// One frame of a [`ResultsDoc`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameResult {
    pub frame_index: usize,
    pub status: FrameStatus,
    /// Lumen radius per A-line in samples; empty when detection failed.
    pub lumen_px: Vec<f64>,
    pub guidewire: Vec<AlineRun>,
    pub arcs: Vec<LipidArc>,
    pub boundaries: Vec<CapBoundary>,
    pub measurements: FrameMeasurements,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl FrameResult {
    pub fn from_analysis(fa: &FrameAnalysis, config: &AnalysisConfig) -> Result<Self> {
        Ok(Self {
            frame_index: fa.frame_index,
            status: fa.status,
            lumen_px: fa.lumen.iter().map(|&r| round_sig(r)).collect(),
            guidewire: runs_from_flags(&fa.guidewire),
            arcs: fa.arcs.iter().map(rounded_arc).collect(),
            boundaries: fa
                .boundaries
                .iter()
                .map(|b| CapBoundary { arc: rounded_arc(&b.arc), ..b.clone() })
                .collect(),
            measurements: stored_measurements(&fa.measurements.thickness_um, fa.measurements.lipid_angle_deg, config)?,
            accepted: None,
            provenance: None,
        })
    }

    pub fn labels(&self, n_alines: usize) -> Result<ALineLabels> {
        let gw = flags_from_runs(&self.guidewire, n_alines, "guidewire")?;
        Ok(ALineLabels::from_arcs(&self.arcs, n_alines).with_guidewire(gw))
    }

    /// `(A-line, µm)` for every measured A-line, in boundary order.
    pub fn thickness_samples(&self, n_alines: usize) -> Vec<(usize, f64)> {
        self.boundaries
            .iter()
            .flat_map(|b| b.arc.alines(n_alines))
            .zip(self.measurements.thickness_um.iter().copied())
            .collect()
    }

    fn validate(&self, n_alines: usize, config: &AnalysisConfig, field: &str) -> Result<()> {
        let m = &self.measurements;
        let mf = format!("{field}.measurements");
        if self.status == FrameStatus::LumenFailed {
            if !self.arcs.is_empty() || !self.boundaries.is_empty() || !m.thickness_um.is_empty() {
                return Err(Error::schema(field, "a lumen_failed frame carries no arcs or measurements"));
            }
            return Ok(());
        }
        if self.lumen_px.len() != n_alines {
            return Err(Error::schema(format!("{field}.lumen_px"), format!("{} radii for {n_alines} A-lines", self.lumen_px.len())));
        }
        if let Some(k) = self.lumen_px.iter().position(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::schema(format!("{field}.lumen_px[{k}]"), "must be a non-negative number"));
        }
        flags_from_runs(&self.guidewire, n_alines, &format!("{field}.guidewire"))?;
        let angle = check_arcs(&self.arcs, n_alines, &format!("{field}.arcs"))?;
        if round_sig(angle) != m.lipid_angle_deg {
            return Err(Error::schema(
                format!("{mf}.lipid_angle_deg"),
                format!("{} does not match the arcs ({})", m.lipid_angle_deg, round_sig(angle)),
            ));
        }
        check_boundaries(&self.boundaries, n_alines, &format!("{field}.boundaries"))?;
        let arcs_of_boundaries: Vec<(usize, usize)> = self.boundaries.iter().map(|b| (b.arc.start, b.arc.length)).collect();
        let arcs: Vec<(usize, usize)> = self.arcs.iter().map(|a| (a.start, a.length)).collect();
        if arcs_of_boundaries != arcs {
            return Err(Error::schema(format!("{field}.boundaries"), "one boundary per arc, in arc order"));
        }
        let expected: usize = self.arcs.iter().map(|a| a.length).sum();
        if m.thickness_um.len() != expected {
            return Err(Error::schema(
                format!("{mf}.thickness_um"),
                format!("{} values for {expected} lipid A-lines", m.thickness_um.len()),
            ));
        }
        if let Some(k) = m.thickness_um.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::schema(format!("{mf}.thickness_um[{k}]"), format!("{} is not a thickness", m.thickness_um[k])));
        }
        let fresh = stored_measurements(&m.thickness_um, m.lipid_angle_deg, config)?;
        if fresh.min_thickness_um != m.min_thickness_um {
            return Err(Error::schema(format!("{mf}.min_thickness_um"), "does not match thickness_um"));
        }
        let mean_ok = match (fresh.mean_thickness_um, m.mean_thickness_um) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-5 * a.abs().max(1.0),
            (a, b) => a == b,
        };
        if !mean_ok {
            return Err(Error::schema(format!("{mf}.mean_thickness_um"), "does not match thickness_um"));
        }
        if fresh.tcfa != m.tcfa {
            return Err(Error::schema(format!("{mf}.tcfa"), "inconsistent with the configured TCFA rule"));
        }
        Ok(())
    }
}

/// A run of consecutive analyzed frames carrying lipid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSummary {
    pub first_frame: usize,
    pub last_frame: usize,
    pub n_frames: usize,
    pub length_mm: f64,
    pub max_lipid_angle_deg: f64,
    pub min_thickness_um: Option<f64>,
    pub min_thickness_frame: Option<usize>,
    pub tcfa: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullbackSummary {
    pub lesions: Vec<LesionSummary>,
    pub global_min_thickness_um: Option<f64>,
    pub global_min_frame: Option<usize>,
    pub tcfa_frames: Vec<usize>,
    pub failed_frames: Vec<usize>,
}

/// Lesions are maximal runs of consecutive frame indices whose lipid angle
/// is positive; a failed frame ends a run.
pub fn summarize(frames: &[FrameResult], frame_pitch_mm: f64) -> PullbackSummary {
    fn min_of(frames: &[&FrameResult]) -> Option<(f64, usize)> {
        frames
            .iter()
            .filter_map(|f| f.measurements.min_thickness_um.map(|m| (m, f.frame_index)))
            .fold(None, |best, (m, k)| match best {
                Some((b, _)) if b <= m => best,
                _ => Some((m, k)),
            })
    }
    let mut lesions = Vec::new();
    let mut run: Vec<&FrameResult> = Vec::new();
    let mut flush = |run: &mut Vec<&FrameResult>| {
        if let (Some(first), Some(last)) = (run.first(), run.last()) {
            let min = min_of(run);
            lesions.push(LesionSummary {
                first_frame: first.frame_index,
                last_frame: last.frame_index,
                n_frames: run.len(),
                length_mm: round_sig(run.len() as f64 * frame_pitch_mm),
                max_lipid_angle_deg: run.iter().map(|f| f.measurements.lipid_angle_deg).fold(0.0, f64::max),
                min_thickness_um: min.map(|m| m.0),
                min_thickness_frame: min.map(|m| m.1),
                tcfa: run.iter().any(|f| f.measurements.tcfa),
            });
        }
        run.clear();
    };
    for f in frames {
        let lipid = f.status == FrameStatus::Ok && f.measurements.lipid_angle_deg > 0.0;
        let contiguous = run.last().is_none_or(|p| p.frame_index + 1 == f.frame_index);
        if !lipid || !contiguous {
            flush(&mut run);
        }
        if lipid {
            run.push(f);
        }
    }
    flush(&mut run);
    let all: Vec<&FrameResult> = frames.iter().collect();
    let global = min_of(&all);
    PullbackSummary {
        lesions,
        global_min_thickness_um: global.map(|g| g.0),
        global_min_frame: global.map(|g| g.1),
        tcfa_frames: frames.iter().filter(|f| f.measurements.tcfa).map(|f| f.frame_index).collect(),
        failed_frames: frames
            .iter()
            .filter(|f| f.status == FrameStatus::LumenFailed)
            .map(|f| f.frame_index)
            .collect(),
    }
}

/// Per-frame analysis of one pullback with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsDoc {
    pub schema_version: String,
    pub kind: String,
    pub pullback_id: String,
    pub n_alines: usize,
    pub radial_px_per_mm: f64,
    pub frame_pitch_mm: f64,
    /// `baseline` or `masks`.
    pub lipid_source: String,
    pub config: AnalysisConfig,
    pub frames: Vec<FrameResult>,
    pub summary: PullbackSummary,
}

impl ResultsDoc {
    /// Assembles and summarizes `frames`; the result equals what a
    /// canonical write followed by a read produces.
    pub fn new(
        pullback_id: &str,
        calib: &CalibrationMeta,
        config: &AnalysisConfig,
        lipid_source: &str,
        frames: Vec<FrameResult>,
    ) -> Result<Self> {
        let summary = summarize(&frames, calib.frame_pitch_mm);
        let doc = Self {
            schema_version: SCHEMA_VERSION.into(),
            kind: RESULTS_KIND.into(),
            pullback_id: pullback_id.into(),
            n_alines: calib.n_alines,
            radial_px_per_mm: calib.radial_px_per_mm,
            frame_pitch_mm: calib.frame_pitch_mm,
            lipid_source: lipid_source.into(),
            config: config.clone(),
            frames,
            summary,
        };
        let doc = canonicalize(&doc)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn from_analysis(
        pullback_id: &str,
        calib: &CalibrationMeta,
        config: &AnalysisConfig,
        lipid_source: &str,
        frames: &[FrameAnalysis],
    ) -> Result<Self> {
        let frames = frames
            .iter()
            .map(|f| FrameResult::from_analysis(f, config))
            .collect::<Result<_>>()?;
        Self::new(pullback_id, calib, config, lipid_source, frames)
    }

    pub fn calibration(&self) -> CalibrationMeta {
        CalibrationMeta {
            radial_px_per_mm: self.radial_px_per_mm,
            n_alines: self.n_alines,
            frame_pitch_mm: self.frame_pitch_mm,
            ..Default::default()
        }
    }

    pub fn frame(&self, frame_index: usize) -> Option<&FrameResult> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|k| &self.frames[k])
    }

    pub fn validate(&self) -> Result<()> {
        check_header(&self.schema_version, &self.kind, RESULTS_KIND)?;
        self.calibration().validate().map_err(|e| Error::schema("radial_px_per_mm", e.to_string()))?;
        self.config.validate().map_err(|e| Error::schema("config", e.to_string()))?;
        check_increasing(self.frames.iter().map(|f| f.frame_index), "frames")?;
        for (k, f) in self.frames.iter().enumerate() {
            f.validate(self.n_alines, &self.config, &format!("frames[{k}]"))?;
        }
        let fresh = canonicalize(&summarize(&self.frames, self.frame_pitch_mm))?;
        if fresh != self.summary {
            return Err(Error::schema("summary", "does not match the per-frame results"));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc: Self = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Frame × angle-bin map with `config.map.angle_bins` bins, one row per
    /// document frame.
    pub fn thickness_map(&self) -> ThicknessMap {
        let samples: Vec<Vec<(usize, f64)>> = self.frames.iter().map(|f| f.thickness_samples(self.n_alines)).collect();
        thickness_map(&samples, self.n_alines, self.config.map.angle_bins)
    }
}

/// Row-major runs `[start, length]` of set pixels in a `rows × cols` mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleMask {
    pub rows: usize,
    pub cols: usize,
    pub runs: Vec<[usize; 2]>,
}

impl RleMask {
    pub fn encode(mask: &PixelMask) -> Self {
        let mut runs: Vec<[usize; 2]> = Vec::new();
        for (i, &set) in mask.as_slice().iter().enumerate() {
            if !set {
                continue;
            }
            match runs.last_mut() {
                Some(r) if r[0] + r[1] == i => r[1] += 1,
                _ => runs.push([i, 1]),
            }
        }
        Self {
            rows: mask.rows(),
            cols: mask.cols(),
            runs,
        }
    }

    pub fn decode(&self) -> Result<PixelMask> {
        self.validate("mask")?;
        let mut mask = Grid::filled(self.rows, self.cols, false);
        for &[start, len] in &self.runs {
            mask.as_mut_slice()[start..start + len].fill(true);
        }
        Ok(mask)
    }

    fn validate(&self, field: &str) -> Result<()> {
        let total = self.rows * self.cols;
        let mut end = 0;
        for (k, &[start, len]) in self.runs.iter().enumerate() {
            if len == 0 || start < end || start + len > total {
                return Err(Error::schema(
                    format!("{field}.runs[{k}]"),
                    "runs must be non-empty, sorted, disjoint and inside the mask",
                ));
            }
            end = start + len;
        }
        Ok(())
    }
}

/// Analyst or phantom geometry for one frame. Lipid is given as arcs or as
/// a pixel mask in preprocessed (lumen-aligned) coordinates, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedFrame {
    pub frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lumen_px: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<Vec<LipidArc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidewire: Option<Vec<AlineRun>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abluminal: Option<Vec<CapBoundary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    pub provenance: Provenance,
}

impl AnnotatedFrame {
    /// Lipid labels from the arcs or the mask (an A-line is lipid when its
    /// mask row has at least `min_pixels` set); unlabelled frames are all
    /// negative.
    pub fn labels(&self, n_alines: usize, min_pixels: usize) -> Result<ALineLabels> {
        let labels = match (&self.arcs, &self.mask) {
            (Some(arcs), _) => ALineLabels::from_arcs(arcs, n_alines),
            (None, Some(mask)) => {
                let m = mask.decode()?;
                crate::lipid::labels_from_mask(&m, (n_alines, m.cols()), min_pixels)?
            }
            (None, None) => ALineLabels::negative(n_alines),
        };
        let gw = match &self.guidewire {
            Some(runs) => flags_from_runs(runs, n_alines, "guidewire")?,
            None => vec![false; n_alines],
        };
        Ok(labels.with_guidewire(gw))
    }

    fn validate(&self, n_alines: usize, depth: usize, field: &str) -> Result<()> {
        if self.arcs.is_some() && self.mask.is_some() {
            return Err(Error::schema(field, "at most one of arcs and mask"));
        }
        if let Some(lumen) = &self.lumen_px {
            if lumen.len() != n_alines {
                return Err(Error::schema(format!("{field}.lumen_px"), format!("{} radii for {n_alines} A-lines", lumen.len())));
            }
            if let Some(k) = lumen.iter().position(|r| !r.is_finite() || *r < 0.0) {
                return Err(Error::schema(format!("{field}.lumen_px[{k}]"), "must be a non-negative number"));
            }
        }
        if let Some(arcs) = &self.arcs {
            check_arcs(arcs, n_alines, &format!("{field}.arcs"))?;
        }
        if let Some(mask) = &self.mask {
            if (mask.rows, mask.cols) != (n_alines, depth) {
                return Err(Error::schema(
                    format!("{field}.mask"),
                    format!("shape {}×{} differs from {n_alines}×{depth}", mask.rows, mask.cols),
                ));
            }
            mask.validate(&format!("{field}.mask"))?;
        }
        if let Some(runs) = &self.guidewire {
            flags_from_runs(runs, n_alines, &format!("{field}.guidewire"))?;
        }
        if let Some(b) = &self.abluminal {
            let bf = format!("{field}.abluminal");
            check_boundaries(b, n_alines, &bf)?;
            if let Some((k, r)) = b.iter().enumerate().find_map(|(k, b)| b.r_abluminal.iter().find(|&&r| r >= depth).map(|&r| (k, r))) {
                return Err(Error::schema(format!("{bf}[{k}].r_abluminal"), format!("radius {r} beyond depth {depth}")));
            }
        }
        if self.provenance.analyst_id.is_empty() {
            return Err(Error::schema(format!("{field}.provenance.analyst_id"), "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub schema_version: String,
    pub kind: String,
    pub pullback_id: String,
    pub n_alines: usize,
    /// Columns of the preprocessed geometry that masks and boundaries refer to.
    pub depth: usize,
    pub frames: Vec<AnnotatedFrame>,
}

impl AnnotationDoc {
    pub fn new(pullback_id: &str, n_alines: usize, depth: usize, frames: Vec<AnnotatedFrame>) -> Result<Self> {
        let doc = canonicalize(&Self {
            schema_version: SCHEMA_VERSION.into(),
            kind: ANNOTATION_KIND.into(),
            pullback_id: pullback_id.into(),
            n_alines,
            depth,
            frames,
        })?;
        doc.validate()?;
        Ok(doc)
    }

    /// Phantom ground truth as an annotation attributed to `analyst_id`.
    pub fn from_truth(pullback_id: &str, n_alines: usize, depth: usize, truth: &GroundTruth, analyst_id: &str) -> Result<Self> {
        let frames = truth
            .frames
            .iter()
            .enumerate()
            .map(|(k, t)| AnnotatedFrame {
                frame_index: k,
                lumen_px: Some(t.lumen.clone()),
                arcs: Some(t.arcs.iter().map(rounded_arc).collect()),
                mask: None,
                guidewire: Some(runs_from_flags(&t.labels.guidewire)),
                abluminal: Some(
                    t.boundaries
                        .iter()
                        .map(|b| CapBoundary { arc: rounded_arc(&b.arc), ..b.clone() })
                        .collect(),
                ),
                accepted: None,
                provenance: Provenance {
                    analyst_id: analyst_id.into(),
                    revision: None,
                    timestamp: None,
                },
            })
            .collect();
        Self::new(pullback_id, n_alines, depth, frames)
    }

    /// The geometry of analyzed frames of a results document.
    pub fn from_results(results: &ResultsDoc) -> Result<Self> {
        let frames = results
            .frames
            .iter()
            .filter(|f| f.status == FrameStatus::Ok)
            .map(|f| AnnotatedFrame {
                frame_index: f.frame_index,
                lumen_px: Some(f.lumen_px.clone()),
                arcs: Some(f.arcs.clone()),
                mask: None,
                guidewire: Some(f.guidewire.clone()),
                abluminal: Some(f.boundaries.clone()),
                accepted: f.accepted,
                provenance: f.provenance.clone().unwrap_or_else(Provenance::auto),
            })
            .collect();
        Self::new(&results.pullback_id, results.n_alines, results.config.crop_depth_px, frames)
    }

    pub fn frame(&self, frame_index: usize) -> Option<&AnnotatedFrame> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|k| &self.frames[k])
    }

    pub fn validate(&self) -> Result<()> {
        check_header(&self.schema_version, &self.kind, ANNOTATION_KIND)?;
        if self.n_alines == 0 {
            return Err(Error::schema("n_alines", "must be positive"));
        }
        if self.depth == 0 {
            return Err(Error::schema("depth", "must be positive"));
        }
        check_increasing(self.frames.iter().map(|f| f.frame_index), "frames")?;
        for (k, f) in self.frames.iter().enumerate() {
            f.validate(self.n_alines, self.depth, &format!("frames[{k}]"))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc: Self = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// A document [`evaluate`] can score against an annotation.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    Results(&'a ResultsDoc),
    Annotation(&'a AnnotationDoc),
}

impl Prediction<'_> {
    fn pullback_id(&self) -> &str {
        match self {
            Prediction::Results(d) => &d.pullback_id,
            Prediction::Annotation(d) => &d.pullback_id,
        }
    }

    fn n_alines(&self) -> usize {
        match self {
            Prediction::Results(d) => d.n_alines,
            Prediction::Annotation(d) => d.n_alines,
        }
    }

    /// `(frame index, labels)`, `None` for frames without a usable result.
    fn frames(&self, min_pixels: usize) -> Result<Vec<(usize, Option<ALineLabels>)>> {
        let n = self.n_alines();
        match self {
            Prediction::Results(d) => d
                .frames
                .iter()
                .map(|f| {
                    let labels = (f.status == FrameStatus::Ok).then(|| f.labels(n)).transpose()?;
                    Ok((f.frame_index, labels))
                })
                .collect(),
            Prediction::Annotation(d) => d
                .frames
                .iter()
                .map(|f| Ok((f.frame_index, Some(f.labels(n, min_pixels)?))))
                .collect(),
        }
    }
}

/// Reads a results or annotation document, dispatching on `kind`.
pub fn read_prediction(path: &Path) -> Result<PredictionDoc> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let k: Kind = read_json(path)?;
    match k.kind.as_str() {
        RESULTS_KIND => Ok(PredictionDoc::Results(ResultsDoc::read(path)?)),
        ANNOTATION_KIND => Ok(PredictionDoc::Annotation(AnnotationDoc::read(path)?)),
        other => Err(Error::schema("kind", format!("expected results or annotation, found {other:?}"))),
    }
}

#[derive(Debug, Clone)]
pub enum PredictionDoc {
    Results(ResultsDoc),
    Annotation(AnnotationDoc),
}

impl PredictionDoc {
    pub fn as_prediction(&self) -> Prediction<'_> {
        match self {
            PredictionDoc::Results(d) => Prediction::Results(d),
            PredictionDoc::Annotation(d) => Prediction::Annotation(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnglePair {
    pub frame_index: usize,
    pub pred_deg: f64,
    pub truth_deg: f64,
}

/// A-line classification of a prediction against an annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub schema_version: String,
    pub kind: String,
    pub pullback_id: String,
    pub n_frames_scored: usize,
    /// Frames whose prediction failed lumen detection.
    pub excluded_frames: Vec<usize>,
    pub confusion: ConfusionCounts,
    pub scores: ClassificationScores,
    pub lipid_angle: Vec<AnglePair>,
}

fn frame_set_mismatch(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Error {
    let only_a = a.difference(b).next();
    let only_b = b.difference(a).next();
    let detail = match (only_a, only_b) {
        (Some(k), _) => format!("frame {k} only in the first document"),
        (_, Some(k)) => format!("frame {k} only in the second document"),
        _ => String::new(),
    };
    Error::mismatch("frame set", format!("{} frames", a.len()), format!("{} frames ({detail})", b.len()))
}

/// Scores `pred` against `truth` frame by frame. Both must cover the same
/// frames of a pullback with the same A-line count. Mask labels use
/// `min_pixels`.
pub fn evaluate(pred: Prediction<'_>, truth: &AnnotationDoc, min_pixels: usize) -> Result<MetricsDoc> {
    if pred.n_alines() != truth.n_alines {
        return Err(Error::mismatch("n_alines", truth.n_alines, pred.n_alines()));
    }
    if pred.pullback_id() != truth.pullback_id {
        return Err(Error::mismatch("pullback_id", &truth.pullback_id, pred.pullback_id()));
    }
    let pred_frames = pred.frames(min_pixels)?;
    let pset: BTreeSet<usize> = pred_frames.iter().map(|f| f.0).collect();
    let tset: BTreeSet<usize> = truth.frames.iter().map(|f| f.frame_index).collect();
    if pset != tset {
        return Err(frame_set_mismatch(&pset, &tset));
    }
    let n = truth.n_alines;
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    let mut angles = Vec::new();
    for ((k, p), t) in pred_frames.into_iter().zip(&truth.frames) {
        let Some(p) = p else {
            excluded.push(k);
            continue;
        };
        let t = t.labels(n, min_pixels)?;
        let deg = |l: &ALineLabels| l.lipid.iter().filter(|&&x| x).count() as f64 * 360.0 / n as f64;
        angles.push(AnglePair {
            frame_index: k,
            pred_deg: deg(&p),
            truth_deg: deg(&t),
        });
        pairs.push((p, t));
    }
    let confusion = aline_confusion(pairs.iter().map(|(p, t)| (p, t)))?;
    canonicalize(&MetricsDoc {
        schema_version: SCHEMA_VERSION.into(),
        kind: METRICS_KIND.into(),
        pullback_id: truth.pullback_id.clone(),
        n_frames_scored: pairs.len(),
        excluded_frames: excluded,
        confusion,
        scores: classification_scores(&confusion),
        lipid_angle: angles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRow {
    pub frame_index: usize,
    pub a: f64,
    pub b: f64,
}

/// Agreement for one measurement; `stats` is absent with fewer than two
/// pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementAgreement {
    pub stats: Option<AgreementStats>,
    pub pairs: Vec<PairRow>,
}

impl MeasurementAgreement {
    fn from_pairs(pairs: Vec<PairRow>) -> Result<Self> {
        let xy: Vec<(f64, f64)> = pairs.iter().map(|p| (p.a, p.b)).collect();
        let stats = match agreement(&xy) {
            Ok(s) => Some(s),
            Err(Error::TooFewPairs(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { stats, pairs })
    }
}

/// Bland–Altman and regression between two results documents of one
/// pullback. Differences are `a − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementDoc {
    pub schema_version: String,
    pub kind: String,
    pub pullback_id: String,
    pub direction: String,
    /// Pairs over frames where either side has lipid.
    pub lipid_angle_deg: MeasurementAgreement,
    /// Pairs over frames where both sides measured a cap.
    pub min_thickness_um: MeasurementAgreement,
}

pub fn compare(a: &ResultsDoc, b: &ResultsDoc) -> Result<AgreementDoc> {
    if a.pullback_id != b.pullback_id {
        return Err(Error::mismatch("pullback_id", &a.pullback_id, &b.pullback_id));
    }
    if a.n_alines != b.n_alines {
        return Err(Error::mismatch("n_alines", a.n_alines, b.n_alines));
    }
    let aset: BTreeSet<usize> = a.frames.iter().map(|f| f.frame_index).collect();
    let bset: BTreeSet<usize> = b.frames.iter().map(|f| f.frame_index).collect();
    if aset != bset {
        return Err(frame_set_mismatch(&aset, &bset));
    }
    let mut angle = Vec::new();
    let mut thickness = Vec::new();
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        if fa.status != FrameStatus::Ok || fb.status != FrameStatus::Ok {
            continue;
        }
        let (ma, mb) = (&fa.measurements, &fb.measurements);
        if ma.lipid_angle_deg > 0.0 || mb.lipid_angle_deg > 0.0 {
            angle.push(PairRow {
                frame_index: fa.frame_index,
                a: ma.lipid_angle_deg,
                b: mb.lipid_angle_deg,
            });
        }
        if let (Some(ta), Some(tb)) = (ma.min_thickness_um, mb.min_thickness_um) {
            thickness.push(PairRow {
                frame_index: fa.frame_index,
                a: ta,
                b: tb,
            });
        }
    }
    canonicalize(&AgreementDoc {
        schema_version: SCHEMA_VERSION.into(),
        kind: AGREEMENT_KIND.into(),
        pullback_id: a.pullback_id.clone(),
        direction: "a_minus_b".into(),
        lipid_angle_deg: MeasurementAgreement::from_pairs(angle)?,
        min_thickness_um: MeasurementAgreement::from_pairs(thickness)?,
    })
}
