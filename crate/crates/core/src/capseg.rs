//! Abluminal cap boundary extraction and cap quantification.
//!
//! A derivative-of-Gaussian filter along each A-line gives a bright→dark
//! edge map. Inside every lipid arc the boundary is the path of maximum
//! cumulative edge strength with a hard limit on the radial step between
//! neighbouring A-lines, solved by dynamic programming. Analyst anchors are
//! hard waypoints of the same optimisation.

use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, DpParams};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lipid::LipidArc;
use crate::model::CalibrationMeta;
use crate::preprocess::PreprocessedFrame;

/// Marks map bins without lipid.
pub const MAP_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub g: Grid<f64>,
    /// 99th-percentile absolute response the raw map was divided by.
    pub scale: f64,
}

/// Analyst-fixed boundary point: absolute A-line index and shifted radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub aline: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapBoundary {
    pub arc: LipidArc,
    /// One radius per arc A-line, in shifted (lumen-aligned) columns.
    pub r_abluminal: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeasurements {
    pub lipid_angle_deg: f64,
    pub thickness_um: Vec<f64>,
    pub min_thickness_um: Option<f64>,
    pub mean_thickness_um: Option<f64>,
    pub tcfa: bool,
}

impl FrameMeasurements {
    pub fn without_cap(lipid_angle_deg: f64) -> Self {
        Self {
            lipid_angle_deg,
            thickness_um: Vec::new(),
            min_thickness_um: None,
            mean_thickness_um: None,
            tcfa: false,
        }
    }
}

/// Antisymmetric derivative-of-Gaussian taps `w[t]`, `t = 1..=half`, for the
/// response `Σ w[t] (I[r - t] - I[r + t])`; support is `6σ + 1` samples.
pub fn dog_weights(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil().max(1.0) as usize;
    let gauss = |t: f64| (-t * t / (2.0 * sigma * sigma)).exp();
    let norm: f64 = (-(half as isize)..=half as isize).map(|t| gauss(t as f64)).sum();
    (1..=half)
        .map(|t| t as f64 / (sigma * sigma) * gauss(t as f64) / norm)
        .collect()
}

/// Bright→dark edge response of one row, edge-replicated at both ends.
pub fn edge_response_row(row: &[f64], weights: &[f64], out: &mut [f64]) {
    let n = row.len();
    let at = |i: isize| row[i.clamp(0, n as isize - 1) as usize];
    for (r, o) in out.iter_mut().enumerate() {
        let r = r as isize;
        *o = weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let t = k as isize + 1;
                w * (at(r - t) - at(r + t))
            })
            .sum();
    }
}

/// Nearest-rank percentile of `|values|`.
fn abs_percentile(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let rank = ((pct / 100.0) * abs.len() as f64).ceil().max(1.0) as usize - 1;
    let (_, v, _) = abs.select_nth_unstable_by(rank.min(values.len() - 1), f64::total_cmp);
    *v
}

/// Edge map of a preprocessed frame, scaled by its 99th-percentile
/// absolute response.
pub fn gradient_map(pre: &PreprocessedFrame, sigma_r: f64) -> GradientMap {
    let weights = dog_weights(sigma_r);
    let (rows, cols) = pre.tissue.shape();
    let mut g = Grid::filled(rows, cols, 0.0);
    if cols > 0 {
        for i in 0..rows {
            edge_response_row(pre.tissue.row(i), &weights, g.row_mut(i));
        }
    }
    let scale = abs_percentile(g.as_slice(), 99.0);
    if scale > 0.0 {
        g.as_mut_slice().iter_mut().for_each(|v| *v /= scale);
    }
    GradientMap { g, scale }
}

/// Validated anchors as `(arc position, r)` sorted by position.
fn anchor_positions(
    anchors: &[Anchor],
    arc: &LipidArc,
    n_alines: usize,
    band: (usize, usize),
    smooth_max: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut pos = Vec::with_capacity(anchors.len());
    for a in anchors {
        let j = arc.position(a.aline, n_alines).ok_or_else(|| {
            Error::InvalidAnchor(format!(
                "A-line {} outside arc [start {}, length {}]",
                a.aline, arc.start, arc.length
            ))
        })?;
        if a.r < band.0 || a.r > band.1 {
            return Err(Error::InvalidAnchor(format!(
                "radius {} at A-line {} outside search band [{}, {}]",
                a.r, a.aline, band.0, band.1
            )));
        }
        pos.push((j, a.r));
    }
    pos.sort_unstable();
    pos.dedup();
    for w in pos.windows(2) {
        let ((j0, r0), (j1, r1)) = (w[0], w[1]);
        if r0.abs_diff(r1) > smooth_max * (j1 - j0) {
            let aline = |j: usize| (arc.start + j) % n_alines;
            return Err(Error::InfeasibleAnchors {
                from_aline: aline(j0),
                from_r: r0,
                to_aline: aline(j1),
                to_r: r1,
                smooth_max,
            });
        }
    }
    Ok(pos)
}

/// Maximum-cumulative-edge path over the arc.
///
/// Radii are confined to `[min_offset, min(max_offset, depth - 1)]` and
/// consecutive A-lines differ by at most `smooth_max`. Anchored A-lines are
/// pinned to their radius. Ties go to the smaller radius at every backtrack
/// step, so the result is the optimum that is smallest when compared from
/// the last A-line backwards.
pub fn dp_abluminal(g: &GradientMap, arc: &LipidArc, params: &DpParams, anchors: &[Anchor]) -> Result<CapBoundary> {
    let (n_alines, depth) = g.g.shape();
    arc.validate(n_alines)?;
    let hi = params.max_offset.min(depth.saturating_sub(1));
    let lo = params.min_offset;
    if depth == 0 || lo > hi {
        return Err(Error::InvalidAnchor(format!(
            "empty search band [{lo}, {hi}] for depth {depth}"
        )));
    }
    let s = params.smooth_max;
    let pinned = anchor_positions(anchors, arc, n_alines, (lo, hi), s)?;
    let mut forced: Vec<Option<usize>> = vec![None; arc.length];
    for &(j, r) in &pinned {
        forced[j] = Some(r);
    }

    let width = hi - lo + 1;
    let mut prev = vec![f64::NEG_INFINITY; width];
    let mut cur = vec![f64::NEG_INFINITY; width];
    let mut back = vec![0u32; arc.length * width];

    for (j, aline) in arc.alines(n_alines).enumerate() {
        let row = &g.g.row(aline)[lo..=hi];
        for k in 0..width {
            let allowed = forced[j].is_none_or(|r| r == lo + k);
            if !allowed {
                cur[k] = f64::NEG_INFINITY;
                continue;
            }
            if j == 0 {
                cur[k] = row[k];
                continue;
            }
            let (from, to) = (k.saturating_sub(s), (k + s).min(width - 1));
            let mut best = from;
            for p in from + 1..=to {
                if prev[p] > prev[best] {
                    best = p;
                }
            }
            back[j * width + k] = best as u32;
            cur[k] = prev[best] + row[k];
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut k = 0;
    for p in 1..width {
        if prev[p] > prev[k] {
            k = p;
        }
    }
    if prev[k] == f64::NEG_INFINITY {
        // unreachable once anchors pass validation
        return Err(Error::InvalidAnchor("no admissible path".into()));
    }
    let mut path = vec![0usize; arc.length];
    for j in (0..arc.length).rev() {
        path[j] = lo + k;
        if j > 0 {
            k = back[j * width + k] as usize;
        }
    }
    let mut kept: Vec<Anchor> = pinned
        .iter()
        .map(|&(j, r)| Anchor {
            aline: (arc.start + j) % n_alines,
            r,
        })
        .collect();
    kept.sort_unstable();
    Ok(CapBoundary {
        arc: *arc,
        r_abluminal: path,
        anchors: kept,
    })
}

/// Sum of the edge map along a boundary, accumulated in arc order.
pub fn path_score(g: &GradientMap, arc: &LipidArc, path: &[usize]) -> f64 {
    let n = g.g.rows();
    arc.alines(n)
        .zip(path)
        .fold(None, |acc: Option<f64>, (i, &r)| {
            let v = g.g[(i, r)];
            Some(acc.map_or(v, |a| a + v))
        })
        .unwrap_or(0.0)
}

/// Cap thickness along each A-line ray: `(r + residual) × µm/px`, where
/// `residuals` is indexed by absolute A-line.
pub fn cap_thickness(b: &CapBoundary, calib: &CalibrationMeta, residuals: &[f64]) -> Vec<f64> {
    let n = calib.n_alines;
    b.arc
        .alines(n)
        .zip(&b.r_abluminal)
        .map(|(i, &r)| {
            let res = residuals.get(i).copied().unwrap_or(0.0);
            ((r as f64 + res) * calib.um_per_px()).max(0.0)
        })
        .collect()
}

/// Minimum, mean and TCFA flag: min below the shrinkage-adjusted cutoff and
/// lipid angle at least `tcfa_min_angle_deg`.
pub fn cap_stats(thicknesses: &[f64], lipid_angle_deg: f64, config: &AnalysisConfig) -> Result<FrameMeasurements> {
    if thicknesses.is_empty() {
        return Err(Error::EmptyArc);
    }
    let min = thicknesses.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = thicknesses.iter().sum::<f64>() / thicknesses.len() as f64;
    let tcfa = min < config.tcfa_threshold_um() && lipid_angle_deg >= config.tcfa_min_angle_deg;
    Ok(FrameMeasurements {
        lipid_angle_deg,
        thickness_um: thicknesses.to_vec(),
        min_thickness_um: Some(min),
        mean_thickness_um: Some(mean.max(min)),
        tcfa,
    })
}

/// Frame × angle-bin cap thickness map in µm; [`MAP_SENTINEL`] where no
/// lipid was measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessMap {
    pub values: Grid<f64>,
    pub angle_bins: usize,
}

impl ThicknessMap {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn is_sentinel(v: f64) -> bool {
        v == MAP_SENTINEL
    }
}

/// Averages per-A-line thickness `(aline, µm)` samples of each frame into
/// `angle_bins` equal angular bins.
pub fn thickness_map(frames: &[Vec<(usize, f64)>], n_alines: usize, angle_bins: usize) -> ThicknessMap {
    let mut values = Grid::filled(frames.len(), angle_bins, MAP_SENTINEL);
    let mut sums = vec![0.0; angle_bins];
    let mut counts = vec![0usize; angle_bins];
    for (f, samples) in frames.iter().enumerate() {
        sums.fill(0.0);
        counts.fill(0);
        for &(aline, t) in samples {
            let bin = aline * angle_bins / n_alines;
            if bin < angle_bins {
                sums[bin] += t;
                counts[bin] += 1;
            }
        }
        for (b, v) in values.row_mut(f).iter_mut().enumerate() {
            if counts[b] > 0 {
                *v = sums[b] / counts[b] as f64;
            }
        }
    }
    ThicknessMap { values, angle_bins }
}
