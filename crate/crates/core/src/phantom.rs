//! Deterministic synthetic pullbacks with analytic ground truth.
//!
//! Each A-line is rendered as a dark lumen, a bright fibrous layer decaying
//! with depth and, inside lesions, a cap of programmed thickness followed by
//! a fast-attenuating lipid pool whose border is blurred. Guidewire A-lines
//! are zero beyond the lumen. Log-normal multiplicative speckle is applied
//! last, from a per-frame random stream so frames can render in parallel.

use std::f64::consts::{SQRT_2, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capseg::{cap_stats, CapBoundary, FrameMeasurements};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lipid::{lipid_angle, ALineLabels, LipidArc};
use crate::model::{CalibrationMeta, PolarFrame, Pullback};

/// Lumen radius field `base + eccentric·cos(θ − phase) + wobble·sin(2πz/period)`,
/// rounded to whole pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenField {
    pub base_px: f64,
    pub eccentric_px: f64,
    pub phase_deg: f64,
    pub wobble_px: f64,
    pub wobble_period_frames: f64,
}

impl LumenField {
    pub fn radius(&self, aline: usize, n_alines: usize, frame: usize) -> f64 {
        let theta = aline as f64 * TAU / n_alines as f64 - self.phase_deg.to_radians();
        let wobble = if self.wobble_period_frames > 0.0 {
            self.wobble_px * (TAU * frame as f64 / self.wobble_period_frames).sin()
        } else {
            0.0
        };
        (self.base_px + self.eccentric_px * theta.cos() + wobble).round()
    }
}

/// A lipid lesion. Cap thickness is thinnest at the lesion center and grows
/// quadratically towards its angular and longitudinal edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// Frames `[start, end)`.
    pub frames: [usize; 2],
    pub angle_start_deg: f64,
    pub angle_extent_deg: f64,
    pub cap_min_um: f64,
    pub cap_max_um: f64,
    pub lipid_mu_per_mm: f64,
    pub fibrous_mu_per_mm: f64,
}

impl LesionSpec {
    /// `(start A-line, length)`.
    pub fn aline_range(&self, n_alines: usize) -> (usize, usize) {
        let n = n_alines as f64;
        let start = (self.angle_start_deg * n / 360.0).round() as usize % n_alines;
        let len = (self.angle_extent_deg * n / 360.0).round() as usize;
        (start, len.clamp(1, n_alines))
    }

    pub fn covers_frame(&self, frame: usize) -> bool {
        (self.frames[0]..self.frames[1]).contains(&frame)
    }

    /// Cap thickness in whole pixels at arc position `j` of frame `frame`.
    pub fn cap_px(&self, j: usize, frame: usize, n_alines: usize, um_per_px: f64) -> usize {
        let (_, len) = self.aline_range(n_alines);
        let unit = |k: usize, count: usize| {
            if count <= 1 {
                0.0
            } else {
                2.0 * k as f64 / (count - 1) as f64 - 1.0
            }
        };
        let u = unit(j, len);
        let v = unit(frame.saturating_sub(self.frames[0]), self.frames[1] - self.frames[0]);
        let um = self.cap_min_um + (self.cap_max_um - self.cap_min_um) * (u * u + v * v) / 2.0;
        ((um / um_per_px).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidewireSpec {
    pub center: usize,
    pub width: usize,
}

impl GuidewireSpec {
    pub fn covers(&self, aline: usize, n_alines: usize) -> bool {
        let start = (self.center + n_alines - self.width / 2) % n_alines;
        (aline + n_alines - start) % n_alines < self.width
    }
}

/// Intensity model shared by all A-lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueModel {
    /// Intensity at the luminal surface.
    pub peak: f64,
    pub blood: f64,
    pub sheath: f64,
    /// Additive background floor for every non-shadow sample.
    pub floor: f64,
    pub fibrous_mu_per_mm: f64,
    /// Full width at half maximum of the cap→lipid transition.
    pub border_blur_px: f64,
    /// Lipid intensity just past the border, relative to the fibrous level.
    pub lipid_contrast: f64,
    /// Sub-pixel offset of the blur center towards the lumen. The default
    /// cancels the pull of the lipid decay on the edge response so that
    /// the response peaks on the cap sample.
    pub border_shift_px: f64,
}

impl Default for TissueModel {
    fn default() -> Self {
        Self {
            peak: 20000.0,
            blood: 300.0,
            sheath: 8000.0,
            floor: 60.0,
            fibrous_mu_per_mm: 1.5,
            border_blur_px: 3.0,
            lipid_contrast: 0.5,
            border_shift_px: 0.28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub name: String,
    pub n_frames: usize,
    pub n_alines: usize,
    pub n_samples: usize,
    pub radial_px_per_mm: f64,
    pub frame_pitch_mm: f64,
    pub lumen: LumenField,
    pub lesions: Vec<LesionSpec>,
    pub guidewire: Option<GuidewireSpec>,
    pub tissue: TissueModel,
    /// Log-normal speckle σ; 0 renders noise-free.
    pub speckle: f64,
    pub seed: u64,
}

/// Analytic truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub lumen: Vec<f64>,
    pub labels: ALineLabels,
    pub arcs: Vec<LipidArc>,
    /// Abluminal radius per arc A-line in lumen-aligned columns.
    pub boundaries: Vec<CapBoundary>,
    pub measurements: FrameMeasurements,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

impl PhantomSpec {
    pub fn calibration(&self) -> CalibrationMeta {
        CalibrationMeta {
            radial_px_per_mm: self.radial_px_per_mm,
            n_alines: self.n_alines,
            frame_pitch_mm: self.frame_pitch_mm,
            bit_depth: 16,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_frames == 0 || self.n_samples < 16 {
            return bad(format!("need frames and >= 16 samples, got {}x{}", self.n_frames, self.n_samples));
        }
        if let Err(e) = self.calibration().validate() {
            return bad(e.to_string());
        }
        if !(self.speckle >= 0.0 && self.speckle.is_finite()) {
            return bad(format!("speckle must be >= 0, got {}", self.speckle));
        }
        let max_lumen = self.lumen.base_px + self.lumen.eccentric_px.abs() + self.lumen.wobble_px.abs();
        if self.lumen.base_px - self.lumen.eccentric_px.abs() - self.lumen.wobble_px.abs() < 10.0
            || max_lumen >= self.n_samples as f64
        {
            return bad("lumen radius field leaves the frame or the catheter zone".into());
        }
        let um_per_px = 1000.0 / self.radial_px_per_mm;
        for (k, l) in self.lesions.iter().enumerate() {
            if l.frames[0] >= l.frames[1] || l.frames[1] > self.n_frames {
                return bad(format!("lesion {k}: frame range {:?} outside 0..{}", l.frames, self.n_frames));
            }
            if !(l.angle_extent_deg > 0.0 && l.angle_extent_deg <= 360.0) || !(0.0..360.0).contains(&l.angle_start_deg) {
                return bad(format!("lesion {k}: angle range invalid"));
            }
            if !(l.cap_min_um > 0.0 && l.cap_max_um >= l.cap_min_um) {
                return bad(format!("lesion {k}: cap thickness must be > 0 and min <= max"));
            }
            if max_lumen + l.cap_max_um / um_per_px + 20.0 > self.n_samples as f64 {
                return bad(format!("lesion {k}: cap does not fit in the frame"));
            }
            if !(l.lipid_mu_per_mm > 0.0 && l.fibrous_mu_per_mm > 0.0) {
                return bad(format!("lesion {k}: attenuation must be > 0"));
            }
        }
        for f in 0..self.n_frames {
            let mut covered = vec![false; self.n_alines];
            for l in self.lesions.iter().filter(|l| l.covers_frame(f)) {
                let (s, len) = l.aline_range(self.n_alines);
                for j in 0..len {
                    let i = (s + j) % self.n_alines;
                    if covered[i] {
                        return bad(format!("lesions overlap at frame {f}, A-line {i}"));
                    }
                    if self.guidewire.is_some_and(|g| g.covers(i, self.n_alines)) {
                        return bad(format!("lesion overlaps the guidewire at frame {f}, A-line {i}"));
                    }
                    covered[i] = true;
                }
            }
        }
        Ok(())
    }
}

/// Standard normal CDF via the complementary error function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Complementary error function (Numerical Recipes `erfcc`, |ε| < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

struct ALineModel {
    lumen: usize,
    shadow: bool,
    /// `(cap px, lipid µ, fibrous µ)` inside a lesion.
    lesion: Option<(usize, f64, f64)>,
}

fn render_aline(spec: &PhantomSpec, m: &ALineModel, out: &mut [f64]) {
    let t = &spec.tissue;
    let per_px = 1.0 / spec.radial_px_per_mm;
    let blur_sigma = t.border_blur_px / 2.354_820_045;
    for (r, v) in out.iter_mut().enumerate() {
        *v = if r < m.lumen {
            if (2..6).contains(&r) {
                t.sheath
            } else {
                t.blood
            }
        } else if m.shadow {
            0.0
        } else {
            let d = (r - m.lumen) as f64;
            match m.lesion {
                None => t.peak * (-t.fibrous_mu_per_mm * d * per_px).exp() + t.floor,
                Some((cap, mu_l, mu_f)) => {
                    let fibrous = t.peak * (-mu_f * d * per_px).exp();
                    let past = (d - cap as f64).max(0.0);
                    let w = normal_cdf((d - cap as f64 + t.border_shift_px) / blur_sigma);
                    let lipid = t.lipid_contrast * (-mu_l * past * per_px).exp();
                    fibrous * ((1.0 - w) + w * lipid) + t.floor
                }
            }
        };
    }
}

fn frame_models(spec: &PhantomSpec, frame: usize) -> Vec<ALineModel> {
    let n = spec.n_alines;
    let um_per_px = 1000.0 / spec.radial_px_per_mm;
    let mut models: Vec<ALineModel> = (0..n)
        .map(|i| ALineModel {
            lumen: spec.lumen.radius(i, n, frame) as usize,
            shadow: spec.guidewire.is_some_and(|g| g.covers(i, n)),
            lesion: None,
        })
        .collect();
    for l in spec.lesions.iter().filter(|l| l.covers_frame(frame)) {
        let (s, len) = l.aline_range(n);
        for j in 0..len {
            models[(s + j) % n].lesion = Some((
                l.cap_px(j, frame, n, um_per_px),
                l.lipid_mu_per_mm,
                l.fibrous_mu_per_mm,
            ));
        }
    }
    models
}

fn frame_truth(spec: &PhantomSpec, frame: usize, models: &[ALineModel], config: &AnalysisConfig) -> FrameTruth {
    let n = spec.n_alines;
    let calib = spec.calibration();
    let lumen = models.iter().map(|m| m.lumen as f64).collect();
    let mut labels = ALineLabels::negative(n);
    for (i, m) in models.iter().enumerate() {
        labels.guidewire[i] = m.shadow;
        labels.lipid[i] = m.lesion.is_some();
    }
    let mut arcs = Vec::new();
    let mut boundaries = Vec::new();
    let mut thickness = Vec::new();
    let mut lesions: Vec<&LesionSpec> = spec.lesions.iter().filter(|l| l.covers_frame(frame)).collect();
    lesions.sort_by_key(|l| l.aline_range(n).0);
    for l in lesions {
        let (s, len) = l.aline_range(n);
        let arc = LipidArc::new(s, len, n).expect("validated lesion");
        let r_abluminal: Vec<usize> = (0..len)
            .map(|j| l.cap_px(j, frame, n, calib.um_per_px()))
            .collect();
        thickness.extend(r_abluminal.iter().map(|&r| r as f64 * calib.um_per_px()));
        arcs.push(arc);
        boundaries.push(CapBoundary {
            arc,
            r_abluminal,
            anchors: Vec::new(),
        });
    }
    let angle = lipid_angle(&arcs, n).expect("disjoint lesions");
    let measurements = cap_stats(&thickness, angle, config).unwrap_or_else(|_| FrameMeasurements::without_cap(angle));
    FrameTruth {
        lumen,
        labels,
        arcs,
        boundaries,
        measurements,
    }
}

/// Renders the pullback and its ground truth. Truth measurements use
/// `config` for the TCFA rule.
pub fn generate_with(spec: &PhantomSpec, config: &AnalysisConfig) -> Result<(Pullback, GroundTruth)> {
    spec.validate()?;
    let rendered: Vec<(PolarFrame, FrameTruth)> = (0..spec.n_frames)
        .into_par_iter()
        .map(|f| {
            let models = frame_models(spec, f);
            let mut grid = Grid::filled(spec.n_alines, spec.n_samples, 0.0f64);
            for (i, m) in models.iter().enumerate() {
                render_aline(spec, m, grid.row_mut(i));
            }
            if spec.speckle > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(f as u64);
                for v in grid.as_mut_slice() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v *= (spec.speckle * n).exp();
                }
            }
            let intensities = grid.map(|&v| v.round().clamp(0.0, f64::from(u16::MAX)) as u16);
            let truth = frame_truth(spec, f, &models, config);
            (PolarFrame { frame_index: f, intensities }, truth)
        })
        .collect();
    let (frames, truths): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    let pullback = Pullback::new(spec.name.clone(), frames, spec.calibration())?;
    Ok((pullback, GroundTruth { frames: truths }))
}

pub fn generate(spec: &PhantomSpec) -> Result<(Pullback, GroundTruth)> {
    generate_with(spec, &AnalysisConfig::default())
}

fn base_spec(name: &str, n_frames: usize) -> PhantomSpec {
    PhantomSpec {
        name: name.to_owned(),
        n_frames,
        n_alines: 504,
        n_samples: 512,
        radial_px_per_mm: 200.0,
        frame_pitch_mm: 0.2,
        lumen: LumenField {
            base_px: 110.0,
            eccentric_px: 12.0,
            phase_deg: 40.0,
            wobble_px: 4.0,
            wobble_period_frames: 60.0,
        },
        lesions: Vec::new(),
        guidewire: Some(GuidewireSpec { center: 430, width: 30 }),
        tissue: TissueModel::default(),
        speckle: 0.1,
        seed: 7,
    }
}

fn lesion(frames: [usize; 2], angle: [f64; 2], cap_um: [f64; 2]) -> LesionSpec {
    LesionSpec {
        frames,
        angle_start_deg: angle[0],
        angle_extent_deg: angle[1],
        cap_min_um: cap_um[0],
        cap_max_um: cap_um[1],
        lipid_mu_per_mm: 10.0,
        fibrous_mu_per_mm: 1.5,
    }
}

/// Named presets: the four lesion types (short/long, with/without TCFA)
/// plus `no_lipid` and the flat-edge `noisefree_step`.
pub fn presets() -> Vec<PhantomSpec> {
    let mut tcfa_short = base_spec("tcfa_short", 30);
    tcfa_short.lesions = vec![lesion([4, 26], [30.0, 120.0], [50.0, 75.0])];

    let mut tcfa_long = base_spec("tcfa_long", 130);
    tcfa_long.lesions = vec![
        lesion([10, 85], [20.0, 150.0], [45.0, 75.0]),
        lesion([100, 125], [180.0, 90.0], [50.0, 70.0]),
    ];

    let mut stable_short = base_spec("stable_short", 30);
    stable_short.lesions = vec![lesion([10, 22], [60.0, 90.0], [160.0, 240.0])];

    let mut stable_long = base_spec("stable_long", 200);
    stable_long.lesions = vec![lesion([20, 180], [100.0, 110.0], [85.0, 180.0])];

    let no_lipid = base_spec("no_lipid", 20);

    let mut step = base_spec("noisefree_step", 5);
    step.lumen = LumenField {
        base_px: 80.0,
        eccentric_px: 0.0,
        phase_deg: 0.0,
        wobble_px: 0.0,
        wobble_period_frames: 0.0,
    };
    step.guidewire = None;
    step.speckle = 0.0;
    step.lesions = vec![lesion([0, 5], [0.0, 90.0], [150.0, 150.0])];

    vec![tcfa_short, tcfa_long, stable_short, stable_long, no_lipid, step]
}

pub fn preset(name: &str) -> Option<PhantomSpec> {
    presets().into_iter().find(|p| p.name == name)
}
