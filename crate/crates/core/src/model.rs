//! Acquisition geometry: calibration, polar frames, pullbacks and the
//! polar/Cartesian coordinate mapping.
//!
//! Angles are measured about the catheter (image) center. A-line 0 sits at
//! 12 o'clock and the index increases clockwise in the Cartesian view.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Acquisition calibration of a pullback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    /// Radial samples per millimetre (200 ⇒ 5 µm per pixel).
    pub radial_px_per_mm: f64,
    pub n_alines: usize,
    /// Distance between consecutive frames; 36 mm/s pullback at 180 fps.
    pub frame_pitch_mm: f64,
    pub bit_depth: u8,
    /// Informational only.
    pub axial_resolution_um: f64,
}

impl Default for CalibrationMeta {
    fn default() -> Self {
        Self {
            radial_px_per_mm: 200.0,
            n_alines: 504,
            frame_pitch_mm: 0.2,
            bit_depth: 16,
            axial_resolution_um: 20.0,
        }
    }
}

impl CalibrationMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.radial_px_per_mm > 0.0 && self.radial_px_per_mm.is_finite()) {
            return Err(Error::InvalidCalibration(format!(
                "radial_px_per_mm must be > 0, got {}",
                self.radial_px_per_mm
            )));
        }
        if self.n_alines < 8 {
            return Err(Error::InvalidCalibration(format!(
                "n_alines must be >= 8, got {}",
                self.n_alines
            )));
        }
        if !(self.frame_pitch_mm > 0.0 && self.frame_pitch_mm.is_finite()) {
            return Err(Error::InvalidCalibration(format!(
                "frame_pitch_mm must be > 0, got {}",
                self.frame_pitch_mm
            )));
        }
        if !matches!(self.bit_depth, 8 | 16) {
            return Err(Error::InvalidCalibration(format!(
                "bit_depth must be 8 or 16, got {}",
                self.bit_depth
            )));
        }
        Ok(())
    }

    pub fn um_per_px(&self) -> f64 {
        1000.0 / self.radial_px_per_mm
    }

    pub fn max_intensity(&self) -> u16 {
        if self.bit_depth == 8 {
            u8::MAX as u16
        } else {
            u16::MAX
        }
    }
}

/// One frame of raw polar data: row `i` is the A-line at angle index `i`,
/// column `r` the radial sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    pub frame_index: usize,
    pub intensities: Grid<u16>,
}

impl PolarFrame {
    pub fn n_alines(&self) -> usize {
        self.intensities.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.intensities.cols()
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.intensities.map(|&v| f64::from(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    pub id: String,
    pub frames: Vec<PolarFrame>,
    pub calib: CalibrationMeta,
}

impl Pullback {
    /// Checks calibration, shared frame dimensions, intensity range and
    /// frame numbering.
    pub fn new(id: impl Into<String>, frames: Vec<PolarFrame>, calib: CalibrationMeta) -> Result<Self> {
        calib.validate()?;
        let max = calib.max_intensity();
        for (k, frame) in frames.iter().enumerate() {
            if frame.frame_index != k {
                return Err(Error::mismatch("frame_index", k, frame.frame_index));
            }
            if frame.n_alines() != calib.n_alines {
                return Err(Error::mismatch(
                    format!("frame {k} A-line count"),
                    calib.n_alines,
                    frame.n_alines(),
                ));
            }
            if frame.n_samples() == 0 {
                return Err(Error::mismatch(format!("frame {k} sample count"), ">= 1", 0));
            }
            if frame.n_samples() != frames[0].n_samples() {
                return Err(Error::mismatch(
                    format!("frame {k} sample count"),
                    frames[0].n_samples(),
                    frame.n_samples(),
                ));
            }
            if let Some(v) = frame.intensities.as_slice().iter().find(|&&v| v > max) {
                return Err(Error::mismatch(
                    format!("frame {k} intensity"),
                    format!("<= {max}"),
                    v,
                ));
            }
        }
        Ok(Self {
            id: id.into(),
            frames,
            calib,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.frames.first().map_or(0, PolarFrame::n_samples)
    }
}

/// Angle of A-line `i` in degrees, `i * 360 / n_alines`.
pub fn aline_angle_deg(i: usize, n_alines: usize) -> Result<f64> {
    if i >= n_alines {
        return Err(Error::AlineOutOfRange { index: i, n_alines });
    }
    Ok(i as f64 * 360.0 / n_alines as f64)
}

/// Radial pixel distance to micrometres.
pub fn px_to_um(dr: f64, calib: &CalibrationMeta) -> f64 {
    dr * 1000.0 / calib.radial_px_per_mm
}

/// Square Cartesian view geometry for a polar grid.
///
/// Continuous image coordinates put the center of pixel `(x, y)` at
/// `(x + 0.5, y + 0.5)`. Radial sample `u` lies at distance
/// `u * (out_size / 2) / n_radial` from the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGeometry {
    pub n_alines: usize,
    pub n_radial: usize,
    pub out_size: usize,
}

impl ScanGeometry {
    fn center(&self) -> f64 {
        self.out_size as f64 / 2.0
    }

    fn px_per_sample(&self) -> f64 {
        self.center() / self.n_radial as f64
    }

    /// (A-line, radial sample) → continuous (x, y).
    pub fn polar_to_cartesian(&self, aline: f64, r: f64) -> (f64, f64) {
        let theta = aline * TAU / self.n_alines as f64;
        let rho = r * self.px_per_sample();
        let c = self.center();
        (c + rho * theta.sin(), c - rho * theta.cos())
    }

    /// Continuous (x, y) → (A-line in `[0, n_alines)`, radial sample).
    pub fn cartesian_to_polar(&self, x: f64, y: f64) -> (f64, f64) {
        let c = self.center();
        let dx = x - c;
        let dy = y - c;
        let rho = dx.hypot(dy);
        let mut theta = dx.atan2(-dy);
        if theta < 0.0 {
            theta += TAU;
        }
        let mut aline = theta * self.n_alines as f64 / TAU;
        if aline >= self.n_alines as f64 {
            aline -= self.n_alines as f64;
        }
        (aline, rho / self.px_per_sample())
    }
}

/// Scan-converts a polar grid into a square Cartesian image.
///
/// With `lumen_offsets`, `frame` is taken to be a pixel-shifted grid: row `i`
/// column `c` is acquisition sample `c + lumen_offsets[i]`, and the image is
/// rendered in acquisition coordinates. Samples are bilinear in (angle,
/// radius) with angular wrap; pixels beyond the last radial sample are 0.
pub fn scan_convert<T>(frame: &Grid<T>, out_size: usize, lumen_offsets: Option<&[usize]>) -> Result<Grid<f64>>
where
    T: Copy + Into<f64>,
{
    if out_size < 64 {
        return Err(Error::mismatch("scan_convert out_size", ">= 64", out_size));
    }
    let (n_alines, cols) = frame.shape();
    if n_alines == 0 || cols == 0 {
        return Err(Error::mismatch("scan_convert frame", "non-empty grid", "0 rows or columns"));
    }
    if let Some(offsets) = lumen_offsets {
        if offsets.len() != n_alines {
            return Err(Error::mismatch("lumen_offsets length", n_alines, offsets.len()));
        }
    }
    let max_shift = lumen_offsets.map_or(0, |o| o.iter().copied().max().unwrap_or(0));
    let geom = ScanGeometry {
        n_alines,
        n_radial: cols + max_shift,
        out_size,
    };
    let last = (geom.n_radial - 1) as f64;

    let sample = |row: usize, u: usize| -> f64 {
        let shift = lumen_offsets.map_or(0, |o| o[row]);
        match u.checked_sub(shift) {
            Some(c) if c < cols => frame[(row, c)].into(),
            _ => 0.0,
        }
    };
    let radial = |row: usize, u: f64| -> f64 {
        let u0 = u.floor() as usize;
        let t = u - u0 as f64;
        let a = sample(row, u0);
        if t == 0.0 {
            a
        } else {
            a + (sample(row, u0 + 1) - a) * t
        }
    };

    Ok(Grid::from_fn(out_size, out_size, |y, x| {
        let (a, u) = geom.cartesian_to_polar(x as f64 + 0.5, y as f64 + 0.5);
        if u > last {
            return 0.0;
        }
        let a0 = a.floor() as usize % n_alines;
        let a1 = (a0 + 1) % n_alines;
        let t = a - a.floor();
        let v0 = radial(a0, u);
        v0 + (radial(a1, u) - v0) * t
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aline_angles() {
        assert_eq!(aline_angle_deg(0, 504).unwrap(), 0.0);
        assert_eq!(aline_angle_deg(252, 504).unwrap(), 180.0);
        assert_eq!(aline_angle_deg(126, 504).unwrap(), 90.0);
        assert!(matches!(
            aline_angle_deg(504, 504),
            Err(Error::AlineOutOfRange { index: 504, n_alines: 504 })
        ));
    }

    #[test]
    fn aline_angles_are_monotone_with_uniform_gaps() {
        let n = 504;
        let step = 360.0 / n as f64;
        for i in 1..n {
            let gap = aline_angle_deg(i, n).unwrap() - aline_angle_deg(i - 1, n).unwrap();
            assert!(gap > 0.0);
            assert!((gap - step).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_conversion() {
        let calib = CalibrationMeta::default();
        assert_eq!(px_to_um(300.0, &calib), 1500.0);
        assert_eq!(px_to_um(0.0, &calib), 0.0);
        assert_eq!(px_to_um(13.0, &calib), 65.0);
        assert_eq!(px_to_um(7.0, &calib) + px_to_um(6.0, &calib), px_to_um(13.0, &calib));
    }

    #[test]
    fn calibration_invariants() {
        let mut c = CalibrationMeta::default();
        assert!(c.validate().is_ok());
        c.n_alines = 4;
        assert!(c.validate().is_err());
        c = CalibrationMeta { radial_px_per_mm: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = CalibrationMeta { frame_pitch_mm: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pullback_rejects_mixed_dimensions() {
        let calib = CalibrationMeta { n_alines: 8, ..Default::default() };
        let f0 = PolarFrame { frame_index: 0, intensities: Grid::filled(8, 10, 0) };
        let f1 = PolarFrame { frame_index: 1, intensities: Grid::filled(8, 11, 0) };
        assert!(Pullback::new("p", vec![f0.clone()], calib).is_ok());
        assert!(Pullback::new("p", vec![f0.clone(), f1], calib).is_err());
        let skipped = PolarFrame { frame_index: 2, intensities: Grid::filled(8, 10, 0) };
        assert!(Pullback::new("p", vec![f0, skipped], calib).is_err());
    }

    #[test]
    fn constant_frame_converts_to_disc() {
        let frame = Grid::filled(64, 100, 500u16);
        let img = scan_convert(&frame, 128, None).unwrap();
        assert_eq!(img[(0, 0)], 0.0);
        assert_eq!(img[(127, 127)], 0.0);
        assert_eq!(img[(0, 127)], 0.0);
        for (y, x) in [(64, 64), (30, 64), (64, 100), (90, 40)] {
            assert!((img[(y, x)] - 500.0).abs() < 1e-9, "({y},{x}) = {}", img[(y, x)]);
        }
    }

    #[test]
    fn aline_zero_points_up() {
        let mut frame = Grid::filled(64, 100, 0u16);
        frame.row_mut(0).fill(1000);
        let img = scan_convert(&frame, 128, None).unwrap();
        // directly above the center
        assert!(img[(20, 64)] > 400.0 || img[(20, 63)] > 400.0);
        // below, left and right stay dark
        assert_eq!(img[(108, 64)], 0.0);
        assert_eq!(img[(64, 20)], 0.0);
        assert_eq!(img[(64, 108)], 0.0);
    }

    #[test]
    fn quarter_turn_points_right() {
        let mut frame = Grid::filled(64, 100, 0u16);
        frame.row_mut(16).fill(1000);
        let img = scan_convert(&frame, 128, None).unwrap();
        assert!(img[(64, 108)] > 400.0 || img[(63, 108)] > 400.0);
        assert_eq!(img[(64, 20)], 0.0);
    }

    #[test]
    fn geometry_round_trip() {
        let g = ScanGeometry { n_alines: 504, n_radial: 512, out_size: 512 };
        for &(a, r) in &[(0.0, 10.0), (125.5, 300.0), (400.0, 511.0), (503.9, 50.0)] {
            let (x, y) = g.polar_to_cartesian(a, r);
            let (a2, r2) = g.cartesian_to_polar(x, y);
            assert!((a - a2).abs() < 1e-6 && (r - r2).abs() < 1e-6, "{a},{r} -> {a2},{r2}");
        }
    }

    #[test]
    fn offsets_unshift_before_conversion() {
        let n = 64;
        let acq = Grid::from_fn(n, 100, |_, c| if c >= 40 { 800u16 } else { 0 });
        let shifted = Grid::from_fn(n, 60, |r, c| acq[(r, c + 40)]);
        let shifts = vec![40usize; n];
        let a = scan_convert(&acq, 128, None).unwrap();
        let b = scan_convert(&shifted, 128, Some(&shifts)).unwrap();
        assert_eq!(a, b);
    }
}
