//! Lumen detection, A-line pixel shifting, depth crop and Gaussian despeckle.

use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, LumenParams};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{CalibrationMeta, PolarFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LumenSource {
    Detected,
    External,
}

/// Radial index of the luminal surface on every A-line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenBoundary {
    pub r_lumen: Vec<f64>,
    pub source: LumenSource,
}

impl LumenBoundary {
    pub fn external(r_lumen: Vec<f64>) -> Self {
        Self {
            r_lumen,
            source: LumenSource::External,
        }
    }

    pub fn validate(&self, n_alines: usize, n_samples: usize) -> Result<()> {
        if self.r_lumen.len() != n_alines {
            return Err(Error::mismatch("lumen boundary length", n_alines, self.r_lumen.len()));
        }
        for (i, &r) in self.r_lumen.iter().enumerate() {
            if !(r >= 0.0 && r < n_samples as f64) {
                return Err(Error::mismatch(
                    format!("lumen radius at A-line {i}"),
                    format!("[0, {n_samples})"),
                    r,
                ));
            }
        }
        Ok(())
    }

    /// Integer shift applied to each A-line.
    pub fn shifts(&self) -> Vec<usize> {
        self.r_lumen.iter().map(|r| r.round() as usize).collect()
    }
}

/// Pixel-shifted, cropped and despeckled tissue grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFrame {
    /// `[n_alines × crop_depth_px]`; column 0 is the luminal surface.
    pub tissue: Grid<f64>,
    pub shifts: Vec<usize>,
    /// `shift - r_lumen` per A-line: distance from the true lumen to column 0,
    /// added to shifted radii to get thickness.
    pub residuals: Vec<f64>,
    pub lumen: LumenBoundary,
    pub calib: CalibrationMeta,
}

impl PreprocessedFrame {
    pub fn n_alines(&self) -> usize {
        self.tissue.rows()
    }

    pub fn depth(&self) -> usize {
        self.tissue.cols()
    }
}

/// Otsu threshold over the full-resolution intensity histogram. Pixels
/// `<= t` form the dark class. `None` when the frame has a single level.
pub fn otsu_threshold(values: &[u16]) -> Option<u16> {
    let mut hist = vec![0u64; usize::from(u16::MAX) + 1];
    let mut sum = 0u128;
    for &v in values {
        hist[usize::from(v)] += 1;
        sum += u128::from(v);
    }
    let total = values.len() as u64;
    let (mut w0, mut sum0) = (0u64, 0u128);
    let mut best: Option<(f64, u16)> = None;
    for (level, &count) in hist.iter().enumerate() {
        if count == 0 {
            continue;
        }
        w0 += count;
        sum0 += level as u128 * u128::from(count);
        if w0 == total {
            break;
        }
        let w1 = total - w0;
        let mu0 = sum0 as f64 / w0 as f64;
        let mu1 = (sum - sum0) as f64 / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, level as u16));
        }
    }
    best.map(|(_, t)| t)
}

/// Classical lumen detector.
///
/// On each A-line the first radial index past the dead zone where the
/// trailing running mean exceeds the frame's Otsu threshold; the reported
/// index is the first sample above the threshold inside that window.
/// A-lines without a crossing are interpolated from their circular
/// neighbours, then the contour is circularly median filtered.
pub fn detect_lumen(frame: &PolarFrame, params: &LumenParams) -> Result<LumenBoundary> {
    let grid = &frame.intensities;
    let (n_alines, n_samples) = grid.shape();
    let none_found = Error::NoLumenFound { found: 0, n_alines };
    if n_alines == 0 || n_samples == 0 {
        return Err(none_found);
    }
    let Some(t) = otsu_threshold(grid.as_slice()) else {
        return Err(none_found);
    };
    let t = u64::from(t);
    let w = params.mean_window.max(1);

    let crossings: Vec<Option<usize>> = grid
        .row_iter()
        .map(|row| {
            let mut window_sum = 0u64;
            for r in params.dead_zone_px..n_samples {
                window_sum += u64::from(row[r]);
                let lo = (r + 1).saturating_sub(w).max(params.dead_zone_px);
                if r >= params.dead_zone_px + w {
                    window_sum -= u64::from(row[r - w]);
                }
                let len = (r + 1 - lo) as u64;
                // mean > t without division
                if window_sum > t * len {
                    return (lo..=r).find(|&k| u64::from(row[k]) > t);
                }
            }
            None
        })
        .collect();

    let found = crossings.iter().filter(|c| c.is_some()).count();
    if (found as f64) < params.min_coverage * n_alines as f64 || found == 0 {
        return Err(Error::NoLumenFound { found, n_alines });
    }

    let filled = fill_circular_gaps(&crossings);
    let r_lumen = circular_median(&filled, params.median_window);
    Ok(LumenBoundary {
        r_lumen,
        source: LumenSource::Detected,
    })
}

/// Linear interpolation across runs of `None` on a circle. Needs at least
/// one `Some`.
fn fill_circular_gaps(values: &[Option<usize>]) -> Vec<f64> {
    let n = values.len();
    let known: Vec<usize> = (0..n).filter(|&i| values[i].is_some()).collect();
    let mut out: Vec<f64> = values.iter().map(|v| v.map_or(f64::NAN, |x| x as f64)).collect();
    for (k, &a) in known.iter().enumerate() {
        let b = known[(k + 1) % known.len()];
        let gap = (b + n - a) % n;
        let gap = if gap == 0 { n } else { gap };
        let (va, vb) = (out[a], out[b]);
        for step in 1..gap {
            let t = step as f64 / gap as f64;
            out[(a + step) % n] = va + (vb - va) * t;
        }
    }
    out
}

fn circular_median(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            buf.clear();
            buf.extend((-half..=half).map(|d| values[(i as isize + d).rem_euclid(n as isize) as usize]));
            buf.sort_by(f64::total_cmp);
            buf[buf.len() / 2]
        })
        .collect()
}

/// Shifts every A-line left by `round(r_lumen)`; the vacated tail is zero.
pub fn pixel_shift(frame: &Grid<f64>, lumen: &LumenBoundary) -> Result<(Grid<f64>, Vec<usize>)> {
    let (rows, cols) = frame.shape();
    lumen.validate(rows, cols)?;
    let shifts = lumen.shifts();
    let mut out = Grid::filled(rows, cols, 0.0);
    for (i, &s) in shifts.iter().enumerate() {
        let s = s.min(cols);
        out.row_mut(i)[..cols - s].copy_from_slice(&frame.row(i)[s..]);
    }
    Ok((out, shifts))
}

/// Inverse of [`pixel_shift`] onto a grid of width `n_samples`. Samples that
/// were never in the shifted grid come back as zero.
pub fn unshift(shifted: &Grid<f64>, shifts: &[usize], n_samples: usize) -> Result<Grid<f64>> {
    if shifts.len() != shifted.rows() {
        return Err(Error::mismatch("shift count", shifted.rows(), shifts.len()));
    }
    let mut out = Grid::filled(shifted.rows(), n_samples, 0.0);
    for (i, &s) in shifts.iter().enumerate() {
        if s >= n_samples {
            continue;
        }
        let len = shifted.cols().min(n_samples - s);
        out.row_mut(i)[s..s + len].copy_from_slice(&shifted.row(i)[..len]);
    }
    Ok(out)
}

/// Keeps columns `[0, depth)`, zero-padding narrower grids.
pub fn crop_depth(grid: &Grid<f64>, depth: usize) -> Grid<f64> {
    let keep = grid.cols().min(depth);
    let mut out = Grid::filled(grid.rows(), depth, 0.0);
    for i in 0..grid.rows() {
        out.row_mut(i)[..keep].copy_from_slice(&grid.row(i)[..keep]);
    }
    out
}

/// Sampled Gaussian of odd length `size`, normalised to sum 1.
pub fn gaussian_kernel_1d(sigma: f64, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Full 2-D kernel `[angular × radial]`; the outer product of the two 1-D
/// kernels.
pub fn gaussian_kernel_2d(sigma: f64, footprint: [usize; 2]) -> Grid<f64> {
    let ka = gaussian_kernel_1d(sigma, footprint[0]);
    let kr = gaussian_kernel_1d(sigma, footprint[1]);
    Grid::from_fn(footprint[0], footprint[1], |i, j| ka[i] * kr[j])
}

/// Separable Gaussian filter. Rows (angle) wrap circularly, columns
/// (radius) replicate the edge sample.
pub fn denoise_gaussian(grid: &Grid<f64>, sigma: f64, footprint: [usize; 2]) -> Result<Grid<f64>> {
    if footprint.iter().any(|&f| f == 0 || f % 2 == 0) {
        return Err(Error::mismatch("gaussian footprint", "odd extents", format!("{footprint:?}")));
    }
    let (rows, cols) = grid.shape();
    if rows == 0 || cols == 0 {
        return Ok(grid.clone());
    }
    let ka = gaussian_kernel_1d(sigma, footprint[0]);
    let kr = gaussian_kernel_1d(sigma, footprint[1]);
    let ha = (footprint[0] / 2) as isize;
    let hr = (footprint[1] / 2) as isize;

    let mut radial = Grid::filled(rows, cols, 0.0);
    let mut padded = vec![0.0; cols + 2 * hr as usize];
    for i in 0..rows {
        let src = grid.row(i);
        for (p, slot) in padded.iter_mut().enumerate() {
            let c = (p as isize - hr).clamp(0, cols as isize - 1) as usize;
            *slot = src[c];
        }
        let dst = radial.row_mut(i);
        for (c, out) in dst.iter_mut().enumerate() {
            *out = kr.iter().zip(&padded[c..]).map(|(k, v)| k * v).sum();
        }
    }

    let mut out = Grid::filled(rows, cols, 0.0);
    for i in 0..rows {
        let dst = out.row_mut(i);
        for (t, &k) in ka.iter().enumerate() {
            let src_row = (i as isize + t as isize - ha).rem_euclid(rows as isize) as usize;
            for (o, v) in dst.iter_mut().zip(radial.row(src_row)) {
                *o += k * v;
            }
        }
    }
    Ok(out)
}

/// Lumen detection (unless supplied), shift, crop, denoise.
pub fn preprocess_pipeline(
    frame: &PolarFrame,
    calib: &CalibrationMeta,
    config: &AnalysisConfig,
    external_lumen: Option<&LumenBoundary>,
) -> Result<PreprocessedFrame> {
    let lumen = match external_lumen {
        Some(l) => {
            l.validate(frame.n_alines(), frame.n_samples())?;
            l.clone()
        }
        None => detect_lumen(frame, &config.lumen)?,
    };
    let (shifted, shifts) = pixel_shift(&frame.to_f64(), &lumen)?;
    let cropped = crop_depth(&shifted, config.crop_depth_px);
    let tissue = denoise_gaussian(&cropped, config.gaussian_sigma_px, config.gaussian_footprint)?;
    let residuals = shifts
        .iter()
        .zip(&lumen.r_lumen)
        .map(|(&s, &r)| s as f64 - r)
        .collect();
    Ok(PreprocessedFrame {
        tissue,
        shifts,
        residuals,
        lumen,
        calib: *calib,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from(grid: Grid<u16>) -> PolarFrame {
        PolarFrame {
            frame_index: 0,
            intensities: grid,
        }
    }

    #[test]
    fn step_aline_lumen_at_forty() {
        let g = Grid::from_fn(64, 200, |_, c| if c < 40 { 0 } else { 3000 });
        let l = detect_lumen(&frame_from(g), &LumenParams::default()).unwrap();
        assert!(l.r_lumen.iter().all(|&r| r == 40.0), "{:?}", &l.r_lumen[..4]);
        assert_eq!(l.source, LumenSource::Detected);
    }

    #[test]
    fn all_zero_frame_has_no_lumen() {
        let g = Grid::filled(64, 200, 0u16);
        assert!(matches!(
            detect_lumen(&frame_from(g), &LumenParams::default()),
            Err(Error::NoLumenFound { .. })
        ));
    }

    #[test]
    fn sparse_crossings_fail_coverage() {
        // only 8 of 64 A-lines have tissue
        let g = Grid::from_fn(64, 200, |r, c| if r < 8 && c >= 50 { 3000 } else { 0 });
        assert!(matches!(
            detect_lumen(&frame_from(g), &LumenParams::default()),
            Err(Error::NoLumenFound { found: 8, n_alines: 64 })
        ));
    }

    #[test]
    fn missing_alines_are_interpolated() {
        // A-lines 10..14 are dark; neighbours sit at 40 and 50
        let g = Grid::from_fn(64, 200, |r, c| {
            let edge = if r < 12 { 40 } else { 50 };
            if (10..14).contains(&r) || c < edge { 0 } else { 3000 }
        });
        let p = LumenParams { median_window: 1, ..Default::default() };
        let l = detect_lumen(&frame_from(g), &p).unwrap();
        assert_eq!(l.r_lumen[9], 40.0);
        assert_eq!(l.r_lumen[14], 50.0);
        assert!((l.r_lumen[11] - 44.0).abs() < 1e-12);
    }

    #[test]
    fn dead_zone_skips_sheath() {
        let g = Grid::from_fn(32, 100, |_, c| match c {
            2..=5 => 5000,
            c if c >= 30 => 4000,
            _ => 10,
        });
        let l = detect_lumen(&frame_from(g), &LumenParams::default()).unwrap();
        assert!(l.r_lumen.iter().all(|&r| r == 30.0));
    }

    #[test]
    fn shift_example() {
        let g = Grid::from_vec(1, 5, vec![0.0, 0.0, 5.0, 7.0, 9.0]).unwrap();
        let (s, shifts) = pixel_shift(&g, &LumenBoundary::external(vec![2.0])).unwrap();
        assert_eq!(s.as_slice(), &[5.0, 7.0, 9.0, 0.0, 0.0]);
        assert_eq!(shifts, vec![2]);
    }

    #[test]
    fn zero_shift_is_identity() {
        let g = Grid::from_fn(8, 10, |r, c| (r * 10 + c) as f64);
        let (s, _) = pixel_shift(&g, &LumenBoundary::external(vec![0.0; 8])).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn shift_rejects_out_of_range_lumen() {
        let g = Grid::filled(2, 5, 1.0);
        assert!(pixel_shift(&g, &LumenBoundary::external(vec![0.0, 5.0])).is_err());
        assert!(pixel_shift(&g, &LumenBoundary::external(vec![0.0])).is_err());
    }

    #[test]
    fn crop_contract() {
        let wide = Grid::from_fn(4, 968, |_, c| c as f64);
        let c = crop_depth(&wide, 300);
        assert_eq!(c.cols(), 300);
        assert_eq!(c.row(2), &wide.row(2)[..300]);

        let narrow = Grid::filled(4, 200, 1.0);
        let c = crop_depth(&narrow, 300);
        assert_eq!(c.cols(), 300);
        assert!(c.row(0)[200..].iter().all(|&v| v == 0.0));
        assert!(c.row(0)[..200].iter().all(|&v| v == 1.0));

        let exact = Grid::filled(4, 300, 2.0);
        assert_eq!(crop_depth(&exact, 300), exact);
    }

    #[test]
    fn gaussian_dc_gain() {
        let g = Grid::filled(20, 30, 100.0);
        let out = denoise_gaussian(&g, 1.0, [7, 7]).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 100.0).abs() < 1e-9));
    }

    #[test]
    fn gaussian_kernel_sums_to_one() {
        let k = gaussian_kernel_2d(1.0, [7, 7]);
        let s: f64 = k.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_smooths_checkerboard() {
        let g = Grid::from_fn(16, 16, |r, c| if (r + c) % 2 == 0 { 0.0 } else { 200.0 });
        let out = denoise_gaussian(&g, 1.0, [7, 7]).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!(var(out.as_slice()) < var(g.as_slice()));
    }

    #[test]
    fn gaussian_rejects_even_footprint() {
        assert!(denoise_gaussian(&Grid::filled(4, 4, 0.0), 1.0, [6, 7]).is_err());
    }

    #[test]
    fn external_lumen_bypasses_detection() {
        // all-zero frame would fail detection
        let frame = frame_from(Grid::filled(16, 400, 0u16));
        let lumen = LumenBoundary::external((0..16).map(|i| 20.0 + i as f64 + 0.25).collect());
        let pre = preprocess_pipeline(&frame, &CalibrationMeta::default(), &AnalysisConfig::default(), Some(&lumen)).unwrap();
        assert_eq!(pre.shifts, (0..16).map(|i| 20 + i).collect::<Vec<_>>());
        assert_eq!(pre.lumen.source, LumenSource::External);
        assert!(pre.residuals.iter().all(|&r| (r + 0.25).abs() < 1e-12));
        assert_eq!(pre.depth(), 300);
    }
}
