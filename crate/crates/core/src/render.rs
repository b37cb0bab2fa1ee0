//! Raster output: thickness maps with a color bar and grayscale frame views.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::capseg::ThicknessMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{scan_convert, PolarFrame};
use crate::store::{encode_png, write_atomic};

/// Viridis sampled at 17 evenly spaced stops.
const VIRIDIS: [[u8; 3]; 17] = [
    [68, 1, 84],
    [72, 24, 106],
    [71, 45, 123],
    [66, 64, 134],
    [59, 82, 139],
    [51, 99, 141],
    [44, 114, 142],
    [38, 130, 142],
    [33, 145, 140],
    [31, 160, 136],
    [40, 174, 128],
    [63, 188, 115],
    [94, 201, 98],
    [132, 212, 75],
    [173, 220, 48],
    [216, 226, 25],
    [253, 231, 37],
];

pub const SENTINEL_GRAY: [u8; 3] = [128, 128, 128];
pub const COLOR_BAR_GAP: u32 = 4;
pub const COLOR_BAR_WIDTH: u32 = 16;

/// Ramp color at `t`, clamped to `[0, 1]`.
pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - k as f64;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Frames along x, angle bins along y (bin 0 at the top), then a gap and a
/// vertical color bar running from `range.0` at the bottom to `range.1` at
/// the top. Sentinel bins are gray.
pub fn render_thickness_map(map: &ThicknessMap, range: (f64, f64)) -> Result<RgbImage> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!("map range {lo}:{hi} needs low < high")));
    }
    let frames = map.n_frames() as u32;
    let bins = map.angle_bins as u32;
    let width = frames + COLOR_BAR_GAP + COLOR_BAR_WIDTH;
    let mut img = RgbImage::from_pixel(width, bins.max(1), Rgb([0, 0, 0]));
    for f in 0..frames {
        for b in 0..bins {
            let v = map.values[(f as usize, b as usize)];
            let c = if ThicknessMap::is_sentinel(v) { SENTINEL_GRAY } else { viridis((v - lo) / (hi - lo)) };
            img.put_pixel(f, b, Rgb(c));
        }
    }
    let h = bins.max(1);
    for y in 0..h {
        let t = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 1.0 };
        for x in frames + COLOR_BAR_GAP..width {
            img.put_pixel(x, y, Rgb(viridis(t)));
        }
    }
    Ok(img)
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    encode_png(img)
}

/// Log-compressed 8-bit display of raw intensities, full scale at the
/// bit-depth maximum.
pub fn display_u8(intensities: &Grid<f64>, bit_depth: u8) -> Grid<u8> {
    let full = (f64::from((1u32 << bit_depth.min(16)) - 1)).ln_1p();
    intensities.map(|&v| (255.0 * v.max(0.0).ln_1p() / full).round().clamp(0.0, 255.0) as u8)
}

fn gray_png(g: &Grid<u8>) -> Result<Vec<u8>> {
    let img = GrayImage::from_fn(g.cols() as u32, g.rows() as u32, |x, y| Luma([g[(y as usize, x as usize)]]));
    encode_png(&img)
}

/// Polar view: one image row per A-line.
pub fn polar_png(frame: &PolarFrame, bit_depth: u8) -> Result<Vec<u8>> {
    gray_png(&display_u8(&frame.to_f64(), bit_depth))
}

/// Cartesian view of `out_size × out_size` pixels.
pub fn cartesian_png(frame: &PolarFrame, bit_depth: u8, out_size: usize) -> Result<Vec<u8>> {
    let xy = scan_convert(&frame.to_f64(), out_size, None)?;
    gray_png(&display_u8(&xy, bit_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capseg::MAP_SENTINEL;

    #[test]
    fn ramp_endpoints_and_clamping() {
        assert_eq!(viridis(0.0), [68, 1, 84]);
        assert_eq!(viridis(1.0), [253, 231, 37]);
        assert_eq!(viridis(-3.0), viridis(0.0));
        assert_eq!(viridis(7.0), viridis(1.0));
        assert_eq!(viridis(0.5), [33, 145, 140]);
    }

    #[test]
    fn all_sentinel_map_is_gray() {
        let map = ThicknessMap { values: Grid::filled(5, 360, MAP_SENTINEL), angle_bins: 360 };
        let img = render_thickness_map(&map, (0.0, 300.0)).unwrap();
        assert_eq!(img.dimensions(), (5 + COLOR_BAR_GAP + COLOR_BAR_WIDTH, 360));
        for f in 0..5 {
            for b in 0..360 {
                assert_eq!(img.get_pixel(f, b).0, SENTINEL_GRAY);
            }
        }
        let bar_x = 5 + COLOR_BAR_GAP;
        assert_eq!(img.get_pixel(bar_x, 0).0, viridis(1.0));
        assert_eq!(img.get_pixel(bar_x, 359).0, viridis(0.0));
    }

    #[test]
    fn range_endpoints_map_to_ramp_ends() {
        let mut values = Grid::filled(1, 4, MAP_SENTINEL);
        values.as_mut_slice().copy_from_slice(&[0.0, 300.0, 450.0, 150.0]);
        let img = render_thickness_map(&ThicknessMap { values, angle_bins: 4 }, (0.0, 300.0)).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [68, 1, 84]);
        assert_eq!(img.get_pixel(0, 1).0, [253, 231, 37]);
        assert_eq!(img.get_pixel(0, 2).0, [253, 231, 37]);
        assert_eq!(img.get_pixel(0, 3).0, [33, 145, 140]);
        assert!(render_thickness_map(&ThicknessMap { values: Grid::filled(1, 1, 0.0), angle_bins: 1 }, (5.0, 5.0)).is_err());
    }

    #[test]
    fn display_scale_is_monotone_with_fixed_ends() {
        let g = Grid::from_vec(1, 3, vec![0.0, 1000.0, 65535.0]).unwrap();
        let d = display_u8(&g, 16);
        assert_eq!(d.as_slice()[0], 0);
        assert_eq!(d.as_slice()[2], 255);
        assert!(d.as_slice()[1] > 0 && d.as_slice()[1] < 255);
    }
}
