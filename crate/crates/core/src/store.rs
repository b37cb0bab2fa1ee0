//! Pullback containers on disk and canonical JSON documents.
//!
//! A pullback directory holds `manifest.json` plus one file per frame,
//! either 16-bit grayscale PNG or headerless little-endian `u16` raw. Every
//! JSON document is written with sorted keys and floats rounded to six
//! significant digits, through a temporary file renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{CalibrationMeta, PolarFrame, Pullback};

pub const SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Png,
    Raw,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullbackManifest {
    pub schema_version: String,
    pub id: String,
    pub n_frames: usize,
    pub n_alines: usize,
    pub n_samples: usize,
    pub bit_depth: u8,
    pub radial_px_per_mm: f64,
    pub frame_pitch_mm: f64,
    pub frame_format: FrameFormat,
    /// File name with an `{index}` or zero-padded `{index:0N}` placeholder.
    pub frame_pattern: String,
}

impl PullbackManifest {
    pub fn for_pullback(pb: &Pullback, format: FrameFormat) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            id: pb.id.clone(),
            n_frames: pb.frames.len(),
            n_alines: pb.calib.n_alines,
            n_samples: pb.n_samples(),
            bit_depth: pb.calib.bit_depth,
            radial_px_per_mm: pb.calib.radial_px_per_mm,
            frame_pitch_mm: pb.calib.frame_pitch_mm,
            frame_format: format,
            frame_pattern: format!("frame_{{index:05}}.{}", format.extension()),
        }
    }

    pub fn calibration(&self) -> CalibrationMeta {
        CalibrationMeta {
            radial_px_per_mm: self.radial_px_per_mm,
            n_alines: self.n_alines,
            frame_pitch_mm: self.frame_pitch_mm,
            bit_depth: self.bit_depth,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(self.schema_version.clone()));
        }
        if self.id.is_empty() {
            return Err(Error::schema("id", "must not be empty"));
        }
        if self.n_samples == 0 {
            return Err(Error::schema("n_samples", "must be positive"));
        }
        self.calibration().validate()?;
        self.frame_name(0)?;
        Ok(())
    }

    /// File name of frame `index`.
    pub fn frame_name(&self, index: usize) -> Result<String> {
        let p = &self.frame_pattern;
        let bad = || Error::schema("frame_pattern", format!("{p:?} needs one {{index}} or {{index:0N}} placeholder"));
        let open = p.find("{index").ok_or_else(bad)?;
        let close = open + p[open..].find('}').ok_or_else(bad)?;
        let spec = &p[open + "{index".len()..close];
        let number = match spec {
            "" => index.to_string(),
            s => {
                let width: usize = s
                    .strip_prefix(":0")
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(bad)?;
                format!("{index:0width$}")
            }
        };
        let name = format!("{}{}{}", &p[..open], number, &p[close + 1..]);
        if name.contains(['/', '\\', '{']) {
            return Err(bad());
        }
        Ok(name)
    }
}

/// Loads a pullback directory, frames in index order.
pub fn read_pullback(dir: &Path) -> Result<Pullback> {
    let manifest = read_manifest(dir)?;
    let paths: Vec<PathBuf> = (0..manifest.n_frames)
        .map(|k| manifest.frame_name(k).map(|n| dir.join(n)))
        .collect::<Result<_>>()?;
    let present = paths.iter().filter(|p| p.is_file()).count();
    if present != manifest.n_frames {
        return Err(Error::mismatch("frame files", manifest.n_frames, present));
    }
    let frames = (0..manifest.n_frames)
        .into_par_iter()
        .map(|k| read_frame(dir, &manifest, k))
        .collect::<Result<Vec<_>>>()?;
    Pullback::new(manifest.id.clone(), frames, manifest.calibration())
}

/// Loads frame `index` of a pullback directory.
pub fn read_frame(dir: &Path, manifest: &PullbackManifest, index: usize) -> Result<PolarFrame> {
    if index >= manifest.n_frames {
        return Err(Error::mismatch("frame index", format!("< {}", manifest.n_frames), index));
    }
    let path = dir.join(manifest.frame_name(index)?);
    let intensities = match manifest.frame_format {
        FrameFormat::Png => read_png16(&path)?,
        FrameFormat::Raw => read_raw16(&path, manifest.n_alines, manifest.n_samples)?,
    };
    if intensities.shape() != (manifest.n_alines, manifest.n_samples) {
        return Err(Error::mismatch(
            format!("frame {index} shape (A-lines, samples)"),
            format!("{:?}", (manifest.n_alines, manifest.n_samples)),
            format!("{:?}", intensities.shape()),
        ));
    }
    Ok(PolarFrame { frame_index: index, intensities })
}

pub fn read_manifest(dir: &Path) -> Result<PullbackManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let m: PullbackManifest = read_json(&path)?;
    m.validate()?;
    Ok(m)
}

/// Writes frames, then the manifest.
pub fn write_pullback(dir: &Path, pb: &Pullback, format: FrameFormat) -> Result<PullbackManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = PullbackManifest::for_pullback(pb, format);
    manifest.validate()?;
    pb.frames.par_iter().enumerate().try_for_each(|(k, frame)| {
        let path = dir.join(manifest.frame_name(k)?);
        let bytes = match format {
            FrameFormat::Png => encode_png16(&frame.intensities)?,
            FrameFormat::Raw => frame.intensities.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect(),
        };
        write_atomic(&path, &bytes)
    })?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn read_png16(path: &Path) -> Result<Grid<u16>> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => {
            return Err(Error::mismatch(
                format!("{} pixel format", path.display()),
                "16-bit grayscale",
                format!("{:?}", other.color()),
            ))
        }
    };
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(h as usize, w as usize, img.into_raw()).expect("image buffer matches its dimensions"))
}

fn read_raw16(path: &Path, rows: usize, cols: usize) -> Result<Grid<u16>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 2 {
        return Err(Error::mismatch(format!("{} byte length", path.display()), rows * cols * 2, bytes.len()));
    }
    let data = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    Ok(Grid::from_vec(rows, cols, data).expect("length checked"))
}

/// 16-bit grayscale PNG, one image row per A-line.
pub fn encode_png16(grid: &Grid<u16>) -> Result<Vec<u8>> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.cols() as u32, grid.rows() as u32, grid.as_slice().to_vec())
            .expect("grid length matches its shape");
    encode_png(&img)
}

pub(crate) fn encode_png<P>(img: &ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: PathBuf::from("<memory>"), source: e })?;
    Ok(out.into_inner())
}

/// Writes `bytes` to a temporary file in the target directory and renames
/// it over `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `x` rounded to six significant digits; `-0` becomes `0`.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn canonical_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(canonical_value),
        Value::Object(map) => map.values_mut().for_each(canonical_value),
        _ => {}
    }
}

/// Pretty JSON with sorted keys, floats at six significant digits and a
/// trailing newline.
pub fn to_canonical_json<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(doc)?;
    canonical_value(&mut v);
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// The document as it reads back after a canonical write.
pub fn canonicalize<T: Serialize + DeserializeOwned>(doc: &T) -> Result<T> {
    Ok(serde_json::from_slice(&to_canonical_json(doc)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    write_atomic(path, &to_canonical_json(doc)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}
