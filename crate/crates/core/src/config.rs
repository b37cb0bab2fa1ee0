//! Analysis parameters. Every key can be set from a JSON or TOML file and
//! overridden with dotted `key=value` assignments.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Radial depth kept after pixel shifting (1.5 mm at 200 px/mm).
    pub crop_depth_px: usize,
    pub gaussian_sigma_px: f64,
    /// (angular, radial) kernel extent; both odd.
    pub gaussian_footprint: [usize; 2],
    pub ribbon_width_px: usize,
    pub ribbon_offset_px: usize,
    pub tcfa_thickness_um: f64,
    pub tcfa_min_angle_deg: f64,
    /// Histology shrinkage compensation applied to the TCFA cutoff.
    pub shrinkage_adjust_pct: f64,
    pub lumen: LumenParams,
    pub lipid: LipidParams,
    pub dp: DpParams,
    pub map: MapParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            crop_depth_px: 300,
            gaussian_sigma_px: 1.0,
            gaussian_footprint: [7, 7],
            ribbon_width_px: 20,
            ribbon_offset_px: 50,
            tcfa_thickness_um: 65.0,
            tcfa_min_angle_deg: 90.0,
            shrinkage_adjust_pct: 0.0,
            lumen: LumenParams::default(),
            lipid: LipidParams::default(),
            dp: DpParams::default(),
            map: MapParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LumenParams {
    /// Leading samples skipped (catheter sheath reflections).
    pub dead_zone_px: usize,
    /// Trailing running-mean window used for the threshold crossing.
    pub mean_window: usize,
    /// Circular median window across A-lines; odd.
    pub median_window: usize,
    /// Minimum fraction of A-lines that must cross the threshold.
    pub min_coverage: f64,
}

impl Default for LumenParams {
    fn default() -> Self {
        Self {
            dead_zone_px: 8,
            mean_window: 3,
            median_window: 15,
            min_coverage: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipidParams {
    /// Labelled pixels an A-line needs to count as lipid.
    pub min_pixels: usize,
    pub bridge_max: usize,
    pub min_width: usize,
    pub guidewire_tau_frac: f64,
    pub guidewire_min_run: usize,
    /// Columns averaged for the guidewire statistic.
    pub guidewire_depth_px: usize,
    /// Attenuation fit window `[start, end)` in columns.
    pub fit_window: [usize; 2],
    pub proximal_window: [usize; 2],
    pub distal_window: [usize; 2],
    /// Minimum attenuation (1/mm) for a lipid A-line.
    pub mu_min_per_mm: f64,
    /// Maximum distal/proximal mean ratio for a lipid A-line.
    pub rho_max: f64,
}

impl Default for LipidParams {
    fn default() -> Self {
        Self {
            min_pixels: 1,
            bridge_max: 5,
            min_width: 5,
            guidewire_tau_frac: 0.15,
            guidewire_min_run: 8,
            guidewire_depth_px: 150,
            fit_window: [10, 150],
            proximal_window: [10, 60],
            distal_window: [150, 300],
            mu_min_per_mm: 4.0,
            rho_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpParams {
    /// Derivative-of-Gaussian scale along r.
    pub sigma_r: f64,
    pub min_offset: usize,
    pub max_offset: usize,
    /// Largest radial step between neighbouring A-lines.
    pub smooth_max: usize,
}

impl Default for DpParams {
    fn default() -> Self {
        Self {
            sigma_r: 2.0,
            min_offset: 6,
            max_offset: 299,
            smooth_max: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub angle_bins: usize,
    pub range_um: [f64; 2],
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            angle_bins: 360,
            range_um: [0.0, 300.0],
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
    }
}

fn window(name: &str, w: [usize; 2], depth: usize) -> Result<()> {
    if w[0] < w[1] && w[1] <= depth {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must satisfy start < end <= crop_depth_px ({depth}), got {w:?}"
        )))
    }
}

impl AnalysisConfig {
    /// TCFA cutoff after shrinkage compensation.
    pub fn tcfa_threshold_um(&self) -> f64 {
        self.tcfa_thickness_um * (1.0 + self.shrinkage_adjust_pct / 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.crop_depth_px;
        positive("crop_depth_px", depth as f64)?;
        positive("gaussian_sigma_px", self.gaussian_sigma_px)?;
        for (axis, &f) in ["angular", "radial"].iter().zip(&self.gaussian_footprint) {
            if f == 0 || f % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "gaussian_footprint {axis} extent must be odd and positive, got {f}"
                )));
            }
        }
        positive("ribbon_width_px", self.ribbon_width_px as f64)?;
        positive("ribbon_offset_px", self.ribbon_offset_px as f64)?;
        if self.ribbon_offset_px + self.ribbon_width_px > depth {
            return Err(Error::InvalidConfig("ribbon extends past crop_depth_px".into()));
        }
        positive("tcfa_thickness_um", self.tcfa_thickness_um)?;
        positive("tcfa_min_angle_deg", self.tcfa_min_angle_deg)?;
        if !(self.shrinkage_adjust_pct >= 0.0 && self.shrinkage_adjust_pct.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shrinkage_adjust_pct must be >= 0, got {}",
                self.shrinkage_adjust_pct
            )));
        }

        let l = &self.lumen;
        positive("lumen.mean_window", l.mean_window as f64)?;
        if l.median_window == 0 || l.median_window % 2 == 0 {
            return Err(Error::InvalidConfig("lumen.median_window must be odd".into()));
        }
        if !(l.min_coverage > 0.0 && l.min_coverage <= 1.0) {
            return Err(Error::InvalidConfig("lumen.min_coverage must be in (0, 1]".into()));
        }

        let p = &self.lipid;
        positive("lipid.min_pixels", p.min_pixels as f64)?;
        positive("lipid.min_width", p.min_width as f64)?;
        positive("lipid.guidewire_tau_frac", p.guidewire_tau_frac)?;
        positive("lipid.guidewire_min_run", p.guidewire_min_run as f64)?;
        positive("lipid.guidewire_depth_px", p.guidewire_depth_px as f64)?;
        window("lipid.fit_window", p.fit_window, depth)?;
        if p.fit_window[1] - p.fit_window[0] < 2 {
            return Err(Error::InvalidConfig("lipid.fit_window needs at least 2 columns".into()));
        }
        window("lipid.proximal_window", p.proximal_window, depth)?;
        window("lipid.distal_window", p.distal_window, depth)?;
        positive("lipid.mu_min_per_mm", p.mu_min_per_mm)?;
        positive("lipid.rho_max", p.rho_max)?;

        let d = &self.dp;
        positive("dp.sigma_r", d.sigma_r)?;
        positive("dp.min_offset", d.min_offset as f64)?;
        positive("dp.smooth_max", d.smooth_max as f64)?;
        if d.min_offset > d.max_offset {
            return Err(Error::InvalidConfig("dp.min_offset must be <= dp.max_offset".into()));
        }
        if d.min_offset >= depth {
            return Err(Error::InvalidConfig("dp.min_offset must be < crop_depth_px".into()));
        }

        positive("map.angle_bins", self.map.angle_bins as f64)?;
        if !(self.map.range_um[0] < self.map.range_um[1]) {
            return Err(Error::InvalidConfig("map.range_um must be increasing".into()));
        }
        Ok(())
    }

    /// Loads a `.json` or `.toml` file. Missing keys take defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `dotted.key=value` override. Values parse as JSON when
    /// possible (`3`, `0.5`, `[7,7]`), otherwise as a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {assignment:?}")))?;
        let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_owned()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.trim().split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        let updated: Self =
            serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
