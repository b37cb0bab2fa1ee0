//! Per-A-line lipid labels, guidewire shadow detection, the attenuation
//! baseline classifier and grouping of labels into angular arcs.

use serde::{Deserialize, Serialize};

use crate::config::LipidParams;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::preprocess::PreprocessedFrame;

/// Per-pixel lipid labels aligned with a preprocessed tissue grid.
pub type PixelMask = Grid<bool>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ALineLabels {
    pub lipid: Vec<bool>,
    pub guidewire: Vec<bool>,
}

impl ALineLabels {
    pub fn negative(n_alines: usize) -> Self {
        Self {
            lipid: vec![false; n_alines],
            guidewire: vec![false; n_alines],
        }
    }

    pub fn len(&self) -> usize {
        self.lipid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lipid.is_empty()
    }

    /// Marks guidewire A-lines, clearing any lipid label on them.
    pub fn with_guidewire(mut self, guidewire: Vec<bool>) -> Self {
        for (l, &g) in self.lipid.iter_mut().zip(&guidewire) {
            *l &= !g;
        }
        self.guidewire = guidewire;
        self
    }

    /// Lipid labels covering exactly the A-lines of `arcs`.
    pub fn from_arcs(arcs: &[LipidArc], n_alines: usize) -> Self {
        let mut labels = Self::negative(n_alines);
        for arc in arcs {
            for i in arc.alines(n_alines) {
                labels.lipid[i] = true;
            }
        }
        labels
    }
}

/// Contiguous angular run of lipid A-lines; may wrap past A-line 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipidArc {
    pub start: usize,
    pub length: usize,
    pub angle_deg: f64,
}

impl LipidArc {
    pub fn new(start: usize, length: usize, n_alines: usize) -> Result<Self> {
        if start >= n_alines || length == 0 || length > n_alines {
            return Err(Error::ArcOutOfRange(format!(
                "start {start}, length {length} for {n_alines} A-lines"
            )));
        }
        Ok(Self {
            start,
            length,
            angle_deg: length as f64 * 360.0 / n_alines as f64,
        })
    }

    /// Re-derives and checks `angle_deg` against `n_alines`.
    pub fn validate(&self, n_alines: usize) -> Result<()> {
        let fresh = Self::new(self.start, self.length, n_alines)?;
        if (fresh.angle_deg - self.angle_deg).abs() > 1e-3 {
            return Err(Error::ArcOutOfRange(format!(
                "angle_deg {} inconsistent with length {} of {n_alines}",
                self.angle_deg, self.length
            )));
        }
        Ok(())
    }

    /// A-line indices in arc order.
    pub fn alines(&self, n_alines: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.length).map(move |j| (self.start + j) % n_alines)
    }

    /// Position of `aline` inside the arc, if covered.
    pub fn position(&self, aline: usize, n_alines: usize) -> Option<usize> {
        let j = (aline + n_alines - self.start % n_alines) % n_alines;
        (aline < n_alines && j < self.length).then_some(j)
    }
}

/// An A-line is lipid when its mask row holds at least `min_pixels` labels.
pub fn labels_from_mask(mask: &PixelMask, shape: (usize, usize), min_pixels: usize) -> Result<ALineLabels> {
    if mask.shape() != shape {
        return Err(Error::mismatch(
            "pixel mask shape",
            format!("{shape:?}"),
            format!("{:?}", mask.shape()),
        ));
    }
    let lipid = mask
        .row_iter()
        .map(|row| row.iter().filter(|&&b| b).count() >= min_pixels.max(1))
        .collect::<Vec<_>>();
    let n = lipid.len();
    Ok(ALineLabels {
        lipid,
        guidewire: vec![false; n],
    })
}

/// Annotation ribbon: columns `[offset, offset + width)` on every A-line of
/// the arc.
pub fn ribbon_from_arc(arc: &LipidArc, n_alines: usize, depth: usize, offset: usize, width: usize) -> Result<PixelMask> {
    arc.validate(n_alines)?;
    if offset + width > depth {
        return Err(Error::ArcOutOfRange(format!(
            "ribbon [{offset}, {}) exceeds depth {depth}",
            offset + width
        )));
    }
    let mut mask = Grid::filled(n_alines, depth, false);
    for i in arc.alines(n_alines) {
        mask.row_mut(i)[offset..offset + width].fill(true);
    }
    Ok(mask)
}

/// Maximal circular runs of `true`, as `(start, length)`. A fully `true`
/// input yields a single run starting at 0.
pub fn circular_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let n = flags.len();
    if n == 0 || !flags.contains(&true) {
        return Vec::new();
    }
    let Some(first_false) = flags.iter().position(|&f| !f) else {
        return vec![(0, n)];
    };
    let mut runs = Vec::new();
    let mut k = 0;
    while k < n {
        let i = (first_false + k) % n;
        if flags[i] {
            let start = i;
            let mut len = 0;
            while k < n && flags[(first_false + k) % n] {
                len += 1;
                k += 1;
            }
            runs.push((start, len));
        } else {
            k += 1;
        }
    }
    runs.sort_unstable();
    runs
}

/// Guidewire shadow: A-lines whose mean over the first `depth_px` columns
/// falls below `tau_frac ×` the frame median of that statistic, in circular
/// runs of at least `min_run`.
pub fn detect_guidewire(pre: &PreprocessedFrame, tau_frac: f64, min_run: usize, depth_px: usize) -> Vec<bool> {
    let depth = depth_px.min(pre.depth()).max(1);
    let means: Vec<f64> = pre
        .tissue
        .row_iter()
        .map(|row| row[..depth.min(row.len())].iter().sum::<f64>() / depth as f64)
        .collect();
    let n = means.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let dark: Vec<bool> = means.iter().map(|&m| m < tau_frac * median).collect();
    let mut out = vec![false; n];
    for (start, len) in circular_runs(&dark) {
        if len >= min_run {
            for j in 0..len {
                out[(start + j) % n] = true;
            }
        }
    }
    out
}

/// Attenuation (1/mm) and distal/proximal ratio of one shifted A-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuationFeatures {
    pub mu_per_mm: f64,
    pub rho: f64,
}

fn window_mean(row: &[f64], w: [usize; 2]) -> f64 {
    let s = &row[w[0].min(row.len())..w[1].min(row.len())];
    if s.is_empty() {
        0.0
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Least-squares slope of `ln(I + 1)` over the fit window, converted to an
/// attenuation coefficient, and the distal/proximal mean ratio.
pub fn attenuation_features(row: &[f64], radial_px_per_mm: f64, params: &LipidParams) -> AttenuationFeatures {
    let [a, b] = params.fit_window;
    let b = b.min(row.len());
    let xs = a..b;
    let n = xs.len() as f64;
    let x_mean = (a + b - 1) as f64 / 2.0;
    let y_mean = row[a..b].iter().map(|v| (v.max(0.0) + 1.0).ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for x in xs {
        let dx = x as f64 - x_mean;
        sxy += dx * ((row[x].max(0.0) + 1.0).ln() - y_mean);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let proximal = window_mean(row, params.proximal_window);
    let distal = window_mean(row, params.distal_window);
    AttenuationFeatures {
        mu_per_mm: -slope * radial_px_per_mm,
        rho: if proximal > 0.0 { distal / proximal } else { f64::INFINITY },
    }
}

/// Attenuation baseline: lipid when `µ ≥ mu_min_per_mm` and
/// `ρ ≤ rho_max`. Guidewire A-lines are never lipid.
pub fn baseline_classify(pre: &PreprocessedFrame, params: &LipidParams) -> ALineLabels {
    let guidewire = detect_guidewire(
        pre,
        params.guidewire_tau_frac,
        params.guidewire_min_run,
        params.guidewire_depth_px,
    );
    let lipid = pre
        .tissue
        .row_iter()
        .zip(&guidewire)
        .map(|(row, &gw)| {
            if gw {
                return false;
            }
            let f = attenuation_features(row, pre.calib.radial_px_per_mm, params);
            f.mu_per_mm >= params.mu_min_per_mm && f.rho <= params.rho_max
        })
        .collect();
    ALineLabels { lipid, guidewire }
}

/// Groups lipid A-lines into arcs. Gaps of at most `bridge_max` A-lines
/// (negative or guidewire) between lipid runs are bridged; merged arcs
/// shorter than `min_width` are dropped. Sorted by start.
pub fn extract_arcs(labels: &ALineLabels, bridge_max: usize, min_width: usize) -> Vec<LipidArc> {
    let n = labels.len();
    let runs = circular_runs(&labels.lipid);
    if runs.is_empty() {
        return Vec::new();
    }
    if runs.len() == 1 && runs[0].1 == n {
        return vec![LipidArc::new(0, n, n).expect("full circle arc")];
    }
    // gap after run k is the distance to run k+1 (circularly)
    let gap_after = |k: usize| {
        let (s, l) = runs[k];
        let (next, _) = runs[(k + 1) % runs.len()];
        (next + n - (s + l) % n) % n
    };
    let m = runs.len();
    let bridged: Vec<bool> = (0..m).map(|k| gap_after(k) <= bridge_max).collect();

    let mut arcs = Vec::new();
    if bridged.iter().all(|&b| b) {
        arcs.push(LipidArc::new(0, n, n).expect("full circle arc"));
    } else {
        // begin each merged group right after an unbridged gap
        let first = (0..m).find(|&k| !bridged[k]).unwrap();
        let mut k = (first + 1) % m;
        for _ in 0..m {
            let start = runs[k].0;
            let mut len = runs[k].1;
            let mut j = k;
            while bridged[j] {
                len += gap_after(j) + runs[(j + 1) % m].1;
                j = (j + 1) % m;
            }
            arcs.push(LipidArc::new(start, len, n).expect("arc within circle"));
            k = (j + 1) % m;
            if j == first {
                break;
            }
        }
    }
    arcs.retain(|a| a.length >= min_width);
    arcs.sort_by_key(|a| a.start);
    arcs
}

/// Total angular extent of disjoint arcs.
pub fn lipid_angle(arcs: &[LipidArc], n_alines: usize) -> Result<f64> {
    let mut covered = vec![false; n_alines];
    let mut total = 0usize;
    for arc in arcs {
        arc.validate(n_alines)?;
        for i in arc.alines(n_alines) {
            if covered[i] {
                return Err(Error::OverlappingArcs(i));
            }
            covered[i] = true;
            total += 1;
        }
    }
    Ok(total as f64 * 360.0 / n_alines as f64)
}
