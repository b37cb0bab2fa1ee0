//! A-line confusion counts, classification scores, Bland–Altman agreement
//! and least-squares regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lipid::ALineLabels;

/// Limits of agreement multiplier.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Counts over paired frames. A-lines flagged guidewire in either labelling
/// are not scored.
pub fn aline_confusion<'a, I>(pairs: I) -> Result<ConfusionCounts>
where
    I: IntoIterator<Item = (&'a ALineLabels, &'a ALineLabels)>,
{
    let mut c = ConfusionCounts::default();
    for (pred, truth) in pairs {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch(pred.len(), truth.len()));
        }
        for i in 0..pred.len() {
            if pred.guidewire[i] || truth.guidewire[i] {
                continue;
            }
            match (pred.lipid[i], truth.lipid[i]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// `None` marks a score whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub dice: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_scores(c: &ConfusionCounts) -> ClassificationScores {
    ClassificationScores {
        precision: ratio(c.tp, c.tp + c.fp),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Differences `a - b`, their mean, sample (n − 1) standard deviation and
/// `bias ± 1.96 sd` limits.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let bias = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - bias).powi(2)).sum();
    let sd_diff = (ss / (n - 1) as f64).sqrt();
    Ok(BlandAltman {
        bias,
        sd_diff,
        loa_low: bias - LOA_Z * sd_diff,
        loa_high: bias + LOA_Z * sd_diff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `b` on `a`.
pub fn linear_fit_r2(pairs: &[(f64, f64)]) -> Result<LinearFit> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let nf = n as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 {
        return Err(Error::DegenerateX);
    }
    if sbb == 0.0 {
        return Err(Error::DegenerateY);
    }
    let slope = sab / saa;
    let intercept = mb - slope * ma;
    let ss_res: f64 = pairs
        .iter()
        .map(|&(a, b)| (b - (intercept + slope * a)).powi(2))
        .sum();
    let r2 = (1.0 - ss_res / sbb).clamp(0.0, 1.0);
    Ok(LinearFit { slope, intercept, r2 })
}

/// Bland–Altman plus regression for one paired measurement. Regression
/// fields are `None` when a side has no variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
}

pub fn agreement(pairs: &[(f64, f64)]) -> Result<AgreementStats> {
    let ba = bland_altman(pairs)?;
    let (slope, intercept, mut r2) = match linear_fit_r2(pairs) {
        Ok(f) => (Some(f.slope), Some(f.intercept), Some(f.r2)),
        Err(Error::DegenerateX | Error::DegenerateY) => (None, None, None),
        Err(e) => return Err(e),
    };
    // identical constant measurements agree perfectly
    if r2.is_none() && pairs.iter().all(|(a, b)| a == b) {
        r2 = Some(1.0);
    }
    Ok(AgreementStats {
        n: pairs.len(),
        bias: ba.bias,
        sd_diff: ba.sd_diff,
        loa_low: ba.loa_low,
        loa_high: ba.loa_high,
        slope,
        intercept,
        r2,
    })
}
