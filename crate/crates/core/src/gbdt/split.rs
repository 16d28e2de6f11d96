//! Second-order split search over feature histograms.

use super::binning::{BinMapper, BinnedMatrix};
use super::BoostConfig;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BinStat {
    pub grad: f64,
    pub hess: f64,
    pub count: usize,
}

impl std::ops::AddAssign for BinStat {
    fn add_assign(&mut self, o: Self) {
        self.grad += o.grad;
        self.hess += o.hess;
        self.count += o.count;
    }
}

/// Constraints applied to every candidate split.
#[derive(Debug, Clone, Copy)]
pub struct SplitParams {
    pub min_samples_leaf: usize,
    pub min_gain: f64,
    pub lambda: f64,
    pub min_hessian: f64,
}

impl From<&BoostConfig> for SplitParams {
    fn from(c: &BoostConfig) -> Self {
        Self {
            min_samples_leaf: c.min_samples_leaf,
            min_gain: c.min_gain,
            lambda: c.lambda,
            min_hessian: c.min_hessian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Rows with bin index `<= bin` go left.
    pub bin: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// `GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)
}

pub(crate) fn scan_histogram(
    hist: &[BinStat],
    mapper: &BinMapper,
    feature: usize,
    params: &SplitParams,
) -> Option<SplitCandidate> {
    let mut total = BinStat::default();
    for b in hist {
        total += *b;
    }
    let mut left = BinStat::default();
    let mut best: Option<SplitCandidate> = None;
    for (bin, &h) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
        left += h;
        if left.count < params.min_samples_leaf {
            continue;
        }
        let right_count = total.count - left.count;
        if right_count < params.min_samples_leaf {
            break;
        }
        if left.count == 0 || right_count == 0 {
            continue;
        }
        let (hl, hr) = (left.hess, total.hess - left.hess);
        if hl < params.min_hessian || hr < params.min_hessian {
            continue;
        }
        let gain = split_gain(left.grad, hl, total.grad - left.grad, hr, params.lambda);
        if gain > params.min_gain && best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature,
                bin,
                threshold: mapper.threshold(bin),
                gain,
            });
        }
    }
    best
}

pub(crate) fn build_histogram(
    column: &[u16],
    n_bins: usize,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
) -> Vec<BinStat> {
    let mut hist = vec![BinStat::default(); n_bins];
    for &r in rows {
        let b = &mut hist[column[r] as usize];
        b.grad += grad[r];
        b.hess += hess[r];
        b.count += 1;
    }
    hist
}

/// Best split of `rows` across all features; ties go to the lowest feature
/// index, then the lowest threshold.
pub(crate) fn best_split_binned(
    binned: &BinnedMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    params: &SplitParams,
) -> Option<SplitCandidate> {
    if rows.len() < 2 * params.min_samples_leaf.max(1) {
        return None;
    }
    let mut best: Option<SplitCandidate> = None;
    for f in 0..binned.n_features() {
        let mapper = binned.mapper(f);
        if mapper.n_bins() < 2 {
            continue;
        }
        let hist = build_histogram(binned.column(f), mapper.n_bins(), rows, grad, hess);
        if let Some(c) = scan_histogram(&hist, mapper, f, params) {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
    }
    best
}

/// Best threshold and gain for a single feature, or `None` when no
/// boundary beats `min_gain`.
pub fn best_split(
    feature_values: &[f64],
    gradients: &[f64],
    hessians: &[f64],
    config: &BoostConfig,
) -> Option<(f64, f64)> {
    best_split_features(&[feature_values.to_vec()], gradients, hessians, config).map(|c| (c.threshold, c.gain))
}

/// Best split over several feature columns.
pub fn best_split_features(
    columns: &[Vec<f64>],
    gradients: &[f64],
    hessians: &[f64],
    config: &BoostConfig,
) -> Option<SplitCandidate> {
    let n = gradients.len();
    assert_eq!(hessians.len(), n, "gradient/hessian length mismatch");
    assert!(columns.iter().all(|c| c.len() == n), "feature length mismatch");
    let binned = BinnedMatrix::from_columns(columns, config.histogram_bins);
    let rows: Vec<usize> = (0..n).collect();
    best_split_binned(&binned, &rows, gradients, hessians, &SplitParams::from(config))
}
