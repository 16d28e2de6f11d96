//! Discrimination and calibration metrics with bootstrap aggregation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::stats::percentile;

/// Attempts per replicate before giving up on a resample.
pub const MAX_REDRAWS: usize = 100;
pub const ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Ece,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Ece => "ece",
        }
    }

    pub fn evaluate<T: Scalar>(self, probs: &[T], labels: &[u8]) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(probs, labels),
            Metric::Ece => ece(probs, labels, ECE_BINS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: Vec<f64>,
}

impl EvalResult {
    /// Mean and 2.5/97.5 percentile interval of the replicates.
    pub fn from_replicates(metric: Metric, replicates: Vec<f64>) -> Self {
        let mean = replicates.iter().sum::<f64>() / replicates.len() as f64;
        let mut sorted = replicates.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            metric,
            mean,
            ci_low: percentile(&sorted, 2.5),
            ci_high: percentile(&sorted, 97.5),
            replicates,
        }
    }
}

fn check_lengths<T>(scores: &[T], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not 0/1")));
    }
    Ok(())
}

/// Pairwise win and tie counts of positives over negatives.
fn win_tie_counts(scores: &[f64], labels: &[u8]) -> (u128, u128, u128) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut wins, mut ties, mut neg_below) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        wins += pos * neg_below;
        ties += pos * neg;
        neg_below += neg;
        i = j;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    (wins, ties, n_pos * neg_below)
}

/// Mann–Whitney AUROC, `(wins + ties/2) / (n₊ n₋)`.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let (wins, ties, pairs) = win_tie_counts(&s, labels);
    if pairs == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let losses = pairs - wins - ties;
    let two_n = (2 * pairs) as f64;
    // The upper half is computed as a complement so that flipping the score
    // sign yields exactly 1 − AUROC.
    let up = 2 * wins + ties;
    let down = 2 * losses + ties;
    Ok(if up >= down {
        1.0 - down as f64 / two_n
    } else {
        up as f64 / two_n
    })
}

/// Expected calibration error over `bins` equal-width bins on `[0, 1]`.
/// Probability 1.0 falls in the last bin.
pub fn ece<T: Scalar>(probs: &[T], labels: &[u8], bins: usize) -> Result<f64> {
    check_lengths(probs, labels)?;
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("ECE of an empty sample".into()));
    }
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    let mut pos = vec![0usize; bins];
    for (p, &l) in probs.iter().zip(labels) {
        let p = p.as_f64();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += p;
        pos[b] += l as usize;
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let c = count[b] as f64;
            total += (c / n) * (pos[b] as f64 / c - conf[b] / c).abs();
        }
    }
    Ok(total)
}

/// Resample rows with replacement `reps` times and evaluate `metric` on
/// each. Replicate `r` draws from `rng_stream(seed, r)`; a draw on which the
/// metric is undefined is replaced by a fresh draw from the same stream.
pub fn bootstrap_eval<T: Scalar>(
    metric: Metric,
    probs: &[T],
    labels: &[u8],
    reps: usize,
    seed: u64,
) -> Result<EvalResult> {
    bootstrap_with(
        metric,
        |p: &[T], l: &[u8]| metric.evaluate(p, l),
        probs,
        labels,
        reps,
        seed,
    )
}

/// [`bootstrap_eval`] with a caller-supplied metric function.
pub fn bootstrap_with<T: Scalar, F>(
    metric: Metric,
    eval: F,
    probs: &[T],
    labels: &[u8],
    reps: usize,
    seed: u64,
) -> Result<EvalResult>
where
    F: Fn(&[T], &[u8]) -> Result<f64>,
{
    eval(probs, labels)?;
    if reps == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let n = probs.len();
    let mut replicates = Vec::with_capacity(reps);
    let mut p = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for r in 0..reps {
        let mut rng = seed::rng_stream(seed, r as u64);
        let mut value = None;
        for _ in 0..MAX_REDRAWS {
            p.clear();
            l.clear();
            for _ in 0..n {
                let i = rng.random_range(0..n);
                p.push(probs[i]);
                l.push(labels[i]);
            }
            match eval(&p, &l) {
                Ok(v) => {
                    value = Some(v);
                    break;
                }
                Err(Error::UndefinedMetric(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let v = value.ok_or_else(|| {
            Error::Bootstrap(format!(
                "replicate {r}: {} undefined after {MAX_REDRAWS} draws",
                metric.name()
            ))
        })?;
        replicates.push(v);
    }
    Ok(EvalResult::from_replicates(metric, replicates))
}
