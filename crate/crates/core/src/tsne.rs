//! Exact t-SNE.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub step_size: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub min_gain: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 5.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            step_size: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            init_std: 1e-4,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.out_dims == 0 {
            return Err(Error::Config("out_dims must be >= 1".into()));
        }
        if n < 10 {
            return Err(Error::Validation(format!("t-SNE needs at least 10 points, got {n}")));
        }
        if !(self.perplexity > 0.0 && self.perplexity < (n as f64 - 1.0) / 3.0) {
            let bound = (n as f64 - 1.0) / 3.0;
            return Err(Error::Config(format!(
                "perplexity {} must be in (0, (n-1)/3) = (0, {bound:.3}) for n = {n}; try perplexity = {}",
                self.perplexity,
                suggest_perplexity(n)
            )));
        }
        if !(self.step_size > 0.0 && self.init_std > 0.0) {
            return Err(Error::Config("step_size and init_std must be > 0".into()));
        }
        Ok(())
    }
}

/// A perplexity comfortably inside the feasible range for `n` points.
pub fn suggest_perplexity(n: usize) -> f64 {
    let bound = (n as f64 - 1.0) / 3.0;
    (bound * 0.9 * 100.0).floor() / 100.0
}

pub const PERPLEXITY_TOL: f64 = 1e-5;
pub const MAX_CALIBRATION_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaCalibration {
    /// Precision `1 / (2σ²)`.
    pub beta: f64,
    pub sigma: f64,
    pub achieved_perplexity: f64,
    /// `|achieved − target|`.
    pub residual: f64,
    pub converged: bool,
    pub probs: Vec<f64>,
}

/// Conditional probabilities `∝ exp(−β d)` and their entropy in bits.
pub fn conditional_probs(sq_dist: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let dmin = sq_dist.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = sq_dist.iter().map(|&d| (-beta * (d - dmin)).exp()).collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (pi, &d) in p.iter_mut().zip(sq_dist) {
        *pi /= sum;
        weighted += *pi * (d - dmin);
    }
    let h_nat = beta * weighted + sum.ln();
    (p, h_nat / std::f64::consts::LN_2)
}

/// Binary search on the Gaussian precision so that the conditional
/// distribution over `sq_dist` (one row, self excluded) has the target
/// perplexity.
pub fn calibrate_sigma(sq_dist: &[f64], perplexity: f64) -> Result<SigmaCalibration> {
    if sq_dist.len() < 2 || sq_dist.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Validation(
            "calibration row needs at least two finite non-negative distances".into(),
        ));
    }
    let target = perplexity.log2();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..MAX_CALIBRATION_ITERS {
        let (p, h) = conditional_probs(sq_dist, beta);
        let achieved = h.exp2();
        let residual = (achieved - perplexity).abs();
        if best.as_ref().is_none_or(|b| residual < (b.1 - perplexity).abs()) {
            best = Some((beta, achieved, p));
        }
        if residual < PERPLEXITY_TOL {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_infinite() {
                beta * 2.0
            } else {
                (beta + hi) / 2.0
            };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let (beta, achieved, probs) = best.expect("at least one iteration");
    let residual = (achieved - perplexity).abs();
    Ok(SigmaCalibration {
        beta,
        sigma: (1.0 / (2.0 * beta)).sqrt(),
        achieved_perplexity: achieved,
        residual,
        converged: residual < PERPLEXITY_TOL,
        probs,
    })
}

fn sq_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-major `n × n` conditional matrix `P(j | i)`; each row sums to 1.
pub fn conditional_matrix(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let d = sq_distances(points);
    let mut p = vec![0.0; n * n];
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| d[i * n + j]));
        let cal = calibrate_sigma(&row, perplexity)?;
        for (j, &pj) in (0..n).filter(|&j| j != i).zip(&cal.probs) {
            p[i * n + j] = pj;
        }
    }
    Ok(p)
}

/// Symmetrized joint `P = (P_{j|i} + P_{i|j}) / 2n`; sums to 1.
pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let c = conditional_matrix(points, perplexity)?;
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (c[i * n + j] + c[j * n + i]) * scale;
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<Vec<f64>>,
    /// KL(P‖Q) at the start and after every iteration, against the
    /// unexaggerated P.
    pub kl_trace: Vec<f64>,
}

const P_FLOOR: f64 = 1e-12;

fn student_kernel(y: &[Vec<f64>], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = y[i].iter().zip(&y[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            let q = 1.0 / (1.0 + s);
            num[i * n + j] = q;
            num[j * n + i] = q;
            z += 2.0 * q;
        }
    }
    z
}

fn kl(p: &[f64], num: &[f64], z: f64, n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / z).max(P_FLOOR);
                total += pij * (pij / q).ln();
            }
        }
    }
    total
}

pub fn tsne<T: Scalar>(points: &[Vec<T>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = points.len();
    cfg.validate(n)?;
    let pts: Vec<Vec<f64>> = points.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let d_in = pts[0].len();
    if pts.iter().any(|r| r.len() != d_in || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Contract(
            "t-SNE input rows must be finite and equal width".into(),
        ));
    }
    let p = joint_probabilities(&pts, cfg.perplexity)?;
    let mut rng = seed::rng(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let dims = cfg.out_dims;
    let mut y: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut update = vec![vec![0.0; dims]; n];
    let mut gains = vec![vec![1.0f64; dims]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![vec![0.0; dims]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations + 1);

    for it in 0..cfg.iterations {
        let z = student_kernel(&y, &mut num);
        kl_trace.push(kl(&p, &num, z, n));
        let exag = if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };
        for g in grad.iter_mut() {
            g.fill(0.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let q = num[i * n + j];
                let w = 4.0 * (exag * p[i * n + j] - q / z) * q;
                for k in 0..dims {
                    let f = w * (y[i][k] - y[j][k]);
                    grad[i][k] += f;
                    grad[j][k] -= f;
                }
            }
        }
        for i in 0..n {
            for k in 0..dims {
                let g = grad[i][k];
                let same_sign = (g > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign {
                    gains[i][k] * 0.8
                } else {
                    gains[i][k] + 0.2
                };
                gains[i][k] = gains[i][k].max(cfg.min_gain);
                update[i][k] = momentum * update[i][k] - cfg.step_size * gains[i][k] * g;
                y[i][k] += update[i][k];
            }
        }
        for k in 0..dims {
            let mean = y.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            for r in y.iter_mut() {
                r[k] -= mean;
            }
        }
    }
    let z = student_kernel(&y, &mut num);
    kl_trace.push(kl(&p, &num, z, n));
    if kl_trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: kl_trace.iter().position(|v| !v.is_finite()).unwrap_or(0),
            loss: f64::NAN,
        });
    }
    Ok(TsneResult { coords: y, kl_trace })
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sum[labels[j]] += dist(&points[i], &points[j]);
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// One projected point for the layout CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TsnePoint {
    pub row_id: String,
    pub label: String,
    pub dim1: f64,
    pub dim2: f64,
}

pub const TSNE_CSV_HEADER: &str = "row_id,label,dim1,dim2,approach,encoding";

pub fn tsne_csv(points: &[TsnePoint], approach: &str, encoding: &str) -> String {
    let mut s = String::from(TSNE_CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{approach},{encoding}",
            p.row_id, p.label, p.dim1, p.dim2
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn equidistant_row_is_uniform() {
        let row = vec![2.5; 6];
        let c = calibrate_sigma(&row, 6.0).unwrap();
        for p in &c.probs {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_hits_target_on_random_rows() {
        let mut rng = seed::rng(1);
        for _ in 0..20 {
            let row: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..50.0)).collect();
            let c = calibrate_sigma(&row, 5.0).unwrap();
            let (_, h) = conditional_probs(&row, c.beta);
            assert!((h.exp2() - 5.0).abs() < 1e-4);
            assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_point_dominates() {
        let mut row = vec![0.0];
        row.extend((1..20).map(|i| 1.0 + i as f64));
        let c = calibrate_sigma(&row, 2.0).unwrap();
        let max = c.probs.iter().copied().fold(0.0, f64::max);
        assert_eq!(c.probs[0], max);
    }

    #[test]
    fn perplexity_bound_enforced() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let cfg = TsneConfig {
            perplexity: 3.0,
            ..Default::default()
        };
        assert!(matches!(tsne(&pts, &cfg), Err(Error::Config(_))));
        let ok = TsneConfig {
            perplexity: suggest_perplexity(10),
            ..Default::default()
        };
        assert!(ok.validate(10).is_ok());
        assert!(suggest_perplexity(10) > 0.0);
    }

    #[test]
    fn csv_layout() {
        let pts = [TsnePoint {
            row_id: "r1".into(),
            label: "1".into(),
            dim1: 0.5,
            dim2: -1.0,
        }];
        assert_eq!(
            tsne_csv(&pts, "seq", "trad"),
            "row_id,label,dim1,dim2,approach,encoding\nr1,1,0.5,-1.0,seq,trad\n"
        );
    }
}
