//! Central-difference gradient verification.

use super::layers::{relu, relu_backward, Linear};
use super::{Batch, GdpModel};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub worst_tensor: String,
    pub n_params: usize,
}

/// Below this magnitude both gradients are treated as zero.
const ABS_FLOOR: f64 = 1e-8;

fn rel_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR {
        (a - n).abs() / ABS_FLOOR
    } else {
        (a - n).abs() / scale
    }
}

/// `(f(θ + ε e_k) − f(θ − ε e_k)) / 2ε` for every coordinate `k`.
pub fn numeric_gradient(theta: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        p[k] = theta[k] + eps;
        let up = f(&p)?;
        p[k] = theta[k] - eps;
        let down = f(&p)?;
        p[k] = theta[k];
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| (rel_error(a, n), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Compare backpropagated gradients of `model` on `batch` with central
/// differences.
pub fn grad_check(model: &GdpModel<f64>, batch: &Batch<'_, f64>, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config("eps must be > 0".into()));
    }
    let (_, grad) = model.loss_and_grad(batch)?;
    let analytic = grad.flat();
    let theta = model.net.flat();
    let mut probe = model.clone();
    let numeric = numeric_gradient(&theta, eps, |p| {
        probe.net.set_flat(p);
        probe.loss(batch)
    })?;
    let (max_rel_error, worst_index) = compare(&analytic, &numeric);
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        worst_tensor: model.net.tensor_name_at(worst_index).to_string(),
        n_params: theta.len(),
    })
}

/// Stack of linear layers with ReLU between them, regressed with MSE. With a
/// single layer it is a plain linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear<f64>>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`.
    pub fn init(widths: &[usize], seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self {
            layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], &mut rng)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(&a);
            a = if i == last { z } else { relu(&z) };
        }
        a
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.as_slice().iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.as_slice().len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    /// Mean over rows of the squared error summed over outputs.
    pub fn loss(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
        let s: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                self.forward(xi)
                    .iter()
                    .zip(yi)
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum::<f64>()
            })
            .sum();
        s / x.len() as f64
    }

    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grads: Vec<Linear<f64>> = self
            .layers
            .iter()
            .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
            .collect();
        let scale = 2.0 / x.len() as f64;
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let mut acts = vec![xi.clone()];
            let mut pres = Vec::new();
            for (i, l) in self.layers.iter().enumerate() {
                let z = l.forward(acts.last().unwrap());
                acts.push(if i == last { z.clone() } else { relu(&z) });
                pres.push(z);
            }
            let out = acts.last().unwrap();
            let mut d: Vec<f64> = out.iter().zip(yi).map(|(p, t)| (p - t) * scale).collect();
            total += out.iter().zip(yi).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
            for i in (0..self.layers.len()).rev() {
                if i != last {
                    d = relu_backward(&pres[i], &d);
                }
                d = self.layers[i].backward(&acts[i], &d, &mut grads[i]);
            }
        }
        let flat = grads
            .iter()
            .flat_map(|l| l.w.as_slice().iter().chain(&l.b).copied())
            .collect();
        (total / x.len() as f64, flat)
    }
}

pub fn grad_check_mlp(mlp: &Mlp, x: &[Vec<f64>], y: &[Vec<f64>], eps: f64) -> Result<GradCheckReport> {
    let (_, analytic) = mlp.loss_and_grad(x, y);
    let theta = mlp.flat();
    let mut probe = mlp.clone();
    let numeric = numeric_gradient(&theta, eps, |p| {
        probe.set_flat(p);
        Ok(probe.loss(x, y))
    })?;
    let (max_rel_error, worst_index) = compare(&analytic, &numeric);
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        worst_tensor: "mlp".into(),
        n_params: theta.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], 1e-5, |p| Ok(p[0] * p[0] + 3.0 * p[1])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn linear_model_passes() {
        let mlp = Mlp::init(&[3, 2], 5);
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.05, 0.3])
            .collect();
        let y: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64)]).collect();
        let r = grad_check_mlp(&mlp, &x, &y, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.n_params, 8);
    }
}
