//! Minibatch Adam training with global-norm gradient clipping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Batch, GdpModel, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::sequencing::SequenceFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm cap; `0` disables clipping.
    pub clip_norm: f64,
    /// Rows per batch (NS) or frames per batch (Seq).
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Training examples for one model.
#[derive(Debug, Clone)]
pub enum TrainData<T> {
    Rows { x: Vec<Vec<T>>, y: Vec<T> },
    Frames(Vec<SequenceFrame<T>>),
}

impl<T: Scalar> TrainData<T> {
    /// Number of batchable units (rows or frames).
    pub fn len(&self) -> usize {
        match self {
            TrainData::Rows { x, .. } => x.len(),
            TrainData::Frames(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<'_, T> {
        match self {
            TrainData::Rows { x, y } => Batch::Rows(idx.iter().map(|&i| (x[i].as_slice(), y[i])).collect()),
            TrainData::Frames(f) => Batch::Frames(idx.iter().map(|&i| &f[i]).collect()),
        }
    }

    pub fn full(&self) -> Batch<'_, T> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    fn check(&self) -> Result<()> {
        if let TrainData::Rows { x, y } = self {
            if x.len() != y.len() {
                return Err(Error::Contract(format!("{} rows but {} targets", x.len(), y.len())));
            }
        }
        if self.is_empty() {
            return Err(Error::Contract("no training examples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-data loss before the first update.
    pub initial_loss: f64,
    /// Full-data loss after each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

fn finite_or_diverge<T: Scalar>(loss: T, epoch: usize) -> Result<f64> {
    let l = loss.as_f64();
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::Divergence { epoch, loss: l })
    }
}

/// Train a copy of `model`. Epoch `e` shuffles batches with
/// `rng_stream(cfg.seed, e)`, so runs are reproducible.
pub fn train<T: Scalar>(
    model: &GdpModel<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig,
) -> Result<(GdpModel<T>, TrainReport)> {
    cfg.validate()?;
    data.check()?;
    let mut model = model.clone();
    let initial_loss = finite_or_diverge(model.loss(&data.full())?, 0)?;
    let n_params = model.net.n_params();
    let mut adam = Adam {
        m: vec![T::zero(); n_params],
        v: vec![T::zero(); n_params],
        t: 0,
    };
    let lr = T::of(cfg.learning_rate);
    let (b1, b2, eps) = (T::of(cfg.beta1), T::of(cfg.beta2), T::of(cfg.epsilon));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng_stream(cfg.seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk);
            let (loss, grad) = model.loss_and_grad(&batch)?;
            finite_or_diverge(loss, epoch)?;
            let mut g = grad.flat();
            clip(&mut g, cfg.clip_norm);
            let mut p = model.net.flat();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (pi, gi) in p.iter_mut().zip(&g) {
                        *pi -= lr * *gi;
                    }
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let c1 = T::one() - b1.powi(adam.t);
                    let c2 = T::one() - b2.powi(adam.t);
                    for k in 0..n_params {
                        adam.m[k] = b1 * adam.m[k] + (T::one() - b1) * g[k];
                        adam.v[k] = b2 * adam.v[k] + (T::one() - b2) * g[k] * g[k];
                        let m_hat = adam.m[k] / c1;
                        let v_hat = adam.v[k] / c2;
                        p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            model.net.set_flat(&p);
            steps += 1;
        }
        history.push(finite_or_diverge(model.loss(&data.full())?, epoch)?);
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            loss_history: history,
            steps,
        },
    ))
}

/// Scale `g` so its L2 norm is at most `max_norm`.
pub fn clip<T: Scalar>(g: &mut [T], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for v in g.iter_mut() {
            *v *= s;
        }
    }
}

/// Gradient as a network-shaped value, for callers that want named tensors.
pub fn gradient<T: Scalar>(model: &GdpModel<T>, batch: &Batch<'_, T>) -> Result<Network<T>> {
    Ok(model.loss_and_grad(batch)?.1)
}
