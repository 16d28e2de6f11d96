//! Layers with hand-written backward passes.

use rand::Rng as _;

use crate::linalg::{dot, Matrix};
use crate::scalar::{sigmoid, Scalar};
use crate::seed::Rng;

fn uniform_matrix<T: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn uniform_vec<T: Scalar>(n: usize, bound: f64, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect()
}

pub(crate) fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

/// `dy ⊙ 1[pre > 0]`
pub(crate) fn relu_backward<T: Scalar>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &d)| if p > T::zero() { d } else { T::zero() })
        .collect()
}

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: vec![T::zero(); output],
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            w: uniform_matrix(output, input, bound, rng),
            b: uniform_vec(output, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.w.matvec(x);
        for (yi, &bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        grad.w.add_outer(dy, x);
        for (gb, &d) in grad.b.iter_mut().zip(dy) {
            *gb += d;
        }
        self.w.matvec_t(dy)
    }
}

/// Single-head scaled dot-product self-attention with learned `d × d`
/// projections and no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub x: Matrix<T>,
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Row-stochastic attention weights, `m × m`.
    pub weights: Matrix<T>,
    pub out: Matrix<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
        }
    }

    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (d.max(1) as f64).sqrt();
        Self {
            wq: uniform_matrix(d, d, bound, rng),
            wk: uniform_matrix(d, d, bound, rng),
            wv: uniform_matrix(d, d, bound, rng),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            wq: Matrix::identity(d),
            wk: Matrix::identity(d),
            wv: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    /// `softmax(Q Kᵀ / √d) V` with `Q = X Wqᵀ`, `K = X Wkᵀ`, `V = X Wvᵀ`.
    pub fn forward(&self, x: &Matrix<T>) -> AttentionCache<T> {
        let q = x.matmul(&self.wq.transpose());
        let k = x.matmul(&self.wk.transpose());
        let v = x.matmul(&self.wv.transpose());
        let m = x.rows();
        let scale = T::one() / T::of(self.dim() as f64).sqrt();
        let mut weights = Matrix::zeros(m, m);
        for i in 0..m {
            let scores: Vec<T> = (0..m).map(|j| dot(q.row(i), k.row(j)) * scale).collect();
            let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            for (j, e) in exps.into_iter().enumerate() {
                weights[(i, j)] = e / z;
            }
        }
        let out = weights.matmul(&v);
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            weights,
            out,
        }
    }

    /// Accumulates projection gradients; returns `dL/dX`.
    pub fn backward(&self, cache: &AttentionCache<T>, d_out: &Matrix<T>, grad: &mut Attention<T>) -> Matrix<T> {
        let m = cache.x.rows();
        let scale = T::one() / T::of(self.dim() as f64).sqrt();
        let a = &cache.weights;
        let d_a = d_out.matmul(&cache.v.transpose());
        let d_v = a.transpose().matmul(d_out);
        let mut d_s = Matrix::zeros(m, m);
        for i in 0..m {
            let row_dot: T = (0..m).map(|j| a[(i, j)] * d_a[(i, j)]).sum();
            for j in 0..m {
                d_s[(i, j)] = a[(i, j)] * (d_a[(i, j)] - row_dot) * scale;
            }
        }
        let d_q = d_s.matmul(&cache.k);
        let d_k = d_s.transpose().matmul(&cache.q);

        let acc = |g: &mut Matrix<T>, d: &Matrix<T>| {
            let gw = d.transpose().matmul(&cache.x);
            for (a, b) in g.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *a += *b;
            }
        };
        acc(&mut grad.wq, &d_q);
        acc(&mut grad.wk, &d_k);
        acc(&mut grad.wv, &d_v);

        let mut d_x = d_q.matmul(&self.wq);
        for (t, s) in [(&d_k, &self.wk), (&d_v, &self.wv)] {
            let part = t.matmul(s);
            for (a, b) in d_x.as_mut_slice().iter_mut().zip(part.as_slice()) {
                *a += *b;
            }
        }
        d_x
    }
}

/// Stand-alone self-attention over `tokens` (`m × d`).
pub fn self_attention<T: Scalar>(tokens: &Matrix<T>, params: &Attention<T>) -> Matrix<T> {
    params.forward(tokens).out
}

/// LSTM cell parameters; gate blocks are stacked `[input, forget, candidate,
/// output]`, each `h` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub w: Matrix<T>,
    pub u: Matrix<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

impl<T: Scalar> Lstm<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![T::zero(); 4 * hidden],
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w: uniform_matrix(4 * hidden, input, bound, rng),
            u: uniform_matrix(4 * hidden, hidden, bound, rng),
            b: uniform_vec(4 * hidden, bound, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn step(&self, x: &[T], h: &[T], c: &[T]) -> LstmStepCache<T> {
        let n = self.hidden_dim();
        let wx = self.w.matvec(x);
        let uh = self.u.matvec(h);
        let z: Vec<T> = (0..4 * n).map(|k| wx[k] + uh[k] + self.b[k]).collect();
        let i: Vec<T> = z[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<T> = z[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<T> = z[2 * n..3 * n].iter().map(|&v| v.tanh()).collect();
        let o: Vec<T> = z[3 * n..].iter().map(|&v| sigmoid(v)).collect();
        let c_new: Vec<T> = (0..n).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<T> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<T> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
        LstmStepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            i,
            f,
            g,
            o,
            c: c_new,
            tanh_c,
            h: h_new,
        }
    }

    /// One step of backpropagation through time. `dh` and `dc` are the
    /// total gradients arriving at this step's outputs; returns gradients for
    /// `(x, h_prev, c_prev)`.
    pub fn step_backward(
        &self,
        s: &LstmStepCache<T>,
        dh: &[T],
        dc_next: &[T],
        grad: &mut Lstm<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = self.hidden_dim();
        let one = T::one();
        let mut dz = vec![T::zero(); 4 * n];
        let mut dc_prev = vec![T::zero(); n];
        for k in 0..n {
            let d_o = dh[k] * s.tanh_c[k];
            let dc = dc_next[k] + dh[k] * s.o[k] * (one - s.tanh_c[k] * s.tanh_c[k]);
            let di = dc * s.g[k];
            let dg = dc * s.i[k];
            let df = dc * s.c_prev[k];
            dc_prev[k] = dc * s.f[k];
            dz[k] = di * s.i[k] * (one - s.i[k]);
            dz[n + k] = df * s.f[k] * (one - s.f[k]);
            dz[2 * n + k] = dg * (one - s.g[k] * s.g[k]);
            dz[3 * n + k] = d_o * s.o[k] * (one - s.o[k]);
        }
        grad.w.add_outer(&dz, &s.x);
        grad.u.add_outer(&dz, &s.h_prev);
        for (gb, &d) in grad.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        (self.w.matvec_t(&dz), self.u.matvec_t(&dz), dc_prev)
    }
}

/// `(h′, c′)` after one LSTM step.
pub fn lstm_step<T: Scalar>(x: &[T], h: &[T], c: &[T], params: &Lstm<T>) -> (Vec<T>, Vec<T>) {
    let s = params.step(x, h, c);
    (s.h, s.c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_attention_is_value_projection() {
        let mut rng = crate::seed::rng(1);
        let att = Attention::<f64>::init(3, &mut rng);
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 0.7]]);
        let out = self_attention(&x, &att);
        assert_eq!(out.row(0), att.wv.matvec(x.row(0)).as_slice());
    }

    #[test]
    fn identical_tokens_with_identity_projections() {
        let att = Attention::<f64>::identity(2);
        let x = Matrix::from_rows(&[vec![0.5, 2.0], vec![0.5, 2.0]]);
        let out = self_attention(&x, &att);
        for r in 0..2 {
            assert_eq!(out.row(r), &[0.5, 2.0]);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = crate::seed::rng(9);
        let att = Attention::<f64>::init(4, &mut rng);
        let x = Matrix::from_rows(&[
            vec![1.0, 0.2, -0.3, 0.9],
            vec![-0.5, 0.1, 2.0, 0.0],
            vec![0.3, 0.3, 0.3, -1.0],
        ]);
        let cache = att.forward(&x);
        for i in 0..3 {
            let s: f64 = cache.weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_zero_everything() {
        let p = Lstm::<f64>::zeros(1, 1);
        let (h, c) = lstm_step(&[0.0], &[0.0], &[0.0], &p);
        assert_eq!((h[0], c[0]), (0.0, 0.0));
    }

    #[test]
    fn lstm_zero_weights_unit_cell() {
        let p = Lstm::<f64>::zeros(1, 1);
        let (h, c) = lstm_step(&[0.0], &[0.0], &[1.0], &p);
        assert_eq!(c[0], 0.5);
        // 0.5·tanh(0.5) = 0.23105857863000487...
        assert!((h[0] - 0.231_058_578_630_004_87).abs() < 1e-15);
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let mut p = Lstm::<f64>::zeros(1, 1);
        p.b = vec![-30.0, 30.0, 0.0, 0.0];
        let (_, c) = lstm_step(&[0.7], &[0.2], &[1.3], &p);
        assert!((c[0] - 1.3).abs() < 1e-9);
    }
}
