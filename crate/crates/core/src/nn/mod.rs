//! Demographic representation networks.
//!
//! Two architectures, chosen by the visit ordering:
//!
//! * **NS**: the encoded row is split into two tokens (first half, second
//!   half; under `trad` these are exactly the age and gender slots), each
//!   projected to `hidden_dim` and passed through ReLU, then single-head
//!   self-attention, mean pooling, `Linear → ReLU` (the embedding) and a
//!   final `Linear` to the CCI estimate.
//! * **Seq**: a single-layer LSTM over a frame's valid steps, then
//!   `Linear → ReLU` (the embedding) and `Linear` per step.
//!
//! Both regress CCI with masked mean squared error.

pub mod gradcheck;
pub mod layers;
pub mod persist;
pub mod train;

use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seed;
use crate::sequencing::{Ordering, SequenceFrame};

pub use gradcheck::{grad_check, grad_check_mlp, numeric_gradient, GradCheckReport, Mlp};
pub use layers::{lstm_step, self_attention, Attention, AttentionCache, Linear, Lstm, LstmStepCache};
pub use persist::{cited_manifest, load_model, parse_model, save_model, write_model, write_model_cited};
pub use train::{train, Optimizer, TrainConfig, TrainData, TrainReport};

use layers::{relu, relu_backward};

pub const MODEL_VERSION: &str = "gdp-net-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "dims must be positive with input_dim >= 2, got {self:?}"
            )));
        }
        if self.embed_dim >= self.hidden_dim {
            return Err(Error::Config(format!(
                "embed_dim ({}) must be smaller than hidden_dim ({})",
                self.embed_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Width of the first (age-side) token of an NS row.
    pub fn split_point(&self) -> usize {
        self.input_dim / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsNet<T> {
    pub age_proj: Linear<T>,
    pub gender_proj: Linear<T>,
    pub attention: Attention<T>,
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqNet<T> {
    pub lstm: Lstm<T>,
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network<T> {
    Ns(NsNet<T>),
    Seq(SeqNet<T>),
}

/// Named parameter tensor visited in a fixed order.
pub struct ParamRef<'a, T> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: &'static str,
    pub values: &'a mut [T],
}

impl<T: Scalar> Network<T> {
    pub fn zeros(ordering: Ordering, dims: &ModelDims) -> Self {
        let h = dims.hidden_dim;
        match ordering {
            Ordering::Ns => {
                let s = dims.split_point();
                Network::Ns(NsNet {
                    age_proj: Linear::zeros(s, h),
                    gender_proj: Linear::zeros(dims.input_dim - s, h),
                    attention: Attention::zeros(h),
                    hidden: Linear::zeros(h, dims.embed_dim),
                    output: Linear::zeros(dims.embed_dim, 1),
                })
            }
            Ordering::Seq => Network::Seq(SeqNet {
                lstm: Lstm::zeros(dims.input_dim, h),
                hidden: Linear::zeros(h, dims.embed_dim),
                output: Linear::zeros(dims.embed_dim, 1),
            }),
        }
    }

    pub fn tensors(&self) -> Vec<ParamRef<'_, T>> {
        fn m<'a, T: Scalar>(name: &'static str, x: &'a Matrix<T>) -> ParamRef<'a, T> {
            ParamRef {
                name,
                rows: x.rows(),
                cols: x.cols(),
                values: x.as_slice(),
            }
        }
        fn v<'a, T>(name: &'static str, x: &'a [T]) -> ParamRef<'a, T> {
            ParamRef {
                name,
                rows: 1,
                cols: x.len(),
                values: x,
            }
        }
        match self {
            Network::Ns(n) => vec![
                m("age_proj.w", &n.age_proj.w),
                v("age_proj.b", &n.age_proj.b),
                m("gender_proj.w", &n.gender_proj.w),
                v("gender_proj.b", &n.gender_proj.b),
                m("attention.wq", &n.attention.wq),
                m("attention.wk", &n.attention.wk),
                m("attention.wv", &n.attention.wv),
                m("hidden.w", &n.hidden.w),
                v("hidden.b", &n.hidden.b),
                m("output.w", &n.output.w),
                v("output.b", &n.output.b),
            ],
            Network::Seq(n) => vec![
                m("lstm.w", &n.lstm.w),
                m("lstm.u", &n.lstm.u),
                v("lstm.b", &n.lstm.b),
                m("hidden.w", &n.hidden.w),
                v("hidden.b", &n.hidden.b),
                m("output.w", &n.output.w),
                v("output.b", &n.output.b),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn p<'a, T>(name: &'static str, values: &'a mut [T]) -> ParamMut<'a, T> {
            ParamMut { name, values }
        }
        match self {
            Network::Ns(n) => vec![
                p("age_proj.w", n.age_proj.w.as_mut_slice()),
                p("age_proj.b", &mut n.age_proj.b),
                p("gender_proj.w", n.gender_proj.w.as_mut_slice()),
                p("gender_proj.b", &mut n.gender_proj.b),
                p("attention.wq", n.attention.wq.as_mut_slice()),
                p("attention.wk", n.attention.wk.as_mut_slice()),
                p("attention.wv", n.attention.wv.as_mut_slice()),
                p("hidden.w", n.hidden.w.as_mut_slice()),
                p("hidden.b", &mut n.hidden.b),
                p("output.w", n.output.w.as_mut_slice()),
                p("output.b", &mut n.output.b),
            ],
            Network::Seq(n) => vec![
                p("lstm.w", n.lstm.w.as_mut_slice()),
                p("lstm.u", n.lstm.u.as_mut_slice()),
                p("lstm.b", &mut n.lstm.b),
                p("hidden.w", n.hidden.w.as_mut_slice()),
                p("hidden.b", &mut n.hidden.b),
                p("output.w", n.output.w.as_mut_slice()),
                p("output.b", &mut n.output.b),
            ],
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    /// Name of the tensor holding flat index `idx`.
    pub fn tensor_name_at(&self, idx: usize) -> &'static str {
        let mut off = 0;
        for t in self.tensors() {
            off += t.values.len();
            if idx < off {
                return t.name;
            }
        }
        "<out of range>"
    }

    /// Number of linear layers, counting the two token projections as the
    /// single input layer.
    pub fn linear_layer_count(&self) -> usize {
        3 - usize::from(matches!(self, Network::Seq(_)))
    }
}

/// One batch: NS rows with targets, or Seq frames.
#[derive(Debug, Clone)]
pub enum Batch<'a, T> {
    Rows(Vec<(&'a [T], T)>),
    Frames(Vec<&'a SequenceFrame<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdpModel<T> {
    pub ordering: Ordering,
    pub encoder_kind: EncoderKind,
    pub dims: ModelDims,
    pub seed: u64,
    pub version: String,
    pub net: Network<T>,
}

struct NsTrace<T> {
    xa: Vec<T>,
    xg: Vec<T>,
    pre_a: Vec<T>,
    pre_g: Vec<T>,
    att: AttentionCache<T>,
    pooled: Vec<T>,
    pre_e: Vec<T>,
    e: Vec<T>,
    y: T,
}

struct SeqTrace<T> {
    steps: Vec<LstmStepCache<T>>,
    pre_e: Vec<Vec<T>>,
    e: Vec<Vec<T>>,
    y: Vec<T>,
}

/// Weights uniform in `±1/√fan_in`, deterministic per seed.
pub fn init_model<T: Scalar>(
    ordering: Ordering,
    encoder_kind: EncoderKind,
    dims: ModelDims,
    seed: u64,
) -> Result<GdpModel<T>> {
    dims.validate()?;
    let mut rng = seed::rng(seed);
    let h = dims.hidden_dim;
    let net = match ordering {
        Ordering::Ns => {
            let s = dims.split_point();
            Network::Ns(NsNet {
                age_proj: Linear::init(s, h, &mut rng),
                gender_proj: Linear::init(dims.input_dim - s, h, &mut rng),
                attention: Attention::init(h, &mut rng),
                hidden: Linear::init(h, dims.embed_dim, &mut rng),
                output: Linear::init(dims.embed_dim, 1, &mut rng),
            })
        }
        Ordering::Seq => Network::Seq(SeqNet {
            lstm: Lstm::init(dims.input_dim, h, &mut rng),
            hidden: Linear::init(h, dims.embed_dim, &mut rng),
            output: Linear::init(dims.embed_dim, 1, &mut rng),
        }),
    };
    Ok(GdpModel {
        ordering,
        encoder_kind,
        dims,
        seed,
        version: MODEL_VERSION.to_string(),
        net,
    })
}

/// Number of leading valid steps; the mask must be a valid prefix followed
/// by padding.
fn valid_prefix(frame: &SequenceFrame<impl Scalar>) -> Result<usize> {
    let n = frame.valid_mask.iter().take_while(|&&v| v).count();
    if frame.valid_mask[n..].iter().any(|&v| v) {
        return Err(Error::Contract(
            "valid steps must precede padding within a frame".into(),
        ));
    }
    Ok(n)
}

impl<T: Scalar> GdpModel<T> {
    pub fn all_finite(&self) -> bool {
        self.net
            .tensors()
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    fn ns(&self) -> Result<&NsNet<T>> {
        match &self.net {
            Network::Ns(n) => Ok(n),
            Network::Seq(_) => Err(Error::Contract("operation needs an NS model".into())),
        }
    }

    fn seq(&self) -> Result<&SeqNet<T>> {
        match &self.net {
            Network::Seq(n) => Ok(n),
            Network::Ns(_) => Err(Error::Contract("operation needs a Seq model".into())),
        }
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.dims.input_dim {
            return Err(Error::Contract(format!(
                "input width {width} does not match model input_dim {}",
                self.dims.input_dim
            )));
        }
        Ok(())
    }

    fn ns_forward(&self, net: &NsNet<T>, x: &[T]) -> Result<NsTrace<T>> {
        self.check_width(x.len())?;
        let s = self.dims.split_point();
        let (xa, xg) = (x[..s].to_vec(), x[s..].to_vec());
        let pre_a = net.age_proj.forward(&xa);
        let pre_g = net.gender_proj.forward(&xg);
        let tokens = Matrix::from_rows(&[relu(&pre_a), relu(&pre_g)]);
        let att = net.attention.forward(&tokens);
        let m = T::of(att.out.rows() as f64);
        let pooled: Vec<T> = (0..att.out.cols())
            .map(|c| (0..att.out.rows()).map(|r| att.out[(r, c)]).sum::<T>() / m)
            .collect();
        let pre_e = net.hidden.forward(&pooled);
        let e = relu(&pre_e);
        let y = net.output.forward(&e)[0];
        Ok(NsTrace {
            xa,
            xg,
            pre_a,
            pre_g,
            att,
            pooled,
            pre_e,
            e,
            y,
        })
    }

    fn ns_backward(&self, net: &NsNet<T>, tr: &NsTrace<T>, dy: T, g: &mut NsNet<T>) {
        let de = net.output.backward(&tr.e, &[dy], &mut g.output);
        let dpre_e = relu_backward(&tr.pre_e, &de);
        let dpooled = net.hidden.backward(&tr.pooled, &dpre_e, &mut g.hidden);
        let m = tr.att.out.rows();
        let inv = T::one() / T::of(m as f64);
        let d_out = Matrix::from_rows(&vec![dpooled.iter().map(|&v| v * inv).collect::<Vec<T>>(); m]);
        let d_tokens = net.attention.backward(&tr.att, &d_out, &mut g.attention);
        let dpre_a = relu_backward(&tr.pre_a, d_tokens.row(0));
        net.age_proj.backward(&tr.xa, &dpre_a, &mut g.age_proj);
        let dpre_g = relu_backward(&tr.pre_g, d_tokens.row(1));
        net.gender_proj.backward(&tr.xg, &dpre_g, &mut g.gender_proj);
    }

    fn seq_forward(&self, net: &SeqNet<T>, frame: &SequenceFrame<T>) -> Result<SeqTrace<T>> {
        self.check_width(frame.dim())?;
        let n = valid_prefix(frame)?;
        let h_dim = self.dims.hidden_dim;
        let mut h = vec![T::zero(); h_dim];
        let mut c = vec![T::zero(); h_dim];
        let mut tr = SeqTrace {
            steps: Vec::with_capacity(n),
            pre_e: Vec::with_capacity(n),
            e: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        };
        for t in 0..n {
            let step = net.lstm.step(frame.steps.row(t), &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            let pre_e = net.hidden.forward(&step.h);
            let e = relu(&pre_e);
            tr.y.push(net.output.forward(&e)[0]);
            tr.pre_e.push(pre_e);
            tr.e.push(e);
            tr.steps.push(step);
        }
        Ok(tr)
    }

    fn seq_backward(&self, net: &SeqNet<T>, tr: &SeqTrace<T>, dy: &[T], g: &mut SeqNet<T>) {
        let h_dim = self.dims.hidden_dim;
        let mut dh_next = vec![T::zero(); h_dim];
        let mut dc_next = vec![T::zero(); h_dim];
        for t in (0..tr.steps.len()).rev() {
            let de = net.output.backward(&tr.e[t], &[dy[t]], &mut g.output);
            let dpre = relu_backward(&tr.pre_e[t], &de);
            let dh_out = net.hidden.backward(&tr.steps[t].h, &dpre, &mut g.hidden);
            let dh: Vec<T> = dh_out.iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (_, dh_prev, dc_prev) = net.lstm.step_backward(&tr.steps[t], &dh, &dc_next, &mut g.lstm);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    /// CCI estimates: one per row (NS) or one per valid step (Seq), in
    /// batch order.
    pub fn forward(&self, batch: &Batch<'_, T>) -> Result<Vec<T>> {
        match batch {
            Batch::Rows(rows) => {
                let net = self.ns()?;
                rows.iter().map(|(x, _)| self.ns_forward(net, x).map(|t| t.y)).collect()
            }
            Batch::Frames(frames) => {
                let net = self.seq()?;
                let mut out = Vec::new();
                for f in frames {
                    out.extend(self.seq_forward(net, f)?.y);
                }
                Ok(out)
            }
        }
    }

    /// Mean squared error over rows, or over valid steps for frames.
    pub fn loss(&self, batch: &Batch<'_, T>) -> Result<T> {
        Ok(self.loss_terms(batch)?.0)
    }

    /// Loss and the number of terms averaged.
    pub fn loss_terms(&self, batch: &Batch<'_, T>) -> Result<(T, usize)> {
        let (sum, n) = match batch {
            Batch::Rows(rows) => {
                let net = self.ns()?;
                let mut sum = T::zero();
                for (x, t) in rows {
                    let r = self.ns_forward(net, x)?.y - *t;
                    sum += r * r;
                }
                (sum, rows.len())
            }
            Batch::Frames(frames) => {
                let net = self.seq()?;
                let mut sum = T::zero();
                let mut n = 0;
                for f in frames {
                    let tr = self.seq_forward(net, f)?;
                    for (y, t) in tr.y.iter().zip(&f.targets) {
                        sum += (*y - *t) * (*y - *t);
                    }
                    n += tr.y.len();
                }
                (sum, n)
            }
        };
        if n == 0 {
            return Err(Error::Contract("batch has no loss terms".into()));
        }
        Ok((sum / T::of(n as f64), n))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &Batch<'_, T>) -> Result<(T, Network<T>)> {
        let mut grad = Network::zeros(self.ordering, &self.dims);
        let two = T::of(2.0);
        let (sum, n) = match (batch, &mut grad) {
            (Batch::Rows(rows), Network::Ns(g)) => {
                let net = self.ns()?;
                if rows.is_empty() {
                    return Err(Error::Contract("batch has no loss terms".into()));
                }
                let scale = two / T::of(rows.len() as f64);
                let mut sum = T::zero();
                for (x, t) in rows {
                    let tr = self.ns_forward(net, x)?;
                    let r = tr.y - *t;
                    sum += r * r;
                    self.ns_backward(net, &tr, r * scale, g);
                }
                (sum, rows.len())
            }
            (Batch::Frames(frames), Network::Seq(g)) => {
                let net = self.seq()?;
                let traces = frames
                    .iter()
                    .map(|f| self.seq_forward(net, f))
                    .collect::<Result<Vec<_>>>()?;
                let n: usize = traces.iter().map(|t| t.y.len()).sum();
                if n == 0 {
                    return Err(Error::Contract("batch has no loss terms".into()));
                }
                let scale = two / T::of(n as f64);
                let mut sum = T::zero();
                for (tr, f) in traces.iter().zip(frames) {
                    let dy: Vec<T> =
                        tr.y.iter()
                            .zip(&f.targets)
                            .map(|(&y, &t)| {
                                sum += (y - t) * (y - t);
                                (y - t) * scale
                            })
                            .collect();
                    self.seq_backward(net, tr, &dy, g);
                }
                (sum, n)
            }
            _ => {
                return Err(Error::Contract(format!(
                    "batch kind does not match {} model",
                    self.ordering.name()
                )))
            }
        };
        Ok((sum / T::of(n as f64), grad))
    }

    /// NS embedding: post-ReLU activations of the penultimate layer.
    pub fn embed_row(&self, x: &[T]) -> Result<Vec<T>> {
        let net = self.ns()?;
        Ok(self.ns_forward(net, x)?.e)
    }

    /// Seq embeddings at every valid step: `ReLU(hidden(h_t))`.
    pub fn embed_steps(&self, frame: &SequenceFrame<T>) -> Result<Vec<Vec<T>>> {
        let net = self.seq()?;
        Ok(self.seq_forward(net, frame)?.e)
    }

    /// Seq embedding at the last valid step.
    pub fn embed_frame(&self, frame: &SequenceFrame<T>) -> Result<Vec<T>> {
        self.embed_steps(frame)?
            .pop()
            .ok_or_else(|| Error::Contract("frame has no valid steps".into()))
    }
}

/// Input to [`extract_embedding`].
#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a, T> {
    Row(&'a [T]),
    Frame(&'a SequenceFrame<T>),
}

pub fn extract_embedding<T: Scalar>(model: &GdpModel<T>, input: EmbedInput<'_, T>) -> Result<Vec<T>> {
    match input {
        EmbedInput::Row(x) => model.embed_row(x),
        EmbedInput::Frame(f) => model.embed_frame(f),
    }
}

pub fn forward<T: Scalar>(model: &GdpModel<T>, batch: &Batch<'_, T>) -> Result<Vec<T>> {
    model.forward(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequencing::{frame_sequences, FrameScope};

    fn dims(input: usize) -> ModelDims {
        ModelDims {
            input_dim: input,
            hidden_dim: 6,
            embed_dim: 3,
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(2), 4).unwrap();
        let b: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(2), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.net.linear_layer_count(), 3);
        let s: GdpModel<f64> = init_model(Ordering::Seq, EncoderKind::Pe, dims(8), 4).unwrap();
        assert_eq!(s.net.linear_layer_count(), 2);
        assert!(matches!(s.net, Network::Seq(_)));
        let bad = init_model::<f64>(
            Ordering::Ns,
            EncoderKind::Trad,
            ModelDims {
                embed_dim: 6,
                ..dims(2)
            },
            0,
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_predicts_final_bias() {
        let mut m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(2), 1).unwrap();
        let n = m.net.n_params();
        m.net.set_flat(&vec![0.0; n]);
        if let Network::Ns(net) = &mut m.net {
            net.output.b[0] = 1.75;
        }
        let xs = [vec![4.3, 1.0], vec![0.0, 0.0]];
        let batch = Batch::Rows(xs.iter().map(|x| (x.as_slice(), 0.0)).collect());
        assert_eq!(m.forward(&batch).unwrap(), vec![1.75, 1.75]);
    }

    #[test]
    fn hand_computed_ns_chain() {
        // hidden_dim 2, embed_dim 1; uniform attention (zero Q/K) and
        // identity values, so the pooled vector is the token mean.
        let d = ModelDims {
            input_dim: 2,
            hidden_dim: 2,
            embed_dim: 1,
        };
        let mut m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, d, 0).unwrap();
        let Network::Ns(net) = &mut m.net else { unreachable!() };
        net.age_proj = Linear {
            w: Matrix::from_rows(&[vec![1.0], vec![2.0]]),
            b: vec![0.0, 0.5],
        };
        net.gender_proj = Linear {
            w: Matrix::from_rows(&[vec![3.0], vec![-1.0]]),
            b: vec![0.0, 1.0],
        };
        net.attention = Attention {
            wq: Matrix::zeros(2, 2),
            wk: Matrix::zeros(2, 2),
            wv: Matrix::identity(2),
        };
        net.hidden = Linear {
            w: Matrix::from_rows(&[vec![0.5, -0.25]]),
            b: vec![0.1],
        };
        net.output = Linear {
            w: Matrix::from_rows(&[vec![2.0]]),
            b: vec![-1.0],
        };
        // x = [1, 1]: age token relu([1, 2.5]) = [1, 2.5]; gender token relu([3, 0]) = [3, 0]
        // pooled = [2, 1.25]; hidden = 0.5·2 − 0.25·1.25 + 0.1 = 0.7875; y = 2·0.7875 − 1 = 0.575
        let x = [1.0, 1.0];
        let y = m.forward(&Batch::Rows(vec![(&x[..], 0.0)])).unwrap()[0];
        assert!((y - 0.575).abs() < 1e-15);
        assert_eq!(m.embed_row(&x).unwrap(), vec![0.7875]);
    }

    #[test]
    fn seq_loss_counts_valid_steps_only() {
        let m: GdpModel<f64> = init_model(Ordering::Seq, EncoderKind::Trad, dims(2), 2).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 * 0.5, 1.0]).collect();
        let frames = frame_sequences(&rows, &[0.0, 1.0, 2.0], &vec!["p".into(); 3], 120, FrameScope::Patient).unwrap();
        let (_, n) = m.loss_terms(&Batch::Frames(frames.iter().collect())).unwrap();
        assert_eq!(n, 3);
        assert_eq!(m.forward(&Batch::Frames(frames.iter().collect())).unwrap().len(), 3);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let m: GdpModel<f64> = init_model(Ordering::Ns, EncoderKind::Trad, dims(2), 2).unwrap();
        let x = [1.0, 2.0, 3.0];
        assert!(matches!(
            m.forward(&Batch::Rows(vec![(&x[..], 0.0)])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empty_frame_has_no_embedding() {
        let m: GdpModel<f64> = init_model(Ordering::Seq, EncoderKind::Trad, dims(2), 2).unwrap();
        let rows = vec![vec![0.5, 1.0]];
        let mut f = frame_sequences(&rows, &[1.0], &["p".into()], 4, FrameScope::Patient).unwrap();
        f[0].valid_mask[0] = false;
        assert!(matches!(m.embed_frame(&f[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let m: GdpModel<f32> = init_model(Ordering::Ns, EncoderKind::Trad, dims(2), 2).unwrap();
        let x = [1.0f32, 0.0];
        let e = m.embed_row(&x).unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.iter().all(|v| v.is_finite()));
    }
}
