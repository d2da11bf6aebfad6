//! Fully connected ReLU network with a linear skip connection.
//!
//! ```text
//! out = b + x·α + h_L·Γ,    h_l = relu(h_{l-1} W_lᵀ + b_l),  h_0 = x
//! ```
//!
//! With no hidden layers the network is the linear model `b + x·α`. The head
//! is the identity for regression and the logistic function for propensity
//! scores (the network then outputs the logit and the loss is binary
//! cross-entropy). All parameters live in one flat vector so the optimizer
//! and the finite-difference checker can treat them uniformly.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::logistic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl Head {
    pub fn loss(self) -> LossKind {
        match self {
            Head::Linear => LossKind::SquaredError,
            Head::Logistic => LossKind::CrossEntropy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Span {
    weights: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub head: Head,
    pub params: Vec<f64>,
    layers: Vec<Span>,
    head_offset: usize,
    skip_offset: usize,
    bias_offset: usize,
}

/// Versioned JSON envelope for parameter dumps.
#[derive(Serialize, Deserialize)]
struct Dump<'a> {
    format: String,
    version: u32,
    network: std::borrow::Cow<'a, Mlp>,
}

pub const DUMP_FORMAT: &str = "naipw-mlp";
pub const DUMP_VERSION: u32 = 1;

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(input_dim: usize, widths: &[usize], head: Head) -> Self {
        assert!(input_dim >= 1 && widths.iter().all(|&w| w >= 1), "layer widths must be positive");
        let mut offset = 0;
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &w in widths {
            layers.push(Span { weights: offset, bias: offset + w * fan_in, rows: w, cols: fan_in });
            offset += w * fan_in + w;
            fan_in = w;
        }
        let head_len = if widths.is_empty() { 0 } else { fan_in };
        let head_offset = offset;
        let skip_offset = head_offset + head_len;
        let bias_offset = skip_offset + input_dim;
        Self {
            input_dim,
            widths: widths.to_vec(),
            head,
            params: vec![0.0; bias_offset + 1],
            layers,
            head_offset,
            skip_offset,
            bias_offset,
        }
    }

    /// He-style uniform initialization `U(-√(6/fan_in), √(6/fan_in))` on
    /// every weight; biases start at zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, widths: &[usize], head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, widths, head);
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in params {
                *p = rng.random_range(-bound..bound);
            }
        };
        for s in net.layers.clone() {
            fill(&mut net.params[s.weights..s.weights + s.rows * s.cols], s.cols);
        }
        let last = *widths.last().unwrap_or(&0);
        if last > 0 {
            let off = net.head_offset;
            fill(&mut net.params[off..off + last], last);
        }
        let off = net.skip_offset;
        fill(&mut net.params[off..off + input_dim], input_dim);
        net
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Whether parameter `k` is a connection weight (penalized by L1).
    pub fn is_weight(&self, k: usize) -> bool {
        if k >= self.head_offset {
            return k < self.bias_offset;
        }
        self.layers.iter().any(|s| k >= s.weights && k < s.bias)
    }

    /// Sum of absolute connection weights.
    pub fn l1_norm(&self) -> f64 {
        (0..self.params.len()).filter(|&k| self.is_weight(k)).map(|k| self.params[k].abs()).sum()
    }

    /// Linear skip weights, one per input column.
    pub fn skip_weights(&self) -> &[f64] {
        &self.params[self.skip_offset..self.bias_offset]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.bias_offset]
    }

    /// Weights from input column `j` into the first hidden layer plus the skip weight.
    pub fn zero_input(&mut self, j: usize) {
        assert!(j < self.input_dim);
        if let Some(s) = self.layers.first().copied() {
            for r in 0..s.rows {
                self.params[s.weights + r * s.cols + j] = 0.0;
            }
        }
        self.params[self.skip_offset + j] = 0.0;
    }

    fn layer(&self, s: Span) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = ArrayView2::from_shape((s.rows, s.cols), &self.params[s.weights..s.weights + s.rows * s.cols])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[s.bias..s.bias + s.rows]);
        (w, b)
    }

    /// Hidden activations `h_1..h_L` and the raw output (logit for logistic heads).
    fn forward(&self, x: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        assert_eq!(x.ncols(), self.input_dim, "input width mismatch");
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for &s in &self.layers {
            let (w, b) = self.layer(s);
            let input = acts.last().map(|h| h.view()).unwrap_or(x);
            let mut z = input.dot(&w.t());
            z += &b;
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z);
        }
        let skip = ArrayView1::from(self.skip_weights());
        let mut out = x.dot(&skip);
        out += self.output_bias();
        if let Some(h) = acts.last() {
            let head = ArrayView1::from(&self.params[self.head_offset..self.skip_offset]);
            out += &h.dot(&head);
        }
        (acts, out)
    }

    /// Predictions on the response scale.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let (_, out) = self.forward(x);
        match self.head {
            Head::Linear => out.to_vec(),
            Head::Logistic => out.iter().map(|&z| logistic(z)).collect(),
        }
    }

    /// Mean data loss plus `l1 · Σ|w|`, and its (sub)gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, target: &[f64], l1: f64) -> (f64, Vec<f64>) {
        let bsz = x.nrows();
        assert_eq!(target.len(), bsz);
        let (acts, out) = self.forward(x);
        let scale = 1.0 / bsz as f64;
        let (data_loss, d_out) = data_loss(self.head.loss(), out.view(), target, scale);

        let mut grad = vec![0.0; self.params.len()];
        // Output bias, skip and head.
        grad[self.bias_offset] = d_out.sum();
        let g_skip = x.t().dot(&d_out);
        grad[self.skip_offset..self.bias_offset].copy_from_slice(g_skip.as_slice().expect("contiguous"));

        if let Some(h_last) = acts.last() {
            let g_head = h_last.t().dot(&d_out);
            grad[self.head_offset..self.skip_offset].copy_from_slice(g_head.as_slice().expect("contiguous"));
            let head = ArrayView1::from(&self.params[self.head_offset..self.skip_offset]);
            // δ_L = (d_out ⊗ Γ) ⊙ relu'(z_L)
            let mut delta = d_out.view().insert_axis(Axis(1)).dot(&head.insert_axis(Axis(0)));
            delta.zip_mut_with(h_last, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            for l in (0..self.layers.len()).rev() {
                let s = self.layers[l];
                let input = if l == 0 { x } else { acts[l - 1].view() };
                {
                    let gw = ArrayViewMut2::from_shape(
                        (s.rows, s.cols),
                        &mut grad[s.weights..s.weights + s.rows * s.cols],
                    )
                    .expect("layer shape");
                    let mut gw = gw;
                    general_mat_mul(1.0, &delta.t(), &input, 0.0, &mut gw);
                }
                let gb = delta.sum_axis(Axis(0));
                grad[s.bias..s.bias + s.rows].copy_from_slice(gb.as_slice().expect("contiguous"));
                if l > 0 {
                    let (w, _) = self.layer(s);
                    let mut next = delta.dot(&w);
                    next.zip_mut_with(&acts[l - 1], |d, &h| {
                        if h <= 0.0 {
                            *d = 0.0
                        }
                    });
                    delta = next;
                }
            }
        }

        let mut penalty = 0.0;
        if l1 > 0.0 {
            for (k, g) in grad.iter_mut().enumerate() {
                if self.is_weight(k) {
                    let w = self.params[k];
                    penalty += w.abs();
                    *g += l1 * sign(w);
                }
            }
        }
        (data_loss + l1 * penalty, grad)
    }

    /// Loss only; used by the finite-difference checker.
    pub fn loss(&self, x: ArrayView2<f64>, target: &[f64], l1: f64) -> f64 {
        let (_, out) = self.forward(x);
        let (data, _) = data_loss(self.head.loss(), out.view(), target, 1.0 / x.nrows() as f64);
        data + l1 * self.l1_norm()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(&Dump {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            network: std::borrow::Cow::Borrowed(self),
        })
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        let dump: Dump<'static> = serde_json::from_str(s)?;
        if dump.format != DUMP_FORMAT || dump.version != DUMP_VERSION {
            return Err(crate::Error::Data(format!(
                "unsupported parameter dump {} v{}",
                dump.format, dump.version
            )));
        }
        Ok(dump.network.into_owned())
    }
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean loss and `∂loss/∂out` (already multiplied by `scale = 1/batch`).
fn data_loss(kind: LossKind, out: ArrayView1<f64>, target: &[f64], scale: f64) -> (f64, Array1<f64>) {
    let mut loss = 0.0;
    let d = match kind {
        LossKind::SquaredError => Array1::from_iter(out.iter().zip(target).map(|(&o, &t)| {
            let r = o - t;
            loss += r * r;
            2.0 * r * scale
        })),
        LossKind::CrossEntropy => Array1::from_iter(out.iter().zip(target).map(|(&z, &t)| {
            // -[t log σ(z) + (1-t) log(1-σ(z))] = softplus(z) - t·z
            loss += softplus(z) - t * z;
            (logistic(z) - t) * scale
        })),
    };
    (loss * scale, d)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares back-propagated gradients with central differences of step
/// `step`. Connection weights within `step` of zero are skipped when
/// `l1 > 0` because the penalty has a kink there. Freshly initialized
/// networks have zero biases, which can leave a hidden unit's input at
/// exactly zero (a ReLU kink); perturb the parameters before checking.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(net: &Mlp, x: ArrayView2<f64>, target: &[f64], l1: f64, step: f64) -> GradCheck {
    let (_, analytic) = net.loss_and_grad(x, target, l1);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for k in 0..net.params.len() {
        let w = net.params[k];
        if l1 > 0.0 && net.is_weight(k) && w.abs() <= step {
            skipped += 1;
            continue;
        }
        probe.params[k] = w + step;
        let up = probe.loss(x, target, l1);
        probe.params[k] = w - step;
        let down = probe.loss(x, target, l1);
        probe.params[k] = w;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
        checked += 1;
    }
    GradCheck { max_rel_error: worst, checked, skipped }
}
