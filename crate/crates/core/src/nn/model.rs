use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Rnn,
    Dnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Dnn, ModelKind::Rnn, ModelKind::Lstm];

    pub(crate) fn code(self) -> u8 {
        match self {
            ModelKind::Lstm => 0,
            ModelKind::Rnn => 1,
            ModelKind::Dnn => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Lstm),
            1 => Some(ModelKind::Rnn),
            2 => Some(ModelKind::Dnn),
            _ => None,
        }
    }

    /// Width of the pre-activation vector of the hidden layer.
    fn gate_width(self, hidden: usize) -> usize {
        match self {
            ModelKind::Lstm => 4 * hidden,
            ModelKind::Rnn | ModelKind::Dnn => hidden,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::Rnn => "RNN",
            ModelKind::Dnn => "DNN",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "rnn" => Ok(ModelKind::Rnn),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// A named, row-major block of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Weights of a policy network.
///
/// Tensor order is fixed per kind:
/// - LSTM: `w_input` (D x 4H), `w_recurrent` (H x 4H), `bias` (4H), `w_out` (H x A), `b_out` (A).
///   Gate blocks within the 4H axis are ordered input, forget, cell, output.
/// - RNN: `w_input` (D x H), `w_recurrent` (H x H), `bias` (H), `w_out`, `b_out`.
/// - DNN: `w_input` (D x H), `bias` (H), `w_out`, `b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_actions: usize,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// All-zero parameters with the layout of `kind`.
    pub fn zeros(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        n_actions: usize,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || n_actions == 0 {
            return Err(Error::InvalidDimensions(format!(
                "D={input_dim}, H={hidden_dim}, A={n_actions}; all must be >= 1"
            )));
        }
        let g = kind.gate_width(hidden_dim);
        let mut tensors = vec![Tensor::zeros("w_input", &[input_dim, g])];
        if kind != ModelKind::Dnn {
            tensors.push(Tensor::zeros("w_recurrent", &[hidden_dim, g]));
        }
        tensors.push(Tensor::zeros("bias", &[g]));
        tensors.push(Tensor::zeros("w_out", &[hidden_dim, n_actions]));
        tensors.push(Tensor::zeros("b_out", &[n_actions]));
        Ok(ModelParams {
            kind,
            input_dim,
            hidden_dim,
            n_actions,
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            n_actions: self.n_actions,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, &t.shape))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Flat view over every parameter, in tensor order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.values.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.values.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| *v == 0.0)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.iter_mut() {
            *v *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_layout(&self, other: &ModelParams) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch("<tensor count>".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape != b.shape || a.name != b.name {
                return Err(Error::ShapeMismatch(a.name.clone()));
            }
        }
        Ok(())
    }

    /// Checks tensor names and shapes against (kind, D, H, A) and that all values are finite.
    pub fn validate(&self) -> Result<()> {
        let expected =
            ModelParams::zeros(self.kind, self.input_dim, self.hidden_dim, self.n_actions)?;
        self.check_same_layout(&expected)?;
        for t in &self.tensors {
            if t.values.len() != t.shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(t.name.clone()));
            }
            if !t.values.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{}` has non-finite values",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn parts(&self) -> Parts<'_> {
        let t = &self.tensors;
        match self.kind {
            ModelKind::Dnn => Parts {
                w_input: &t[0].values,
                w_recurrent: &[],
                bias: &t[1].values,
                w_out: &t[2].values,
                b_out: &t[3].values,
            },
            _ => Parts {
                w_input: &t[0].values,
                w_recurrent: &t[1].values,
                bias: &t[2].values,
                w_out: &t[3].values,
                b_out: &t[4].values,
            },
        }
    }

    pub(crate) fn parts_mut(&mut self) -> PartsMut<'_> {
        let kind = self.kind;
        let mut it = self.tensors.iter_mut();
        let w_input = &mut it.next().unwrap().values;
        let w_recurrent = if kind == ModelKind::Dnn {
            None
        } else {
            Some(&mut it.next().unwrap().values)
        };
        let bias = &mut it.next().unwrap().values;
        let w_out = &mut it.next().unwrap().values;
        let b_out = &mut it.next().unwrap().values;
        PartsMut {
            w_input,
            w_recurrent,
            bias,
            w_out,
            b_out,
        }
    }
}

pub(crate) struct Parts<'a> {
    pub w_input: &'a [f64],
    pub w_recurrent: &'a [f64],
    pub bias: &'a [f64],
    pub w_out: &'a [f64],
    pub b_out: &'a [f64],
}

pub(crate) struct PartsMut<'a> {
    pub w_input: &'a mut Vec<f64>,
    pub w_recurrent: Option<&'a mut Vec<f64>>,
    pub bias: &'a mut Vec<f64>,
    pub w_out: &'a mut Vec<f64>,
    pub b_out: &'a mut Vec<f64>,
}

/// Recurrent state carried between steps. Empty for the DNN.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl ModelState {
    /// Zero state at the start of a dialog.
    pub fn initial(params: &ModelParams) -> Self {
        let h = params.hidden_dim;
        match params.kind {
            ModelKind::Lstm => ModelState {
                h: vec![0.0; h],
                c: vec![0.0; h],
            },
            ModelKind::Rnn => ModelState {
                h: vec![0.0; h],
                c: Vec::new(),
            },
            ModelKind::Dnn => ModelState::default(),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        let (eh, ec) = match params.kind {
            ModelKind::Lstm => (params.hidden_dim, params.hidden_dim),
            ModelKind::Rnn => (params.hidden_dim, 0),
            ModelKind::Dnn => (0, 0),
        };
        if self.h.len() != eh {
            return Err(Error::DimensionMismatch {
                what: "hidden state",
                expected: eh,
                got: self.h.len(),
            });
        }
        if self.c.len() != ec {
            return Err(Error::DimensionMismatch {
                what: "cell state",
                expected: ec,
                got: self.c.len(),
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights from a seeded ChaCha stream; every bias is zero.
pub fn init_model(
    kind: ModelKind,
    input_dim: usize,
    hidden_dim: usize,
    n_actions: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(kind, input_dim, hidden_dim, n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors.iter_mut() {
        if t.shape.len() != 2 {
            continue;
        }
        let limit = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
        for v in t.values.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    Ok(params)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// out += x * W for row-major W (len(x) x len(out)); zero inputs are skipped.
#[inline]
pub(crate) fn accumulate_vec_mat(out: &mut [f64], x: &[f64], w: &[f64]) {
    let cols = out.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// Per-step intermediate values kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-nonlinearity gate values (LSTM: i, f, g, o; RNN/DNN: h).
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn step_cached(
    params: &ModelParams,
    state: &ModelState,
    x: &[f64],
) -> Result<(StepCache, Vec<f64>)> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch {
            what: "feature vector",
            expected: params.input_dim,
            got: x.len(),
        });
    }
    state.check(params)?;
    let p = params.parts();
    let hd = params.hidden_dim;
    let mut a = p.bias.to_vec();
    accumulate_vec_mat(&mut a, x, p.w_input);
    if params.kind != ModelKind::Dnn {
        accumulate_vec_mat(&mut a, &state.h, p.w_recurrent);
    }
    let (gates, c, h) = match params.kind {
        ModelKind::Lstm => {
            let mut gates = a;
            for (k, v) in gates.iter_mut().enumerate() {
                *v = if (2 * hd..3 * hd).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
            let mut c = vec![0.0; hd];
            let mut h = vec![0.0; hd];
            for j in 0..hd {
                let (i, f, g, o) = (
                    gates[j],
                    gates[hd + j],
                    gates[2 * hd + j],
                    gates[3 * hd + j],
                );
                c[j] = f * state.c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            (gates, c, h)
        }
        ModelKind::Rnn | ModelKind::Dnn => {
            let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            (h.clone(), Vec::new(), h)
        }
    };
    let mut logits = p.b_out.to_vec();
    accumulate_vec_mat(&mut logits, &h, p.w_out);
    Ok((
        StepCache {
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            c,
            h,
        },
        logits,
    ))
}

/// One step of the recurrence; returns the next state and pre-softmax logits.
pub fn forward_step(
    params: &ModelParams,
    state: &ModelState,
    x: &[f64],
) -> Result<(ModelState, Vec<f64>)> {
    let (cache, logits) = step_cached(params, state, x)?;
    let next = match params.kind {
        ModelKind::Lstm => ModelState {
            h: cache.h,
            c: cache.c,
        },
        ModelKind::Rnn => ModelState {
            h: cache.h,
            c: Vec::new(),
        },
        ModelKind::Dnn => ModelState::default(),
    };
    Ok((next, logits))
}

/// Runs a whole sequence from the zero state; returns logits per step.
pub fn forward_sequence(params: &ModelParams, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut state = ModelState::initial(params);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, logits) = forward_step(params, &state, x)?;
        state = next;
        out.push(logits);
    }
    Ok(out)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}
