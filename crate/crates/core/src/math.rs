//! Numeric kernels shared by the encoder, predictor and joiners.
//!
//! Weights are stored as `f32` (optionally INT8 with a per-tensor scale).
//! Dot products accumulate in `f64` and round once on output, so quantized
//! and float layers differ only by weight rounding, never by summation order.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Row-major `rows x cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_len("tensor data", data.len(), rows * cols)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("tensor value {i} is not finite")));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// Builds a tensor without the finiteness check. Used by tests that poison
    /// weights with NaN to prove a code path never reads them.
    pub fn new_unchecked(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor2D { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("tensor row", r.len(), cols)?;
            data.extend_from_slice(r);
        }
        Tensor2D::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }
}

/// Symmetric per-tensor INT8 weights: `value ~= qdata * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    rows: usize,
    cols: usize,
    qdata: Vec<i8>,
    scale: f32,
}

impl QuantTensor {
    pub fn new(rows: usize, cols: usize, qdata: Vec<i8>, scale: f32) -> Result<Self> {
        check_len("quantized data", qdata.len(), rows * cols)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::contract(format!("quantization scale {scale} must be positive")));
        }
        if qdata.contains(&i8::MIN) {
            return Err(Error::contract("quantized value -128 is outside [-127, 127]"));
        }
        Ok(QuantTensor {
            rows,
            cols,
            qdata,
            scale,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn qdata(&self) -> &[i8] {
        &self.qdata
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }
}

/// Smallest scale handed out for all-zero tensors.
pub const MIN_QUANT_SCALE: f32 = 1e-30;

/// Per-tensor symmetric quantization with round-half-to-even.
pub fn quantize_int8(t: &Tensor2D) -> QuantTensor {
    let max_abs = t.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = (max_abs / 127.0).max(MIN_QUANT_SCALE);
    let s = f64::from(scale);
    let qdata = t
        .data
        .iter()
        .map(|&v| (f64::from(v) / s).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantTensor {
        rows: t.rows,
        cols: t.cols,
        qdata,
        scale,
    }
}

pub fn dequantize(q: &QuantTensor) -> Tensor2D {
    Tensor2D {
        rows: q.rows,
        cols: q.cols,
        data: q.qdata.iter().map(|&v| f32::from(v) * q.scale).collect(),
    }
}

/// A weight matrix in either storage format.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Float(Tensor2D),
    Int8(QuantTensor),
}

impl Weight {
    pub fn rows(&self) -> usize {
        match self {
            Weight::Float(t) => t.rows,
            Weight::Int8(q) => q.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Weight::Float(t) => t.cols,
            Weight::Int8(q) => q.cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Weight::Int8(_))
    }

    pub fn quantized(&self) -> Weight {
        match self {
            Weight::Float(t) => Weight::Int8(quantize_int8(t)),
            Weight::Int8(_) => self.clone(),
        }
    }

    pub fn to_float(&self) -> Tensor2D {
        match self {
            Weight::Float(t) => t.clone(),
            Weight::Int8(q) => dequantize(q),
        }
    }

    /// Computes `W x` with `f64` accumulation. `x.len()` must equal `cols`.
    fn matvec_into(&self, x: &[f32], out: &mut [f64]) {
        match self {
            Weight::Float(t) => {
                for (o, row) in out.iter_mut().zip(t.data.chunks_exact(t.cols.max(1))) {
                    *o += dot_f32(row, x);
                }
            }
            Weight::Int8(q) => {
                let s = f64::from(q.scale);
                for (o, row) in out.iter_mut().zip(q.qdata.chunks_exact(q.cols.max(1))) {
                    let acc: f64 = row
                        .iter()
                        .zip(x)
                        .map(|(&w, &v)| f64::from(w) * f64::from(v))
                        .sum();
                    *o += acc * s;
                }
            }
        }
    }
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&w, &v)| f64::from(w) * f64::from(v))
        .sum()
}

/// `w x + b`, returned at full accumulation precision.
pub fn fc_forward_f64(w: &Weight, b: &[f32], x: &[f32]) -> Result<Vec<f64>> {
    check_len("fc input", x.len(), w.cols())?;
    check_len("fc bias", b.len(), w.rows())?;
    let mut out: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    if w.cols() > 0 {
        w.matvec_into(x, &mut out);
    }
    Ok(out)
}

/// Fully connected layer `w x + b`.
pub fn fc_forward(w: &Weight, b: &[f32], x: &[f32]) -> Result<Vec<f32>> {
    Ok(fc_forward_f64(w, b, x)?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

/// One FC layer: weight plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Weight,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new(weight: Weight, bias: Vec<f32>) -> Result<Self> {
        check_len("dense bias", bias.len(), weight.rows())?;
        Ok(Dense { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weight: Weight::Float(Tensor2D::zeros(out_dim, in_dim)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        fc_forward(&self.weight, &self.bias, x)
    }

    pub fn forward_f64(&self, x: &[f32]) -> Result<Vec<f64>> {
        fc_forward_f64(&self.weight, &self.bias, x)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Multiply-accumulates count as two operations each.
    pub fn ops(&self) -> u64 {
        2 * self.weight.len() as u64
    }

    pub fn quantized(&self) -> Dense {
        Dense {
            weight: self.weight.quantized(),
            bias: self.bias.clone(),
        }
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: &mut [f32]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without cancellation for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    let lse = logsumexp(logits);
    Ok(logits.iter().map(|x| x - lse).collect())
}

/// One LSTM layer. Gate rows are laid out as (input, forget, candidate, output),
/// each block `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Weight,
    pub w_hh: Weight,
    pub bias: Vec<f32>,
}

impl LstmLayer {
    pub fn new(w_ih: Weight, w_hh: Weight, bias: Vec<f32>) -> Result<Self> {
        let gates = w_ih.rows();
        if gates % 4 != 0 || gates == 0 {
            return Err(Error::contract(format!("LSTM gate rows {gates} not a positive multiple of 4")));
        }
        let hidden = gates / 4;
        if w_hh.rows() != gates || w_hh.cols() != hidden {
            return Err(Error::contract(format!(
                "LSTM recurrent weight is {}x{}, expected {gates}x{hidden}",
                w_hh.rows(),
                w_hh.cols()
            )));
        }
        check_len("LSTM bias", bias.len(), gates)?;
        Ok(LstmLayer { w_ih, w_hh, bias })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_ih: Weight::Float(Tensor2D::zeros(4 * hidden, input)),
            w_hh: Weight::Float(Tensor2D::zeros(4 * hidden, hidden)),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.bias.len()
    }

    pub fn ops(&self) -> u64 {
        2 * (self.w_ih.len() + self.w_hh.len()) as u64
    }

    pub fn quantized(&self) -> LstmLayer {
        LstmLayer {
            w_ih: self.w_ih.quantized(),
            w_hh: self.w_hh.quantized(),
            bias: self.bias.clone(),
        }
    }
}

/// Hidden and cell vectors for every layer of an LSTM stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f32>>,
    pub c: Vec<Vec<f32>>,
}

impl LstmState {
    pub fn zeros(layers: &[LstmLayer]) -> Self {
        LstmState {
            h: layers.iter().map(|l| vec![0.0; l.hidden()]).collect(),
            c: layers.iter().map(|l| vec![0.0; l.hidden()]).collect(),
        }
    }
}

/// Advances every layer of the stack by one step and returns the top-layer output.
pub fn lstm_step(state: &LstmState, x: &[f32], layers: &[LstmLayer]) -> Result<(LstmState, Vec<f32>)> {
    check_len("LSTM state layers", state.h.len(), layers.len())?;
    check_len("LSTM cell layers", state.c.len(), layers.len())?;
    let mut next = LstmState {
        h: Vec::with_capacity(layers.len()),
        c: Vec::with_capacity(layers.len()),
    };
    let mut input = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let hsz = layer.hidden();
        check_len("LSTM input", input.len(), layer.input())?;
        check_len("LSTM hidden state", state.h[l].len(), hsz)?;
        check_len("LSTM cell state", state.c[l].len(), hsz)?;

        let mut pre: Vec<f64> = layer.bias.iter().map(|&b| f64::from(b)).collect();
        layer.w_ih.matvec_into(&input, &mut pre);
        layer.w_hh.matvec_into(&state.h[l], &mut pre);

        let mut h = vec![0.0f32; hsz];
        let mut c = vec![0.0f32; hsz];
        for j in 0..hsz {
            let i_gate = sigmoid_f32(pre[j] as f32);
            let f_gate = sigmoid_f32(pre[hsz + j] as f32);
            let g = (pre[2 * hsz + j] as f32).tanh();
            let o_gate = sigmoid_f32(pre[3 * hsz + j] as f32);
            c[j] = f_gate * state.c[l][j] + i_gate * g;
            h[j] = o_gate * c[j].tanh();
        }
        input = h.clone();
        next.h.push(h);
        next.c.push(c);
    }
    Ok((next, input))
}
