//! Model file layout: header, `u32` length plus UTF-8 JSON config, then the
//! weights in a fixed order (encoder layers, embedding, start embedding, LSTM
//! layers, predictor projection, joiner stacks). Each stack is prefixed by its
//! layer count.
//!
//! A weight is a tag byte (0 float, 1 int8), `u32` rows and cols, then either
//! `rows * cols` f32 values or an f32 scale followed by `rows * cols` i8 values.

use std::path::Path;

use super::{put_f32s, put_header, put_len, Reader};
use crate::error::{Error, Result};
use crate::math::{Dense, LstmLayer, QuantTensor, Tensor2D, Weight};
use crate::model::{FcStack, Joiner, ModelConfig, ModelWeights};

pub const MODEL_MAGIC: &[u8; 8] = b"RNNTMODL";

const TAG_FLOAT: u8 = 0;
const TAG_INT8: u8 = 1;

fn put_weight(out: &mut Vec<u8>, w: &Weight) -> Result<()> {
    match w {
        Weight::Float(t) => {
            out.push(TAG_FLOAT);
            put_len(out, t.rows())?;
            put_len(out, t.cols())?;
            put_f32s(out, t.data());
        }
        Weight::Int8(q) => {
            out.push(TAG_INT8);
            put_len(out, q.rows())?;
            put_len(out, q.cols())?;
            out.extend_from_slice(&q.scale().to_le_bytes());
            out.extend(q.qdata().iter().map(|&v| v as u8));
        }
    }
    Ok(())
}

fn put_vec(out: &mut Vec<u8>, v: &[f32]) -> Result<()> {
    put_len(out, v.len())?;
    put_f32s(out, v);
    Ok(())
}

fn put_dense(out: &mut Vec<u8>, d: &Dense) -> Result<()> {
    put_weight(out, &d.weight)?;
    put_vec(out, &d.bias)
}

fn put_stack(out: &mut Vec<u8>, layers: &[Dense]) -> Result<()> {
    put_len(out, layers.len())?;
    layers.iter().try_for_each(|d| put_dense(out, d))
}

/// Serializes a model to bytes.
pub fn write_model(model: &ModelWeights) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    put_header(&mut out, MODEL_MAGIC);
    let config = serde_json::to_vec(&model.config)?;
    put_len(&mut out, config.len())?;
    out.extend_from_slice(&config);

    put_stack(&mut out, &model.encoder)?;
    put_weight(&mut out, &model.embedding)?;
    put_vec(&mut out, &model.start_embedding)?;
    put_len(&mut out, model.lstm.len())?;
    for l in &model.lstm {
        put_weight(&mut out, &l.w_ih)?;
        put_weight(&mut out, &l.w_hh)?;
        put_vec(&mut out, &l.bias)?;
    }
    put_dense(&mut out, &model.pred_proj)?;
    match &model.joiner {
        Joiner::NonFactorized(s) => put_stack(&mut out, &s.layers)?,
        Joiner::Factorized { blank, nonblank } => {
            put_stack(&mut out, &blank.layers)?;
            put_stack(&mut out, &nonblank.layers)?;
        }
    }
    Ok(out)
}

fn read_weight(r: &mut Reader) -> Result<Weight> {
    let at = r.offset();
    let tag = r.u8("weight tag")?;
    let rows = r.u32("weight rows")? as usize;
    let cols = r.u32("weight cols")? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::parse(at, "weight shape overflows"))?;
    match tag {
        TAG_FLOAT => {
            let data = r.f32_vec(n, "weight data")?;
            Ok(Weight::Float(Tensor2D::new_unchecked(rows, cols, data)))
        }
        TAG_INT8 => {
            let scale_at = r.offset();
            let scale = r.f32("quantization scale")?;
            let data_at = r.offset();
            let q: Vec<i8> = r.bytes(n, "quantized data")?.iter().map(|&b| b as i8).collect();
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::parse(scale_at, format!("bad quantization scale {scale}")));
            }
            QuantTensor::new(rows, cols, q, scale)
                .map(Weight::Int8)
                .map_err(|e| Error::parse(data_at, e.to_string()))
        }
        other => Err(Error::parse(at, format!("unknown weight tag {other}"))),
    }
}

fn read_vec(r: &mut Reader, what: &str) -> Result<Vec<f32>> {
    let n = r.count(what, 4)?;
    r.f32_vec(n, what)
}

fn read_dense(r: &mut Reader) -> Result<Dense> {
    let at = r.offset();
    let weight = read_weight(r)?;
    let bias = read_vec(r, "bias")?;
    Dense::new(weight, bias).map_err(|e| Error::parse(at, e.to_string()))
}

fn read_stack(r: &mut Reader) -> Result<Vec<Dense>> {
    let n = r.count("layer count", 13)?;
    (0..n).map(|_| read_dense(r)).collect()
}

/// Parses a model from bytes.
pub fn read_model(buf: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader::new(buf);
    r.magic(MODEL_MAGIC)?;
    let n = r.count("config length", 1)?;
    let at = r.offset();
    let config: ModelConfig =
        serde_json::from_slice(r.bytes(n, "config")?).map_err(|e| Error::parse(at, format!("config JSON: {e}")))?;
    config.validate().map_err(|e| Error::parse(at, e.to_string()))?;

    let encoder = read_stack(&mut r)?;
    let embedding = read_weight(&mut r)?;
    let start_embedding = read_vec(&mut r, "start embedding")?;
    let layers = r.count("LSTM layer count", 22)?;
    let mut lstm = Vec::with_capacity(layers);
    for _ in 0..layers {
        let at = r.offset();
        let w_ih = read_weight(&mut r)?;
        let w_hh = read_weight(&mut r)?;
        let bias = read_vec(&mut r, "LSTM bias")?;
        lstm.push(LstmLayer::new(w_ih, w_hh, bias).map_err(|e| Error::parse(at, e.to_string()))?);
    }
    let pred_proj = read_dense(&mut r)?;
    let act = config.activation;
    let joiner = if config.is_factorized() {
        let blank = read_stack(&mut r)?;
        let nonblank = read_stack(&mut r)?;
        Joiner::Factorized {
            blank: FcStack {
                layers: blank,
                activation: act,
            },
            nonblank: FcStack {
                layers: nonblank,
                activation: act,
            },
        }
    } else {
        Joiner::NonFactorized(FcStack {
            layers: read_stack(&mut r)?,
            activation: act,
        })
    };
    r.finish()?;
    let end = r.offset();
    let model = ModelWeights {
        config,
        encoder,
        embedding,
        start_embedding,
        lstm,
        pred_proj,
        joiner,
    };
    model.validate().map_err(|e| Error::parse(end, e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &ModelWeights, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelWeights> {
    read_model(&std::fs::read(path)?)
}
