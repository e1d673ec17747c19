//! Synthetic models: architecture presets and random weight generators.
//!
//! Spiky models reserve coordinate 0 of the joint space as a blank-evidence
//! channel. The predictor never writes to it and the non-blank path never reads
//! it, while the blank path reads nothing else and is (close to) the identity
//! along it. An encoder frame whose coordinate 0 holds `L` therefore yields a
//! blank logit of about `L` for every hypothesis, which is what lets trace
//! generators dial in a blank-probability distribution.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{logsumexp, Activation, Dense, LstmLayer, Tensor2D, Weight};
use crate::model::{EncFrame, FcStack, Joiner, JoinerKind, ModelConfig, ModelWeights, TokenId};

/// Standard deviation of the non-blank content channels in generated frames.
pub const CONTENT_STD: f32 = 1.0;
/// Target spread of non-blank logits in spiky models.
pub const NONBLANK_LOGIT_STD: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Full-size architectures.
    FactorizedSmall,
    FactorizedLarge,
    NonFactorizedSmall,
    NonFactorizedLarge,
    /// Desk-scale analogues: N = 64, 64-dim joint space, 2x64 LSTM predictor.
    DeskFactorizedSmall,
    DeskFactorizedLarge,
    DeskNonFactorizedSmall,
    DeskNonFactorizedLarge,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::FactorizedSmall,
        Preset::FactorizedLarge,
        Preset::NonFactorizedSmall,
        Preset::NonFactorizedLarge,
        Preset::DeskFactorizedSmall,
        Preset::DeskFactorizedLarge,
        Preset::DeskNonFactorizedSmall,
        Preset::DeskNonFactorizedLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FactorizedSmall => "F-S",
            Preset::FactorizedLarge => "F-L",
            Preset::NonFactorizedSmall => "NF-S",
            Preset::NonFactorizedLarge => "NF-L",
            Preset::DeskFactorizedSmall => "desk-F-S",
            Preset::DeskFactorizedLarge => "desk-F-L",
            Preset::DeskNonFactorizedSmall => "desk-NF-S",
            Preset::DeskNonFactorizedLarge => "desk-NF-L",
        }
    }

    pub fn is_desk(self) -> bool {
        matches!(
            self,
            Preset::DeskFactorizedSmall
                | Preset::DeskFactorizedLarge
                | Preset::DeskNonFactorizedSmall
                | Preset::DeskNonFactorizedLarge
        )
    }

    /// The full-size preset with the same joiner family.
    pub fn full_size(self) -> Preset {
        match self {
            Preset::DeskFactorizedSmall => Preset::FactorizedSmall,
            Preset::DeskFactorizedLarge => Preset::FactorizedLarge,
            Preset::DeskNonFactorizedSmall => Preset::NonFactorizedSmall,
            Preset::DeskNonFactorizedLarge => Preset::NonFactorizedLarge,
            p => p,
        }
    }

    pub fn config(self) -> ModelConfig {
        let (factorized, large) = match self {
            Preset::FactorizedSmall | Preset::DeskFactorizedSmall => (true, false),
            Preset::FactorizedLarge | Preset::DeskFactorizedLarge => (true, true),
            Preset::NonFactorizedSmall | Preset::DeskNonFactorizedSmall => (false, false),
            Preset::NonFactorizedLarge | Preset::DeskNonFactorizedLarge => (false, true),
        };
        let mut c = if self.is_desk() {
            ModelConfig {
                vocab_size: 64,
                feat_dim: 20,
                frame_stack: 4,
                frame_stride: 4,
                encoder_layers: 2,
                encoder_hidden: 128,
                embed_dim: 64,
                pred_hidden: 64,
                pred_layers: 2,
                join_dim: 64,
                join_hidden: 128,
                joiner_kind: JoinerKind::Factorized,
                joiner_hidden_layers: 0,
                blank_hidden_layers: 0,
                activation: Activation::Tanh,
                frame_duration_ms: 40.0,
            }
        } else {
            // The encoder here is a single-layer stand-in; the 68M Emformer is not modeled.
            ModelConfig {
                vocab_size: 5000,
                feat_dim: 80,
                frame_stack: 4,
                frame_stride: 4,
                encoder_layers: 1,
                encoder_hidden: 1024,
                embed_dim: 256,
                pred_hidden: 512,
                pred_layers: 3,
                join_dim: 1024,
                join_hidden: 1024,
                joiner_kind: JoinerKind::Factorized,
                joiner_hidden_layers: 0,
                blank_hidden_layers: 0,
                activation: Activation::Tanh,
                frame_duration_ms: 40.0,
            }
        };
        if large {
            c.joiner_hidden_layers = 6;
        }
        if factorized {
            c.blank_hidden_layers = usize::from(large);
        } else {
            c.joiner_kind = JoinerKind::NonFactorized;
            c.activation = Activation::Relu;
        }
        c
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

fn normal(rng: &mut impl Rng, std: f32) -> f32 {
    let z: f32 = StandardNormal.sample(rng);
    z * std
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f32) -> Tensor2D {
    let data = (0..rows * cols).map(|_| normal(rng, std)).collect();
    Tensor2D::new_unchecked(rows, cols, data)
}

fn random_dense(rng: &mut impl Rng, out: usize, inp: usize, gain: f32) -> Dense {
    let std = gain / (inp.max(1) as f32).sqrt();
    Dense {
        weight: Weight::Float(gaussian(rng, out, inp, std)),
        bias: (0..out).map(|_| normal(rng, 0.1)).collect(),
    }
}

fn random_predictor(rng: &mut impl Rng, c: &ModelConfig) -> (Weight, Vec<f32>, Vec<LstmLayer>, Dense) {
    let embedding = Weight::Float(gaussian(rng, c.vocab_size, c.embed_dim, 1.0));
    let start: Vec<f32> = (0..c.embed_dim).map(|_| normal(rng, 1.0)).collect();
    let mut lstm = Vec::with_capacity(c.pred_layers);
    let mut input = c.embed_dim;
    for _ in 0..c.pred_layers {
        let h = c.pred_hidden;
        let std = 1.0 / ((input + h) as f32).sqrt();
        let mut bias: Vec<f32> = (0..4 * h).map(|_| normal(rng, 0.1)).collect();
        bias[h..2 * h].iter_mut().for_each(|b| *b += 1.0);
        lstm.push(LstmLayer {
            w_ih: Weight::Float(gaussian(rng, 4 * h, input, std * 2.0)),
            w_hh: Weight::Float(gaussian(rng, 4 * h, h, std * 2.0)),
            bias,
        });
        input = h;
    }
    let proj = random_dense(rng, c.join_dim, c.pred_hidden, 1.5);
    (embedding, start, lstm, proj)
}

fn random_stack(rng: &mut impl Rng, shapes: &[(usize, usize)], act: Activation, out_gain: f32) -> FcStack {
    let hidden_gain = match act {
        Activation::Relu => std::f32::consts::SQRT_2,
        Activation::Tanh => 1.0,
    };
    let n = shapes.len();
    let layers = shapes
        .iter()
        .enumerate()
        .map(|(i, &(o, inp))| random_dense(rng, o, inp, if i + 1 == n { out_gain } else { hidden_gain }))
        .collect();
    FcStack { layers, activation: act }
}

/// Dense random weights for any configuration. `logit_gain` scales the joiner
/// output layers.
pub fn random_model(config: &ModelConfig, seed: u64, logit_gain: f32) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = config
        .encoder_shapes()
        .iter()
        .map(|&(o, i)| random_dense(&mut rng, o, i, 1.0))
        .collect();
    let (embedding, start_embedding, lstm, pred_proj) = random_predictor(&mut rng, config);
    let act = config.activation;
    let joiner = match config.joiner_kind {
        JoinerKind::NonFactorized => {
            Joiner::NonFactorized(random_stack(&mut rng, &config.joiner_shapes(), act, logit_gain))
        }
        JoinerKind::Factorized => Joiner::Factorized {
            blank: random_stack(&mut rng, &config.blank_shapes(), act, logit_gain),
            nonblank: random_stack(&mut rng, &config.joiner_shapes(), act, logit_gain),
        },
    };
    let model = ModelWeights {
        config: config.clone(),
        encoder,
        embedding,
        start_embedding,
        lstm,
        pred_proj,
        joiner,
    };
    model.validate()?;
    Ok(model)
}

/// Small random model for oracle checks: identity encoder, one-layer predictor.
pub fn random_small_model(vocab: usize, join_dim: usize, kind: JoinerKind, seed: u64) -> Result<ModelWeights> {
    let config = ModelConfig {
        vocab_size: vocab,
        feat_dim: join_dim,
        frame_stack: 1,
        frame_stride: 1,
        encoder_layers: 0,
        encoder_hidden: 0,
        embed_dim: 4,
        pred_hidden: 6,
        pred_layers: 1,
        join_dim,
        join_hidden: 8,
        joiner_kind: kind,
        joiner_hidden_layers: 1,
        blank_hidden_layers: 1,
        activation: match kind {
            JoinerKind::NonFactorized => Activation::Relu,
            JoinerKind::Factorized => Activation::Tanh,
        },
        frame_duration_ms: 40.0,
    };
    random_model(&config, seed, 1.5)
}

/// Random encoder frames with standard-normal entries.
pub fn random_frames(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<EncFrame> {
    (0..count)
        .map(|t| EncFrame {
            t,
            vec: (0..dim).map(|_| normal(rng, 1.0)).collect(),
        })
        .collect()
}

/// A content frame for spiky models: coordinate 0 carries `blank_logit`, the
/// rest is Gaussian content.
pub fn spiky_frame(rng: &mut impl Rng, t: usize, dim: usize, blank_logit: f32) -> EncFrame {
    let mut vec = Vec::with_capacity(dim);
    vec.push(blank_logit);
    vec.extend((1..dim).map(|_| normal(rng, CONTENT_STD)));
    EncFrame { t, vec }
}

/// Sample joint inputs for scale calibration: content frames plus predictor
/// outputs after short random token histories.
fn sample_joint_inputs(model: &ModelWeights, rng: &mut impl Rng, count: usize) -> Result<Vec<Vec<f32>>> {
    let dim = model.config.join_dim;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pred = model.start()?;
        for _ in 0..rng.random_range(0..4) {
            let k = rng.random_range(0..model.config.vocab_size) as TokenId;
            pred = model.predict(&pred, k)?;
        }
        let enc = spiky_frame(rng, 0, dim, 0.0);
        out.push(enc.vec.iter().zip(&pred.vec).map(|(a, b)| a + b).collect());
    }
    Ok(out)
}

fn scale_last(stack: &mut FcStack, rows: std::ops::Range<usize>, factor: f32) {
    let last = stack.layers.last_mut().expect("non-empty stack");
    let Weight::Float(w) = &mut last.weight else {
        unreachable!("generators build float weights")
    };
    let cols = w.cols();
    for r in rows {
        for c in 0..cols {
            let v = w.get(r, c) * factor;
            w.set(r, c, v);
        }
        last.bias[r] *= factor;
    }
}

fn float_mut(d: &mut Dense) -> &mut Tensor2D {
    match &mut d.weight {
        Weight::Float(t) => t,
        Weight::Int8(_) => unreachable!("generators build float weights"),
    }
}

/// Spiky model for a configuration: random predictor and non-blank path, with
/// the blank path wired to read only the blank-evidence channel.
pub fn spiky_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut model = random_model(config, seed, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b1a4);

    // predictor never writes the blank channel
    let proj = float_mut(&mut model.pred_proj);
    for c in 0..proj.cols() {
        proj.set(0, c, 0.0);
    }
    model.pred_proj.bias[0] = 0.0;

    let vocab = config.vocab_size;
    match &mut model.joiner {
        Joiner::Factorized { blank, nonblank } => {
            wire_blank_path(blank, &mut rng);
            let first = float_mut(&mut nonblank.layers[0]);
            for r in 0..first.rows() {
                first.set(r, 0, 0.0);
            }
        }
        Joiner::NonFactorized(stack) => wire_nonfactorized(stack),
    }

    // Rescale non-blank logits to the target spread, and for the single
    // softmax centre the blank logit against the non-blank normaliser.
    let inputs = sample_joint_inputs(&model, &mut rng, 64)?;
    let (stack, rows) = match &mut model.joiner {
        Joiner::Factorized { nonblank, .. } => (nonblank, 0..vocab),
        Joiner::NonFactorized(stack) => (stack, 1..vocab + 1),
    };
    let mut all = Vec::new();
    for x in &inputs {
        all.extend_from_slice(&stack.forward(x)?[rows.clone()]);
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    scale_last(stack, rows.clone(), (NONBLANK_LOGIT_STD / std.max(1e-6)) as f32);

    if let Joiner::NonFactorized(stack) = &mut model.joiner {
        let mut lse = 0.0;
        for x in &inputs {
            lse += logsumexp(&stack.forward(x)?[rows.clone()]);
        }
        let last = stack.layers.last_mut().expect("non-empty stack");
        last.bias[0] = (lse / inputs.len() as f64) as f32;
    }
    model.validate()?;
    Ok(model)
}

/// Blank path that reads coordinate 0 only and is close to the identity on it.
fn wire_blank_path(blank: &mut FcStack, rng: &mut impl Rng) {
    let n = blank.layers.len();
    if n == 1 {
        let w = float_mut(&mut blank.layers[0]);
        for c in 0..w.cols() {
            w.set(0, c, if c == 0 { 1.0 } else { 0.0 });
        }
        blank.layers[0].bias[0] = 0.0;
        return;
    }
    // first hidden layer: small positive gains on coordinate 0 keep tanh near-linear
    let width = blank.layers[0].out_dim();
    let gains: Vec<f32> = (0..width).map(|_| 0.005 * rng.random_range(0.5..1.5)).collect();
    {
        let w = float_mut(&mut blank.layers[0]);
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                w.set(r, c, if c == 0 { gains[r] } else { 0.0 });
            }
        }
        blank.layers[0].bias.iter_mut().for_each(|b| *b = 0.0);
    }
    // deeper hidden layers pass each unit through unchanged
    for layer in &mut blank.layers[1..n - 1] {
        let w = float_mut(layer);
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                w.set(r, c, if r == c { 1.0 } else { 0.0 });
            }
        }
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let out = &mut blank.layers[n - 1];
    let w = float_mut(out);
    for c in 0..w.cols() {
        w.set(0, c, 1.0 / (width as f32 * gains[c]));
    }
    out.bias[0] = 0.0;
}

/// Non-factorized joiner: hidden units 0 and 1 carry relu(x0) and relu(-x0)
/// through every ReLU layer; the blank row reads their difference and no other
/// unit sees coordinate 0.
fn wire_nonfactorized(stack: &mut FcStack) {
    let n = stack.layers.len();
    for (i, layer) in stack.layers.iter_mut().enumerate() {
        let is_last = i + 1 == n;
        let carried: &[usize] = if i == 0 { &[0] } else { &[0, 1] };
        let w = float_mut(layer);
        let (rows, cols) = (w.rows(), w.cols());
        for r in 0..rows {
            for &c in carried {
                w.set(r, c, 0.0);
            }
        }
        if is_last {
            for c in 0..cols {
                w.set(0, c, 0.0);
            }
            if i == 0 {
                w.set(0, 0, 1.0);
            } else {
                w.set(0, 0, 1.0);
                w.set(0, 1, -1.0);
            }
        } else {
            for r in 0..2 {
                for c in 0..cols {
                    w.set(r, c, 0.0);
                }
            }
            if i == 0 {
                w.set(0, 0, 1.0);
                w.set(1, 0, -1.0);
            } else {
                w.set(0, 0, 1.0);
                w.set(1, 1, 1.0);
            }
            layer.bias[0] = 0.0;
            layer.bias[1] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sigmoid;

    #[test]
    fn table_one_joiner_sizes() {
        let size = |p: Preset, name: &str| {
            p.config()
                .component_sizes()
                .into_iter()
                .find(|c| c.name == name)
                .unwrap()
                .params
        };
        // "FC 1K" / "FC 1M" blank joiners, "FC 5M" / "FC 11M" non-blank and single joiners
        assert_eq!(size(Preset::FactorizedSmall, "joiner_blank"), 1025);
        let fl_blank = size(Preset::FactorizedLarge, "joiner_blank");
        assert!((1_000_000..1_100_000).contains(&fl_blank), "{fl_blank}");
        let fs_nb = size(Preset::FactorizedSmall, "joiner_nonblank");
        assert!((5_000_000..5_200_000).contains(&fs_nb), "{fs_nb}");
        let fl_nb = size(Preset::FactorizedLarge, "joiner_nonblank");
        assert!((11_000_000..12_000_000).contains(&fl_nb), "{fl_nb}");
        let nfs = size(Preset::NonFactorizedSmall, "joiner");
        assert!((5_000_000..5_200_000).contains(&nfs), "{nfs}");
        let nfl = size(Preset::NonFactorizedLarge, "joiner");
        assert!((11_000_000..12_000_000).contains(&nfl), "{nfl}");
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            p.config().validate().unwrap();
        }
        assert!("F-XL".parse::<Preset>().is_err());
    }

    #[test]
    fn desk_sizes_match_materialized_weights() {
        for p in Preset::ALL.into_iter().filter(|p| p.is_desk()) {
            let m = random_model(&p.config(), 1, 1.0).unwrap();
            assert_eq!(m.component_sizes(), p.config().component_sizes(), "{p}");
        }
    }

    #[test]
    fn spiky_blank_follows_channel_zero() {
        for p in [Preset::DeskFactorizedSmall, Preset::DeskFactorizedLarge] {
            let m = spiky_model(&p.config(), 9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut pred = m.start().unwrap();
            for (i, target) in [-3.0f32, 0.0, 2.0, 8.0, 16.0].into_iter().enumerate() {
                let frame = spiky_frame(&mut rng, i, 64, target);
                let pb = m.joiner_blank(&frame, &pred).unwrap();
                let got = (pb / (1.0 - pb)).ln();
                // the large blank path is only near-linear
                let tol = if p == Preset::DeskFactorizedSmall { 1e-4 } else { 0.02 * f64::from(target.abs()) + 1e-3 };
                assert!((got - f64::from(target)).abs() <= tol, "{p}: {got} vs {target}");
                pred = m.predict(&pred, i as TokenId).unwrap();
            }
        }
    }

    #[test]
    fn nonfactorized_spiky_tracks_channel_zero() {
        let m = spiky_model(&Preset::DeskNonFactorizedLarge.config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = m.start().unwrap();
        let lo = m.posterior(&spiky_frame(&mut rng, 0, 64, -4.0), &pred).unwrap().p_blank;
        let hi = m.posterior(&spiky_frame(&mut rng, 1, 64, 12.0), &pred).unwrap().p_blank;
        assert!(lo < 0.5 && hi > 0.999, "{lo} {hi}");
        assert!(hi > sigmoid(8.0));
    }
}
