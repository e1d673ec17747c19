//! Transducer model: encoder stand-in, LSTM predictor and the two joiner variants.

mod config;
pub mod fixture;

pub use config::{ComponentSize, JoinerKind, ModelConfig};

use crate::error::{check_len, Error, Result};
use crate::math::{
    log_sigmoid, log_softmax, lstm_step, sigmoid, softmax, Activation, Dense, LstmLayer, LstmState,
    Tensor2D, Weight,
};

pub type TokenId = u32;

/// Blank logits are clamped so that `p_blank` stays inside `[1e-12, 1 - 1e-12]`.
pub const BLANK_LOGIT_CLAMP: f64 = 27.631_021_115_871_036;
pub const MIN_PROB: f64 = 1e-12;

/// One encoder output frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncFrame {
    pub t: usize,
    pub vec: Vec<f32>,
}

/// Predictor output after `u` emitted tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PredOut {
    pub u: usize,
    pub vec: Vec<f32>,
    pub state: LstmState,
}

/// Output distribution over blank and the N non-blank tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub p_blank: f64,
    pub p_nonblank: Option<Vec<f64>>,
    pub log_blank: f64,
    pub log_nonblank: Option<Vec<f64>>,
}

/// Result of the factorized blank path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlankScore {
    /// Clamped blank logit.
    pub logit: f64,
    pub prob: f64,
    pub log_prob: f64,
    /// `ln(1 - p_blank)`.
    pub log_complement: f64,
}

impl BlankScore {
    pub fn from_logit(logit: f64) -> Self {
        let logit = logit.clamp(-BLANK_LOGIT_CLAMP, BLANK_LOGIT_CLAMP);
        BlankScore {
            logit,
            prob: sigmoid(logit),
            log_prob: log_sigmoid(logit),
            log_complement: log_sigmoid(-logit),
        }
    }
}

/// FC stack with an activation between layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FcStack {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl FcStack {
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f64>> {
        let (last, hidden) = self
            .layers
            .split_last()
            .ok_or_else(|| Error::contract("empty FC stack"))?;
        let mut h = x.to_vec();
        for layer in hidden {
            h = layer.forward(&h)?;
            self.activation.apply(&mut h);
        }
        last.forward_f64(&h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn ops(&self) -> u64 {
        self.layers.iter().map(Dense::ops).sum()
    }

    fn quantized(&self) -> FcStack {
        FcStack {
            layers: self.layers.iter().map(Dense::quantized).collect(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Joiner {
    NonFactorized(FcStack),
    Factorized { blank: FcStack, nonblank: FcStack },
}

/// All parameters of a transducer model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Empty for the identity encoder.
    pub encoder: Vec<Dense>,
    /// `vocab_size x embed_dim`.
    pub embedding: Weight,
    pub start_embedding: Vec<f32>,
    pub lstm: Vec<LstmLayer>,
    pub pred_proj: Dense,
    pub joiner: Joiner,
}

fn check_shapes(what: &str, layers: &[Dense], shapes: &[(usize, usize)]) -> Result<()> {
    check_len(what, layers.len(), shapes.len())?;
    for (i, (layer, &(o, inp))) in layers.iter().zip(shapes).enumerate() {
        if layer.out_dim() != o || layer.in_dim() != inp {
            return Err(Error::Config(format!(
                "{what} layer {i} is {}x{}, expected {o}x{inp}",
                layer.out_dim(),
                layer.in_dim()
            )));
        }
    }
    Ok(())
}

impl ModelWeights {
    /// All-zero weights for a configuration.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let dense = |shapes: Vec<(usize, usize)>| -> Vec<Dense> {
            shapes.into_iter().map(|(o, i)| Dense::zeros(o, i)).collect()
        };
        let mut lstm = Vec::with_capacity(config.pred_layers);
        let mut input = config.embed_dim;
        for _ in 0..config.pred_layers {
            lstm.push(LstmLayer::zeros(input, config.pred_hidden));
            input = config.pred_hidden;
        }
        let act = config.activation;
        let joiner = match config.joiner_kind {
            JoinerKind::NonFactorized => Joiner::NonFactorized(FcStack {
                layers: dense(config.joiner_shapes()),
                activation: act,
            }),
            JoinerKind::Factorized => Joiner::Factorized {
                blank: FcStack {
                    layers: dense(config.blank_shapes()),
                    activation: act,
                },
                nonblank: FcStack {
                    layers: dense(config.joiner_shapes()),
                    activation: act,
                },
            },
        };
        Ok(ModelWeights {
            encoder: dense(config.encoder_shapes()),
            embedding: Weight::Float(Tensor2D::zeros(config.vocab_size, config.embed_dim)),
            start_embedding: vec![0.0; config.embed_dim],
            lstm,
            pred_proj: Dense::zeros(config.join_dim, config.pred_hidden),
            joiner,
            config,
        })
    }

    /// Checks every tensor shape against the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        check_shapes("encoder", &self.encoder, &c.encoder_shapes())?;
        if self.embedding.rows() != c.vocab_size || self.embedding.cols() != c.embed_dim {
            return Err(Error::Config("embedding shape mismatch".into()));
        }
        check_len("start embedding", self.start_embedding.len(), c.embed_dim)?;
        check_len("LSTM layers", self.lstm.len(), c.pred_layers)?;
        let mut input = c.embed_dim;
        for layer in &self.lstm {
            if layer.input() != input || layer.hidden() != c.pred_hidden {
                return Err(Error::Config("LSTM layer shape mismatch".into()));
            }
            input = c.pred_hidden;
        }
        check_shapes("predictor projection", std::slice::from_ref(&self.pred_proj), &[(
            c.join_dim,
            c.pred_hidden,
        )])?;
        match (&self.joiner, c.joiner_kind) {
            (Joiner::NonFactorized(s), JoinerKind::NonFactorized) => {
                check_shapes("joiner", &s.layers, &c.joiner_shapes())
            }
            (Joiner::Factorized { blank, nonblank }, JoinerKind::Factorized) => {
                check_shapes("blank joiner", &blank.layers, &c.blank_shapes())?;
                check_shapes("non-blank joiner", &nonblank.layers, &c.joiner_shapes())
            }
            _ => Err(Error::Config("joiner weights do not match joiner_kind".into())),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn is_factorized(&self) -> bool {
        matches!(self.joiner, Joiner::Factorized { .. })
    }

    /// Number of encoder frames produced from `n` input frames.
    pub fn encoded_len(&self, n: usize) -> usize {
        n / self.config.frame_stride
    }

    /// Computes encoder output step `j` from the feature sequence, reading only
    /// frames up to `(j + 1) * stride - 1`.
    pub fn encode_step(&self, features: &[Vec<f32>], j: usize) -> Result<EncFrame> {
        let c = &self.config;
        let end = (j + 1) * c.frame_stride;
        if end > features.len() {
            return Err(Error::contract(format!(
                "encoder step {j} needs {end} frames, have {}",
                features.len()
            )));
        }
        let mut stacked = Vec::with_capacity(c.feat_dim * c.frame_stack);
        for k in 0..c.frame_stack {
            // causal stacking, left-padded with zeros
            let idx = (end + k) as isize - c.frame_stack as isize;
            if idx < 0 {
                stacked.extend(std::iter::repeat_n(0.0, c.feat_dim));
            } else {
                let f = &features[idx as usize];
                check_len("feature frame", f.len(), c.feat_dim)?;
                stacked.extend_from_slice(f);
            }
        }
        let mut h = stacked;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.encoder.len() {
                Activation::Relu.apply(&mut h);
            }
        }
        Ok(EncFrame { t: j, vec: h })
    }

    /// Runs the encoder over a whole utterance.
    pub fn encode(&self, features: &[Vec<f32>]) -> Result<Vec<EncFrame>> {
        if features.is_empty() {
            return Err(Error::Empty("feature sequence"));
        }
        for (i, f) in features.iter().enumerate() {
            if f.len() != self.config.feat_dim {
                return Err(Error::contract(format!(
                    "feature frame {i} has dim {}, expected {}",
                    f.len(),
                    self.config.feat_dim
                )));
            }
        }
        (0..self.encoded_len(features.len()))
            .map(|j| self.encode_step(features, j))
            .collect()
    }

    fn predictor_step(&self, state: &LstmState, x: &[f32], u: usize) -> Result<PredOut> {
        let (state, h) = lstm_step(state, x, &self.lstm)?;
        let vec = self.pred_proj.forward(&h)?;
        Ok(PredOut { u, vec, state })
    }

    /// Predictor output for the empty prefix: the start embedding fed from a zero state.
    pub fn start(&self) -> Result<PredOut> {
        self.predictor_step(&LstmState::zeros(&self.lstm), &self.start_embedding, 0)
    }

    pub fn predict(&self, prev: &PredOut, token: TokenId) -> Result<PredOut> {
        let k = token as usize;
        if k >= self.config.vocab_size {
            return Err(Error::contract(format!(
                "token {token} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let emb: Vec<f32> = match &self.embedding {
            Weight::Float(t) => t.row(k).to_vec(),
            Weight::Int8(q) => {
                let cols = q.cols();
                q.qdata()[k * cols..(k + 1) * cols]
                    .iter()
                    .map(|&v| f32::from(v) * q.scale())
                    .collect()
            }
        };
        self.predictor_step(&prev.state, &emb, prev.u + 1)
    }

    fn joint_input(&self, enc: &EncFrame, pred: &PredOut) -> Result<Vec<f32>> {
        let d = self.config.join_dim;
        check_len("encoder frame", enc.vec.len(), d)?;
        check_len("predictor output", pred.vec.len(), d)?;
        Ok(enc.vec.iter().zip(&pred.vec).map(|(a, b)| a + b).collect())
    }

    fn factorized_paths(&self) -> Result<(&FcStack, &FcStack)> {
        match &self.joiner {
            Joiner::Factorized { blank, nonblank } => Ok((blank, nonblank)),
            Joiner::NonFactorized(_) => Err(Error::contract("model has a non-factorized joiner")),
        }
    }

    /// Single-network joiner: one softmax over blank (index 0) and N tokens.
    pub fn joiner_nonfactorized(&self, enc: &EncFrame, pred: &PredOut) -> Result<Posterior> {
        let Joiner::NonFactorized(stack) = &self.joiner else {
            return Err(Error::contract("model has a factorized joiner"));
        };
        let x = self.joint_input(enc, pred)?;
        let logits = stack.forward(&x)?;
        let probs = softmax(&logits)?;
        let logs = log_softmax(&logits)?;
        let p_blank = probs[0];
        Ok(Posterior {
            p_blank,
            p_nonblank: Some(probs[1..].to_vec()),
            log_blank: p_blank.clamp(MIN_PROB, 1.0 - MIN_PROB).ln(),
            log_nonblank: Some(logs[1..].to_vec()),
        })
    }

    /// Blank path only; never touches non-blank weights.
    pub fn blank_score(&self, enc: &EncFrame, pred: &PredOut) -> Result<BlankScore> {
        let (blank, _) = self.factorized_paths()?;
        let x = self.joint_input(enc, pred)?;
        let logit = blank.forward(&x)?;
        Ok(BlankScore::from_logit(logit[0]))
    }

    /// Factorized blank probability `sigmoid(join_b)`.
    pub fn joiner_blank(&self, enc: &EncFrame, pred: &PredOut) -> Result<f64> {
        Ok(self.blank_score(enc, pred)?.prob)
    }

    /// Raw non-blank logits.
    pub fn nonblank_logits(&self, enc: &EncFrame, pred: &PredOut) -> Result<Vec<f64>> {
        let (_, nonblank) = self.factorized_paths()?;
        let x = self.joint_input(enc, pred)?;
        nonblank.forward(&x)
    }

    /// `(1 - p_blank) * softmax(join_nb)`.
    pub fn joiner_nonblank(&self, enc: &EncFrame, pred: &PredOut, p_blank: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&p_blank) {
            return Err(Error::contract(format!("p_blank {p_blank} outside [0, 1]")));
        }
        let probs = softmax(&self.nonblank_logits(enc, pred)?)?;
        Ok(probs.into_iter().map(|p| (1.0 - p_blank) * p).collect())
    }

    /// Log-domain non-blank probabilities given the blank score from the same input.
    pub fn nonblank_log_probs(&self, enc: &EncFrame, pred: &PredOut, blank: &BlankScore) -> Result<Vec<f64>> {
        let mut logs = log_softmax(&self.nonblank_logits(enc, pred)?)?;
        logs.iter_mut().for_each(|l| *l += blank.log_complement);
        Ok(logs)
    }

    /// Full posterior regardless of joiner kind.
    pub fn posterior(&self, enc: &EncFrame, pred: &PredOut) -> Result<Posterior> {
        match &self.joiner {
            Joiner::NonFactorized(_) => self.joiner_nonfactorized(enc, pred),
            Joiner::Factorized { .. } => {
                let blank = self.blank_score(enc, pred)?;
                let p_nonblank = self.joiner_nonblank(enc, pred, blank.prob)?;
                let log_nonblank = self.nonblank_log_probs(enc, pred, &blank)?;
                Ok(Posterior {
                    p_blank: blank.prob,
                    p_nonblank: Some(p_nonblank),
                    log_blank: blank.log_prob,
                    log_nonblank: Some(log_nonblank),
                })
            }
        }
    }

    /// Every stored weight matrix with a descriptive name, in file order.
    pub fn weights(&self) -> Vec<(String, &Weight)> {
        let mut out = Vec::new();
        for (i, d) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}"), &d.weight));
        }
        out.push(("embedding".to_string(), &self.embedding));
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm.{i}.w_ih"), &l.w_ih));
            out.push((format!("lstm.{i}.w_hh"), &l.w_hh));
        }
        out.push(("pred_proj".to_string(), &self.pred_proj.weight));
        let stacks: Vec<(&str, &FcStack)> = match &self.joiner {
            Joiner::NonFactorized(s) => vec![("joiner", s)],
            Joiner::Factorized { blank, nonblank } => vec![("joiner_blank", blank), ("joiner_nonblank", nonblank)],
        };
        for (name, s) in stacks {
            for (i, d) in s.layers.iter().enumerate() {
                out.push((format!("{name}.{i}"), &d.weight));
            }
        }
        out
    }

    /// Copy with every weight matrix (not biases) quantized to INT8.
    pub fn quantized(&self) -> ModelWeights {
        ModelWeights {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(Dense::quantized).collect(),
            embedding: self.embedding.quantized(),
            start_embedding: self.start_embedding.clone(),
            lstm: self.lstm.iter().map(LstmLayer::quantized).collect(),
            pred_proj: self.pred_proj.quantized(),
            joiner: match &self.joiner {
                Joiner::NonFactorized(s) => Joiner::NonFactorized(s.quantized()),
                Joiner::Factorized { blank, nonblank } => Joiner::Factorized {
                    blank: blank.quantized(),
                    nonblank: nonblank.quantized(),
                },
            },
        }
    }

    /// Parameter and op counts measured on the materialized weights.
    pub fn component_sizes(&self) -> Vec<ComponentSize> {
        let stack = |name: &str, s: &FcStack| ComponentSize {
            name: name.into(),
            params: s.param_count() as u64,
            ops: s.ops(),
        };
        let mut out = vec![ComponentSize {
            name: "encoder".into(),
            params: self.encoder.iter().map(Dense::param_count).sum::<usize>() as u64,
            ops: self.encoder.iter().map(Dense::ops).sum(),
        }];
        out.push(ComponentSize {
            name: "predictor".into(),
            params: (self.embedding.len()
                + self.start_embedding.len()
                + self.lstm.iter().map(LstmLayer::param_count).sum::<usize>()
                + self.pred_proj.param_count()) as u64,
            ops: self.lstm.iter().map(LstmLayer::ops).sum::<u64>() + self.pred_proj.ops(),
        });
        match &self.joiner {
            Joiner::NonFactorized(s) => out.push(stack("joiner", s)),
            Joiner::Factorized { blank, nonblank } => {
                out.push(stack("joiner_blank", blank));
                out.push(stack("joiner_nonblank", nonblank));
            }
        }
        out
    }
}
