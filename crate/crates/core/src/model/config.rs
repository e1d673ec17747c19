use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinerKind {
    /// One network emitting N+1 logits through a single softmax.
    NonFactorized,
    /// Separate sigmoid blank path and N-way softmax non-blank path.
    Factorized,
}

/// Architecture descriptor for a transducer model.
///
/// The encoder's last FC layer and the predictor's output FC both project into
/// the joint space of width `join_dim`; the joiner consumes `enc_t + pred_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Non-blank token count N. Blank is not a token id.
    pub vocab_size: usize,
    pub feat_dim: usize,
    /// Consecutive input frames concatenated per encoder step.
    pub frame_stack: usize,
    pub frame_stride: usize,
    /// Zero means the encoder is the identity over stacked frames.
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub pred_hidden: usize,
    pub pred_layers: usize,
    pub join_dim: usize,
    /// Width of joiner hidden layers (both paths).
    pub join_hidden: usize,
    pub joiner_kind: JoinerKind,
    /// Hidden layers on the non-blank path (or the whole non-factorized joiner).
    pub joiner_hidden_layers: usize,
    /// Hidden layers on the factorized blank path.
    pub blank_hidden_layers: usize,
    pub activation: Activation,
    /// Duration of one encoder output frame.
    pub frame_duration_ms: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("feat_dim", self.feat_dim),
            ("frame_stack", self.frame_stack),
            ("frame_stride", self.frame_stride),
            ("embed_dim", self.embed_dim),
            ("pred_hidden", self.pred_hidden),
            ("pred_layers", self.pred_layers),
            ("join_dim", self.join_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::Config("vocab_size exceeds u32 token ids".into()));
        }
        if self.encoder_layers == 0 && self.feat_dim * self.frame_stack != self.join_dim {
            return Err(Error::Config(format!(
                "identity encoder needs feat_dim * frame_stack ({}) == join_dim ({})",
                self.feat_dim * self.frame_stack,
                self.join_dim
            )));
        }
        if self.encoder_layers > 1 && self.encoder_hidden == 0 {
            return Err(Error::Config("encoder_hidden must be at least 1".into()));
        }
        let uses_hidden = self.joiner_hidden_layers > 0
            || (self.joiner_kind == JoinerKind::Factorized && self.blank_hidden_layers > 0);
        if uses_hidden && self.join_hidden == 0 {
            return Err(Error::Config("join_hidden must be at least 1".into()));
        }
        let expected = match self.joiner_kind {
            JoinerKind::NonFactorized => Activation::Relu,
            JoinerKind::Factorized => Activation::Tanh,
        };
        if self.activation != expected {
            return Err(Error::Config(format!(
                "{:?} joiners use {:?} activation, got {:?}",
                self.joiner_kind, expected, self.activation
            )));
        }
        if !(self.frame_duration_ms.is_finite() && self.frame_duration_ms > 0.0) {
            return Err(Error::Config("frame_duration_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn is_factorized(&self) -> bool {
        self.joiner_kind == JoinerKind::Factorized
    }

    /// Layer shapes `(out, in)` of an FC stack with `hidden` hidden layers.
    fn stack_shapes(input: usize, width: usize, hidden: usize, output: usize) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(hidden + 1);
        let mut prev = input;
        for _ in 0..hidden {
            shapes.push((width, prev));
            prev = width;
        }
        shapes.push((output, prev));
        shapes
    }

    pub(crate) fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        if self.encoder_layers == 0 {
            return Vec::new();
        }
        Self::stack_shapes(
            self.feat_dim * self.frame_stack,
            self.encoder_hidden,
            self.encoder_layers - 1,
            self.join_dim,
        )
    }

    pub(crate) fn joiner_shapes(&self) -> Vec<(usize, usize)> {
        let out = match self.joiner_kind {
            JoinerKind::NonFactorized => self.vocab_size + 1,
            JoinerKind::Factorized => self.vocab_size,
        };
        Self::stack_shapes(self.join_dim, self.join_hidden, self.joiner_hidden_layers, out)
    }

    pub(crate) fn blank_shapes(&self) -> Vec<(usize, usize)> {
        Self::stack_shapes(self.join_dim, self.join_hidden, self.blank_hidden_layers, 1)
    }

    /// Parameter and op counts per component, derived from the architecture alone.
    pub fn component_sizes(&self) -> Vec<ComponentSize> {
        let fc = |shapes: &[(usize, usize)]| ComponentSize {
            name: String::new(),
            params: shapes.iter().map(|(o, i)| o * i + o).sum::<usize>() as u64,
            ops: shapes.iter().map(|(o, i)| 2 * (o * i) as u64).sum(),
        };
        let mut out = Vec::new();
        out.push(ComponentSize {
            name: "encoder".into(),
            ..fc(&self.encoder_shapes())
        });

        let mut lstm_params = 0u64;
        let mut lstm_ops = 0u64;
        let mut input = self.embed_dim;
        for _ in 0..self.pred_layers {
            let g = 4 * self.pred_hidden;
            let w = g * input + g * self.pred_hidden;
            lstm_params += (w + g) as u64;
            lstm_ops += 2 * w as u64;
            input = self.pred_hidden;
        }
        let proj = self.join_dim * self.pred_hidden;
        out.push(ComponentSize {
            name: "predictor".into(),
            params: lstm_params
                + (self.vocab_size * self.embed_dim + self.embed_dim) as u64
                + (proj + self.join_dim) as u64,
            ops: lstm_ops + 2 * proj as u64,
        });

        match self.joiner_kind {
            JoinerKind::NonFactorized => out.push(ComponentSize {
                name: "joiner".into(),
                ..fc(&self.joiner_shapes())
            }),
            JoinerKind::Factorized => {
                out.push(ComponentSize {
                    name: "joiner_blank".into(),
                    ..fc(&self.blank_shapes())
                });
                out.push(ComponentSize {
                    name: "joiner_nonblank".into(),
                    ..fc(&self.joiner_shapes())
                });
            }
        }
        out
    }
}

/// Size of one model component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSize {
    pub name: String,
    pub params: u64,
    /// Operations per invocation, two per multiply-accumulate.
    pub ops: u64,
}
