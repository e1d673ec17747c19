//! Transducer beam search with prefix merging and factorized blank
//! thresholding, and an exhaustive lattice oracle for small instances.

mod beam;
mod oracle;

pub use beam::{
    beam_search, beam_search_unthresholded, decode_features, decode_pipelined, prefix_extension_prob,
    BeamSearch,
};
pub use oracle::{exhaustive_decode, OracleLimits, OracleResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::metrics::RuntimeStats;
use crate::model::{PredOut, TokenId};

/// Blank threshold as configured by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Never skip: the threshold probability is exactly 1.
    Disabled,
    /// Logit-domain threshold; `p_threshold = sigmoid(thresh)`.
    Logit(f64),
    /// Probability threshold given directly.
    Probability(f64),
}

impl Threshold {
    /// Thresholds swept by default, logit domain.
    pub const SWEEP: [f64; 7] = [16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.1];

    pub fn probability(self) -> f64 {
        threshold_from_logit(self)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Threshold::Disabled => Ok(()),
            Threshold::Logit(x) if x.is_finite() => Ok(()),
            Threshold::Probability(p) if (0.0..=1.0).contains(&p) => Ok(()),
            other => Err(Error::Config(format!("invalid blank threshold {other:?}"))),
        }
    }

    /// Short label used in reports: the logit, `disabled`, or `p=<prob>`.
    pub fn label(self) -> String {
        match self {
            Threshold::Disabled => "disabled".into(),
            Threshold::Logit(x) => format!("{x}"),
            Threshold::Probability(p) => format!("p={p}"),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("disabled") || s.eq_ignore_ascii_case("off") {
            return Ok(Threshold::Disabled);
        }
        let t = if let Some(p) = s.strip_prefix("p=") {
            Threshold::Probability(p.parse().map_err(|_| Error::Config(format!("bad probability {p:?}")))?)
        } else {
            Threshold::Logit(s.parse().map_err(|_| Error::Config(format!("bad threshold {s:?}")))?)
        };
        t.validate()?;
        Ok(t)
    }
}

/// Maps a threshold to the blank probability above which non-blank work is skipped.
pub fn threshold_from_logit(thresh: Threshold) -> f64 {
    match thresh {
        Threshold::Disabled => 1.0,
        Threshold::Logit(x) => sigmoid(x),
        Threshold::Probability(p) => p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub thresh: Threshold,
    /// Cap on tokens a single hypothesis may emit within one frame.
    pub max_symbols_per_frame: usize,
    /// Hypotheses at this length are never extended.
    pub max_output_len: Option<usize>,
    /// Final selection by `log Pr(y) / |y|` instead of `log Pr(y)`.
    pub length_normalize: bool,
    /// Keep every computed blank probability in the result.
    pub record_blank_probs: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 10,
            thresh: Threshold::Disabled,
            max_symbols_per_frame: 10,
            max_output_len: None,
            length_normalize: true,
            record_blank_probs: false,
        }
    }
}

impl BeamConfig {
    pub fn with_thresh(thresh: Threshold) -> Self {
        BeamConfig {
            thresh,
            ..Default::default()
        }
    }

    pub fn p_threshold(&self) -> f64 {
        self.thresh.probability()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_symbols_per_frame == 0 {
            return Err(Error::Config("max_symbols_per_frame must be at least 1".into()));
        }
        self.thresh.validate()
    }
}

/// A decoding prefix with its predictor output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub pred: PredOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// Selection score: length-normalized log probability unless disabled.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Sorted by `score`, best first.
    pub nbest: Vec<NBestEntry>,
    pub stats: RuntimeStats,
    pub blank_probs: Option<Vec<f64>>,
}

impl DecodeResult {
    pub fn best(&self) -> &NBestEntry {
        &self.nbest[0]
    }
}

/// `log Pr(y) / |y|`, with the empty sequence divided by one.
pub fn normalized_score(log_prob: f64, len: usize) -> f64 {
    log_prob / len.max(1) as f64
}

#[cfg(test)]
mod tests;
