use crate::error::{Error, Result};
use crate::math::log_add;
use crate::model::{EncFrame, ModelWeights, PredOut, TokenId};

use super::normalized_score;

/// Size guard for [`exhaustive_decode`]; enumeration is exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub max_frames: usize,
    pub max_vocab: usize,
    pub max_len: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_frames: 5,
            max_vocab: 4,
            max_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub tokens: Vec<TokenId>,
    /// Total probability of `tokens` summed over every alignment.
    pub log_prob: f64,
    pub score: f64,
    /// Every sequence up to the length cap, in enumeration order.
    pub all: Vec<(Vec<TokenId>, f64)>,
}

struct Prefix {
    tokens: Vec<TokenId>,
    pred: PredOut,
    /// `log alpha(t, |tokens|)` for every frame.
    alpha: Vec<f64>,
    log_blank: Vec<f64>,
    log_nonblank: Vec<Vec<f64>>,
}

fn posteriors(model: &ModelWeights, frames: &[EncFrame], pred: &PredOut) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut lb = Vec::with_capacity(frames.len());
    let mut lnb = Vec::with_capacity(frames.len());
    for f in frames {
        let p = model.posterior(f, pred)?;
        lb.push(p.log_blank);
        lnb.push(p.log_nonblank.expect("posterior carries non-blank terms"));
    }
    Ok((lb, lnb))
}

/// Scores every output sequence of length `<= max_len` by the forward
/// algorithm over the full alignment lattice and returns the best one
/// under the same selection rule the beam search uses.
pub fn exhaustive_decode(
    model: &ModelWeights,
    frames: &[EncFrame],
    max_len: usize,
    length_normalize: bool,
    limits: OracleLimits,
) -> Result<OracleResult> {
    if frames.is_empty() {
        return Err(Error::Empty("encoder frames"));
    }
    let n = model.vocab_size();
    if frames.len() > limits.max_frames || n > limits.max_vocab || max_len > limits.max_len {
        return Err(Error::TooLarge(format!(
            "T={} N={} max_len={} exceeds T<={} N<={} max_len<={}",
            frames.len(),
            n,
            max_len,
            limits.max_frames,
            limits.max_vocab,
            limits.max_len
        )));
    }
    let t_len = frames.len();

    let pred = model.start()?;
    let (log_blank, log_nonblank) = posteriors(model, frames, &pred)?;
    // Empty prefix: only blanks, so alpha(t, 0) is the product of earlier blanks.
    let mut alpha = vec![0.0; t_len];
    for t in 1..t_len {
        alpha[t] = alpha[t - 1] + log_blank[t - 1];
    }
    let root = Prefix {
        tokens: Vec::new(),
        pred,
        alpha,
        log_blank,
        log_nonblank,
    };

    let mut all = Vec::new();
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        all.push((p.tokens.clone(), p.alpha[t_len - 1] + p.log_blank[t_len - 1]));
        if p.tokens.len() == max_len {
            continue;
        }
        // Push in reverse so lower token ids are visited first.
        for k in (0..n).rev() {
            let pred = model.predict(&p.pred, k as TokenId)?;
            let (lb, lnb) = posteriors(model, frames, &pred)?;
            let mut alpha = vec![f64::NEG_INFINITY; t_len];
            for t in 0..t_len {
                let emit = p.alpha[t] + p.log_nonblank[t][k];
                alpha[t] = if t == 0 {
                    emit
                } else {
                    log_add(alpha[t - 1] + lb[t - 1], emit)
                };
            }
            let mut tokens = p.tokens.clone();
            tokens.push(k as TokenId);
            stack.push(Prefix {
                tokens,
                pred,
                alpha,
                log_blank: lb,
                log_nonblank: lnb,
            });
        }
    }

    let score = |tokens: &[TokenId], lp: f64| {
        if length_normalize {
            normalized_score(lp, tokens.len())
        } else {
            lp
        }
    };
    let (tokens, log_prob) = all
        .iter()
        .max_by(|(a, la), (b, lb)| {
            score(a, *la)
                .total_cmp(&score(b, *lb))
                .then_with(|| la.total_cmp(lb))
                .then_with(|| b.len().cmp(&a.len()))
                .then_with(|| b.cmp(a))
        })
        .cloned()
        .expect("at least the empty sequence");
    Ok(OracleResult {
        score: score(&tokens, log_prob),
        tokens,
        log_prob,
        all,
    })
}
