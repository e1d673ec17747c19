//! Factorized models whose posteriors reproduce a prescribed `(t, u)` table.
//!
//! Frames are one-hot over `t`. The predictor is a one-layer LSTM wired as a
//! shift register, so its projected output is one-hot over the number of
//! emitted tokens `u`. Each joiner path has one tanh hidden layer with a pair of
//! units per table cell: a detector that saturates to +1 only when both the
//! frame and the count indicator are on, and a constant +1 partner. Output
//! weights of half the target logit on both units give the logit for the active
//! cell and exactly zero for every other cell. One extra pair fires when `u` is
//! past the table; it drives the blank logit to the clamp so no mass leaks
//! beyond the table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Activation, Dense, LstmLayer, Tensor2D, Weight};
use crate::model::{
    EncFrame, FcStack, Joiner, JoinerKind, ModelConfig, ModelWeights, BLANK_LOGIT_CLAMP, MIN_PROB,
};

/// Saturation gain; tanh and sigmoid of +/-20 are exactly +/-1 (or 0/1) in f32.
const GAIN: f32 = 40.0;

/// Target posterior for one lattice node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub p_blank: f64,
    pub p_nonblank: Vec<f64>,
}

/// Posteriors indexed by frame `t` then emitted-token count `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub vocab_size: usize,
    /// `entries[t][u]`; every frame has the same number of `u` rows.
    pub entries: Vec<Vec<TableEntry>>,
}

impl PosteriorTable {
    pub fn frames(&self) -> usize {
        self.entries.len()
    }

    /// Largest `u` covered by the table.
    pub fn max_u(&self) -> usize {
        self.entries.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.entries.is_empty() || self.entries[0].is_empty() {
            return Err(Error::contract("posterior table must be non-empty"));
        }
        let width = self.entries[0].len();
        for (t, row) in self.entries.iter().enumerate() {
            if row.len() != width {
                return Err(Error::contract(format!("frame {t} has {} u-rows, expected {width}", row.len())));
            }
            for (u, e) in row.iter().enumerate() {
                if e.p_nonblank.len() != self.vocab_size {
                    return Err(Error::contract(format!("entry ({t},{u}) has wrong vocabulary size")));
                }
                let in_range = |p: f64| p > 0.0 && p < 1.0;
                if !in_range(e.p_blank) || !e.p_nonblank.iter().all(|&p| in_range(p)) {
                    return Err(Error::contract(format!("entry ({t},{u}) has a probability outside (0, 1)")));
                }
                let total = e.p_blank + e.p_nonblank.iter().sum::<f64>();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::contract(format!("entry ({t},{u}) sums to {total}, not 1")));
                }
            }
        }
        Ok(())
    }
}

/// A table-driven model plus the encoder frames that address its rows.
#[derive(Debug, Clone)]
pub struct PosteriorFixture {
    pub model: ModelWeights,
    pub frames: Vec<EncFrame>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(MIN_PROB, 1.0 - MIN_PROB);
    (p / (1.0 - p)).ln()
}

/// Builds a factorized model reproducing `table` at every `(t, u)` it covers.
pub fn make_posterior_model(table: &PosteriorTable) -> Result<PosteriorFixture> {
    table.validate()?;
    let n_frames = table.frames();
    let n_u = table.max_u() + 1;
    let vocab = table.vocab_size;
    let join_dim = n_frames + n_u;
    let cells = n_frames * n_u;
    // one detector/constant pair per cell, plus the "past the table" pair
    let hidden = 2 * cells + 2;

    let config = ModelConfig {
        vocab_size: vocab,
        feat_dim: join_dim,
        frame_stack: 1,
        frame_stride: 1,
        encoder_layers: 0,
        encoder_hidden: 0,
        embed_dim: 1,
        pred_hidden: n_u,
        pred_layers: 1,
        join_dim,
        join_hidden: hidden,
        joiner_kind: JoinerKind::Factorized,
        joiner_hidden_layers: 1,
        blank_hidden_layers: 1,
        activation: Activation::Tanh,
        frame_duration_ms: 40.0,
    };

    // Shift register. Start input +1 lights unit 0; each token (input -1)
    // moves the lit unit one step along.
    let h = n_u;
    let mut w_ih = Tensor2D::zeros(4 * h, 1);
    let mut w_hh = Tensor2D::zeros(4 * h, h);
    let mut bias = vec![0.0f32; 4 * h];
    for j in 0..h {
        bias[j] = GAIN; // input gate open
        bias[h + j] = -GAIN; // forget gate closed
        bias[3 * h + j] = GAIN; // output gate open
        let cand = 2 * h + j;
        if j == 0 {
            w_ih.set(cand, 0, GAIN);
        } else {
            w_hh.set(cand, j - 1, GAIN);
            w_ih.set(cand, 0, -GAIN / 2.0);
            bias[cand] = -GAIN / 2.0;
        }
    }
    let lstm = LstmLayer::new(Weight::Float(w_ih), Weight::Float(w_hh), bias)?;

    // h_j is +/- tanh(1); map to {0, 1} on coordinate n_frames + j
    let on = 1.0f32.tanh();
    let mut proj = Tensor2D::zeros(join_dim, h);
    let mut proj_bias = vec![0.0f32; join_dim];
    for j in 0..h {
        proj.set(n_frames + j, j, 1.0 / (2.0 * on));
        proj_bias[n_frames + j] = 0.5;
    }

    // Shared hidden layer for both joiner paths.
    let mut w1 = Tensor2D::zeros(hidden, join_dim);
    let mut b1 = vec![0.0f32; hidden];
    for t in 0..n_frames {
        for u in 0..n_u {
            let d = 2 * (t * n_u + u);
            w1.set(d, t, GAIN);
            w1.set(d, n_frames + u, GAIN);
            b1[d] = -1.5 * GAIN;
            b1[d + 1] = GAIN / 2.0;
        }
    }
    let past = 2 * cells;
    for u in 0..n_u {
        w1.set(past, n_frames + u, -GAIN);
    }
    b1[past] = GAIN / 2.0;
    b1[past + 1] = GAIN / 2.0;
    let layer1 = Dense::new(Weight::Float(w1), b1)?;

    let mut wb = Tensor2D::zeros(1, hidden);
    let mut wnb = Tensor2D::zeros(vocab, hidden);
    for (t, row) in table.entries.iter().enumerate() {
        for (u, e) in row.iter().enumerate() {
            let d = 2 * (t * n_u + u);
            let lb = (logit(e.p_blank) / 2.0) as f32;
            wb.set(0, d, lb);
            wb.set(0, d + 1, lb);
            let mass = 1.0 - e.p_blank;
            for (k, &p) in e.p_nonblank.iter().enumerate() {
                let l = ((p / mass).ln() / 2.0) as f32;
                wnb.set(k, d, l);
                wnb.set(k, d + 1, l);
            }
        }
    }
    let half_clamp = (BLANK_LOGIT_CLAMP / 2.0) as f32;
    wb.set(0, past, half_clamp);
    wb.set(0, past + 1, half_clamp);

    let model = ModelWeights {
        encoder: Vec::new(),
        embedding: Weight::Float(Tensor2D::new(vocab, 1, vec![-1.0; vocab])?),
        start_embedding: vec![1.0],
        lstm: vec![lstm],
        pred_proj: Dense::new(Weight::Float(proj), proj_bias)?,
        joiner: Joiner::Factorized {
            blank: FcStack {
                layers: vec![layer1.clone(), Dense::new(Weight::Float(wb), vec![0.0])?],
                activation: Activation::Tanh,
            },
            nonblank: FcStack {
                layers: vec![layer1, Dense::new(Weight::Float(wnb), vec![0.0; vocab])?],
                activation: Activation::Tanh,
            },
        },
        config,
    };
    model.validate()?;

    let frames = (0..n_frames)
        .map(|t| {
            let mut vec = vec![0.0f32; join_dim];
            vec[t] = 1.0;
            EncFrame { t, vec }
        })
        .collect();
    Ok(PosteriorFixture { model, frames })
}

/// Random normalized table with blank probabilities drawn from `blank_range`.
pub fn random_table<R: rand::Rng>(
    rng: &mut R,
    frames: usize,
    max_u: usize,
    vocab: usize,
    blank_range: std::ops::Range<f64>,
) -> PosteriorTable {
    let entries = (0..frames)
        .map(|_| {
            (0..=max_u)
                .map(|_| {
                    let p_blank = rng.random_range(blank_range.clone());
                    let raw: Vec<f64> = (0..vocab).map(|_| rng.random_range(0.05..1.0)).collect();
                    let z: f64 = raw.iter().sum();
                    TableEntry {
                        p_blank,
                        p_nonblank: raw.iter().map(|r| (1.0 - p_blank) * r / z).collect(),
                    }
                })
                .collect()
        })
        .collect();
    PosteriorTable { vocab_size: vocab, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_entry(p_blank: f64, vocab: usize) -> TableEntry {
        TableEntry {
            p_blank,
            p_nonblank: vec![(1.0 - p_blank) / vocab as f64; vocab],
        }
    }

    fn check_reproduces(table: &PosteriorTable, tol: f64) {
        let fx = make_posterior_model(table).unwrap();
        let m = &fx.model;
        for (t, row) in table.entries.iter().enumerate() {
            // walk the predictor along an arbitrary token path
            let mut pred = m.start().unwrap();
            for (u, e) in row.iter().enumerate() {
                let post = m.posterior(&fx.frames[t], &pred).unwrap();
                assert!((post.p_blank - e.p_blank).abs() < tol, "({t},{u}) blank {} vs {}", post.p_blank, e.p_blank);
                for (g, w) in post.p_nonblank.unwrap().iter().zip(&e.p_nonblank) {
                    assert!((g - w).abs() < tol, "({t},{u}) {g} vs {w}");
                }
                pred = m.predict(&pred, (u % table.vocab_size) as u32).unwrap();
            }
            // one step past the table: blank at the clamp
            let post = m.posterior(&fx.frames[t], &pred).unwrap();
            assert!(post.p_blank > 1.0 - 2e-12);
        }
    }

    #[test]
    fn half_blank_uniform_two_tokens() {
        let table = PosteriorTable {
            vocab_size: 2,
            entries: vec![vec![uniform_entry(0.5, 2)]],
        };
        let fx = make_posterior_model(&table).unwrap();
        let pred = fx.model.start().unwrap();
        let pb = fx.model.joiner_blank(&fx.frames[0], &pred).unwrap();
        assert!((pb - 0.5).abs() < 1e-6);
    }

    #[test]
    fn reproduces_spiky_blank() {
        let table = PosteriorTable {
            vocab_size: 3,
            entries: vec![
                vec![uniform_entry(0.9997, 3), uniform_entry(0.2, 3)],
                vec![uniform_entry(0.6, 3), uniform_entry(0.9997, 3)],
            ],
        };
        check_reproduces(&table, 1e-5);
    }

    #[test]
    fn degenerate_blank_is_finite() {
        let table = PosteriorTable {
            vocab_size: 2,
            entries: vec![vec![uniform_entry(1.0 - 1e-9, 2)]],
        };
        let fx = make_posterior_model(&table).unwrap();
        let pred = fx.model.start().unwrap();
        let score = fx.model.blank_score(&fx.frames[0], &pred).unwrap();
        assert!(score.logit.is_finite() && score.log_complement.is_finite());
        assert!((score.prob - (1.0 - 1e-9)).abs() < 1e-6);
    }

    #[test]
    fn random_tables_reproduce() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let table = random_table(&mut rng, 4, 3, 3, 0.01..0.99);
            check_reproduces(&table, 1e-5);
        }
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let mut e = uniform_entry(0.5, 2);
        e.p_nonblank[0] += 0.1;
        let table = PosteriorTable {
            vocab_size: 2,
            entries: vec![vec![e]],
        };
        assert!(matches!(make_posterior_model(&table), Err(Error::Contract(_))));
    }
}
