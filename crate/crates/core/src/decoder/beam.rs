use std::cell::OnceCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::rc::Rc;
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use super::{normalized_score, BeamConfig, DecodeResult, Hypothesis, NBestEntry};
use crate::error::{Error, Result};
use crate::math::log_add;
use crate::metrics::{timed, RuntimeStats};
use crate::model::{BlankScore, EncFrame, ModelWeights, PredOut, TokenId};

/// Prefix-tree node. The predictor output is computed on first use, so
/// hypotheses that are pushed but never popped cost no predictor step.
#[derive(Debug)]
struct Node {
    token: Option<TokenId>,
    parent: Option<Rc<Node>>,
    pred: OnceCell<Rc<PredOut>>,
}

impl Node {
    fn root() -> Rc<Node> {
        Rc::new(Node {
            token: None,
            parent: None,
            pred: OnceCell::new(),
        })
    }

    fn child(parent: &Rc<Node>, token: TokenId) -> Rc<Node> {
        Rc::new(Node {
            token: Some(token),
            parent: Some(parent.clone()),
            pred: OnceCell::new(),
        })
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    log_prob: f64,
    node: Rc<Node>,
    /// Tokens emitted during the current frame.
    emitted: usize,
}

/// Ranking used everywhere a tie can occur: higher probability first, then
/// shorter, then lexicographically smaller.
fn rank(a_lp: f64, a: &[TokenId], b_lp: f64, b: &[TokenId]) -> Ordering {
    a_lp.total_cmp(&b_lp)
        .then_with(|| b.len().cmp(&a.len()))
        .then_with(|| b.cmp(a))
}

impl PartialEq for Hyp {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Hyp {}

impl PartialOrd for Hyp {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Hyp {
    fn cmp(&self, o: &Self) -> Ordering {
        rank(self.log_prob, &self.tokens, o.log_prob, &o.tokens)
    }
}

#[derive(Debug)]
struct CacheEntry {
    blank: BlankScore,
    nonblank: Option<Rc<Vec<f64>>>,
}

/// Joiner and predictor evaluation for one frame, with per-frame caching
/// keyed by the token sequence.
struct Evaluator<'m> {
    model: &'m ModelWeights,
    factorized: bool,
    stats: RuntimeStats,
    cache: HashMap<Vec<TokenId>, CacheEntry>,
    blank_probs: Option<Vec<f64>>,
}

impl<'m> Evaluator<'m> {
    fn pred(&mut self, node: &Node) -> Result<Rc<PredOut>> {
        if let Some(p) = node.pred.get() {
            return Ok(p.clone());
        }
        let model = self.model;
        let out = match (&node.parent, node.token) {
            (Some(parent), Some(token)) => {
                let prev = self.pred(parent)?;
                timed(&mut self.stats.predictor_time, || model.predict(&prev, token))?
            }
            _ => timed(&mut self.stats.predictor_time, || model.start())?,
        };
        self.stats.predictor_calls += 1;
        let out = Rc::new(out);
        let _ = node.pred.set(out.clone());
        Ok(out)
    }

    fn blank(&mut self, tokens: &[TokenId], node: &Node, enc: &EncFrame) -> Result<BlankScore> {
        if let Some(e) = self.cache.get(tokens) {
            return Ok(e.blank);
        }
        let pred = self.pred(node)?;
        let model = self.model;
        let entry = if self.factorized {
            let blank = timed(&mut self.stats.joiner_time, || model.blank_score(enc, &pred))?;
            self.stats.blank_joiner_calls += 1;
            CacheEntry { blank, nonblank: None }
        } else {
            let post = timed(&mut self.stats.joiner_time, || model.joiner_nonfactorized(enc, &pred))?;
            self.stats.full_joiner_calls += 1;
            let log_complement = (-post.p_blank).ln_1p();
            let blank = BlankScore {
                logit: post.log_blank - log_complement,
                prob: post.p_blank,
                log_prob: post.log_blank,
                log_complement,
            };
            CacheEntry {
                blank,
                nonblank: post.log_nonblank.map(Rc::new),
            }
        };
        if let Some(rec) = &mut self.blank_probs {
            rec.push(entry.blank.prob);
        }
        let blank = entry.blank;
        self.cache.insert(tokens.to_vec(), entry);
        Ok(blank)
    }

    /// Log non-blank probabilities, already scaled by `1 - p_blank`.
    fn nonblank(&mut self, tokens: &[TokenId], node: &Node, enc: &EncFrame) -> Result<Rc<Vec<f64>>> {
        let blank = self.blank(tokens, node, enc)?;
        if let Some(nb) = self.cache.get(tokens).and_then(|e| e.nonblank.clone()) {
            return Ok(nb);
        }
        let pred = self.pred(node)?;
        let model = self.model;
        let logs = timed(&mut self.stats.joiner_time, || model.nonblank_log_probs(enc, &pred, &blank))?;
        self.stats.nonblank_joiner_calls += 1;
        let logs = Rc::new(logs);
        if let Some(e) = self.cache.get_mut(tokens) {
            e.nonblank = Some(logs.clone());
        }
        Ok(logs)
    }
}

/// Streaming beam search. `THRESHOLD = false` compiles the skip test out
/// entirely, which is the reference the thresholded search must reproduce
/// when the threshold is disabled.
pub struct BeamSearch<'m, const THRESHOLD: bool = true> {
    cfg: BeamConfig,
    p_threshold: f64,
    eval: Evaluator<'m>,
    beam: Vec<Hyp>,
}

impl<'m, const THRESHOLD: bool> BeamSearch<'m, THRESHOLD> {
    pub fn new(model: &'m ModelWeights, cfg: BeamConfig) -> Result<Self> {
        cfg.validate()?;
        let factorized = model.is_factorized();
        Ok(BeamSearch {
            p_threshold: cfg.p_threshold(),
            eval: Evaluator {
                model,
                factorized,
                stats: RuntimeStats::new(factorized),
                cache: HashMap::new(),
                blank_probs: cfg.record_blank_probs.then(Vec::new),
            },
            beam: vec![Hyp {
                tokens: Vec::new(),
                log_prob: 0.0,
                node: Node::root(),
                emitted: 0,
            }],
            cfg,
        })
    }

    #[inline]
    fn skip_nonblank(&self, blank: &BlankScore) -> bool {
        THRESHOLD && self.eval.factorized && blank.prob > self.p_threshold
    }

    fn can_extend(&self, h: &Hyp) -> bool {
        h.emitted < self.cfg.max_symbols_per_frame && self.cfg.max_output_len.is_none_or(|m| h.tokens.len() < m)
    }

    /// `log Pr(long | short, t)`: the non-blank path from `short` to `long`
    /// within this frame. A skipped step contributes probability zero.
    fn extension(&mut self, short_len: usize, long: &Hyp, enc: &EncFrame) -> Result<f64> {
        let mut states = Vec::with_capacity(long.tokens.len() - short_len);
        let mut cur = long.node.clone();
        for _ in short_len..long.tokens.len() {
            let parent = cur.parent.clone().expect("node depth matches token count");
            states.push(parent.clone());
            cur = parent;
        }
        states.reverse();
        let mut lp = 0.0;
        for (i, node) in states.iter().enumerate() {
            let d = short_len + i;
            let prefix = &long.tokens[..d];
            let blank = self.eval.blank(prefix, node, enc)?;
            if self.skip_nonblank(&blank) {
                return Ok(f64::NEG_INFINITY);
            }
            lp += self.eval.nonblank(prefix, node, enc)?[long.tokens[d] as usize];
        }
        Ok(lp)
    }

    /// Adds the probability of reaching each hypothesis through a shorter
    /// one in the beam, using the values from before any merge.
    fn merge_prefixes(&mut self, enc: &EncFrame) -> Result<()> {
        let beam = std::mem::take(&mut self.beam);
        let mut merged: Vec<f64> = beam.iter().map(|h| h.log_prob).collect();
        for (i, long) in beam.iter().enumerate() {
            for short in &beam {
                if short.tokens.len() < long.tokens.len() && long.tokens.starts_with(&short.tokens) {
                    let ext = self.extension(short.tokens.len(), long, enc)?;
                    merged[i] = log_add(merged[i], short.log_prob + ext);
                }
            }
        }
        self.beam = beam
            .into_iter()
            .zip(merged)
            .map(|(h, log_prob)| Hyp { log_prob, ..h })
            .collect();
        Ok(())
    }

    /// Consumes one encoder frame.
    pub fn step(&mut self, enc: &EncFrame) -> Result<()> {
        let start = Instant::now();
        self.eval.cache.clear();
        self.merge_prefixes(enc)?;

        let mut seen: HashSet<Vec<TokenId>> = self.beam.iter().map(|h| h.tokens.clone()).collect();
        let mut a: BinaryHeap<Hyp> = std::mem::take(&mut self.beam).into_iter().collect();
        let mut b: Vec<Hyp> = Vec::new();
        let w = self.cfg.beam_width;

        while let Some(best) = a.peek() {
            let better = b.iter().filter(|h| h.log_prob > best.log_prob).count();
            if better >= w {
                break;
            }
            let y = a.pop().expect("peeked");
            let calls = self.eval.stats.blank_joiner_calls;
            let blank = self.eval.blank(&y.tokens, &y.node, enc)?;
            b.push(Hyp {
                log_prob: y.log_prob + blank.log_prob,
                emitted: 0,
                ..y.clone()
            });
            if !self.can_extend(&y) {
                self.eval.stats.capped_blank_calls += self.eval.stats.blank_joiner_calls - calls;
                continue;
            }
            if self.skip_nonblank(&blank) {
                continue;
            }
            let nb = self.eval.nonblank(&y.tokens, &y.node, enc)?;
            for (k, lp) in nb.iter().enumerate() {
                let mut tokens = y.tokens.clone();
                tokens.push(k as TokenId);
                if seen.contains(&tokens) {
                    continue;
                }
                seen.insert(tokens.clone());
                a.push(Hyp {
                    node: Node::child(&y.node, k as TokenId),
                    tokens,
                    log_prob: y.log_prob + lp,
                    emitted: y.emitted + 1,
                });
            }
        }

        b.sort_by(|x, y| y.cmp(x));
        b.truncate(w);
        self.beam = b;
        self.eval.stats.frames += 1;
        self.eval.stats.total_time += start.elapsed();
        Ok(())
    }

    /// Current beam as `(tokens, log_prob)`, best first.
    pub fn beam(&self) -> Vec<(Vec<TokenId>, f64)> {
        self.beam.iter().map(|h| (h.tokens.clone(), h.log_prob)).collect()
    }

    pub fn stats(&self) -> &RuntimeStats {
        &self.eval.stats
    }

    pub fn finish(self) -> Result<DecodeResult> {
        let mut stats = self.eval.stats;
        if stats.frames == 0 {
            return Err(Error::Empty("encoder frames"));
        }
        stats.set_audio(stats.frames, self.eval.model.config.frame_duration_ms);
        let norm = self.cfg.length_normalize;
        let mut nbest: Vec<NBestEntry> = self
            .beam
            .into_iter()
            .map(|h| NBestEntry {
                score: if norm {
                    normalized_score(h.log_prob, h.tokens.len())
                } else {
                    h.log_prob
                },
                log_prob: h.log_prob,
                tokens: h.tokens,
            })
            .collect();
        nbest.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then_with(|| rank(y.log_prob, &y.tokens, x.log_prob, &x.tokens))
        });
        Ok(DecodeResult {
            nbest,
            stats,
            blank_probs: self.eval.blank_probs,
        })
    }
}

fn run<const THRESHOLD: bool>(model: &ModelWeights, frames: &[EncFrame], cfg: &BeamConfig) -> Result<DecodeResult> {
    let start = Instant::now();
    if frames.is_empty() {
        return Err(Error::Empty("encoder frames"));
    }
    let mut search = BeamSearch::<THRESHOLD>::new(model, cfg.clone())?;
    for f in frames {
        search.step(f)?;
    }
    let mut out = search.finish()?;
    out.stats.total_time = start.elapsed();
    Ok(out)
}

/// Beam search over precomputed encoder frames with blank thresholding.
pub fn beam_search(model: &ModelWeights, frames: &[EncFrame], cfg: &BeamConfig) -> Result<DecodeResult> {
    run::<true>(model, frames, cfg)
}

/// Same search with the threshold test removed at compile time; the
/// threshold in `cfg` is ignored.
pub fn beam_search_unthresholded(model: &ModelWeights, frames: &[EncFrame], cfg: &BeamConfig) -> Result<DecodeResult> {
    run::<false>(model, frames, cfg)
}

/// Encodes all features, then searches. Encoder work is included in the stats.
pub fn decode_features(model: &ModelWeights, features: &[Vec<f32>], cfg: &BeamConfig) -> Result<DecodeResult> {
    let start = Instant::now();
    let mut enc_time = Duration::ZERO;
    let frames = timed(&mut enc_time, || model.encode(features))?;
    let mut out = beam_search(model, &frames, cfg)?;
    out.stats.encoder_time = enc_time;
    out.stats.encoder_calls = frames.len() as u64;
    out.stats.total_time = start.elapsed();
    Ok(out)
}

/// Runs the encoder on its own thread, feeding frames to the search through
/// a bounded queue of `queue` frames.
pub fn decode_pipelined(
    model: &ModelWeights,
    features: &[Vec<f32>],
    cfg: &BeamConfig,
    queue: usize,
) -> Result<DecodeResult> {
    let start = Instant::now();
    let n = model.encoded_len(features.len());
    if n == 0 {
        return Err(Error::Empty("encoder frames"));
    }
    let (tx, rx) = sync_channel::<Result<EncFrame>>(queue.max(1));
    std::thread::scope(|s| {
        let producer = s.spawn(move || {
            let mut time = Duration::ZERO;
            let mut calls = 0u64;
            for j in 0..n {
                let frame = timed(&mut time, || model.encode_step(features, j));
                calls += 1;
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
            (time, calls)
        });
        let rx = rx;
        let mut search = BeamSearch::<true>::new(model, cfg.clone())?;
        for frame in rx.iter() {
            search.step(&frame?)?;
        }
        let (enc_time, enc_calls) = producer.join().expect("encoder thread panicked");
        let mut out = search.finish()?;
        out.stats.encoder_time = enc_time;
        out.stats.encoder_calls = enc_calls;
        out.stats.total_time = start.elapsed();
        Ok(out)
    })
}

/// `log Pr(longer | shorter, t)` along the only non-blank path between them,
/// without thresholding. `shorter` must be a proper prefix of `longer`.
pub fn prefix_extension_prob(
    model: &ModelWeights,
    shorter: &Hypothesis,
    longer: &Hypothesis,
    enc: &EncFrame,
) -> Result<f64> {
    if shorter.tokens.len() >= longer.tokens.len() || !longer.tokens.starts_with(&shorter.tokens) {
        return Err(Error::contract("shorter hypothesis is not a proper prefix of longer"));
    }
    let mut pred = shorter.pred.clone();
    let mut lp = 0.0;
    let suffix = &longer.tokens[shorter.tokens.len()..];
    for (i, &tok) in suffix.iter().enumerate() {
        let post = model.posterior(enc, &pred)?;
        let logs = post.log_nonblank.expect("posterior carries non-blank terms");
        lp += *logs
            .get(tok as usize)
            .ok_or_else(|| Error::contract(format!("token {tok} out of range")))?;
        if i + 1 < suffix.len() {
            pred = model.predict(&pred, tok)?;
        }
    }
    Ok(lp)
}
