//! Synthetic "spiky" utterance suites with a known blank-probability mix.
//!
//! Every frame carries a blank logit on coordinate 0 of the joint space; spiky
//! models route that coordinate straight to the blank path. Per frame, with
//! probability `q` the logit comes from a spike mode (blank almost certain),
//! otherwise from one of the lower modes:
//!
//! | mode        | weight          | logit range     | p_blank          |
//! |-------------|-----------------|-----------------|------------------|
//! | very high   | `q * 0.02`      | U[16.5, 20]     | > 0.9999999      |
//! | high        | `q * 0.98`      | U[8.5, 15.5]    | (0.9997, 1)      |
//! | confident   | `(1 - q) * 0.28`| U[4.0, 8.0]     | (0.98, 0.9997)   |
//! | likely      | `(1 - q) * 0.15`| U[2.1, 3.8]     | (0.88, 0.98)     |
//! | leaning     | `(1 - q) * 0.06`| U[1.05, 1.95]   | (0.73, 0.88)     |
//! | weak        | `(1 - q) * 0.05`| U[0.55, 0.95]   | (0.62, 0.73)     |
//! | near even   | `(1 - q) * 0.03`| U[0.15, 0.45]   | (0.53, 0.62)     |
//! | emission    | `(1 - q) * 0.43`| U[-1.5, 0.05]   | (0.18, 0.52)     |
//!
//! Frame weights are not call weights: an emitting frame expands far more
//! hypotheses than a spike frame, so it makes more blank calls. The weights
//! above were set from measured calls per frame so that the call-weighted
//! distribution falls off across the standard thresholds rather than
//! dropping straight from the spike fraction to the emission floor.
//!
//! The remaining coordinates are Gaussian content. Each frame consumes the
//! same random draws whatever its mode, so suites generated with different
//! `q` and the same seed share their content and differ only in mode choice.
//! That makes the calibrated fraction monotone in `q`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{BeamConfig, Threshold};
use crate::error::{Error, Result};
use crate::harness::decode_all;
use crate::io::{load_trace, save_trace, TraceFile};
use crate::model::{EncFrame, ModelWeights};
use crate::synth::CONTENT_STD;

/// Blank probability whose exceedance fraction a suite is calibrated to.
pub const SPIKE_PROB: f64 = 0.9997;

const VERY_HIGH_SHARE: f64 = 0.02;

/// Non-spike modes as `(weight, lo, hi)`; weights sum to one.
const LOW_MODES: [(f64, f64, f64); 6] = [
    (0.28, 4.0, 8.0),
    (0.15, 2.1, 3.8),
    (0.06, 1.05, 1.95),
    (0.05, 0.55, 0.95),
    (0.03, 0.15, 0.45),
    (0.43, -1.5, 0.05),
];

/// Draws the blank logit for one frame from three uniforms.
pub fn mixture_logit(q: f64, u_mode: f64, u_sub: f64, u_val: f64) -> f64 {
    let lerp = |lo: f64, hi: f64| lo + (hi - lo) * u_val;
    if u_mode < q {
        return if u_sub < VERY_HIGH_SHARE {
            lerp(16.5, 20.0)
        } else {
            lerp(8.5, 15.5)
        };
    }
    let mut acc = 0.0;
    for &(w, lo, hi) in &LOW_MODES[..LOW_MODES.len() - 1] {
        acc += w;
        if u_sub < acc {
            return lerp(lo, hi);
        }
    }
    let (_, lo, hi) = LOW_MODES[LOW_MODES.len() - 1];
    lerp(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub utterances: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Joint-space dimension of the generated encoder frames.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            utterances: 20,
            min_frames: 60,
            max_frames: 120,
            dim: 64,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: Vec<EncFrame>,
}

impl Utterance {
    pub fn audio_seconds(&self, frame_duration_ms: f64) -> f64 {
        self.frames.len() as f64 * frame_duration_ms / 1000.0
    }
}

fn gaussian(rng: &mut impl Rng) -> f32 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Generates a suite with high-mode probability `q`.
pub fn generate_suite(spec: &SuiteSpec, q: f64) -> Result<Vec<Utterance>> {
    if spec.utterances == 0 || spec.min_frames == 0 || spec.min_frames > spec.max_frames || spec.dim == 0 {
        return Err(Error::Config(format!("invalid suite spec {spec:?}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("mixture weight {q} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.utterances)
        .map(|i| {
            let len = rng.random_range(spec.min_frames..=spec.max_frames);
            let frames = (0..len)
                .map(|t| {
                    let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                    let mut vec = Vec::with_capacity(spec.dim);
                    vec.push(mixture_logit(q, a, b, c) as f32);
                    vec.extend((1..spec.dim).map(|_| CONTENT_STD * gaussian(&mut rng)));
                    EncFrame { t, vec }
                })
                .collect();
            Utterance {
                id: format!("utt{i:04}"),
                frames,
            }
        })
        .collect())
}

/// Describes a generated suite; saved as `suite.json` next to the traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub spec: SuiteSpec,
    pub vocab_size: usize,
    pub frame_duration_ms: f64,
    /// High-mode probability.
    pub q: f64,
    /// Requested fraction of blank calls with `p_blank > SPIKE_PROB`.
    pub target: Option<f64>,
    /// Fraction measured under an unthresholded decode.
    pub measured: Option<f64>,
    pub blank_calls: Option<u64>,
    pub beam_width: usize,
    pub mixture: String,
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub manifest: SuiteManifest,
    pub utterances: Vec<Utterance>,
}

/// `(fraction of blank calls with p_blank > SPIKE_PROB, number of calls)` for
/// an unthresholded decode of `utts`.
pub fn spike_fraction(model: &ModelWeights, utts: &[Utterance], beam_width: usize, jobs: usize) -> Result<(f64, u64)> {
    let cfg = BeamConfig {
        beam_width,
        thresh: Threshold::Disabled,
        record_blank_probs: true,
        ..Default::default()
    };
    let results = decode_all(model, utts, &cfg, jobs)?;
    let (mut above, mut total) = (0u64, 0u64);
    for r in &results {
        let probs = r.blank_probs.as_deref().unwrap_or_default();
        above += probs.iter().filter(|&&p| p > SPIKE_PROB).count() as u64;
        total += probs.len() as u64;
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no blank probabilities recorded"));
    }
    Ok((above as f64 / total as f64, total))
}

fn manifest(model: &ModelWeights, spec: &SuiteSpec, q: f64, utts: &[Utterance], beam_width: usize) -> SuiteManifest {
    SuiteManifest {
        spec: spec.clone(),
        vocab_size: model.vocab_size(),
        frame_duration_ms: model.config.frame_duration_ms,
        q,
        target: None,
        measured: None,
        blank_calls: None,
        beam_width,
        mixture: "per frame: with prob q blank logit ~ 0.02 U[16.5,20] + 0.98 U[8.5,15.5]; \
                  else 0.28 U[4,8] + 0.15 U[2.1,3.8] + 0.06 U[1.05,1.95] + 0.05 U[0.55,0.95] \
                  + 0.03 U[0.15,0.45] + 0.43 U[-1.5,0.05]; content N(0,1)"
            .into(),
        utterances: utts.iter().map(|u| u.id.clone()).collect(),
    }
}

/// Builds a suite whose fraction of blank calls above `SPIKE_PROB` under an
/// unthresholded width-`beam_width` decode of `model` is `target` within
/// `tolerance`, by bisection on `q`.
pub fn calibrate_suite(
    model: &ModelWeights,
    spec: &SuiteSpec,
    target: f64,
    tolerance: f64,
    beam_width: usize,
    jobs: usize,
) -> Result<Suite> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Config(format!("target fraction {target} outside [0, 1]")));
    }
    if spec.dim != model.config.join_dim {
        return Err(Error::Config(format!(
            "suite dim {} does not match model joint dim {}",
            spec.dim, model.config.join_dim
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(f64, f64, u64, Vec<Utterance>)> = None;
    for _ in 0..30 {
        let q = 0.5 * (lo + hi);
        let utts = generate_suite(spec, q)?;
        let (frac, calls) = spike_fraction(model, &utts, beam_width, jobs)?;
        log::debug!("calibration q={q:.5} fraction={frac:.4} calls={calls}");
        let better = best.as_ref().is_none_or(|b| (frac - target).abs() < (b.1 - target).abs());
        if better {
            best = Some((q, frac, calls, utts));
        }
        if (frac - target).abs() <= tolerance / 4.0 {
            break;
        }
        if frac < target {
            lo = q;
        } else {
            hi = q;
        }
    }
    let (q, frac, calls, utts) = best.expect("at least one bisection step");
    if (frac - target).abs() > tolerance {
        return Err(Error::Config(format!(
            "calibration reached fraction {frac:.4}, target {target} +/- {tolerance}"
        )));
    }
    let mut m = manifest(model, spec, q, &utts, beam_width);
    m.target = Some(target);
    m.measured = Some(frac);
    m.blank_calls = Some(calls);
    Ok(Suite {
        manifest: m,
        utterances: utts,
    })
}

/// Uncalibrated suite with a fixed `q`.
pub fn fixed_suite(model: &ModelWeights, spec: &SuiteSpec, q: f64) -> Result<Suite> {
    let utts = generate_suite(spec, q)?;
    Ok(Suite {
        manifest: manifest(model, spec, q, &utts, BeamConfig::default().beam_width),
        utterances: utts,
    })
}

/// Writes `suite.json` and one encoded trace per utterance into `dir`.
pub fn save_suite(suite: &Suite, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = &suite.manifest;
    for u in &suite.utterances {
        let t = TraceFile::encoded(m.vocab_size, m.frame_duration_ms, &u.frames)?;
        save_trace(&t, &dir.join(format!("{}.trace", u.id)))?;
    }
    std::fs::write(dir.join("suite.json"), serde_json::to_string_pretty(m)? + "\n")?;
    Ok(())
}

/// Reads a suite written by [`save_suite`].
pub fn load_suite(dir: &Path) -> Result<Suite> {
    let manifest: SuiteManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("suite.json"))?)?;
    let utterances = manifest
        .utterances
        .iter()
        .map(|id| {
            let t = load_trace(&dir.join(format!("{id}.trace")))?;
            Ok(Utterance {
                id: id.clone(),
                frames: t.enc_frames()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Suite { manifest, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SuiteSpec {
        SuiteSpec {
            utterances: 3,
            min_frames: 10,
            max_frames: 20,
            dim: 8,
            seed: 1,
        }
    }

    #[test]
    fn mixture_modes() {
        assert!(mixture_logit(1.0, 0.5, 0.01, 0.5) > 16.0);
        let high = mixture_logit(1.0, 0.5, 0.5, 0.0);
        assert_eq!(high, 8.5);
        assert_eq!(mixture_logit(0.0, 0.5, 0.1, 1.0), 8.0);
        assert_eq!(mixture_logit(0.0, 0.5, 0.3, 0.0), 2.1);
        assert!(mixture_logit(0.0, 0.5, 0.9, 0.5) < 0.0);
        let total: f64 = LOW_MODES.iter().map(|m| m.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn high_mode_is_above_spike_probability() {
        let spike_logit = (SPIKE_PROB / (1.0 - SPIKE_PROB)).ln();
        assert!(8.5 > spike_logit && 7.5 < spike_logit);
    }

    #[test]
    fn same_seed_same_suite() {
        let a = generate_suite(&spec(), 0.4).unwrap();
        let b = generate_suite(&spec(), 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn content_is_shared_across_q() {
        let a = generate_suite(&spec(), 0.2).unwrap();
        let b = generate_suite(&spec(), 0.8).unwrap();
        for (ua, ub) in a.iter().zip(&b) {
            assert_eq!(ua.frames.len(), ub.frames.len());
            for (fa, fb) in ua.frames.iter().zip(&ub.frames) {
                assert_eq!(fa.vec[1..], fb.vec[1..]);
                // raising q can only move a frame into the high mode
                if fa.vec[0] > 8.0 {
                    assert_eq!(fa.vec[0], fb.vec[0]);
                }
            }
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = spec();
        s.min_frames = 30;
        assert!(generate_suite(&s, 0.5).is_err());
        assert!(generate_suite(&spec(), 1.5).is_err());
    }
}
