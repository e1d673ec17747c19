//! Batch decoding over utterance suites, threshold sweeps, and the oracle and
//! never-skip self-checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    beam_search, beam_search_unthresholded, exhaustive_decode, BeamConfig, DecodeResult, OracleLimits, Threshold,
};
use crate::error::{Error, Result};
use crate::io::{ConfigEcho, StatsReport, UtteranceReport};
use crate::metrics::RuntimeStats;
use crate::model::{JoinerKind, ModelWeights};
use crate::power::{estimate_energy, profiles_from_stats, EnergyBreakdown, Footprint, PowerParams, ASSUMPTIONS};
use crate::suite::Utterance;
use crate::synth::{random_frames, random_small_model};

/// Decodes every utterance, in order. `jobs` worker threads, one utterance
/// per task; each decode is single-threaded.
pub fn decode_all(model: &ModelWeights, utts: &[Utterance], cfg: &BeamConfig, jobs: usize) -> Result<Vec<DecodeResult>> {
    if utts.is_empty() {
        return Err(Error::Empty("utterances"));
    }
    if jobs <= 1 {
        return utts.iter().map(|u| beam_search(model, &u.frames, cfg)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| utts.par_iter().map(|u| beam_search(model, &u.frames, cfg)).collect())
}

/// Sum of the per-utterance counters.
pub fn pooled_stats(results: &[DecodeResult]) -> RuntimeStats {
    let mut total = RuntimeStats::new(results.first().is_some_and(|r| r.stats.factorized));
    for r in results {
        total += &r.stats;
    }
    total
}

/// Energy for pooled counters under a footprint.
pub fn energy_for(stats: &RuntimeStats, footprint: &[Footprint], params: &PowerParams) -> Result<EnergyBreakdown> {
    Ok(estimate_energy(&profiles_from_stats(footprint, stats)?, params))
}

pub fn build_report(
    model_name: &str,
    model: &ModelWeights,
    utts: &[Utterance],
    results: &[DecodeResult],
    cfg: &BeamConfig,
    power: Option<(&[Footprint], &PowerParams)>,
) -> Result<StatsReport> {
    let reports = utts
        .iter()
        .zip(results)
        .map(|(u, r)| UtteranceReport::new(u.id.clone(), r))
        .collect::<Result<Vec<_>>>()?;
    let mut report = StatsReport::new(ConfigEcho::new(model_name, model.is_factorized(), cfg), reports)?;
    if let Some((fp, params)) = power {
        report.energy = Some(energy_for(&report.aggregate.totals, fp, params)?);
        report.power_assumptions = ASSUMPTIONS.iter().map(|s| s.to_string()).collect();
    }
    Ok(report)
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub thresh: String,
    pub p_threshold: f64,
    /// Mean of per-utterance NBP.
    pub nbp: f64,
    /// NBP from pooled call counts.
    pub pooled_nbp: f64,
    pub rtf_join: f64,
    pub rtf_all: f64,
    pub blank_calls: u64,
    pub nonblank_calls: u64,
    pub full_calls: u64,
    /// Total energy in pJ, when a footprint was given.
    pub energy_pj: Option<f64>,
}

/// Default sweep: every logit threshold plus DISABLED.
pub fn default_sweep() -> Vec<Threshold> {
    Threshold::SWEEP
        .iter()
        .map(|&x| Threshold::Logit(x))
        .chain(std::iter::once(Threshold::Disabled))
        .collect()
}

pub fn bench_sweep(
    model: &ModelWeights,
    utts: &[Utterance],
    sweep: &[Threshold],
    base: &BeamConfig,
    jobs: usize,
    power: Option<(&[Footprint], &PowerParams)>,
) -> Result<Vec<BenchRow>> {
    sweep
        .iter()
        .map(|&thresh| {
            let cfg = BeamConfig {
                thresh,
                ..base.clone()
            };
            let results = decode_all(model, utts, &cfg, jobs)?;
            let report = build_report("", model, utts, &results, &cfg, power)?;
            let a = &report.aggregate;
            Ok(BenchRow {
                thresh: thresh.label(),
                p_threshold: cfg.p_threshold(),
                nbp: a.nbp,
                pooled_nbp: a.pooled_nbp,
                rtf_join: a.rtf_join,
                rtf_all: a.rtf_all,
                blank_calls: a.totals.blank_joiner_calls,
                nonblank_calls: a.totals.nonblank_joiner_calls,
                full_calls: a.totals.full_joiner_calls,
                energy_pj: report.energy.map(|e| e.total),
            })
        })
        .collect()
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckParams {
    pub trials: usize,
    pub seed: u64,
    pub max_frames: usize,
    pub max_vocab: usize,
    pub max_len: usize,
    pub beam_width: usize,
    pub join_dim: usize,
}

impl Default for OracleCheckParams {
    fn default() -> Self {
        OracleCheckParams {
            trials: 100,
            seed: 0,
            max_frames: 3,
            max_vocab: 2,
            max_len: 3,
            beam_width: 16,
            join_dim: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub trials: usize,
    pub passes: usize,
    /// Largest `|beam log_prob - oracle log_prob|` over matching winners.
    pub max_deviation: f64,
    pub mismatches: Vec<String>,
    /// True when the beam can hold every candidate sequence, so any mismatch
    /// is a failure; otherwise mismatches are reported only.
    pub exact: bool,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        !self.exact || self.passes == self.trials
    }
}

fn sequence_count(vocab: usize, max_len: usize) -> usize {
    (0..=max_len).map(|l| vocab.pow(l as u32)).sum()
}

/// Random small instances: beam search winner and probability against the
/// exhaustive lattice oracle.
pub fn oracle_check(p: &OracleCheckParams) -> Result<OracleCheckReport> {
    let limits = OracleLimits::default();
    let exact = p.beam_width >= sequence_count(p.max_vocab, p.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut report = OracleCheckReport {
        trials: p.trials,
        passes: 0,
        max_deviation: 0.0,
        mismatches: Vec::new(),
        exact,
    };
    for i in 0..p.trials {
        let vocab = rng.random_range(1..=p.max_vocab);
        let frames = rng.random_range(1..=p.max_frames);
        let kind = if rng.random_bool(0.5) {
            JoinerKind::Factorized
        } else {
            JoinerKind::NonFactorized
        };
        let model = random_small_model(vocab, p.join_dim, kind, rng.random())?;
        let enc = random_frames(&mut rng, frames, p.join_dim);
        let cfg = BeamConfig {
            beam_width: p.beam_width,
            max_output_len: Some(p.max_len),
            ..Default::default()
        };
        let beam = beam_search(&model, &enc, &cfg)?;
        let oracle = exhaustive_decode(&model, &enc, p.max_len, cfg.length_normalize, limits)?;
        let dev = (beam.best().log_prob - oracle.log_prob).abs();
        if beam.best().tokens == oracle.tokens && dev < 1e-6 {
            report.passes += 1;
            report.max_deviation = report.max_deviation.max(dev);
        } else {
            report.mismatches.push(format!(
                "trial {i}: beam {:?} ({:.9}) vs oracle {:?} ({:.9})",
                beam.best().tokens,
                beam.best().log_prob,
                oracle.tokens,
                oracle.log_prob
            ));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverSkipReport {
    pub trials: usize,
    pub passes: usize,
    pub max_score_diff: f64,
}

/// Random factorized models: a DISABLED-threshold decode against the build
/// with the threshold test compiled out.
pub fn never_skip_check(trials: usize, seed: u64) -> Result<NeverSkipReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = NeverSkipReport {
        trials,
        passes: 0,
        max_score_diff: 0.0,
    };
    for _ in 0..trials {
        let vocab = rng.random_range(2..=8);
        let dim = rng.random_range(4..=12);
        let model = random_small_model(vocab, dim, JoinerKind::Factorized, rng.random())?;
        let t = rng.random_range(4..=12);
        let frames = random_frames(&mut rng, t, dim);
        let cfg = BeamConfig {
            beam_width: rng.random_range(1..=6),
            thresh: Threshold::Disabled,
            ..Default::default()
        };
        let a = beam_search(&model, &frames, &cfg)?;
        let b = beam_search_unthresholded(&model, &frames, &cfg)?;
        let diff = (a.best().score - b.best().score).abs();
        report.max_score_diff = report.max_score_diff.max(diff);
        if a.best().tokens == b.best().tokens && diff <= 1e-9 {
            report.passes += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{generate_suite, SuiteSpec};
    use crate::synth::{spiky_model, Preset};

    fn small_suite() -> Vec<Utterance> {
        let spec = SuiteSpec {
            utterances: 4,
            min_frames: 8,
            max_frames: 12,
            dim: 64,
            seed: 3,
        };
        generate_suite(&spec, 0.5).unwrap()
    }

    #[test]
    fn parallel_decode_matches_sequential() {
        let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 2).unwrap();
        let utts = small_suite();
        let cfg = BeamConfig::with_thresh(Threshold::Logit(2.0));
        let a = decode_all(&model, &utts, &cfg, 1).unwrap();
        let b = decode_all(&model, &utts, &cfg, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.nbest, y.nbest);
            assert_eq!(x.stats.without_timing(), y.stats.without_timing());
        }
    }

    #[test]
    fn sweep_has_one_row_per_threshold() {
        let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 2).unwrap();
        let utts = small_suite();
        let rows = bench_sweep(&model, &utts, &default_sweep(), &BeamConfig::default(), 2, None).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[7].thresh, "disabled");
        assert_eq!(rows[7].nbp, 100.0);
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("thresh,p_threshold,nbp"));
    }

    #[test]
    fn oracle_check_passes_small_instances() {
        let r = oracle_check(&OracleCheckParams {
            trials: 10,
            ..Default::default()
        })
        .unwrap();
        assert!(r.exact);
        assert_eq!(r.passes, 10, "{:?}", r.mismatches);
    }

    #[test]
    fn greedy_oracle_mismatches_do_not_fail() {
        let r = oracle_check(&OracleCheckParams {
            trials: 20,
            beam_width: 1,
            ..Default::default()
        })
        .unwrap();
        assert!(!r.exact);
        assert!(r.passed());
    }

    #[test]
    fn never_skip_small_run() {
        let r = never_skip_check(5, 1).unwrap();
        assert_eq!(r.passes, 5);
        assert_eq!(r.max_score_diff, 0.0);
    }
}
