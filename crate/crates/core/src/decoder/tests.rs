use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::metrics::nbp;
use crate::model::fixture::{make_posterior_model, random_table, PosteriorTable, TableEntry};
use crate::model::{EncFrame, JoinerKind};
use crate::synth::{random_frames, random_small_model};

fn uniform_table(frames: usize, max_u: usize, vocab: usize, p_blank: f64) -> PosteriorTable {
    let entry = TableEntry {
        p_blank,
        p_nonblank: vec![(1.0 - p_blank) / vocab as f64; vocab],
    };
    PosteriorTable {
        vocab_size: vocab,
        entries: vec![vec![entry; max_u + 1]; frames],
    }
}

fn small_case(seed: u64, kind: JoinerKind) -> (crate::model::ModelWeights, Vec<EncFrame>) {
    let model = random_small_model(2, 6, kind, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = random_frames(&mut rng, 3, 6);
    (model, frames)
}

#[test]
fn threshold_probability_examples() {
    assert_eq!(threshold_from_logit(Threshold::Disabled), 1.0);
    assert!((Threshold::Logit(8.0).probability() - 0.999_664_649).abs() < 1e-9);
    assert!((Threshold::Logit(2.0).probability() - 0.880_797_078).abs() < 1e-9);
    assert_eq!(Threshold::Probability(0.88).probability(), 0.88);
}

#[test]
fn threshold_parses() {
    assert_eq!("disabled".parse::<Threshold>().unwrap(), Threshold::Disabled);
    assert_eq!("2".parse::<Threshold>().unwrap(), Threshold::Logit(2.0));
    assert_eq!("p=0.5".parse::<Threshold>().unwrap(), Threshold::Probability(0.5));
    assert!("p=1.5".parse::<Threshold>().is_err());
    assert!("abc".parse::<Threshold>().is_err());
    assert!("nan".parse::<Threshold>().is_err());
}

#[test]
fn config_validation() {
    let bad = BeamConfig {
        beam_width: 0,
        ..Default::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let (model, frames) = small_case(1, JoinerKind::Factorized);
    assert!(beam_search(&model, &frames, &bad).is_err());
}

#[test]
fn empty_input_is_an_error() {
    let (model, _) = small_case(1, JoinerKind::Factorized);
    let err = beam_search(&model, &[], &BeamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}

#[test]
fn disabled_threshold_matches_unthresholded_build() {
    for seed in 0..10 {
        let (model, frames) = small_case(seed, JoinerKind::Factorized);
        let cfg = BeamConfig::with_thresh(Threshold::Disabled);
        let a = beam_search(&model, &frames, &cfg).unwrap();
        let b = beam_search_unthresholded(&model, &frames, &cfg).unwrap();
        assert_eq!(a.nbest, b.nbest);
        assert_eq!(a.stats.without_timing(), b.stats.without_timing());
        assert_eq!(nbp(&a.stats).unwrap(), 100.0);
    }
}

#[test]
fn full_beam_matches_exhaustive_oracle() {
    for seed in 0..20 {
        for kind in [JoinerKind::Factorized, JoinerKind::NonFactorized] {
            let (model, frames) = small_case(seed, kind);
            let cfg = BeamConfig {
                beam_width: 16,
                max_output_len: Some(3),
                ..Default::default()
            };
            let beam = beam_search(&model, &frames, &cfg).unwrap();
            let oracle = exhaustive_decode(&model, &frames, 3, true, OracleLimits::default()).unwrap();
            assert_eq!(beam.best().tokens, oracle.tokens, "seed {seed} {kind:?}");
            assert!((beam.best().log_prob - oracle.log_prob).abs() < 1e-6);
            // every sequence fits in the beam, so every probability is exact
            assert_eq!(beam.nbest.len(), oracle.all.len());
            for (tokens, lp) in &oracle.all {
                let e = beam.nbest.iter().find(|e| &e.tokens == tokens).unwrap();
                assert!((e.log_prob - lp).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn oracle_probabilities_sum_to_one_without_length_cap() {
    // with a single frame the total over all sequences up to length L is
    // 1 - Pr(longer sequences), which tends to one as L grows
    let (model, frames) = small_case(3, JoinerKind::Factorized);
    let r = exhaustive_decode(&model, &frames[..1], 4, true, OracleLimits::default()).unwrap();
    let total: f64 = r.all.iter().map(|(_, lp)| lp.exp()).sum();
    assert!(total <= 1.0 + 1e-9);
    assert!(total > 0.5);
}

#[test]
fn oracle_rejects_large_instances() {
    let (model, frames) = small_case(3, JoinerKind::Factorized);
    let err = exhaustive_decode(&model, &frames, 5, true, OracleLimits::default()).unwrap_err();
    assert!(matches!(err, Error::TooLarge(_)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let long = random_frames(&mut rng, 6, 6);
    assert!(exhaustive_decode(&model, &long, 2, true, OracleLimits::default()).is_err());
}

#[test]
fn confident_blanks_skip_all_nonblank_work() {
    let fx = make_posterior_model(&uniform_table(4, 2, 3, 0.9999)).unwrap();
    let cfg = BeamConfig::with_thresh(Threshold::Logit(8.0));
    let r = beam_search(&fx.model, &fx.frames, &cfg).unwrap();
    assert_eq!(r.stats.nonblank_joiner_calls, 0);
    assert_eq!(nbp(&r.stats).unwrap(), 0.0);
    assert!(r.best().tokens.is_empty());
    assert_eq!(r.nbest.len(), 1);
    assert!((r.best().log_prob - 4.0 * 0.9999f64.ln()).abs() < 1e-6);
}

#[test]
fn blank_at_threshold_is_not_skipped() {
    // skip only when p_blank is strictly above the threshold
    let fx = make_posterior_model(&uniform_table(2, 2, 2, 0.5)).unwrap();
    let cfg = BeamConfig::with_thresh(Threshold::Logit(0.0));
    let r = beam_search(&fx.model, &fx.frames, &cfg).unwrap();
    assert!(r.stats.nonblank_joiner_calls > 0);
}

#[test]
fn uncertain_blanks_are_never_skipped() {
    let fx = make_posterior_model(&uniform_table(3, 3, 2, 0.6)).unwrap();
    let cfg = BeamConfig::with_thresh(Threshold::Logit(2.0));
    let r = beam_search(&fx.model, &fx.frames, &cfg).unwrap();
    assert_eq!(nbp(&r.stats).unwrap(), 100.0);
}

#[test]
fn nonfactorized_ignores_threshold() {
    let (model, frames) = small_case(4, JoinerKind::NonFactorized);
    let cfg = BeamConfig::with_thresh(Threshold::Logit(-20.0));
    let a = beam_search(&model, &frames, &cfg).unwrap();
    let b = beam_search(&model, &frames, &BeamConfig::default()).unwrap();
    assert_eq!(a.nbest, b.nbest);
    assert_eq!(a.stats.blank_joiner_calls, 0);
    assert!(a.stats.full_joiner_calls > 0);
    assert_eq!(nbp(&a.stats).unwrap(), 100.0);
}

#[test]
fn blank_probs_are_recorded_per_call() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let table = random_table(&mut rng, 4, 8, 3, 0.3..0.99);
    let fx = make_posterior_model(&table).unwrap();
    let cfg = BeamConfig {
        record_blank_probs: true,
        thresh: Threshold::Logit(2.0),
        ..Default::default()
    };
    let r = beam_search(&fx.model, &fx.frames, &cfg).unwrap();
    let probs = r.blank_probs.unwrap();
    assert_eq!(probs.len() as u64, r.stats.blank_joiner_calls);
    let above = probs.iter().filter(|&&p| p > Threshold::Logit(2.0).probability()).count() as u64;
    let extendable = r.stats.blank_joiner_calls - r.stats.capped_blank_calls;
    assert_eq!(r.stats.nonblank_joiner_calls, extendable - above);
}

#[test]
fn fixture_posteriors_drive_the_search() {
    // two frames, strongly emitting token 1 at u=0 then blank
    let emit = TableEntry {
        p_blank: 0.05,
        p_nonblank: vec![0.05, 0.9],
    };
    let stop = TableEntry {
        p_blank: 0.9,
        p_nonblank: vec![0.05, 0.05],
    };
    let table = PosteriorTable {
        vocab_size: 2,
        entries: vec![vec![emit.clone(), stop.clone(), stop.clone()], vec![stop.clone(); 3]],
    };
    let fx = make_posterior_model(&table).unwrap();
    let r = beam_search(&fx.model, &fx.frames, &BeamConfig::default()).unwrap();
    assert_eq!(r.best().tokens, vec![1]);
}

#[test]
fn width_one_keeps_a_single_hypothesis() {
    let (model, frames) = small_case(5, JoinerKind::Factorized);
    let cfg = BeamConfig {
        beam_width: 1,
        ..Default::default()
    };
    let r = beam_search(&model, &frames, &cfg).unwrap();
    assert_eq!(r.nbest.len(), 1);
}

#[test]
fn streaming_matches_batch() {
    let (model, frames) = small_case(6, JoinerKind::Factorized);
    let cfg = BeamConfig::with_thresh(Threshold::Logit(1.0));
    let mut s = BeamSearch::<true>::new(&model, cfg.clone()).unwrap();
    for f in &frames {
        s.step(f).unwrap();
    }
    let streamed = s.finish().unwrap();
    let batch = beam_search(&model, &frames, &cfg).unwrap();
    assert_eq!(streamed.nbest, batch.nbest);
    assert_eq!(streamed.stats.frames, 3);
    assert!((streamed.stats.audio_duration.as_secs_f64() - 0.12).abs() < 1e-9);
}

#[test]
fn pipelined_matches_sequential() {
    let (model, _) = small_case(7, JoinerKind::Factorized);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features: Vec<Vec<f32>> = random_frames(&mut rng, 5, 6).into_iter().map(|f| f.vec).collect();
    let cfg = BeamConfig::with_thresh(Threshold::Logit(2.0));
    let a = decode_pipelined(&model, &features, &cfg, 2).unwrap();
    let b = decode_features(&model, &features, &cfg).unwrap();
    assert_eq!(a.nbest, b.nbest);
    assert_eq!(a.stats.encoder_calls, 5);
    assert_eq!(a.stats.without_timing(), b.stats.without_timing());
}

#[test]
fn prefix_extension_multiplies_posteriors() {
    let (model, frames) = small_case(8, JoinerKind::Factorized);
    let enc = &frames[0];
    let p0 = model.start().unwrap();
    let p1 = model.predict(&p0, 1).unwrap();
    let short = Hypothesis {
        tokens: vec![],
        log_prob: 0.0,
        pred: p0.clone(),
    };
    let long = Hypothesis {
        tokens: vec![1, 0],
        log_prob: 0.0,
        pred: model.predict(&p1, 0).unwrap(),
    };
    let a = model.posterior(enc, &p0).unwrap().p_nonblank.unwrap()[1];
    let b = model.posterior(enc, &p1).unwrap().p_nonblank.unwrap()[0];
    let lp = prefix_extension_prob(&model, &short, &long, enc).unwrap();
    assert!((lp - (a * b).ln()).abs() < 1e-9);
    assert!(prefix_extension_prob(&model, &long, &short, enc).is_err());
}

#[test]
fn length_normalization_selects_by_mean_log_prob() {
    for seed in 0..5 {
        let (model, frames) = small_case(seed, JoinerKind::Factorized);
        let r = beam_search(&model, &frames, &BeamConfig::default()).unwrap();
        for w in r.nbest.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let e = r.best();
        assert_eq!(e.score, normalized_score(e.log_prob, e.tokens.len()));
    }
}
