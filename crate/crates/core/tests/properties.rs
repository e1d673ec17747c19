use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rnnt_core::decoder::{beam_search, beam_search_unthresholded, BeamConfig, Threshold};
use rnnt_core::math::{quantize_int8, Tensor2D};
use rnnt_core::metrics::nbp;
use rnnt_core::model::JoinerKind;
use rnnt_core::synth::{random_frames, random_small_model};

fn kind(factorized: bool) -> JoinerKind {
    if factorized {
        JoinerKind::Factorized
    } else {
        JoinerKind::NonFactorized
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posteriors_normalize(seed in any::<u64>(), vocab in 1usize..8, factorized in any::<bool>()) {
        let model = random_small_model(vocab, 5, kind(factorized), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pred = model.start().unwrap();
        for (i, enc) in random_frames(&mut rng, 4, 5).iter().enumerate() {
            let p = model.posterior(enc, &pred).unwrap();
            let total = p.p_blank + p.p_nonblank.as_ref().unwrap().iter().sum::<f64>();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            pred = model.predict(&pred, (i % vocab) as u32).unwrap();
        }
    }

    #[test]
    fn decode_invariants(seed in any::<u64>(), vocab in 1usize..6, width in 1usize..6, thresh in -2.0f64..8.0) {
        let model = random_small_model(vocab, 5, JoinerKind::Factorized, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let frames = random_frames(&mut rng, 6, 5);
        let cfg = BeamConfig { beam_width: width, ..BeamConfig::with_thresh(Threshold::Logit(thresh)) };
        let r = beam_search(&model, &frames, &cfg).unwrap();
        prop_assert!(!r.nbest.is_empty() && r.nbest.len() <= width);
        for e in &r.nbest {
            prop_assert!(e.log_prob <= 1e-9);
            prop_assert!(e.tokens.iter().all(|&k| (k as usize) < vocab));
        }
        let s = &r.stats;
        prop_assert!(s.nonblank_joiner_calls + s.capped_blank_calls <= s.blank_joiner_calls);
        let pct = nbp(s).unwrap();
        prop_assert!((0.0..=100.0).contains(&pct));
    }

    #[test]
    fn disabled_threshold_is_a_no_op(seed in any::<u64>(), vocab in 1usize..6, width in 1usize..8) {
        let model = random_small_model(vocab, 5, JoinerKind::Factorized, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let frames = random_frames(&mut rng, 5, 5);
        let cfg = BeamConfig { beam_width: width, ..BeamConfig::with_thresh(Threshold::Disabled) };
        let a = beam_search(&model, &frames, &cfg).unwrap();
        let b = beam_search_unthresholded(&model, &frames, &cfg).unwrap();
        prop_assert_eq!(a.nbest, b.nbest);
        prop_assert_eq!(nbp(&a.stats).unwrap(), 100.0);
    }

    #[test]
    fn quantization_error_within_half_step(data in prop::collection::vec(-50.0f32..50.0, 1..64)) {
        let n = data.len();
        let t = Tensor2D::new(1, n, data.clone()).unwrap();
        let q = quantize_int8(&t);
        let scale = f64::from(q.scale());
        for (x, &v) in data.iter().zip(q.qdata()) {
            prop_assert!((f64::from(*x) - f64::from(v) * scale).abs() <= scale / 2.0);
        }
    }
}
