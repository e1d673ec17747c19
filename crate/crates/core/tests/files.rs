use rnnt_core::decoder::{beam_search, BeamConfig, Threshold};
use rnnt_core::harness::{build_report, decode_all};
use rnnt_core::io::{load_model, load_trace, read_model, save_model, save_trace, write_model, StatsReport, TraceFile};
use rnnt_core::power::{footprint, PowerParams};
use rnnt_core::suite::{fixed_suite, load_suite, save_suite, SuiteSpec};
use rnnt_core::synth::{spiky_model, Preset};

fn small_spec(dim: usize) -> SuiteSpec {
    SuiteSpec {
        utterances: 3,
        min_frames: 8,
        max_frames: 16,
        dim,
        seed: 5,
    }
}

#[test]
fn saved_suite_decodes_like_the_original() {
    let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 1).unwrap();
    let suite = fixed_suite(&model, &small_spec(model.config.join_dim), 0.6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_suite(&suite, dir.path()).unwrap();
    let back = load_suite(dir.path()).unwrap();
    assert_eq!(back, suite);

    let cfg = BeamConfig::with_thresh(Threshold::Logit(2.0));
    let a = decode_all(&model, &suite.utterances, &cfg, 1).unwrap();
    let b = decode_all(&model, &back.utterances, &cfg, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.nbest, y.nbest);
    }
}

#[test]
fn model_write_read_write_is_stable() {
    for preset in [Preset::DeskFactorizedLarge, Preset::DeskNonFactorizedSmall] {
        let model = spiky_model(&preset.config(), 4).unwrap().quantized();
        let bytes = write_model(&model).unwrap();
        let again = write_model(&read_model(&bytes).unwrap()).unwrap();
        assert_eq!(bytes, again, "{preset}");
    }
}

#[test]
fn model_on_disk_decodes_identically() {
    let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rnnt");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let suite = fixed_suite(&model, &small_spec(model.config.join_dim), 0.5).unwrap();
    let frames = &suite.utterances[0].frames;
    let cfg = BeamConfig::default();
    assert_eq!(
        beam_search(&model, frames, &cfg).unwrap().nbest,
        beam_search(&loaded, frames, &cfg).unwrap().nbest
    );
}

#[test]
fn trace_on_disk_round_trips() {
    let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 2).unwrap();
    let suite = fixed_suite(&model, &small_spec(model.config.join_dim), 0.5).unwrap();
    let t = TraceFile::encoded(64, 40.0, &suite.utterances[1].frames).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.trace");
    save_trace(&t, &path).unwrap();
    let back = load_trace(&path).unwrap();
    assert_eq!(back, t);
    back.check_model(&model).unwrap();
    assert_eq!(back.enc_frames().unwrap(), suite.utterances[1].frames);
}

#[test]
fn stats_report_survives_json() {
    let model = spiky_model(&Preset::DeskFactorizedSmall.config(), 3).unwrap();
    let suite = fixed_suite(&model, &small_spec(model.config.join_dim), 0.6).unwrap();
    let cfg = BeamConfig::with_thresh(Threshold::Logit(4.0));
    let results = decode_all(&model, &suite.utterances, &cfg, 1).unwrap();
    let fp = footprint(&model.config);
    let params = PowerParams::default();
    let report = build_report("m", &model, &suite.utterances, &results, &cfg, Some((&fp, &params))).unwrap();
    let back: StatsReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.without_timing(), report.without_timing());
    assert_eq!(back.utterances.len(), 3);
    assert!(back.energy.is_some());
    assert_eq!(back.config.thresh, "4");
}
