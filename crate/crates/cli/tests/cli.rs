use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rnnt_core::io::{StatsReport, REPORT_SCHEMA};
use tempfile::TempDir;

fn rnnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnnt"))
        .args(args)
        .output()
        .expect("run rnnt")
}

fn ok(args: &[&str]) -> String {
    let out = rnnt(args);
    assert!(
        out.status.success(),
        "rnnt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model(&self, preset: &str, seed: &str) -> PathBuf {
        let p = self.path(&format!("{preset}-{seed}.rnnt"));
        ok(&["gen", "model-preset", "--preset", preset, "--seed", seed, "--out", s(&p)]);
        p
    }

    /// Small uncalibrated spiky suite.
    fn suite(&self, model: &Path) -> PathBuf {
        let p = self.path("suite");
        ok(&[
            "gen", "spiky-trace", "--model", s(model), "--out", s(&p), "--q", "0.6",
            "--utterances", "3", "--min-frames", "10", "--max-frames", "20",
        ]);
        p
    }
}

fn report(path: &Path) -> StatsReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_files() {
    let fx = Fixture::new();
    let a = fx.model("desk-F-S", "3");
    let b = fx.path("again.rnnt");
    ok(&["gen", "model-preset", "--preset", "desk-F-S", "--seed", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let suite = fx.suite(&a);
    let again = fx.path("suite2");
    ok(&[
        "gen", "spiky-trace", "--model", s(&a), "--out", s(&again), "--q", "0.6",
        "--utterances", "3", "--min-frames", "10", "--max-frames", "20",
    ]);
    for f in ["suite.json", "utt0000.trace", "utt0002.trace"] {
        assert_eq!(std::fs::read(suite.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn decode_is_deterministic_apart_from_timing() {
    let fx = Fixture::new();
    let model = fx.model("desk-F-S", "1");
    let suite = fx.suite(&model);
    let (a, b) = (fx.path("a.json"), fx.path("b.json"));
    let out_a = ok(&["decode", "--model", s(&model), "--trace", s(&suite), "--stats-out", s(&a)]);
    let out_b = ok(&["decode", "--model", s(&model), "--trace", s(&suite), "--stats-out", s(&b)]);
    assert_eq!(out_a, out_b);
    assert_eq!(out_a.lines().count(), 3);
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(ra.without_timing(), rb.without_timing());
    assert_eq!(ra.config.beam_width, 10);
    assert!((ra.config.p_threshold - 0.880_797_078).abs() < 1e-9);
}

#[test]
fn stats_report_matches_schema() {
    let fx = Fixture::new();
    let model = fx.model("desk-F-S", "1");
    let suite = fx.suite(&model);
    let out = fx.path("r.json");
    ok(&[
        "decode", "--model", s(&model), "--trace", s(&suite), "--stats-out", s(&out), "--footprint", "F-S",
    ]);
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert!(!instance["power_assumptions"].as_array().unwrap().is_empty());
    assert_eq!(instance["energy"]["components"][2]["placement"], "SRAM");

    // a stray field must be rejected
    let mut bad = instance.clone();
    bad["aggregate"]["extra"] = serde_json::json!(1);
    assert!(!validator.is_valid(&bad));
}

#[test]
fn near_one_threshold_keeps_transcripts() {
    let fx = Fixture::new();
    let model = fx.model("desk-F-S", "2");
    let suite = fx.suite(&model);
    let off = ok(&["decode", "--model", s(&model), "--trace", s(&suite), "--thresh", "disabled"]);
    let high = ok(&["decode", "--model", s(&model), "--trace", s(&suite), "--thresh", "16"]);
    assert_eq!(off, high);
}

#[test]
fn bench_writes_one_row_per_threshold() {
    let fx = Fixture::new();
    let model = fx.model("desk-F-S", "1");
    let suite = fx.suite(&model);
    let csv = fx.path("sweep.csv");
    ok(&["bench", "--model", s(&model), "--trace", s(&suite), "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("thresh,p_threshold,nbp"));
    let last: Vec<&str> = lines[8].split(',').collect();
    assert_eq!(last[0], "disabled");
    assert_eq!(last[2].parse::<f64>().unwrap(), 100.0);

    let custom = ok(&["bench", "--model", s(&model), "--trace", s(&suite), "--sweep", "8,p=0.9"]);
    assert_eq!(custom.lines().count(), 3);
    assert!(custom.contains("\np=0.9,0.9,"));
}

#[test]
fn power_compares_two_runs() {
    let fx = Fixture::new();
    let f = fx.model("desk-F-S", "1");
    let nf = fx.model("desk-NF-S", "1");
    let suite = fx.suite(&f);
    let (fs, nfs) = (fx.path("f.json"), fx.path("nf.json"));
    ok(&["decode", "--model", s(&f), "--trace", s(&suite), "--stats-out", s(&fs)]);
    ok(&["decode", "--model", s(&nf), "--trace", s(&suite), "--stats-out", s(&nfs)]);
    let json = fx.path("power.json");
    let out = ok(&[
        "power", "--stats", s(&fs), "--baseline", s(&nfs), "--footprint", "F-S", "--baseline-footprint", "NF-S",
        "--json-out", s(&json),
    ]);
    assert!(out.contains("energy reduction:"));
    assert!(out.contains("assumptions:"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let reduction = v["reduction_percent"].as_f64().unwrap();
    assert!(reduction > 0.0 && reduction < 100.0);
}

#[test]
fn posterior_table_round_trips_through_decode() {
    let fx = Fixture::new();
    let (table, model, trace) = (fx.path("t.json"), fx.path("t.rnnt"), fx.path("t.trace"));
    ok(&[
        "gen", "posterior-table", "--out", s(&table), "--model-out", s(&model), "--trace-out", s(&trace),
        "--frames", "3", "--max-u", "2", "--vocab", "2", "--seed", "5",
    ]);
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(t["entries"].as_array().unwrap().len(), 3);
    let out = ok(&["decode", "--model", s(&model), "--trace", s(&trace), "--thresh", "disabled"]);
    assert!(out.starts_with("t\t"));
}

#[test]
fn oracle_check_passes_and_reports() {
    let out = ok(&["oracle-check", "--trials", "30", "--never-skip"]);
    assert!(out.contains("30/30 winners match"));
    assert!(out.trim_end().ends_with("PASS"));
    // greedy search may disagree with the oracle; that is reported, not failed
    let greedy = ok(&["oracle-check", "--trials", "30", "--beam-size", "1"]);
    assert!(greedy.contains("mismatches reported only"));
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    assert_eq!(rnnt(&["decode", "--bogus"]).status.code(), Some(1));
    assert_eq!(rnnt(&["decode", "--model", "x", "--trace", "y", "--thresh", "abc"]).status.code(), Some(1));
    assert_eq!(rnnt(&["--help"]).status.code(), Some(0));

    let missing = rnnt(&["decode", "--model", s(&fx.path("none")), "--trace", s(&fx.path("none"))]);
    assert_eq!(missing.status.code(), Some(2));

    // truncated model: parse error naming a byte offset
    let model = fx.model("desk-F-S", "1");
    let bytes = std::fs::read(&model).unwrap();
    let cut = fx.path("cut.rnnt");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let out = rnnt(&["decode", "--model", s(&cut), "--trace", s(&cut)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte"));

    // a table-driven trace has the wrong dimension for a desk model
    let (table, trace) = (fx.path("t.json"), fx.path("t.trace"));
    ok(&["gen", "posterior-table", "--out", s(&table), "--trace-out", s(&trace)]);
    let out = rnnt(&["decode", "--model", s(&model), "--trace", s(&trace)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    let bad_preset = rnnt(&["gen", "model-preset", "--preset", "XL", "--out", s(&fx.path("m"))]);
    assert_eq!(bad_preset.status.code(), Some(1));
}
