use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rnnt_core::decoder::{decode_features, BeamConfig, DecodeResult};
use rnnt_core::harness::{
    bench_sweep, build_report, decode_all, default_sweep, energy_for, never_skip_check, oracle_check,
    write_bench_csv, OracleCheckParams,
};
use rnnt_core::io::{load_model, load_trace, save_model, save_trace, StatsReport, TraceFile, TraceKind};
use rnnt_core::model::fixture::{make_posterior_model, random_table};
use rnnt_core::model::ModelWeights;
use rnnt_core::power::{compare_runs, footprint, preset_footprint, EnergyBreakdown, Footprint, PowerParams};
use rnnt_core::suite::{calibrate_suite, fixed_suite, load_suite, save_suite, SuiteSpec, Utterance};
use rnnt_core::synth::{random_model, spiky_model};
use rnnt_core::{Error, Result};

use crate::{BenchArgs, DecodeArgs, EnergyArgs, ModelPresetArgs, OracleArgs, PowerArgs, SpikyArgs, TableArgs};

/// Decoder input: encoder frames, or raw features for a single trace.
enum Inputs {
    Encoded(Vec<Utterance>),
    Features { id: String, features: Vec<Vec<f32>> },
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn load_inputs(path: &Path, model: &ModelWeights) -> Result<Inputs> {
    let c = &model.config;
    if path.is_dir() {
        let suite = load_suite(path)?;
        if suite.manifest.vocab_size != c.vocab_size {
            return Err(Error::Config(format!(
                "suite vocab {} does not match model vocab {}",
                suite.manifest.vocab_size, c.vocab_size
            )));
        }
        if let Some(u) = suite.utterances.iter().find(|u| u.frames[0].vec.len() != c.join_dim) {
            return Err(Error::Config(format!(
                "utterance {} has dim {}, model joint dim is {}",
                u.id,
                u.frames[0].vec.len(),
                c.join_dim
            )));
        }
        return Ok(Inputs::Encoded(suite.utterances));
    }
    let trace = load_trace(path)?;
    trace.check_model(model)?;
    if (trace.frame_duration_ms - c.frame_duration_ms).abs() > 1e-9 {
        log::warn!(
            "trace frame duration {} ms differs from the model's {} ms; audio time follows the model",
            trace.frame_duration_ms,
            c.frame_duration_ms
        );
    }
    let id = stem(path);
    Ok(match trace.kind {
        TraceKind::Encoded => Inputs::Encoded(vec![Utterance {
            id,
            frames: trace.enc_frames()?,
        }]),
        TraceKind::Features => Inputs::Features {
            id,
            features: trace.frames,
        },
    })
}

fn power_setup(model: &ModelWeights, args: &EnergyArgs) -> Result<(Vec<Footprint>, PowerParams)> {
    let params = match &args.power_params {
        Some(p) => PowerParams::from_file(p)?,
        None => PowerParams::default(),
    };
    let fp = match args.footprint {
        Some(p) => preset_footprint(p),
        None => footprint(&model.config),
    };
    Ok((fp, params))
}

fn write_out(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            f(&mut stdout.lock())?;
        }
    }
    Ok(())
}

fn tokens_line(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub fn decode(a: DecodeArgs) -> Result<bool> {
    let model = load_model(&a.model)?;
    let cfg = BeamConfig {
        beam_width: a.search.beam_size,
        thresh: a.search.thresh,
        max_symbols_per_frame: a.search.max_symbols,
        ..Default::default()
    };
    cfg.validate()?;
    let (utts, results): (Vec<Utterance>, Vec<DecodeResult>) = match load_inputs(&a.trace, &model)? {
        Inputs::Encoded(utts) => {
            let results = decode_all(&model, &utts, &cfg, a.search.jobs)?;
            (utts, results)
        }
        Inputs::Features { id, features } => {
            let result = decode_features(&model, &features, &cfg)?;
            (vec![Utterance { id, frames: Vec::new() }], vec![result])
        }
    };
    let (fp, params) = power_setup(&model, &a.energy)?;
    let report = build_report(&stem(&a.model), &model, &utts, &results, &cfg, Some((&fp, &params)))?;

    let mut out = io::stdout().lock();
    for u in &report.utterances {
        writeln!(out, "{}\t{}", u.id, tokens_line(&u.tokens))?;
    }
    let agg = &report.aggregate;
    log::info!(
        "{} utterances: NBP {:.1}%, RTF_join {:.4}, RTF_all {:.4}",
        agg.utterances,
        agg.nbp,
        agg.rtf_join,
        agg.rtf_all
    );
    if let Some(path) = &a.stats_out {
        std::fs::write(path, report.to_json()? + "\n")?;
    }
    Ok(true)
}

pub fn gen_model(a: ModelPresetArgs) -> Result<bool> {
    let config = a.preset.config();
    let mut model = if a.random {
        random_model(&config, a.seed, a.gain)?
    } else {
        spiky_model(&config, a.seed)?
    };
    if a.quantize {
        model = model.quantized();
    }
    save_model(&model, &a.out)?;
    for c in model.component_sizes() {
        println!("{}\t{} params", c.name, c.params);
    }
    Ok(true)
}

pub fn gen_spiky(a: SpikyArgs) -> Result<bool> {
    let model = load_model(&a.model)?;
    let spec = SuiteSpec {
        utterances: a.utterances,
        min_frames: a.min_frames,
        max_frames: a.max_frames,
        dim: model.config.join_dim,
        seed: a.seed,
    };
    let suite = match a.q {
        Some(q) => fixed_suite(&model, &spec, q)?,
        None => calibrate_suite(&model, &spec, a.target, a.tolerance, a.beam_size, a.jobs)?,
    };
    save_suite(&suite, &a.out)?;
    let m = &suite.manifest;
    let frames: usize = suite.utterances.iter().map(|u| u.frames.len()).sum();
    println!("{} utterances, {frames} frames, q = {:.6}", suite.utterances.len(), m.q);
    if let (Some(frac), Some(calls)) = (m.measured, m.blank_calls) {
        println!("fraction of blank calls above 0.9997: {frac:.4} over {calls} calls");
    }
    Ok(true)
}

pub fn gen_table(a: TableArgs) -> Result<bool> {
    if !(0.0 < a.min_blank && a.min_blank < a.max_blank && a.max_blank < 1.0) {
        return Err(Error::Config(format!(
            "blank range [{}, {}) must lie inside (0, 1)",
            a.min_blank, a.max_blank
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let table = random_table(&mut rng, a.frames, a.max_u, a.vocab, a.min_blank..a.max_blank);
    table.validate()?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&table)? + "\n")?;
    if a.model_out.is_some() || a.trace_out.is_some() {
        let fx = make_posterior_model(&table)?;
        if let Some(p) = &a.model_out {
            save_model(&fx.model, p)?;
        }
        if let Some(p) = &a.trace_out {
            let t = TraceFile::encoded(table.vocab_size, fx.model.config.frame_duration_ms, &fx.frames)?;
            save_trace(&t, p)?;
        }
    }
    Ok(true)
}

pub fn bench(a: BenchArgs) -> Result<bool> {
    let model = load_model(&a.model)?;
    let utts = match load_inputs(&a.trace, &model)? {
        Inputs::Encoded(u) => u,
        Inputs::Features { id, features } => vec![Utterance {
            id,
            frames: model.encode(&features)?,
        }],
    };
    let base = BeamConfig {
        beam_width: a.beam_size,
        max_symbols_per_frame: a.max_symbols,
        ..Default::default()
    };
    base.validate()?;
    let sweep = a.sweep.unwrap_or_else(default_sweep);
    let (fp, params) = power_setup(&model, &a.energy)?;
    let rows = bench_sweep(&model, &utts, &sweep, &base, a.jobs, Some((&fp, &params)))?;
    write_out(a.out.as_deref(), |w| write_bench_csv(&rows, w))?;
    Ok(true)
}

fn read_report(path: &Path) -> Result<StatsReport> {
    let report: StatsReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(report)
}

fn print_breakdown(label: &str, e: &EnergyBreakdown) {
    println!("{label}: total {:.4e} pJ (memory {:.4e}, compute {:.4e})", e.total, e.memory_energy, e.compute_energy);
    for c in &e.components {
        println!(
            "  {:<16} {:?}\t{} calls\t{:.4e} pJ",
            c.name,
            c.placement,
            c.invocations,
            c.total()
        );
    }
}

pub fn power(a: PowerArgs) -> Result<bool> {
    let params = match &a.power_params {
        Some(p) => PowerParams::from_file(p)?,
        None => PowerParams::default(),
    };
    let run = read_report(&a.stats)?;
    let base = read_report(&a.baseline)?;
    let e_run = energy_for(&run.aggregate.totals, &preset_footprint(a.footprint), &params)?;
    let e_base = energy_for(&base.aggregate.totals, &preset_footprint(a.baseline_footprint), &params)?;
    let reduction = compare_runs(&e_base, &e_run)?;
    print_breakdown(&format!("baseline ({})", a.baseline_footprint), &e_base);
    print_breakdown(&format!("run ({})", a.footprint), &e_run);
    println!("energy reduction: {reduction:.1}%");
    println!("assumptions:");
    for s in rnnt_core::power::ASSUMPTIONS {
        println!("  - {s}");
    }
    if let Some(p) = &a.json_out {
        let v = serde_json::json!({
            "baseline": e_base,
            "run": e_run,
            "reduction_percent": reduction,
            "params": params,
            "assumptions": rnnt_core::power::ASSUMPTIONS,
        });
        std::fs::write(p, serde_json::to_string_pretty(&v)? + "\n")?;
    }
    Ok(true)
}

pub fn oracle(a: OracleArgs) -> Result<bool> {
    let params = OracleCheckParams {
        trials: a.trials,
        seed: a.seed,
        max_frames: a.max_frames,
        max_vocab: a.max_vocab,
        max_len: a.max_len,
        beam_width: a.beam_size,
        ..Default::default()
    };
    let r = oracle_check(&params)?;
    println!(
        "oracle: {}/{} winners match, max log-prob deviation {:.3e}{}",
        r.passes,
        r.trials,
        r.max_deviation,
        if r.exact { "" } else { " (beam narrower than the search space; mismatches reported only)" }
    );
    for m in &r.mismatches {
        println!("  {m}");
    }
    let mut ok = r.passed();
    if a.never_skip {
        let n = never_skip_check(a.trials, a.seed)?;
        println!(
            "never-skip: {}/{} identical, max score difference {:.3e}",
            n.passes, n.trials, n.max_score_diff
        );
        ok &= n.passes == n.trials;
    }
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
