//! `rnnt`: decode traces, generate synthetic models and suites, sweep
//! thresholds, compare energy and cross-check the beam search.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnnt_core::decoder::Threshold;
use rnnt_core::synth::Preset;

/// Usage errors.
const EXIT_USAGE: u8 = 1;
/// Bad input files or configurations.
const EXIT_DATA: u8 = 2;
/// The oracle check found a disagreement.
const EXIT_ORACLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "rnnt", version, about = "RNN-T beam search with factorized blank thresholding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode a trace file or a suite directory.
    Decode(DecodeArgs),
    /// Generate models, spiky suites or posterior tables.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Sweep thresholds over a suite and write one CSV row per threshold.
    Bench(BenchArgs),
    /// Compare the energy of two decode runs from their stats files.
    Power(PowerArgs),
    /// Check beam search against the exhaustive decoder on random small models.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Blank threshold as a logit, `p=<prob>`, or `disabled`.
    #[arg(long, default_value = "2")]
    thresh: Threshold,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    #[arg(long, default_value_t = 10)]
    max_symbols: usize,
    /// Utterances decoded in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct EnergyArgs {
    /// JSON file overriding the memory and compute constants.
    #[arg(long)]
    power_params: Option<PathBuf>,
    /// Charge energy with this preset's sizes instead of the model's own.
    #[arg(long)]
    footprint: Option<Preset>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// A trace file, or a directory written by `gen spiky-trace`.
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Where to write the JSON stats report.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum GenCommand {
    /// Write a model for a named preset.
    ModelPreset(ModelPresetArgs),
    /// Write a spiky suite calibrated against a model.
    SpikyTrace(SpikyArgs),
    /// Write a random posterior table, optionally with its model and trace.
    PosteriorTable(TableArgs),
}

#[derive(Debug, Args)]
struct ModelPresetArgs {
    #[arg(long)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain random weights instead of the spiky blank wiring.
    #[arg(long)]
    random: bool,
    /// Scale of the random output logits (with `--random`).
    #[arg(long, default_value_t = 1.0)]
    gain: f32,
    /// Store weights as INT8.
    #[arg(long)]
    quantize: bool,
}

#[derive(Debug, Args)]
struct SpikyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of blank calls with p_blank above 0.9997.
    #[arg(long, default_value_t = 0.5)]
    target: f64,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    /// Use this spike-mode probability as is, skipping calibration.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 20)]
    utterances: usize,
    #[arg(long, default_value_t = 60)]
    min_frames: usize,
    #[arg(long, default_value_t = 120)]
    max_frames: usize,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Output JSON table.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    max_u: usize,
    #[arg(long, default_value_t = 3)]
    vocab: usize,
    #[arg(long, default_value_t = 0.05)]
    min_blank: f64,
    #[arg(long, default_value_t = 0.95)]
    max_blank: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table-driven model here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Also write the frames that address the table here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// A trace file or suite directory.
    #[arg(long)]
    trace: PathBuf,
    /// Comma-separated thresholds; defaults to 16,8,4,2,1,0.5,0.1,disabled.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<Threshold>>,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    #[arg(long, default_value_t = 10)]
    max_symbols: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    energy: EnergyArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Stats report of the run being evaluated.
    #[arg(long)]
    stats: PathBuf,
    /// Stats report of the baseline run.
    #[arg(long)]
    baseline: PathBuf,
    /// Preset whose sizes are charged for `--stats`.
    #[arg(long)]
    footprint: Preset,
    /// Preset whose sizes are charged for `--baseline`.
    #[arg(long)]
    baseline_footprint: Preset,
    #[arg(long)]
    power_params: Option<PathBuf>,
    /// Write both breakdowns and the reduction as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    max_frames: usize,
    #[arg(long, default_value_t = 2)]
    max_vocab: usize,
    #[arg(long, default_value_t = 3)]
    max_len: usize,
    #[arg(long, default_value_t = 16)]
    beam_size: usize,
    /// Also compare a disabled threshold against the build without the test.
    #[arg(long)]
    never_skip: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RNNT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Decode(a) => commands::decode(a),
        Command::Gen(GenCommand::ModelPreset(a)) => commands::gen_model(a),
        Command::Gen(GenCommand::SpikyTrace(a)) => commands::gen_spiky(a),
        Command::Gen(GenCommand::PosteriorTable(a)) => commands::gen_table(a),
        Command::Bench(a) => commands::bench(a),
        Command::Power(a) => commands::power(a),
        Command::OracleCheck(a) => commands::oracle(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ORACLE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
