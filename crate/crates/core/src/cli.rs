//! The `arranger` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error (bad flag or value) |
//! | 3 | invalid configuration |
//! | 4 | file could not be read or written |
//! | 5 | corpus or query data error (empty corpus, unreadable song) |
//! | 6 | wrong file format or version |
//! | 7 | not enough data to train |
//! | 8 | no arrangement possible (missing phrase length, empty filter) |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{Config, ConfigError};
use crate::selection::{arrange_traced, ArrangeOptions, ArrangementTrace, BuildOptions, ControlSpec, FitnessWeights, Level};
use crate::symbolic::{
    build_reference_index, layer_histogram, read_song, write_atomic, write_midi, IndexError, ReferenceIndex, INDEX_FORMAT,
};
use crate::synthetic::{write_corpus, SynthConfig};
use crate::transition::{train_transition, TrainError, TransitionWeights, WEIGHTS_FORMAT};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_DATA: u8 = 5;
pub const EXIT_FORMAT: u8 = 6;
pub const EXIT_TRAIN: u8 = 7;
pub const EXIT_ARRANGE: u8 = 8;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        let code = match e {
            IndexError::EmptyCorpus => EXIT_DATA,
            IndexError::Io { .. } => EXIT_IO,
            IndexError::Decode { .. } | IndexError::WrongFormat { .. } | IndexError::VersionMismatch { .. } => EXIT_FORMAT,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::InsufficientData { .. } => EXIT_TRAIN,
            TrainError::Config(_) => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "arranger", version, about = "Phrase-selection accompaniment arranger")]
pub struct Cli {
    /// Config file (flat `key = value`); defaults to $ARRANGER_CONFIG, then ./arranger.conf.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a reference index from a directory of MIDI files with sidecars.
    Index(IndexArgs),
    /// Train transition weights on an index.
    Train(TrainArgs),
    /// Arrange accompaniment for a lead sheet.
    Arrange(ArrangeArgs),
    /// Summarize an index, weights or trace file.
    Inspect(InspectArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus directory (falls back to `corpus` in the config).
    pub corpus: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Exit 0 even when some songs could not be read.
    #[arg(long)]
    pub allow_errors: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training schedule preset.
    #[arg(long, value_parser = ["desk", "full"])]
    pub schedule: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Candidates per contrastive sample.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the training report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArrangeArgs {
    /// Lead-sheet MIDI file; its `.txt` sidecar holds the phrase annotation and chords.
    pub query: PathBuf,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Rhythm-density level of the first phrase.
    #[arg(long, value_parser = parse_level)]
    pub rd: Option<Level>,
    /// Voice-number level of the first phrase.
    #[arg(long, value_parser = parse_level)]
    pub vn: Option<Level>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Keep only the best N candidates per layer by fitness (approximate).
    #[arg(long)]
    pub prune: Option<usize>,
    /// Write a JSON score trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Candidates to list per layer for traces, and per length for indexes.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub output: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub songs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Phrase annotation to draw from; repeatable.
    #[arg(long = "structure")]
    pub structures: Vec<String>,
}

fn parse_level(s: &str) -> Result<Level, String> {
    s.parse()
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("no {what} path given (flag --{what} or `{what} =` in the config)")))
}

pub fn cmd_index(args: &IndexArgs, config: &Config) -> Result<String, CliError> {
    let corpus = match &args.corpus {
        Some(p) => p.as_path(),
        None => require(&config.corpus, "corpus")?,
    };
    let (index, report) = build_reference_index(corpus)?;
    let bytes = index.to_json();
    write_atomic(&args.output, &bytes)?;

    let mut out = String::new();
    let _ = writeln!(out, "songs indexed: {} ({} unreadable)", index.songs.len(), report.file_errors.len());
    let _ = writeln!(out, "source phrases: {}", index.source_phrase_count());
    let _ = writeln!(out, "entries: {} (12 keys x {} phrases)", index.len(), index.source_phrase_count());
    let _ = writeln!(out, "phrases by length:");
    for (bars, count) in layer_histogram(&index) {
        let _ = writeln!(out, "  {bars:>3} bars  {count}");
    }
    if !report.dropped.is_empty() {
        let _ = writeln!(out, "dropped phrases: {}", report.dropped.len());
    }
    let _ = writeln!(out, "sha256: {}", digest(&bytes));
    let _ = writeln!(out, "wrote {}", args.output.display());
    if !report.file_errors.is_empty() {
        let mut msg = format!("{out}unreadable songs:\n");
        for e in &report.file_errors {
            let _ = writeln!(msg, "  {}: {}", e.path.display(), e.message);
        }
        if !args.allow_errors {
            return Err(CliError::new(EXIT_DATA, msg.trim_end().to_string()));
        }
        return Ok(msg);
    }
    Ok(out)
}

pub fn cmd_train(args: &TrainArgs, config: &Config) -> Result<String, CliError> {
    let mut config = config.clone();
    let mut set = |key: &str, value: Option<String>| -> Result<(), CliError> {
        match value {
            Some(v) => config.set(key, &v).map_err(|m| CliError::new(EXIT_CONFIG, m)),
            None => Ok(()),
        }
    };
    set("schedule", args.schedule.clone())?;
    set("epochs", args.epochs.map(|v| v.to_string()))?;
    set("batch_size", args.batch_size.map(|v| v.to_string()))?;
    set("lr_start", args.lr_start.map(|v| v.to_string()))?;
    set("lr_end", args.lr_end.map(|v| v.to_string()))?;
    set("k", args.k.map(|v| v.to_string()))?;
    set("d_out", args.d_out.map(|v| v.to_string()))?;
    set("seed", args.seed.map(|v| v.to_string()))?;
    if let Some(p) = &args.index {
        config.index = Some(p.clone());
    }
    config.validate()?;

    let index = ReferenceIndex::load(require(&config.index, "index")?)?;
    let (weights, report) = train_transition(&index, &config.train)?;
    weights.save(&args.output)?;
    if let Some(path) = &args.report {
        write_atomic(path, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "songs: {} train, {} validation; seed {}",
        report.train_songs.len(),
        report.validation_songs.len(),
        config.train.seed
    );
    let _ = writeln!(out, "epoch  lr         train    validation");
    for e in &report.epochs {
        let _ = writeln!(out, "{:>5}  {:.3e}  {:.5}  {:.5}", e.epoch + 1, e.learning_rate, e.train_loss, e.validation_loss);
    }
    let v = &report.validation;
    let _ = writeln!(out, "validation pairs: {}", v.pairs);
    let _ = writeln!(
        out,
        "loss  adjacent {:.5}  same-song {:.5}  random {:.5}",
        v.adjacent_loss, v.same_song_loss, v.random_loss
    );
    let _ = writeln!(out, "mean rank@{}: {:.4} (chance {:.1})", v.rank_pool, v.mean_rank, (v.rank_pool + 1) as f64 / 2.0);
    let _ = writeln!(out, "phrase accuracy: {:.4}", v.phrase_accuracy);
    let _ = writeln!(out, "song accuracy: {:.4}", v.song_accuracy);
    let _ = writeln!(out, "wrote {}", args.output.display());
    Ok(out)
}

pub fn cmd_arrange(args: &ArrangeArgs, config: &Config) -> Result<String, CliError> {
    let mut config = config.clone();
    config.alpha = args.alpha.unwrap_or(config.alpha);
    config.beta = args.beta.unwrap_or(config.beta);
    config.delta = args.delta.unwrap_or(config.delta);
    config.gamma = args.gamma.unwrap_or(config.gamma);
    config.rd = args.rd.unwrap_or(config.rd);
    config.vn = args.vn.unwrap_or(config.vn);
    config.prune = args.prune.filter(|&k| k > 0).or(config.prune);
    if args.index.is_some() {
        config.index = args.index.clone();
    }
    if args.weights.is_some() {
        config.weights = args.weights.clone();
    }
    config.validate()?;

    let index = ReferenceIndex::load(require(&config.index, "index")?)?;
    let weights = TransitionWeights::load(require(&config.weights, "weights")?)?;
    let song = read_song(&args.query).map_err(|e| CliError::new(EXIT_DATA, format!("query {}: {}", e.path.display(), e.message)))?;
    let query = song.to_query();

    let opts = ArrangeOptions {
        build: BuildOptions {
            control: ControlSpec { rd: config.rd, vn: config.vn },
            fitness: FitnessWeights { alpha: config.alpha, beta: config.beta },
            prune: config.prune,
        },
        delta: config.delta,
        gamma: config.gamma,
        ..Default::default()
    };
    let (result, trace) = arrange_traced(&query, &index, &weights, &opts).map_err(|e| CliError::new(EXIT_ARRANGE, e.to_string()))?;
    write_atomic(&args.output, &write_midi(&result, &query))?;
    if let Some(path) = &args.trace {
        trace.save(path)?;
    }

    let mut out = String::new();
    let _ = writeln!(out, "{} phrases, {} bars", query.n(), query.total_bars());
    for (i, step) in trace.path.iter().enumerate() {
        let c = &step.candidate;
        let t = step.transition.map_or(String::from("-"), |t| format!("{:.4}+{}", t.texture, t.form));
        let _ = writeln!(
            out,
            "  {:<4} {} #{} +{:<2}  fitness {:.4}  transition {}",
            query.phrases[i].label, c.source_id, c.phrase_index, c.transposition, c.fitness.total, t
        );
    }
    let _ = writeln!(out, "total score: {:.6}", result.total_score);
    let _ = writeln!(out, "wrote {}", args.output.display());
    Ok(out)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, CliError> {
    let path = args.file.as_path();
    let bytes = std::fs::read(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
    let doc: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| IndexError::Decode { path: path.into(), message: e.to_string() })?;
    let format = doc.get("format").and_then(|f| f.as_str()).unwrap_or_default().to_string();
    let mut out = String::new();
    match format.as_str() {
        INDEX_FORMAT => {
            let index = ReferenceIndex::from_json(&bytes, path)?;
            let _ = writeln!(out, "{} version {}", index.format, index.version);
            let _ = writeln!(out, "songs: {}", index.songs.len());
            let _ = writeln!(out, "entries: {} ({} source phrases)", index.len(), index.source_phrase_count());
            let _ = writeln!(out, "phrases by length:");
            for (bars, count) in layer_histogram(&index) {
                let _ = writeln!(out, "  {bars:>3} bars  {count}");
            }
            let q = index.quantiles;
            let _ = writeln!(out, "rhythm density terciles: {:.4} {:.4}", q.rhythm_density[0], q.rhythm_density[1]);
            let _ = writeln!(out, "voice number terciles: {:.4} {:.4}", q.voice_number[0], q.voice_number[1]);
        }
        WEIGHTS_FORMAT => {
            let w = TransitionWeights::load(path)?;
            let m = &w.training_meta;
            let _ = writeln!(out, "{} version {}", w.format, w.version);
            let _ = writeln!(out, "w1: {}x{}", w.d_out, w.d_in);
            let _ = writeln!(out, "w2: {}x{}", w.d_out, w.d_in);
            let _ = writeln!(
                out,
                "training: {} epochs, seed {}, k {}, batch {}, lr {:e} -> {:e}",
                m.epochs, m.seed, m.k, m.batch_size, m.lr_start, m.lr_end
            );
            let _ = writeln!(out, "final loss: {:.5}", m.final_loss);
            if let Some(v) = m.final_validation_loss {
                let _ = writeln!(out, "final validation loss: {v:.5}");
            }
        }
        crate::selection::TRACE_FORMAT => {
            let t = ArrangementTrace::load(path)?;
            let _ = writeln!(out, "{} version {} for {:?}", t.format, t.version, t.query);
            let _ = writeln!(
                out,
                "alpha {} beta {} delta {} gamma {} rd {} vn {}",
                t.alpha, t.beta, t.delta, t.gamma, t.rd, t.vn
            );
            for (i, layer) in t.layers.iter().enumerate() {
                let _ = writeln!(out, "layer {} ({}, {} candidates)", i + 1, layer.label, layer.candidates);
                for c in layer.top.iter().take(args.top) {
                    let _ = writeln!(
                        out,
                        "    {} #{} +{:<2} fitness {:.4} (rhythm {:.4}, chord {:.4})",
                        c.source_id, c.phrase_index, c.transposition, c.fitness.total, c.fitness.rhythm, c.fitness.chord
                    );
                }
                let chosen = &t.path[i];
                let _ = writeln!(out, "  chosen {} #{} +{}", chosen.candidate.source_id, chosen.candidate.phrase_index, chosen.candidate.transposition);
            }
            let recomputed = t.recomputed_total();
            let _ = writeln!(out, "total score: {:.9}", t.total_score);
            let _ = writeln!(out, "recomputed: {:.9} (difference {:.2e})", recomputed, (recomputed - t.total_score).abs());
        }
        other => {
            return Err(CliError::new(EXIT_FORMAT, format!("{}: unrecognized format {other:?}", path.display())));
        }
    }
    Ok(out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String, CliError> {
    let mut config = SynthConfig { songs: args.songs, seed: args.seed, ..Default::default() };
    if !args.structures.is_empty() {
        for s in &args.structures {
            crate::symbolic::parse_annotation(s).map_err(|e| CliError::new(EXIT_USAGE, format!("--structure {s}: {e}")))?;
        }
        config.structures = args.structures.clone();
    }
    let files = write_corpus(&args.output, &config).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", args.output.display())))?;
    Ok(format!("wrote {} songs to {}\n", files.len(), args.output.display()))
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Index(a) => cmd_index(a, &config),
        Command::Train(a) => cmd_train(a, &config),
        Command::Arrange(a) => cmd_arrange(a, &config),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses arguments, runs the command, prints its report, and maps errors
/// to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
