use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfst_core::weights::{load_container, synth_container};
use mfst_core::{Engine, FusionConfig, FusionStrategy, SeMode, TrackerConfig, WeightContainer};
use mfst_harness::ablation::emit_ablation;
use mfst_harness::ope::RunSettings;
use mfst_harness::{
    emit_results, load_dataset, load_sequence, run_ablation, run_ope_entries, track_sequence,
    Aggregate, HarnessError, OpeConfig, OpeReport,
};
use sha2::{Digest, Sha256};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mfst",
    version,
    about = "Multi-feature Siamese tracker and OTB-style benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one sequence and score it against its ground truth.
    Track {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-pass evaluation over every sequence directory in a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Weight container; synthetic weights from --seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all 27 fusion-strategy combinations and rank them.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a deterministic random-weight container.
    SynthWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a dataset of synthetic moving-square sequences.
    SynthDataset {
        #[arg(long, default_value_t = 2)]
        sequences: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Pixels per frame.
        #[arg(long, default_value_t = 2.0)]
        speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a container's manifest with per-entry SHA-256 checksums.
    Inspect {
        #[arg(long)]
        weights: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Hw,
    Sm,
    Sw,
}

impl From<Fusion> for FusionStrategy {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Hw => FusionStrategy::HardWeight,
            Fusion::Sm => FusionStrategy::SoftMean,
            Fusion::Sw => FusionStrategy::SoftWeight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SeModeArg {
    Static,
    PerInput,
}

#[derive(Args)]
struct TrackerArgs {
    /// Cross-model fusion strategy.
    #[arg(long, value_enum)]
    fusion: Option<Fusion>,
    /// Per-layer fusion strategy inside the S backbone.
    #[arg(long, value_enum)]
    fusion_s: Option<Fusion>,
    /// Per-layer fusion strategy inside the A backbone.
    #[arg(long, value_enum)]
    fusion_a: Option<Fusion>,
    #[arg(long, value_enum)]
    se_mode: Option<SeModeArg>,
    #[arg(long)]
    window_influence: Option<f64>,
    #[arg(long)]
    scale_damping: Option<f64>,
}

impl TrackerArgs {
    fn config(&self) -> TrackerConfig {
        let mut c = TrackerConfig::default();
        let d = FusionConfig::default();
        c.fusion = FusionConfig::with_strategies(
            self.fusion_s.map_or(d.per_layer_s, Into::into),
            self.fusion_a.map_or(d.per_layer_a, Into::into),
            self.fusion.map_or(d.cross_model, Into::into),
        );
        if let Some(m) = self.se_mode {
            c.se_mode = match m {
                SeModeArg::Static => SeMode::ExemplarStatic,
                SeModeArg::PerInput => SeMode::PerInput,
            };
        }
        if let Some(w) = self.window_influence {
            c.window_influence = w;
        }
        if let Some(s) = self.scale_damping {
            c.scale_damping = s;
        }
        c
    }
}

#[derive(Debug)]
enum Failure {
    Core(mfst_core::Error),
    Harness(HarnessError),
}

impl From<mfst_core::Error> for Failure {
    fn from(e: mfst_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        let io = match self {
            Failure::Core(e) => matches!(e, mfst_core::Error::Io(_)),
            Failure::Harness(e) => e.is_io(),
        };
        if io {
            EXIT_IO
        } else {
            EXIT_DATA
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::Harness(e) => e.fmt(f),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn weights_or_synth(path: Option<&Path>, seed: u64) -> Result<WeightContainer, Failure> {
    Ok(match path {
        Some(p) => load_container(p)?,
        None => synth_container(seed),
    })
}

fn track(sequence: &Path, weights: &Path, tracker: &TrackerArgs, out: &Path) -> CmdResult {
    let engine = Engine::from_container(&load_container(weights)?)?;
    let record = load_sequence(sequence)?;
    let config = tracker.config();
    config.validate()?;
    let outcome = track_sequence(&record, &engine, &config)?;
    let report = OpeReport {
        settings: RunSettings::from_config(&config),
        aggregate: Aggregate::from_results([&outcome.result]),
        sequences: vec![outcome],
        failures: Vec::new(),
    };
    emit_results(&report, out)?;
    let outcome = &report.sequences[0];
    let boxes: String = outcome
        .boxes
        .iter()
        .map(|[x, y, w, h]| format!("{x:.6},{y:.6},{w:.6},{h:.6}\n"))
        .collect();
    let path = out.join("boxes.txt");
    std::fs::write(&path, boxes).map_err(|e| HarnessError::Io { path, source: e })?;
    println!(
        "{}: {} frames, precision@20 {:.4}, AUC {:.4}, {:.2} fps",
        outcome.name,
        outcome.result.frames(),
        outcome.result.precision_at_20,
        outcome.result.auc,
        outcome.result.fps
    );
    Ok(())
}

fn eval(
    dataset: &Path,
    weights: Option<&Path>,
    workers: usize,
    seed: u64,
    tracker: &TrackerArgs,
    out: &Path,
) -> CmdResult {
    let engine = Engine::from_container(&weights_or_synth(weights, seed)?)?;
    let entries = load_dataset(dataset)?;
    let config = OpeConfig {
        tracker: tracker.config(),
        workers,
    };
    let report = run_ope_entries(entries, &engine, &config)?;
    emit_results(&report, out)?;
    for s in &report.sequences {
        println!(
            "{:<24} frames {:>5}  precision@20 {:.4}  AUC {:.4}  {:.2} fps",
            s.name,
            s.result.frames(),
            s.result.precision_at_20,
            s.result.auc,
            s.result.fps
        );
    }
    for f in &report.failures {
        eprintln!("skipped {}: {}", f.name, f.error);
    }
    if let Some(a) = &report.aggregate {
        println!(
            "overall: {} sequences, {} frames, precision@20 {:.4}, AUC {:.4}, {:.2} fps",
            a.sequences, a.frames, a.precision_at_20, a.auc, a.fps
        );
    }
    Ok(())
}

fn ablate(
    dataset: &Path,
    weights: Option<&Path>,
    workers: usize,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let engine = Engine::from_container(&weights_or_synth(weights, seed)?)?;
    let mut records = Vec::new();
    for (name, entry) in load_dataset(dataset)? {
        match entry {
            Ok(r) => records.push(r),
            Err(e) => eprintln!("skipped {name}: {e}"),
        }
    }
    let report = run_ablation(&records, &engine, &TrackerConfig::default(), workers)?;
    emit_ablation(&report, out)?;
    for f in &report.failures {
        eprintln!("skipped {}: {}", f.name, f.error);
    }
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by_key(|r| r.rank);
    for r in rows {
        println!(
            "#{:<2} S={} A={} cross={}  precision@20 {:.4}  AUC {:.4}",
            r.rank,
            r.per_layer_s.short_name(),
            r.per_layer_a.short_name(),
            r.cross_model.short_name(),
            r.precision_at_20,
            r.auc
        );
    }
    Ok(())
}

fn inspect(weights: &Path) -> CmdResult {
    let container = load_container(weights)?;
    let manifest = container.manifest();
    let mut text = format!(
        "format_version: {}\ncreated_by: {}\nmodel_ids: {}\nentries: {}\n",
        manifest.format_version,
        manifest.metadata.created_by,
        manifest.metadata.model_ids.join(","),
        manifest.entries.len()
    );
    for entry in container.entries() {
        let digest = Sha256::digest(container.entry_bytes(entry));
        let shape: Vec<String> = entry.shape.iter().map(usize::to_string).collect();
        text.push_str(&format!(
            "{}\t{}\t[{}]\t{}\tsha256:{}\n",
            entry.name,
            entry.dtype,
            shape.join(","),
            entry.byte_length,
            hex::encode(digest)
        ));
    }
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(mfst_core::Error::Io(e).into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Track {
            sequence,
            weights,
            tracker,
            out,
        } => track(&sequence, &weights, &tracker, &out),
        Command::Eval {
            dataset,
            weights,
            workers,
            seed,
            tracker,
            out,
        } => eval(&dataset, weights.as_deref(), workers, seed, &tracker, &out),
        Command::Ablate {
            dataset,
            weights,
            workers,
            seed,
            out,
        } => ablate(&dataset, weights.as_deref(), workers, seed, &out),
        Command::SynthWeights { seed, out } => Ok(synth_container(seed).save(&out)?),
        Command::SynthDataset {
            sequences,
            frames,
            speed,
            seed,
            out,
        } => {
            let paths = mfst_harness::synth::write_dataset(&out, sequences, frames, speed, seed)?;
            println!("wrote {} sequences to {}", paths.len(), out.display());
            Ok(())
        }
        Command::Inspect { weights } => inspect(&weights),
    }
}

fn main() -> ExitCode {
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
