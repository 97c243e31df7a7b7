//! `mmssl` command-line driver.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmssl::data::{load_manifest, synth_generate, FeatureStore, Split, SplitData, SynthConfig};
use mmssl::eval::MetricsReport;
use mmssl::exec::{self, ExecMode};
use mmssl::heads::Fusion;
use mmssl::trainer::{
    attach_probe_and_train, log_csv, Checkpoint, DownstreamConfig, DownstreamMode, PretrainConfig, Pretrainer,
};

#[derive(Parser)]
#[command(name = "mmssl", version, about = "Multi-modal self-supervised pretraining and evaluation")]
struct Cli {
    /// Run every kernel on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-modal dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a model and write a checkpoint plus a per-step CSV log.
    Pretrain {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Manifest of the dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run log path; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a downstream classifier and write a metrics report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Downstream config JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn a report into plot-ready CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        confusion_csv: PathBuf,
        /// Per-class table; printed to stdout when omitted.
        #[arg(long)]
        per_class_csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Linear,
    Finetune,
    Scratch,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Concat,
    Mean,
    VisionOnly,
}

/// Failure that maps to exit code 2.
#[derive(Debug)]
struct DataError(String);

impl From<mmssl::Error> for DataError {
    fn from(e: mmssl::Error) -> Self {
        DataError(e.to_string())
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError(e.to_string())
    }
}

type Res<T> = Result<T, DataError>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DataError(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| DataError(format!("{}: {e}", path.display())))
}

fn split(store: &FeatureStore, s: Split) -> Res<SplitData> {
    let records = store.load_split(s)?;
    Ok(SplitData::from_records(
        &records,
        store.manifest.task_type,
        store.manifest.n_classes(),
    )?)
}

fn run(command: Command) -> Res<()> {
    match command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = read_json(&config)?;
            let m = synth_generate(&cfg, &out)?;
            let n: usize = m.splits.values().map(Vec::len).sum();
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Pretrain {
            config,
            data,
            out,
            log,
            resume,
        } => {
            let store = load_manifest(&data)?;
            let train = split(&store, Split::Train)?;
            let mut trainer = match resume {
                Some(path) => Pretrainer::resume(Checkpoint::load(&path)?, &train)?,
                None => {
                    let path = config.expect("clap enforces --config without --resume");
                    let cfg: PretrainConfig = read_json(&path)?;
                    Pretrainer::new(&cfg, &train)?
                }
            };
            let epochs = trainer.config().epochs;
            trainer.run_until(&train, epochs)?;
            let ckpt = trainer.checkpoint();
            write(&out, ckpt.to_bytes()?)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.csv");
                PathBuf::from(p)
            });
            write(&log_path, log_csv(trainer.log()))?;
            println!(
                "{} pretrained for {} epochs; checkpoint {}, log {}",
                ckpt.method(),
                ckpt.epoch,
                out.display(),
                log_path.display()
            );
        }
        Command::Evaluate {
            ckpt,
            data,
            mode,
            out,
            config,
            fusion,
            epochs,
            label_fraction,
            threshold,
            seed,
        } => {
            let mode = match mode {
                Mode::Linear => DownstreamMode::LinearEval,
                Mode::Finetune => DownstreamMode::Finetune,
                Mode::Scratch => DownstreamMode::SupervisedScratch,
            };
            let mut cfg = match config {
                Some(p) => read_json::<DownstreamConfig>(&p)?,
                None => DownstreamConfig::new(mode),
            };
            cfg.mode = mode;
            if let Some(f) = fusion {
                cfg.fusion = match f {
                    FusionArg::Concat => Fusion::Concat,
                    FusionArg::Mean => Fusion::Mean,
                    FusionArg::VisionOnly => Fusion::VisionOnly,
                };
            }
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.label_fraction = label_fraction.unwrap_or(cfg.label_fraction);
            cfg.threshold = threshold.unwrap_or(cfg.threshold);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let ck = Checkpoint::load(&ckpt)?;
            let store = load_manifest(&data)?;
            let train = split(&store, Split::Train)?;
            let test = split(&store, Split::Test)?;
            let run = attach_probe_and_train(&ck, &train, &test, &cfg)?;
            let report = run.report.with_class_names(&store.manifest.class_names)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| DataError(e.to_string()))?;
            write(&out, json + "\n")?;
            println!(
                "weighted accuracy {:.4}, weighted F1 {:.4}; report {}",
                report.metrics.weighted_accuracy,
                report.metrics.weighted_f1,
                out.display()
            );
        }
        Command::Report {
            input,
            confusion_csv,
            per_class_csv,
        } => {
            let report: MetricsReport = read_json(&input)?;
            write(&confusion_csv, report.confusion_csv())?;
            match per_class_csv {
                Some(p) => write(&p, report.per_class_csv())?,
                None => print!("{}", report.per_class_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.sequential {
        exec::set_mode(ExecMode::Sequential);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(DataError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
