//! Command-line entry point tying synthesis, training, evaluation, the
//! ablation ladder and embedding export into reproducible runs.
//!
//! Exit codes: 0 on success, 1 on runtime errors (data, config, io), 2 on
//! usage errors. The `UMAFD_SEED` environment variable overrides the run
//! seed: `train.seed` for training commands, `synth.seed` for `synth`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use umafd_core::config::{self, RunConfig};
use umafd_core::data::Dataset;
use umafd_core::eval::{self, Protocol};
use umafd_core::synth;
use umafd_core::trainer;

#[derive(Parser)]
#[command(name = "umafd", version, about = "RGB-to-depth modality adaptation for fall detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Baseline,
    Umafd,
    SupervisedTarget,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Protocol {
        match p {
            ProtocolArg::Baseline => Protocol::Baseline,
            ProtocolArg::Umafd => Protocol::Umafd,
            ProtocolArg::SupervisedTarget => Protocol::SupervisedTarget,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic paired RGB/depth dataset.
    Synth {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        /// Flat key=value run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a protocol and report depth-test metrics.
    Train {
        /// Dataset root (from `synth`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Experimental protocol to run.
        #[arg(long)]
        protocol: ProtocolArg,
        /// Output directory for checkpoints, logs and the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a finished run from its existing final checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        protocol: ProtocolArg,
        /// Output directory of the finished `train` run.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the six-stage V-01..V-06 ablation ladder.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export test-clip embeddings from a checkpoint to CSV.
    ExportEmbeddings {
        /// Checkpoint file (`ckpt_epoch_*.bin`).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let cfg = match path {
        Some(p) => config::load_run_config(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn seed_override() -> anyhow::Result<Option<u64>> {
    match std::env::var("UMAFD_SEED") {
        Ok(v) => {
            let seed = v.parse().with_context(|| format!("UMAFD_SEED must be an integer, got `{v}`"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn open_dataset(data: &Path, cfg: &RunConfig) -> anyhow::Result<Dataset> {
    Ok(Dataset::open(data, cfg.dims())?)
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Synth { out, config } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed_override()? {
                cfg.synth.seed = s;
            }
            let records = synth::synth_generate(&cfg.synth, &out)?;
            println!("wrote {} clips under {}", records.len(), out.display());
        }
        Cmd::Train { data, config, protocol, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed_override()? {
                cfg.train.seed = s;
            }
            let ds = open_dataset(&data, &cfg)?;
            let res = eval::run_protocol(protocol.into(), &ds, &cfg.train, &cfg.backbone, &out)?;
            let m = &res.metrics;
            println!(
                "{}: accuracy {:.2}% auc {:.2}% -> {}",
                res.protocol.as_str(),
                m.accuracy * 100.0,
                m.auc * 100.0,
                res.report_path.display()
            );
        }
        Cmd::Eval { data, config, protocol, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed_override()? {
                cfg.train.seed = s;
            }
            let final_ckpt = trainer::checkpoint_path(&out, cfg.train.epochs - 1);
            if !final_ckpt.exists() {
                bail!("no final checkpoint at {}; run `train` first", final_ckpt.display());
            }
            let ds = open_dataset(&data, &cfg)?;
            let res = eval::run_protocol(protocol.into(), &ds, &cfg.train, &cfg.backbone, &out)?;
            let m = &res.metrics;
            println!(
                "{}: accuracy {:.2}% auc {:.2}% -> {}",
                res.protocol.as_str(),
                m.accuracy * 100.0,
                m.auc * 100.0,
                res.report_path.display()
            );
        }
        Cmd::Ablate { data, config, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed_override()? {
                cfg.train.seed = s;
            }
            let ds = open_dataset(&data, &cfg)?;
            let rows = eval::ablation(&ds, &cfg.train, &cfg.backbone, &out)?;
            for r in &rows {
                println!("{}: accuracy {:.2}%", r.stage, r.metrics.accuracy * 100.0);
            }
            println!("wrote {}", out.join("ablation.csv").display());
        }
        Cmd::ExportEmbeddings { ckpt, data, config, out } => {
            let cfg = load_config(&config)?;
            let ds = open_dataset(&data, &cfg)?;
            eval::export_embeddings(&ckpt, &ds, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
