//! `hierembed`: reproducible pipelines over label hierarchies.
//!
//! Every command writes its outputs plus a `config.json` snapshot of the
//! fully resolved arguments; `hierembed rerun <config.json>` replays it.
//! Logs go to stderr; failures print one `error kind=<kind>: <message>`
//! line on stderr and exit with status 1.

mod commands;
mod ethec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "hierembed", version, about = "Order-preserving embeddings for hierarchical classification")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "HIEREMBED_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a complete synthetic tree.
    GenTree(GenTreeArgs),
    /// Split closure edges into train/val/test with evaluation negatives.
    Split(SplitArgs),
    /// Train label-only embeddings.
    TrainLabels(TrainLabelsArgs),
    /// Jointly embed instance features with the labels.
    TrainJoint(TrainJointArgs),
    /// Per-level predictions from a joint model.
    Classify(ClassifyArgs),
    /// Label-hierarchy reconstruction quality of an embedding or model.
    Reconstruct(ReconstructArgs),
    /// Train linear classifiers with hierarchy-aware heads.
    TrainClassifier(TrainClassifierArgs),
    /// Export label points as 2-D coordinates.
    #[command(name = "export-2d")]
    #[serde(rename = "export-2d")]
    Export2d(Export2dArgs),
    /// Generate Gaussian cluster features for a hierarchy.
    GenFeatures(GenFeaturesArgs),
    /// Convert ETHEC metadata JSON into hierarchy and instance files.
    ConvertEthec(ConvertEthecArgs),
    /// Replay a run from its config.json snapshot.
    #[serde(skip)]
    Rerun {
        config: PathBuf,
    },
}

fn run(command: Command) -> hierembed::Result<()> {
    match command {
        Command::Rerun { config } => {
            let text = std::fs::read_to_string(&config)?;
            let cmd: Command = serde_json::from_str(&text)
                .map_err(|e| hierembed::Error::Format(format!("{}: {e}", config.display())))?;
            if matches!(cmd, Command::Rerun { .. }) {
                return Err(hierembed::Error::Format("a snapshot cannot rerun another snapshot".into()));
            }
            run(cmd)
        }
        cmd => {
            let out = cmd.output_dir();
            std::fs::create_dir_all(&out)?;
            let snapshot = serde_json::to_string_pretty(&cmd)
                .map_err(|e| hierembed::Error::Format(e.to_string()))?;
            std::fs::write(out.join("config.json"), snapshot + "\n")?;
            match cmd {
                Command::GenTree(a) => gen_tree(&a),
                Command::Split(a) => split(&a),
                Command::TrainLabels(a) => train_labels(&a),
                Command::TrainJoint(a) => train_joint(&a),
                Command::Classify(a) => classify(&a),
                Command::Reconstruct(a) => reconstruct(&a),
                Command::TrainClassifier(a) => train_classifier(&a),
                Command::Export2d(a) => export_2d(&a),
                Command::GenFeatures(a) => gen_features(&a),
                Command::ConvertEthec(a) => ethec::convert(&a),
                Command::Rerun { .. } => unreachable!(),
            }
        }
    }
}

impl Command {
    fn output_dir(&self) -> PathBuf {
        match self {
            Command::GenTree(a) => a.out.clone(),
            Command::Split(a) => a.out.clone(),
            Command::TrainLabels(a) => a.out.clone(),
            Command::TrainJoint(a) => a.out.clone(),
            Command::Classify(a) => a.out.clone(),
            Command::Reconstruct(a) => a.out.clone(),
            Command::TrainClassifier(a) => a.out.clone(),
            Command::Export2d(a) => a.out.clone(),
            Command::GenFeatures(a) => a.out.clone(),
            Command::ConvertEthec(a) => a.out.clone(),
            Command::Rerun { config } => config.parent().map(PathBuf::from).unwrap_or_default(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={}: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
