//! `semivfl` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Two-party semi-vertical federated learning: federated teacher, privileged
/// student distillation, baselines and evaluation.
#[derive(Parser, Debug)]
#[command(name = "semivfl", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic two-party table (data.csv, schema.toml, synth.toml)
    Synth(SynthArgs),
    /// Split a table into overlapped, non-overlapped and test rows (partition.json)
    Partition(PartitionArgs),
    /// Train the split-network teacher through the two-party protocol
    TrainTeacher(TrainCmd),
    /// Distill a frozen teacher into a party-A student
    TrainJpl(TeacherTrainCmd),
    /// Train the party-A-only baseline
    TrainLocal(TrainCmd),
    /// Train the soft-label distillation baseline
    TrainFpd(TeacherTrainCmd),
    /// Report test AUC of a saved model and append a metrics record
    Evaluate(EvaluateArgs),
    /// Sweep hyperparameters and write a leaderboard
    Grid(GridArgs),
    /// Export the deployable part of a trained student
    Export(ExportArgs),
    /// Re-run the command recorded in a run manifest and compare checksums
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// TOML file with generator settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the generated files
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Cross-party correlation in [0, 1] [default: 0.8]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Label dependence on party B in [0, 1] [default: 0.5]
    #[arg(long)]
    pub omega: Option<f64>,
    /// Fraction of positive labels [default: 0.25]
    #[arg(long)]
    pub positive_rate: Option<f64>,
    /// Overlapped rows [default: 20000]
    #[arg(long)]
    pub n_overlap: Option<usize>,
    /// Non-overlapped rows [default: 40000]
    #[arg(long)]
    pub n_nonoverlap: Option<usize>,
    /// Test rows [default: 10000]
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct PartitionArgs {
    /// Directory holding data.csv and schema.toml
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Where partition.json goes [default: the data directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Shuffle seed [default: synth.toml's seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side whose fields belong to the label owner [default: from schema.toml]
    #[arg(long, value_parser = ["left", "right"])]
    pub active_side: Option<String>,
    /// Overlapped rows [default: from synth.toml]
    #[arg(long)]
    pub n_overlap: Option<usize>,
    /// Non-overlapped rows [default: from synth.toml]
    #[arg(long)]
    pub n_nonoverlap: Option<usize>,
    /// Test rows [default: from synth.toml]
    #[arg(long)]
    pub n_test: Option<usize>,
}

/// Training settings shared by every training command.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// TOML file with training settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the teacher-head consistency term [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the non-overlapped terms [default: 1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Embedding regularization weight [default: 0.00001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Similarity softmax temperature [default: 0.2]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overlapped rows per step [default: 256]
    #[arg(long)]
    pub batch_overlap: Option<usize>,
    /// Non-overlapped rows per step [default: 512]
    #[arg(long)]
    pub batch_non: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 3]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Epoch cap [default: 20]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Feature reconstruction loss [default: dcme]
    #[arg(long, value_parser = ["cme", "bcme", "dcme"])]
    pub cme_variant: Option<String>,
    /// Add label cross-entropy on both student heads for overlapped rows [default: false]
    #[arg(long)]
    pub aux_ce: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainCmd {
    /// Directory holding data.csv, schema.toml and partition.json
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Directory for checkpoints, metrics and the run manifest
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Clone)]
pub struct TeacherTrainCmd {
    /// Frozen teacher checkpoint written by train-teacher
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[command(flatten)]
    pub cmd: TrainCmd,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Checkpoint of any kind (teacher, student, local, inference)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding data.csv, schema.toml and partition.json
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Where eval-metrics.jsonl and the manifest go [default: the model's directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seed recorded with the metrics [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// TOML file with grid axes and methods [default: the full grid]
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Comma-separated seeds [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub cmd: TrainCmd,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    /// Student checkpoint written by train-jpl
    #[arg(long)]
    pub student: PathBuf,
    /// Directory for the exported model
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh directory for the replayed outputs
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::dispatch(cli.command, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use semivfl_core::synth::SynthSpec;
    use semivfl_core::trainer::TrainConfig;

    fn help(sub: &str) -> String {
        let mut cmd = Cli::command();
        cmd.build();
        cmd.find_subcommand_mut(sub).unwrap().render_long_help().to_string()
    }

    #[test]
    fn every_subcommand_documents_its_flags() {
        let cmd = Cli::command();
        cmd.clone().debug_assert();
        for sub in cmd.get_subcommands() {
            for arg in sub.get_arguments() {
                if arg.get_id() == "help" {
                    continue;
                }
                let about = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                assert!(!about.is_empty(), "{} --{} has no help", sub.get_name(), arg.get_id());
            }
        }
    }

    #[test]
    fn documented_defaults_match_the_library() {
        let c = TrainConfig::default();
        let h = help("train-jpl");
        for (flag, value) in [
            ("alpha", c.weights.alpha.to_string()),
            ("beta", c.weights.beta.to_string()),
            ("lambda", format!("{:.5}", c.weights.lambda)),
            ("tau", c.weights.tau.to_string()),
            ("lr", c.lr.to_string()),
            ("batch-overlap", c.batch_overlap.to_string()),
            ("batch-non", c.batch_non.to_string()),
            ("patience", c.patience.to_string()),
            ("max-epochs", c.max_epochs.to_string()),
            ("cme-variant", c.weights.cme.to_string()),
            ("aux-ce", c.weights.aux_ce.to_string()),
        ] {
            let at = h.find(&format!("--{flag} ")).unwrap_or_else(|| panic!("--{flag} missing"));
            let rest = &h[at..];
            let end = rest[2..].find("--").map_or(rest.len(), |e| e + 2);
            assert!(
                rest[..end].contains(&format!("[default: {value}]")),
                "--{flag} should document {value}: {}",
                &rest[..end]
            );
        }
        let s = SynthSpec::default();
        let h = help("synth");
        for v in [s.rho.to_string(), s.omega.to_string(), s.n_overlap.to_string()] {
            assert!(h.contains(&format!("[default: {v}]")), "{v}");
        }
    }
}
