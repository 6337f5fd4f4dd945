//! Command-line shell around `sactx-core`: CSV ingestion, model files, metrics and reports.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::AttackArg;
use crate::config::Config;
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sactx", version, about = "Context-conditioned anomaly screening for control-system telemetry")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Never contact a language-model endpoint.
    #[arg(long, global = true)]
    pub offline: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to overwriting `--model`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the tank simulator and write its trace as CSV.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        duration: usize,
        /// `kind:start:end[:magnitude]`; repeatable.
        #[arg(long = "attack")]
        attacks: Vec<AttackArg>,
        /// Also write the matching manifest.
        #[arg(long)]
        manifest_out: Option<PathBuf>,
    },
    /// Learn the rule bank from normal-operation data.
    LearnRules {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add the sensor-actuator index to a model.
    BuildSaIndex(ModelArgs),
    /// Add per-actuator expectations to an indexed model.
    GenSemantics {
        #[command(flatten)]
        model: ModelArgs,
        /// JSON-lines log of every provider call.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Screen a dataset and write one verdict per sensor window as JSON-lines.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Attach a diagnosis to every anomalous window.
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Window-level precision, recall and F1 of a verdict file.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics, verdicts and per-sensor score timelines in one directory.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<String> {
    let cfg = Config::load(cli.global.config.as_deref())?.with_overrides(cli.global.seed, cli.global.offline);
    cfg.provider.validate()?;
    match cli.command {
        Command::Simulate { out, duration, attacks, manifest_out } => {
            let specs: Vec<_> = attacks.into_iter().map(|a| a.0).collect();
            commands::simulate(&cfg, duration, &specs, &out, manifest_out.as_deref())
        }
        Command::LearnRules { manifest, data, out } => commands::learn_rules(&cfg, &manifest, &data, &out),
        Command::BuildSaIndex(m) => commands::build_index(&cfg, &m.manifest, &m.model, m.out.as_deref()),
        Command::GenSemantics { model: m, audit } => {
            commands::gen_semantics(&cfg, &m.manifest, &m.model, m.out.as_deref(), audit.as_deref())
        }
        Command::Detect { manifest, model, data, out, explain, audit } => {
            commands::detect_cmd(&cfg, &manifest, &model, &data, &out, explain, audit.as_deref())
        }
        Command::Evaluate { manifest, verdicts, data, out } => commands::evaluate_cmd(&manifest, &verdicts, &data, out.as_deref()),
        Command::Report { manifest, verdicts, data, out_dir } => commands::report_cmd(&manifest, &verdicts, &data, &out_dir),
    }
}
