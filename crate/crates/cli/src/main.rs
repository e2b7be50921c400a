use std::path::PathBuf;
use std::process::ExitCode;

use attrgen_cli::artifacts;
use attrgen_cli::config::{ExperimentConfig, ExperimentKind};
use attrgen_cli::experiments::{self, Lab};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attrgen", about = "Generative attribute-value prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Quick,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON). Without it the preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, kind: ExperimentKind) -> attrgen::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(kind, 0),
                Preset::Quick => ExperimentConfig::quick(kind, 0),
            },
        };
        let cfg = match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset config as JSON.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long, value_enum, default_value = "main")]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the world, products, labels and split.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage training from a synth directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Beam-search predictions for every test product.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-PAC thresholds and AR@P / Recall@P against test gold labels.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generative model against the span tagger and per-PAC classifiers.
    Main(Experiment),
    /// Train with and without NA/NO labels.
    AblateNegative(Experiment),
    /// Withhold strong labels for a subset of PACs.
    ZeroShot(Experiment),
    /// NA vs applicable accuracy against binary classifiers.
    Applicability(Experiment),
    /// Text-only vs embedding-channel model.
    Multimodal(Experiment),
    /// Model-width sweep on one split.
    ArchSweep(Experiment),
    /// Summarize aggregate reports of run directories into one CSV.
    Report {
        #[arg(long)]
        out: PathBuf,
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Experiment {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Main,
    NegativeAblation,
    ZeroShot,
    Applicability,
    Multimodal,
    ArchSweep,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Main => ExperimentKind::Main,
            Kind::NegativeAblation => ExperimentKind::NegativeAblation,
            Kind::ZeroShot => ExperimentKind::ZeroShot,
            Kind::Applicability => ExperimentKind::Applicability,
            Kind::Multimodal => ExperimentKind::Multimodal,
            Kind::ArchSweep => ExperimentKind::ArchSweep,
        }
    }
}

fn run_experiment(e: &Experiment, kind: ExperimentKind, command: &str) -> attrgen::Result<()> {
    let cfg = e.cfg.resolve(kind)?;
    let mut lab = Lab::new(cfg.clone())?;
    let manifest = match kind {
        ExperimentKind::Main => experiments::run_main(&mut lab)?.write(&e.out, command, &cfg)?,
        ExperimentKind::NegativeAblation => experiments::run_negative_ablation(&mut lab)?.write(&e.out, command, &cfg)?,
        ExperimentKind::ZeroShot => experiments::run_zero_shot(&mut lab)?.write(&e.out, command, &cfg)?,
        ExperimentKind::Applicability => experiments::run_applicability(&mut lab)?.write(&e.out, command, &cfg)?,
        ExperimentKind::Multimodal => {
            std::fs::create_dir_all(&e.out)?;
            experiments::run_multimodal(&mut lab, &e.out)?.write(&e.out, command, &cfg)?
        }
        ExperimentKind::ArchSweep => experiments::run_arch_sweep(&mut lab)?.write(&e.out, command, &cfg)?,
    };
    eprintln!("{command}: wrote {} files to {}", manifest.outputs.len(), e.out.display());
    Ok(())
}

fn run(cli: Cli) -> attrgen::Result<()> {
    match cli.command {
        Command::Config { preset, kind, seed } => {
            let cfg = match preset {
                Preset::Desk => ExperimentConfig::desk(kind.into(), seed),
                Preset::Quick => ExperimentConfig::quick(kind.into(), seed),
            };
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        Command::Synth { cfg, out } => {
            artifacts::cmd_synth(&cfg.resolve(ExperimentKind::Main)?, &out)?;
        }
        Command::Train { cfg, data, out } => {
            artifacts::cmd_train(&cfg.resolve(ExperimentKind::Main)?, &data, &out)?;
        }
        Command::Predict { cfg, data, model, out } => {
            artifacts::cmd_predict(&cfg.resolve(ExperimentKind::Main)?, &data, &model, &out)?;
        }
        Command::Eval { cfg, data, predictions, out } => {
            let agg = artifacts::cmd_eval(&cfg.resolve(ExperimentKind::Main)?, &data, &predictions, &out)?;
            println!(
                "AR@P {:.4} ({}/{} PACs), Recall@P {}",
                agg.ar_at_p,
                agg.n_accepted,
                agg.n_pacs,
                agg.recall_at_p.map_or("n/a".to_string(), |r| format!("{r:.4}"))
            );
        }
        Command::Main(e) => run_experiment(&e, ExperimentKind::Main, "main")?,
        Command::AblateNegative(e) => run_experiment(&e, ExperimentKind::NegativeAblation, "ablate-negative")?,
        Command::ZeroShot(e) => run_experiment(&e, ExperimentKind::ZeroShot, "zero-shot")?,
        Command::Applicability(e) => run_experiment(&e, ExperimentKind::Applicability, "applicability")?,
        Command::Multimodal(e) => run_experiment(&e, ExperimentKind::Multimodal, "multimodal")?,
        Command::ArchSweep(e) => run_experiment(&e, ExperimentKind::ArchSweep, "arch-sweep")?,
        Command::Report { out, runs } => artifacts::cmd_report(&runs, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
