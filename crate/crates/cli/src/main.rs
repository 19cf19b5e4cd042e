use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use most_cli::ablate::Variant;
use most_cli::commands::{cmd_ablate, cmd_casestudy, cmd_encode, cmd_ingest, cmd_probe, cmd_synth, cmd_train};
use most_cli::{load_config, CliError, RunDir};

#[derive(Parser, Debug)]
#[command(name = "most", version, about = "Mode-specific tensor time series representations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config, or a run manifest to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets the model, training and synthetic-data seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Config override, `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the labelled synthetic dataset.
    Synth,
    /// Validate and normalize a file dataset.
    Ingest,
    /// Train an encoder on the train split.
    Train,
    /// Encode every window with a checkpoint.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Linear probes on frozen representations.
    Probe {
        /// Omit to probe a freshly initialized encoder.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Paired ablation over encoder, architecture and loss variants.
    Ablate {
        /// Comma-separated variant names; defaults to all twelve.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// PCA scatter and per-mode probes on synthetic data.
    Casestudy {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<RunDir, CliError> {
    let g = &cli.global;
    let cfg = load_config(g.config.as_deref(), &g.overrides, g.seed)?;
    let out = &g.out;
    match cli.command {
        Command::Synth => cmd_synth(&cfg, out),
        Command::Ingest => cmd_ingest(&cfg, out),
        Command::Train => {
            let o = cmd_train(&cfg, out)?;
            if let (Some(a), Some(b)) = (o.report.initial_loss(), o.report.final_loss()) {
                println!("loss {a:.6} -> {b:.6}");
            }
            println!("checkpoint={}", o.checkpoint.display());
            Ok(o.run)
        }
        Command::Encode { checkpoint } => cmd_encode(&cfg, out, &checkpoint),
        Command::Probe { checkpoint } => {
            let o = cmd_probe(&cfg, out, checkpoint.as_deref())?;
            for r in &o.rows {
                println!("{} {} = {:.6} (lambda {})", r.task, r.metric, r.value, r.lambda);
            }
            Ok(o.run)
        }
        Command::Ablate { variants } => {
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>, _>>()?
            };
            let o = cmd_ablate(&cfg, out, &variants)?;
            print!("{}", o.report.to_markdown());
            Ok(o.run)
        }
        Command::Casestudy { checkpoint } => {
            let o = cmd_casestudy(&cfg, out, &checkpoint)?;
            for r in &o.study.probes {
                println!("{} -> {}: acc {:.3}", r.representation, r.label_mode, r.acc);
            }
            Ok(o.run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("run_dir={}", dir.root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
