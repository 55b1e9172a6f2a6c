use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use realism3d::commands::{cmd_ablate, cmd_eval, cmd_pipeline, cmd_selftest, cmd_train};
use realism3d::config::{Overrides, RunConfig};
use realism3d::pipeline::{ClientMode, ClientSettings};
use realism3d::strategies::Strategy;
use realism3d::{exit_code, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Realism supervision for toy 3D generators: dataset construction, training,
/// ablations and evaluation.
#[derive(Debug, Parser)]
#[command(name = "realism3d", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Use the deterministic offline client.
    #[arg(long, global = true, conflicts_with = "live")]
    mock: bool,
    /// Use recorded responses from the endpoint directory.
    #[arg(long, global = true)]
    live: bool,
    #[arg(long, global = true)]
    steps: Option<u64>,
    /// coupled, feedforward or mvdiff.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build dataset records from a prompt list.
    Pipeline {
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Train one strategy on the fixture asset.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare the five supervision variants.
    Ablate,
    /// Score a dataset manifest.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the built-in oracle, gradient and identity checks.
    Selftest,
}

/// The `--mock`/`--live` flags win over the environment, which wins over the file.
fn client_override(common: &Common) -> Result<Option<ClientMode>> {
    if common.mock {
        return Ok(Some(ClientMode::Mock));
    }
    if common.live {
        return Ok(Some(ClientMode::Live));
    }
    ClientSettings::mode_from_env()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = Overrides {
        seed: cli.common.seed,
        workers: cli.common.workers,
        client: client_override(&cli.common)?,
        steps: cli.common.steps,
        strategy: cli.common.strategy,
        out: cli.common.out.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Pipeline { prompts } => overrides.prompts = prompts.clone(),
        Command::Eval { manifest } => overrides.manifest = manifest.clone(),
        _ => {}
    }
    config.apply(&overrides)?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<u8> {
    if let Command::Selftest = cli.command {
        let report = cmd_selftest();
        print!("{}", report.to_text());
        return Ok(if report.passed() { 0 } else { EXIT_RUNTIME });
    }
    let config = load_config(cli)?;
    match &cli.command {
        Command::Pipeline { .. } => {
            let out = cmd_pipeline(&config)?;
            let s = &out.summary;
            println!("dataset {}", out.dataset.display());
            println!("completed {} (appended {}), filtered {}, failed {}", s.completed.len(), s.appended, s.filtered.len(), s.failed.len());
            let c = out.client_calls;
            println!(
                "client calls {} (rewrite {}, text_to_image {}, edit_image {})",
                c.total(),
                c.rewrite_text,
                c.text_to_image,
                c.edit_image
            );
            for (id, err) in &s.failed {
                eprintln!("record {id}: {err}");
            }
            Ok(if s.failed.is_empty() { 0 } else { EXIT_RUNTIME })
        }
        Command::Train { resume } => {
            let out = cmd_train(&config, resume.as_deref())?;
            let s = &out.summary;
            println!("strategy {} steps {}", s.strategy, s.steps);
            if let (Some(i), Some(r)) = (s.initial_probe, s.reduction) {
                println!("probe loss {i:.6} -> {:.6} (reduction {:.4})", s.final_probe, r);
            } else {
                println!("probe loss {:.6} (resumed at step {})", s.final_probe, s.resumed_from.unwrap_or(0));
            }
            println!("moving-average rise {:.2} SE", s.moving_average_rise_se);
            println!("written to {}", out.dir.display());
            Ok(0)
        }
        Command::Ablate => {
            let out = cmd_ablate(&config)?;
            println!("{:<12} {:>10} {:>10} {:>10} {:>10}", "variant", "final", "reduction", "shift_gap", "struct_err");
            for r in &out.rows {
                println!("{:<12} {:>10.5} {:>10.4} {:>10.5} {:>10.5}", r.variant, r.final_loss, r.reduction, r.shift_gap, r.struct_err);
            }
            println!("written to {}", out.csv.display());
            Ok(0)
        }
        Command::Eval { .. } => {
            let out = cmd_eval(&config)?;
            print!("{}", out.report.summary_text());
            println!("written to {}", out.dir.display());
            Ok(if out.report.counts.failed == 0 { 0 } else { EXIT_RUNTIME })
        }
        Command::Selftest => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
