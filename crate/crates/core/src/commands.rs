//! The flows behind each command-line subcommand. Each takes a validated
//! [`RunConfig`] and writes only below `config.paths.out`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalsuite::{build_report, MetricReport};
use crate::pipeline::{read_prompts, run_pipeline, ClientCounts, ClientSettings, DatasetManifest, MockClient, PipelineSummary, Stage};
use crate::selftest::{run_selftest, SelftestReport};
use crate::strategies::{
    moving_average_rise_se, run_ablation, write_ablation_csv, AblationRow, Checkpoint, LossRecord, Strategy, Trainer,
    MOVING_AVERAGE_AFTER, MOVING_AVERAGE_WINDOW,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_CSV: &str = "loss.csv";
pub const TRAIN_SUMMARY: &str = "summary.json";
pub const ABLATION_CSV: &str = "ablation.csv";

pub struct PipelineOutcome {
    pub dataset: PathBuf,
    pub summary: PipelineSummary,
    /// Calls made by this invocation.
    pub client_calls: ClientCounts,
}

/// Builds (or resumes) one record per prompt under `<out>/dataset`.
pub fn cmd_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let path = config
        .paths
        .prompts
        .as_ref()
        .ok_or_else(|| Error::config("no prompt file: set paths.prompts or pass --prompts"))?;
    let prompts = read_prompts(path)?;
    if prompts.is_empty() {
        return Err(Error::invalid(format!("prompt file {} has no prompts", path.display())));
    }
    let pc = config.pipeline_config();
    let client = ClientSettings::from_env()?
        .with_mode(config.client)
        .build(MockClient::new(pc.mock_image_size, pc.mock_shift))?;
    let dataset = config.dataset_dir();
    let summary = run_pipeline(&prompts, &dataset, Arc::clone(&client), &pc.reconstructor, &pc, Stage::Complete)?;
    Ok(PipelineOutcome { dataset, summary, client_calls: client.counts() })
}

/// Contents of `summary.json` in a training directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub strategy: Strategy,
    pub steps: u64,
    /// Probe loss before the first step; absent for resumed runs.
    pub initial_probe: Option<f64>,
    pub final_probe: f64,
    pub reduction: Option<f64>,
    pub moving_average_rise_se: f64,
    pub resumed_from: Option<u64>,
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub summary: TrainSummary,
    pub history: Vec<LossRecord>,
}

fn save_progress(trainer: &Trainer, dir: &Path) -> Result<()> {
    trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    trainer.write_loss_csv(&dir.join(LOSS_CSV))
}

/// Trains `config.train.strategy` on the fixture asset. With `resume`, the
/// checkpoint's own configuration is used and its step counter continues.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let strategy = config.train.strategy;
    let dir = config.train_dir(strategy);
    std::fs::create_dir_all(&dir)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.strategy != strategy {
                return Err(Error::config(format!(
                    "checkpoint {} is for strategy {}, not {strategy}",
                    path.display(),
                    ckpt.config.strategy
                )));
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => {
            let mut tc = config.train_config(strategy);
            tc.snapshot_dir = Some(dir.join("snapshots"));
            Trainer::new(tc)?
        }
    };
    let resumed_from = resume.map(|_| trainer.state.step);
    let initial = match resume {
        Some(_) => None,
        None => Some(trainer.probe_loss()?),
    };
    let every = config.train.checkpoint_every;
    while trainer.state.step < trainer.config.steps {
        if let Err(e) = trainer.step() {
            trainer.write_loss_csv(&dir.join(LOSS_CSV))?;
            return Err(e);
        }
        if every > 0 && trainer.state.step % every == 0 {
            save_progress(&trainer, &dir)?;
        }
    }
    save_progress(&trainer, &dir)?;
    let final_probe = trainer.probe_loss()?;
    let summary = TrainSummary {
        strategy,
        steps: trainer.state.step,
        initial_probe: initial,
        final_probe,
        reduction: initial.map(|i| 1.0 - final_probe / i),
        moving_average_rise_se: moving_average_rise_se(&trainer.state.history, MOVING_AVERAGE_WINDOW, MOVING_AVERAGE_AFTER),
        resumed_from,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(dir.join(TRAIN_SUMMARY), json)?;
    Ok(TrainOutcome { dir, summary, history: trainer.state.history })
}

pub struct AblationOutcome {
    pub csv: PathBuf,
    pub rows: Vec<AblationRow>,
}

/// Five supervision variants on the same fixture, one summary CSV.
pub fn cmd_ablate(config: &RunConfig) -> Result<AblationOutcome> {
    config.validate()?;
    let dir = config.ablate_dir();
    std::fs::create_dir_all(&dir)?;
    let rows = run_ablation(&config.ablation_config())?;
    let csv = dir.join(ABLATION_CSV);
    write_ablation_csv(&rows, &csv)?;
    Ok(AblationOutcome { csv, rows })
}

pub struct EvalOutcome {
    pub dir: PathBuf,
    pub report: MetricReport,
}

/// Metric report over the manifest's records, written to `<out>/eval`.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalOutcome> {
    config.validate()?;
    let manifest_path = config.manifest_path();
    if !manifest_path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("manifest {} not found; run `pipeline` first or pass --manifest", manifest_path.display()),
        )));
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let report = build_report(&manifest, root, &config.eval_config())?;
    let dir = config.eval_dir();
    report.write(&dir)?;
    Ok(EvalOutcome { dir, report })
}

pub fn cmd_selftest() -> SelftestReport {
    run_selftest()
}
