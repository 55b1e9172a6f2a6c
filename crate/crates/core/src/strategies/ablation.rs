use std::path::Path;

use serde::Serialize;

use super::steps::Objective;
use super::trainer::{convergence_run, TrainConfig};
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::imageops::MultiViewSet;
use crate::losses::{match_loss, LossWeights, Supervision, Supervisor};

/// Supervision variants compared by the ablation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub supervision: Supervision,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 5] {
        let realism = |adapt, matching| Supervision::realism(LossWeights { adapt, matching });
        [
            AblationVariant { name: "full", supervision: realism(1.0, 1.0) },
            AblationVariant { name: "w/o L_adapt", supervision: realism(0.0, 1.0) },
            AblationVariant { name: "w/o L_match", supervision: realism(1.0, 0.0) },
            AblationVariant { name: "w/ L2", supervision: Supervision::L2 },
            AblationVariant { name: "w/ Gram", supervision: Supervision::Gram },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub reduction: f64,
    /// `L(shift(GT), GT) - L(GT, GT)` summed over views, under the variant's loss.
    pub shift_gap: f64,
    /// Structure-matching error of the trained model's probe renders against GT.
    pub struct_err: f64,
}

const SHIFT_CROP_SEED: u64 = 0x5_41f7;

/// Loss gap a quarter-width circular shift of every view opens under `objective`.
pub fn shift_gap(objective: &Objective, gt: &MultiViewSet) -> Result<f64> {
    let shifted: Vec<_> = gt.views().iter().map(|v| v.circular_shift_x(v.width() / 4)).collect();
    let same: Vec<_> = gt.views().to_vec();
    Ok(objective.views_loss(&shifted, SHIFT_CROP_SEED)?.total - objective.views_loss(&same, SHIFT_CROP_SEED)?.total)
}

/// Trains one run per variant from the same base config (same seed, same
/// fixture) and summarises them.
pub fn run_ablation(base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let encoders = Encoders::from_configs(&base.global_encoder, &base.patch_encoder)?;
    let mut rows = Vec::new();
    for variant in AblationVariant::all() {
        let config = TrainConfig { supervision: variant.supervision, ..base.clone() };
        let (trainer, report) = convergence_run(config)?;
        let probe = Objective::new(
            Supervisor::new(encoders.clone(), variant.supervision, base.crop_count, base.crop_scale),
            &trainer.asset.views,
        )?;
        let gap = shift_gap(&probe, &trainer.asset.views)?;
        let mut struct_err = 0.0;
        for k in 0..trainer.config.probe_draws {
            let views = trainer.probe_views(k)?;
            for (v, gt) in views.iter().zip(trainer.asset.views.views()) {
                struct_err += match_loss(v, gt, encoders.patch.as_ref())?.value;
            }
        }
        rows.push(AblationRow {
            variant: variant.name.to_string(),
            initial_loss: report.initial_probe,
            final_loss: report.final_probe,
            reduction: report.reduction,
            shift_gap: gap,
            struct_err: struct_err / trainer.config.probe_draws as f64,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    std::fs::write(path, w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    Ok(())
}
