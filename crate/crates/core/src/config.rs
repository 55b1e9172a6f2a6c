//! Top-level run configuration, read from one TOML file and shared by every
//! command. Unknown keys are rejected; relative paths resolve against the
//! working directory.
//!
//! ```toml
//! seed = 0
//! workers = 4
//! client = "mock"
//!
//! [paths]
//! out = "runs"
//! prompts = "fixtures/prompts.txt"
//!
//! [losses]
//! crop_count = 4
//! supervision = { type = "realism", adapt = 1.0, match = 1.0 }
//!
//! [train]
//! strategy = "coupled"
//! steps = 500
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::evalsuite::{ConsistencyConfig, EvalConfig};
use crate::losses::Supervision;
use crate::pipeline::{ClientMode, ColorShift, PipelineConfig, ToyReconstructor, MANIFEST_FILE};
use crate::strategies::{LrSchedule, Strategy, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Every command writes below this directory.
    pub out: PathBuf,
    /// Prompt list for `pipeline`, one prompt per line.
    pub prompts: Option<PathBuf>,
    /// Manifest read by `eval`; defaults to the one `pipeline` writes.
    pub manifest: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("runs"), prompts: None, manifest: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodersConfig {
    pub global: EncoderConfig,
    pub patch: EncoderConfig,
}

impl Default for EncodersConfig {
    fn default() -> Self {
        Self { global: EncoderConfig::toy_global(11), patch: EncoderConfig::toy_patch(12, 56, 8) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossesConfig {
    pub supervision: Supervision,
    pub crop_count: usize,
    pub crop_scale: (f64, f64),
}

impl Default for LossesConfig {
    fn default() -> Self {
        let t = TrainConfig::new(Strategy::Coupled);
        Self { supervision: t.supervision, crop_count: t.crop_count, crop_scale: t.crop_scale }
    }
}

/// Training options; network sizes and schedules default to the calibrated values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub strategy: Strategy,
    pub steps: u64,
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub resolution: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub splats: usize,
    pub coupled_draws: usize,
    pub ddpm_steps: usize,
    pub probe_draws: usize,
    pub asset_seed: u64,
    /// Steps between checkpoint writes; 0 writes only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Strategy::Coupled);
        Self {
            strategy: t.strategy,
            steps: t.steps,
            lr: t.lr,
            weight_decay: t.weight_decay,
            lr_schedule: t.lr_schedule,
            resolution: t.resolution,
            latent_dim: t.latent_dim,
            hidden: t.hidden,
            decoder_hidden: t.decoder_hidden,
            splats: t.splats,
            coupled_draws: t.coupled_draws,
            ddpm_steps: t.ddpm_steps,
            probe_draws: t.probe_draws,
            asset_seed: t.asset_seed,
            checkpoint_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub strategy: Strategy,
    /// Defaults to `train.steps`.
    pub steps: Option<u64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { strategy: Strategy::Mvdiff, steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub resolution: usize,
    pub mock_image_size: usize,
    pub mock_shift: ColorShift,
    pub reconstructor: ToyReconstructor,
    pub max_concurrent_requests: usize,
    pub min_consistency: Option<f64>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            resolution: p.resolution,
            mock_image_size: p.mock_image_size,
            mock_shift: p.mock_shift,
            reconstructor: p.reconstructor,
            max_concurrent_requests: p.max_concurrent_requests,
            min_consistency: p.min_consistency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub consistency: ConsistencyConfig,
    pub min_kid_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { consistency: e.consistency, min_kid_samples: e.min_kid_samples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub client: ClientMode,
    pub paths: PathsConfig,
    pub encoders: EncodersConfig,
    pub losses: LossesConfig,
    pub train: TrainSection,
    pub ablate: AblateSection,
    pub pipeline: PipelineSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            client: ClientMode::Mock,
            paths: PathsConfig::default(),
            encoders: EncodersConfig::default(),
            losses: LossesConfig::default(),
            train: TrainSection::default(),
            ablate: AblateSection::default(),
            pipeline: PipelineSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line overrides, applied on top of the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub client: Option<ClientMode>,
    pub steps: Option<u64>,
    pub strategy: Option<Strategy>,
    pub out: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// `strategy` and `steps` apply to both `train` and `ablate`.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.client {
            self.client = v;
        }
        if let Some(v) = o.steps {
            self.train.steps = v;
            self.ablate.steps = Some(v);
        }
        if let Some(v) = o.strategy {
            self.train.strategy = v;
            self.ablate.strategy = v;
        }
        if let Some(v) = &o.out {
            self.paths.out = v.clone();
        }
        if let Some(v) = &o.prompts {
            self.paths.prompts = Some(v.clone());
        }
        if let Some(v) = &o.manifest {
            self.paths.manifest = Some(v.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.paths.out.as_os_str().is_empty() {
            return Err(Error::config("paths.out must not be empty"));
        }
        self.train_config(self.train.strategy).validate()?;
        self.ablation_config().validate()?;
        self.pipeline_config().validate()?;
        if self.eval.min_kid_samples < 2 {
            return Err(Error::config("eval.min_kid_samples must be at least 2"));
        }
        Ok(())
    }

    pub fn train_config(&self, strategy: Strategy) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            strategy,
            seed: self.seed,
            steps: t.steps,
            lr: t.lr,
            weight_decay: t.weight_decay,
            lr_schedule: t.lr_schedule,
            resolution: t.resolution,
            crop_count: self.losses.crop_count,
            crop_scale: self.losses.crop_scale,
            supervision: self.losses.supervision,
            global_encoder: self.encoders.global.clone(),
            patch_encoder: self.encoders.patch.clone(),
            latent_dim: t.latent_dim,
            hidden: t.hidden,
            decoder_hidden: t.decoder_hidden,
            splats: t.splats,
            coupled_draws: t.coupled_draws,
            ddpm_steps: t.ddpm_steps,
            probe_draws: t.probe_draws,
            asset_seed: t.asset_seed,
            snapshot_dir: None,
        }
    }

    pub fn ablation_config(&self) -> TrainConfig {
        let mut c = self.train_config(self.ablate.strategy);
        if let Some(steps) = self.ablate.steps {
            c.steps = steps;
        }
        c
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            seed: self.seed,
            resolution: p.resolution,
            mock_image_size: p.mock_image_size,
            mock_shift: p.mock_shift,
            reconstructor: p.reconstructor.clone(),
            workers: self.workers,
            max_concurrent_requests: p.max_concurrent_requests,
            min_consistency: p.min_consistency,
            consistency_encoder: self.encoders.patch.clone(),
            consistency: self.eval.consistency,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            global_encoder: self.encoders.global.clone(),
            patch_encoder: self.encoders.patch.clone(),
            consistency: self.eval.consistency,
            min_kid_samples: self.eval.min_kid_samples,
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.out.join("dataset")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.manifest.clone().unwrap_or_else(|| self.dataset_dir().join(MANIFEST_FILE))
    }

    pub fn train_dir(&self, strategy: Strategy) -> PathBuf {
        self.paths.out.join("train").join(strategy.as_str())
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.paths.out.join("ablate").join(self.ablate.strategy.as_str())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.paths.out.join("eval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train_config(Strategy::Mvdiff), TrainConfig::new(Strategy::Mvdiff));
        assert_eq!(c.pipeline_config(), PipelineConfig::default());
        assert_eq!(c.eval_config(), EvalConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sede = 1", "[train]\nstrategy = \"coupled\"\nstep = 3", "[losses.supervision]\ntype = \"l2\"\nweight = 1"] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn sections_reach_the_module_configs() {
        let c = RunConfig::from_toml_str(
            "seed = 9\nworkers = 2\n[losses]\nsupervision = { type = \"realism\", adapt = 0.0, match = 1.0 }\n\
             [train]\nstrategy = \"feedforward\"\nsteps = 40\n[ablate]\nsteps = 7\n[pipeline]\nmin_consistency = 0.6",
        )
        .unwrap();
        let t = c.train_config(c.train.strategy);
        assert_eq!((t.seed, t.steps, t.strategy), (9, 40, Strategy::Feedforward));
        assert_eq!(t.supervision, Supervision::Realism { adapt: 0.0, matching: 1.0 });
        assert_eq!((c.ablation_config().steps, c.ablation_config().strategy), (7, Strategy::Mvdiff));
        let p = c.pipeline_config();
        assert_eq!((p.seed, p.workers, p.min_consistency), (9, 2, Some(0.6)));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_toml_str("workers = 0").is_err());
        assert!(RunConfig::from_toml_str("[train]\nresolution = 15").is_err());
        assert!(RunConfig::from_toml_str("[encoders.patch]\nkind = \"toy-patch\"\nm = 50\npatch_size = 8").is_err());
        assert!(RunConfig::from_toml_str("[train]\nstrategy = \"gan\"").is_err());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut c = RunConfig::from_toml_str("seed = 1\n[train]\nsteps = 10").unwrap();
        c.apply(&Overrides { seed: Some(4), steps: Some(3), strategy: Some(Strategy::Coupled), ..Overrides::default() }).unwrap();
        assert_eq!((c.seed, c.train.steps, c.ablate.steps), (4, 3, Some(3)));
        assert!(c.apply(&Overrides { workers: Some(0), ..Overrides::default() }).is_err());
    }
}
