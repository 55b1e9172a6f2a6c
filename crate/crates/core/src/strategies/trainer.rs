use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::Codec2D;
use super::fixture::TrainAsset;
use super::models::{LossRecord, ModelHandles, Strategy, TrainState, TrainableFlags};
use super::schedule::{MultiViewLatents, NoiseSchedule, DEFAULT_DDPM_STEPS};
use super::steps::{
    coupled_batch_gradients, coupled_scene, feedforward_gradients, mv_gradients, mv_images, predict_appearance, step_rng,
    train_coupled_step, train_feedforward_step, train_mv_diffusion_step, CoupledDraw, Grads, MvDraw, Objective,
    POSITION_FEATURES, TEXT_DIM, TIME_FEATURES,
};
use crate::encoders::{EncoderConfig, Encoders};
use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, MultiViewSet};
use crate::losses::{Supervision, Supervisor};
use crate::nn::{AdamW, AdamWConfig, Mlp};
use crate::toyscene::{apply_texture, Decoder3D, Latent3D, RAW_PER_SPLAT};
use crate::util::{mix_seed, rng};

const PROBE_SALT: u64 = 0x9e0b_e5a1;
const COND_SALT: u64 = 0xc0_4d;
pub const CHECKPOINT_VERSION: u32 = 1;

fn default_resolution() -> usize {
    32
}
fn default_crop_count() -> usize {
    4
}
fn default_crop_scale() -> (f64, f64) {
    (0.5, 1.0)
}
fn default_global() -> EncoderConfig {
    EncoderConfig::toy_global(11)
}
fn default_patch() -> EncoderConfig {
    EncoderConfig::toy_patch(12, 56, 8)
}
fn default_latent_dim() -> usize {
    crate::toyscene::DEFAULT_LATENT_DIM
}
fn default_hidden() -> usize {
    128
}
fn default_decoder_hidden() -> usize {
    64
}
fn default_splats() -> usize {
    crate::toyscene::DEFAULT_SPLATS
}
fn default_ddpm_steps() -> usize {
    DEFAULT_DDPM_STEPS
}
fn default_coupled_draws() -> usize {
    1
}
fn default_probe_draws() -> usize {
    8
}
fn default_asset_seed() -> u64 {
    7
}
fn default_steps() -> u64 {
    500
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over `steps`.
    #[default]
    Cosine,
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Overrides the strategy's default learning rate.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_crop_count")]
    pub crop_count: usize,
    #[serde(default = "default_crop_scale")]
    pub crop_scale: (f64, f64),
    #[serde(default)]
    pub supervision: Supervision,
    #[serde(default = "default_global")]
    pub global_encoder: EncoderConfig,
    #[serde(default = "default_patch")]
    pub patch_encoder: EncoderConfig,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_decoder_hidden")]
    pub decoder_hidden: usize,
    #[serde(default = "default_splats")]
    pub splats: usize,
    /// Noise draws averaged per coupled step.
    #[serde(default = "default_coupled_draws")]
    pub coupled_draws: usize,
    #[serde(default = "default_ddpm_steps")]
    pub ddpm_steps: usize,
    #[serde(default = "default_probe_draws")]
    pub probe_draws: usize,
    #[serde(default = "default_asset_seed")]
    pub asset_seed: u64,
    /// Where a state snapshot is written if training diverges.
    #[serde(default)]
    pub snapshot_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            seed: 0,
            steps: default_steps(),
            lr: None,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::default(),
            resolution: default_resolution(),
            crop_count: default_crop_count(),
            crop_scale: default_crop_scale(),
            supervision: Supervision::default(),
            global_encoder: default_global(),
            patch_encoder: default_patch(),
            latent_dim: default_latent_dim(),
            hidden: default_hidden(),
            decoder_hidden: default_decoder_hidden(),
            splats: default_splats(),
            coupled_draws: default_coupled_draws(),
            ddpm_steps: default_ddpm_steps(),
            probe_draws: default_probe_draws(),
            asset_seed: default_asset_seed(),
            snapshot_dir: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.strategy.default_lr())
    }

    /// Learning rate used for the update that produces step `step + 1`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr(),
            LrSchedule::Cosine => {
                let frac = (step as f64 / self.steps.max(1) as f64).min(1.0);
                self.lr() * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.global_encoder.validate()?;
        self.patch_encoder.validate()?;
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be positive")));
        }
        if self.resolution < crate::imageops::MIN_CROP_SIDE || self.resolution % 2 != 0 {
            return Err(Error::config("resolution must be even and at least 16"));
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) || self.crop_count == 0 {
            return Err(Error::config("crop_scale must satisfy 0 < lo <= hi <= 1 with crop_count >= 1"));
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.decoder_hidden == 0 || self.splats == 0 {
            return Err(Error::config("network sizes must be positive"));
        }
        if self.ddpm_steps == 0 || self.probe_draws == 0 || self.coupled_draws == 0 {
            return Err(Error::config("ddpm_steps, probe_draws and coupled_draws must be positive"));
        }
        if let Supervision::Realism { adapt, matching } = self.supervision {
            if adapt < 0.0 || matching < 0.0 || adapt + matching == 0.0 {
                return Err(Error::config("realism weights must be non-negative and not both zero"));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.strategy {
            Strategy::Mvdiff => NoiseSchedule::cosine(self.ddpm_steps),
            _ => Ok(NoiseSchedule::RectifiedFlow),
        }
    }
}

/// Fresh networks for `strategy`, initialised from `config.seed`.
pub fn init_models(config: &TrainConfig) -> ModelHandles {
    let mut m = ModelHandles::empty(TrainableFlags::for_strategy(config.strategy));
    let s = config.seed;
    let latent_len = Codec2D::latent_len(config.resolution, config.resolution);
    match config.strategy {
        Strategy::Coupled => {
            let input = config.latent_dim + 1 + config.global_encoder.d_g;
            m.velocity_net = Some(Mlp::seeded(mix_seed(s, 1), input, config.hidden, config.latent_dim, 0.5));
            m.decoder3d = Some(Decoder3D {
                mlp: Mlp::seeded(mix_seed(s, 2), config.latent_dim, config.decoder_hidden, config.splats * RAW_PER_SPLAT, 0.5),
                splats: config.splats,
            });
        }
        Strategy::Feedforward => {
            m.texture_net = Some(Mlp::seeded(mix_seed(s, 3), TEXT_DIM + POSITION_FEATURES, config.hidden, 4, 0.5));
        }
        Strategy::Mvdiff => {
            let input = 2 * latent_len + TIME_FEATURES;
            m.noise_net = Some(Mlp::seeded(mix_seed(s, 4), input, config.hidden, latent_len, 0.5));
            m.decoder2d = Some(Codec2D::default());
        }
    }
    m
}

/// A snapshot of a run that can be resumed exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub models: ModelHandles,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

/// Strategy-specific conditioning prepared once per run.
#[derive(Clone, Debug)]
enum Inputs {
    Coupled { x0: Latent3D },
    Feedforward,
    Mvdiff { x0: MultiViewLatents, geometry_renders: MultiViewSet, cond: MultiViewLatents },
}

/// Owns one training run over the fixture asset.
pub struct Trainer {
    pub config: TrainConfig,
    pub asset: TrainAsset,
    pub objective: Objective,
    pub schedule: NoiseSchedule,
    pub models: ModelHandles,
    pub state: TrainState,
    inputs: Inputs,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let models = init_models(&config);
        let mut state = TrainState::new(config.seed);
        let opt = AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::with_lr(config.lr()) };
        for name in [super::VELOCITY_NET, super::DECODER3D, super::TEXTURE_NET, super::NOISE_NET, super::DECODER2D] {
            if let (true, Some(p)) = (models.trainable.is_trainable(name), models.params(name)) {
                state.optimizers.insert(name.to_string(), AdamW::new(opt, p.len()));
            }
        }
        Self::with_parts(config, models, state)
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        Self::with_parts(checkpoint.config, checkpoint.models, checkpoint.state)
    }

    fn with_parts(config: TrainConfig, models: ModelHandles, state: TrainState) -> Result<Self> {
        config.validate()?;
        let asset = TrainAsset::fixture(config.asset_seed, config.resolution)?;
        let encoders = Encoders::from_configs(&config.global_encoder, &config.patch_encoder)?;
        let supervisor = Supervisor::new(encoders, config.supervision, config.crop_count, config.crop_scale);
        let objective = Objective::new(supervisor, &asset.views)?;
        let schedule = config.schedule()?;
        let inputs = match config.strategy {
            Strategy::Coupled => Inputs::Coupled { x0: asset.latent(config.latent_dim, config.asset_seed)? },
            Strategy::Feedforward => Inputs::Feedforward,
            Strategy::Mvdiff => {
                let codec = models.decoder2d.as_ref().ok_or_else(|| Error::config("missing 2D decoder"))?;
                let geometry_renders = asset.geometry_renders()?;
                let cond = codec.encode_views(&geometry_renders)?;
                Inputs::Mvdiff { x0: asset.view_latents(codec)?, geometry_renders, cond }
            }
        };
        Ok(Self { config, asset, objective, schedule, models, state, inputs })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            models: self.models.clone(),
            state: self.state.clone(),
        }
    }

    fn cond_view(&self) -> usize {
        rng(mix_seed(self.state.seed ^ COND_SALT, self.state.step + 1)).random_range(0..4)
    }

    /// One optimisation step. On divergence, a snapshot is written if configured.
    pub fn step(&mut self) -> Result<LossRecord> {
        let lr = self.config.lr_at(self.state.step);
        for opt in self.state.optimizers.values_mut() {
            opt.config.lr = lr;
        }
        let result = match &self.inputs {
            Inputs::Coupled { x0 } => {
                let cond = self.cond_view();
                train_coupled_step(&mut self.state, &mut self.models, x0, cond, &self.objective, &self.schedule, self.config.coupled_draws)
            }
            Inputs::Feedforward => train_feedforward_step(
                &mut self.state,
                &mut self.models,
                &self.asset.geometry(),
                &self.asset.text,
                &self.objective,
            ),
            Inputs::Mvdiff { x0, geometry_renders, .. } => train_mv_diffusion_step(
                &mut self.state,
                &mut self.models,
                x0,
                geometry_renders,
                &self.objective,
                &self.schedule,
            ),
        };
        match result {
            Err(Error::Divergence { step, loss, .. }) => {
                let snapshot = match &self.config.snapshot_dir {
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        let path = dir.join(format!("divergence-step{step}.json"));
                        self.checkpoint().save(&path)?;
                        Some(path)
                    }
                    None => None,
                };
                Err(Error::Divergence { step, loss, snapshot })
            }
            other => other,
        }
    }

    /// Runs until `state.step` reaches `config.steps`.
    pub fn run(&mut self) -> Result<()> {
        while self.state.step < self.config.steps {
            self.step()?;
        }
        Ok(())
    }

    /// Gradients of the next step without applying them.
    pub fn step_gradients(&self) -> Result<Grads> {
        let mut r = step_rng(&self.state);
        Ok(match &self.inputs {
            Inputs::Coupled { x0 } => {
                let draws: Vec<_> = (0..self.config.coupled_draws).map(|_| CoupledDraw::sample(&mut r, x0.dim())).collect();
                coupled_batch_gradients(&self.models, x0, self.cond_view(), &self.objective, &draws)?.1
            }
            Inputs::Feedforward => {
                feedforward_gradients(&self.models, &self.asset.geometry(), &self.asset.text, &self.objective, r.random())?.1
            }
            Inputs::Mvdiff { x0, cond, .. } => {
                let draw = MvDraw::sample(&mut r, x0[0].len(), self.config.ddpm_steps);
                mv_gradients(&self.models, x0, cond, &self.objective, &self.schedule, &draw)?.1
            }
        })
    }

    /// Views produced by the current model for probe draw `k` (fixed across the run).
    pub fn probe_views(&self, k: usize) -> Result<Vec<ImageRGB>> {
        let mut r = rng(mix_seed(PROBE_SALT, k as u64));
        match &self.inputs {
            Inputs::Coupled { x0 } => {
                let draw = CoupledDraw::sample(&mut r, x0.dim());
                self.objective.render(&coupled_scene(&self.models, x0, k % 4, &self.objective, &draw)?)
            }
            Inputs::Feedforward => {
                let app = predict_appearance(&self.models, &self.asset.geometry(), &self.asset.text)?;
                self.objective.render(&apply_texture(&self.asset.geometry(), &app)?)
            }
            Inputs::Mvdiff { x0, cond, .. } => {
                let draw = MvDraw::sample(&mut r, x0[0].len(), self.config.ddpm_steps);
                mv_images(&self.models, x0, cond, &self.schedule, self.config.resolution, &draw)
            }
        }
    }

    /// Mean summed-over-views loss over the fixed probe draws.
    pub fn probe_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.config.probe_draws {
            let views = self.probe_views(k)?;
            total += self.objective.views_loss(&views, mix_seed(PROBE_SALT + 1, k as u64))?.total;
        }
        Ok(total / self.config.probe_draws as f64)
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        write_loss_csv(&self.state.history, path)
    }
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Trailing moving average of the per-step total loss.
pub fn moving_average(history: &[LossRecord], window: usize) -> Vec<f64> {
    history
        .windows(window)
        .map(|w| w.iter().map(|r| r.total).sum::<f64>() / window as f64)
        .collect()
}

/// Largest rise of the moving average above its running minimum, for windows
/// ending after step `after`, relative to the average at `after`.
pub fn moving_average_rise(history: &[LossRecord], window: usize, after: usize) -> f64 {
    let ma = moving_average(history, window);
    let start = after.saturating_sub(window);
    if start >= ma.len() {
        return 0.0;
    }
    let base = ma[start];
    let mut best = base;
    let mut rise: f64 = 0.0;
    for v in &ma[start..] {
        best = best.min(*v);
        rise = rise.max((v - best) / base);
    }
    rise
}

/// Largest rise of the moving average above its running minimum, for windows
/// ending after step `after`, in units of the standard error of the window mean
/// (`sd / sqrt(window)` of the per-step losses in that window). A single noisy
/// step lifts the average by about one standard error.
pub fn moving_average_rise_se(history: &[LossRecord], window: usize, after: usize) -> f64 {
    let ma = moving_average(history, window);
    let start = after.saturating_sub(window);
    if start >= ma.len() || window < 2 {
        return 0.0;
    }
    let mut best = ma[start];
    let mut worst: f64 = 0.0;
    for (i, v) in ma.iter().enumerate().skip(start) {
        best = best.min(*v);
        let rise = v - best;
        if rise <= 0.0 {
            continue;
        }
        let var = history[i..i + window].iter().map(|r| (r.total - v).powi(2)).sum::<f64>() / (window - 1) as f64;
        let se = (var / window as f64).sqrt();
        worst = worst.max(if se > 0.0 { rise / se } else { f64::INFINITY });
    }
    worst
}

/// Outcome of an overfitting run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub strategy: Strategy,
    pub steps: u64,
    pub initial_probe: f64,
    pub final_probe: f64,
    /// `1 - final / initial`.
    pub reduction: f64,
    pub moving_average_rise: f64,
    /// See [`moving_average_rise_se`].
    pub moving_average_rise_se: f64,
}

pub const MOVING_AVERAGE_WINDOW: usize = 50;
pub const MOVING_AVERAGE_AFTER: usize = 100;
/// Rises of the moving average up to this many standard errors count as noise.
pub const MOVING_AVERAGE_NOISE_BAND: f64 = 3.0;

pub fn convergence_run(config: TrainConfig) -> Result<(Trainer, ConvergenceReport)> {
    let mut trainer = Trainer::new(config)?;
    let initial = trainer.probe_loss()?;
    trainer.run()?;
    let fin = trainer.probe_loss()?;
    let report = ConvergenceReport {
        strategy: trainer.config.strategy,
        steps: trainer.state.step,
        initial_probe: initial,
        final_probe: fin,
        reduction: 1.0 - fin / initial,
        moving_average_rise: moving_average_rise(&trainer.state.history, MOVING_AVERAGE_WINDOW, MOVING_AVERAGE_AFTER),
        moving_average_rise_se: moving_average_rise_se(&trainer.state.history, MOVING_AVERAGE_WINDOW, MOVING_AVERAGE_AFTER),
    };
    Ok((trainer, report))
}
