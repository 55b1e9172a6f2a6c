use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::codec::Codec2D;
use super::models::{require, LossRecord, ModelHandles, TrainState, DECODER3D, NOISE_NET, TEXTURE_NET, VELOCITY_NET};
use super::schedule::{ddpm_noise, ddpm_predict_clean, rf_noise, rf_predict_clean, MultiViewLatents, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, MultiViewSet};
use crate::losses::{SupervisionTarget, Supervisor};
use crate::nn::Mlp;
use crate::toyscene::{apply_texture, render, render_backward, Appearance, CameraPose, GeometryHandle, Latent3D, SceneGrad, ToySplatScene};
use crate::util::{fnv1a, gaussian_vec, mix_seed, normalize, rng};

pub const TEXT_DIM: usize = 32;
pub const POSITION_FEATURES: usize = 15;
pub const TIME_FEATURES: usize = 16;

/// Summed-over-views loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub adapt: f64,
    pub matching: f64,
    pub total: f64,
}

impl LossParts {
    pub fn record(self, step: u64) -> LossRecord {
        LossRecord { step, adapt: self.adapt, matching: self.matching, total: self.total }
    }
}

/// Supervision against a fixed set of four ground-truth views.
#[derive(Clone)]
pub struct Objective {
    pub supervisor: Supervisor,
    targets: Vec<SupervisionTarget>,
}

impl Objective {
    pub fn new(supervisor: Supervisor, gt: &MultiViewSet) -> Result<Self> {
        let (h, w) = gt.dims();
        if h != w {
            return Err(Error::invalid("training views must be square"));
        }
        let targets = gt.views().par_iter().map(|v| supervisor.prepare(v)).collect();
        Ok(Self { supervisor, targets })
    }

    pub fn resolution(&self) -> usize {
        self.targets[0].image.height()
    }

    pub fn gt_view(&self, index: usize) -> &ImageRGB {
        &self.targets[index].image
    }

    fn view_seed(crop_seed: u64, view: usize) -> u64 {
        mix_seed(crop_seed, view as u64 + 1)
    }

    fn sum(parts: impl Iterator<Item = crate::losses::LossValue>) -> LossParts {
        parts.fold(LossParts::default(), |acc, l| LossParts {
            adapt: acc.adapt + l.term("adapt").unwrap_or(0.0),
            matching: acc.matching + l.term("match").unwrap_or(0.0),
            total: acc.total + l.value,
        })
    }

    pub fn views_loss(&self, views: &[ImageRGB], crop_seed: u64) -> Result<LossParts> {
        let values = (0..4)
            .into_par_iter()
            .map(|v| self.supervisor.evaluate_value(&views[v], &self.targets[v], Self::view_seed(crop_seed, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::sum(values.into_iter()))
    }

    /// Loss and per-view pixel gradients. Views are evaluated in parallel and
    /// summed in view order, so the result does not depend on scheduling.
    pub fn views_loss_grad(&self, views: &[ImageRGB], crop_seed: u64) -> Result<(LossParts, Vec<Vec<f64>>)> {
        let out = (0..4)
            .into_par_iter()
            .map(|v| self.supervisor.evaluate(&views[v], &self.targets[v], Self::view_seed(crop_seed, v)))
            .collect::<Result<Vec<_>>>()?;
        let (values, grads): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        Ok((Self::sum(values.into_iter()), grads))
    }

    pub fn render(&self, scene: &ToySplatScene) -> Result<Vec<ImageRGB>> {
        CameraPose::all().par_iter().map(|c| render(scene, *c, self.resolution())).collect()
    }

    pub fn scene_loss(&self, scene: &ToySplatScene, crop_seed: u64) -> Result<LossParts> {
        self.views_loss(&self.render(scene)?, crop_seed)
    }

    pub fn scene_loss_grad(&self, scene: &ToySplatScene, crop_seed: u64) -> Result<(LossParts, SceneGrad)> {
        let views = self.render(scene)?;
        let (loss, grads) = self.views_loss_grad(&views, crop_seed)?;
        let res = self.resolution();
        let per_view = CameraPose::all()
            .par_iter()
            .zip(grads.par_iter())
            .map(|(c, g)| render_backward(scene, *c, res, g))
            .collect::<Result<Vec<_>>>()?;
        let mut total = SceneGrad::zeros(scene.len());
        for g in &per_view {
            total.add_assign(g);
        }
        Ok((loss, total))
    }
}

pub type Grads = Vec<(&'static str, Vec<f64>)>;

/// Non-finite network output; the step number is filled in by the caller.
fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Divergence { step: 0, loss: *v, snapshot: None }),
        None => Ok(()),
    }
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Divergence { loss, snapshot, .. } => Error::Divergence { step, loss, snapshot },
        other => other,
    }
}

/// Random quantities of one coupled step.
#[derive(Clone, Debug)]
pub struct CoupledDraw {
    pub t: f64,
    pub eps: Latent3D,
    pub crop_seed: u64,
}

impl CoupledDraw {
    pub fn sample(r: &mut ChaCha8Rng, dim: usize) -> Self {
        let t = 1.0 - r.random::<f64>();
        let eps = Latent3D::new(gaussian_vec(r, dim, 1.0)).expect("finite noise");
        Self { t, eps, crop_seed: r.random() }
    }
}

fn coupled_input(x_t: &Latent3D, t: f64, cond: &[f64]) -> Vec<f64> {
    let mut input = x_t.as_slice().to_vec();
    input.push(t);
    input.extend_from_slice(cond);
    input
}

/// The velocity net emits a clean-latent guess `F`; its velocity is
/// `(x_t - F) / t`. High-`t` draws then cannot blow up the clean estimate.
fn velocity_from_clean(x_t: &Latent3D, t: f64, f: &[f64]) -> Result<Latent3D> {
    Latent3D::new(x_t.as_slice().iter().zip(f).map(|(x, f)| (x - f) / t).collect())
}

/// Decoded clean-estimate scene of the coupled model for one draw.
pub fn coupled_scene(models: &ModelHandles, x0: &Latent3D, cond_view: usize, objective: &Objective, draw: &CoupledDraw) -> Result<ToySplatScene> {
    let vnet = require(&models.velocity_net, VELOCITY_NET)?;
    let decoder = require(&models.decoder3d, DECODER3D)?;
    let cond = objective.supervisor.encoders.global.embed_global(objective.gt_view(cond_view));
    let x_t = rf_noise(x0, draw.t, &draw.eps)?;
    let v = velocity_from_clean(&x_t, draw.t, &vnet.forward(&coupled_input(&x_t, draw.t, cond.as_slice())).out)?;
    decoder.decode(&rf_predict_clean(&x_t, draw.t, &v))
}

pub fn coupled_gradients(
    models: &ModelHandles,
    x0: &Latent3D,
    cond_view: usize,
    objective: &Objective,
    draw: &CoupledDraw,
) -> Result<(LossParts, Grads)> {
    if cond_view >= 4 {
        return Err(Error::invalid(format!("condition view {cond_view} outside 0..4")));
    }
    let vnet = require(&models.velocity_net, VELOCITY_NET)?;
    let decoder = require(&models.decoder3d, DECODER3D)?;
    let cond = objective.supervisor.encoders.global.embed_global(objective.gt_view(cond_view));
    let x_t = rf_noise(x0, draw.t, &draw.eps)?;
    let vtrace = vnet.forward(&coupled_input(&x_t, draw.t, cond.as_slice()));
    check_finite(&vtrace.out)?;
    let v = velocity_from_clean(&x_t, draw.t, &vtrace.out)?;
    let x0_hat = rf_predict_clean(&x_t, draw.t, &v);
    let dtrace = decoder.decode_traced(&x0_hat)?;
    let sc = dtrace.scene();
    check_finite(&sc.positions.iter().chain(&sc.colors).flatten().chain(&sc.scales).chain(&sc.opacities).copied().collect::<Vec<_>>())?;
    let (loss, sgrad) = objective.scene_loss_grad(dtrace.scene(), draw.crop_seed)?;
    let mut ddec = vec![0.0; decoder.mlp.params.len()];
    let dz = decoder.backward(&dtrace, &sgrad, &mut ddec);
    // x0_hat = x_t - t (x_t - F) / t = F
    let mut dvnet = vec![0.0; vnet.params.len()];
    vnet.backward(&vtrace, &dz, &mut dvnet);
    Ok((loss, vec![(VELOCITY_NET, dvnet), (DECODER3D, ddec)]))
}

/// Loss and gradients averaged over several noise draws.
pub fn coupled_batch_gradients(
    models: &ModelHandles,
    x0: &Latent3D,
    cond_view: usize,
    objective: &Objective,
    draws: &[CoupledDraw],
) -> Result<(LossParts, Grads)> {
    let parts = draws
        .par_iter()
        .map(|d| coupled_gradients(models, x0, cond_view, objective, d))
        .collect::<Result<Vec<_>>>()?;
    let k = parts.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| Error::invalid("no noise draws"))?;
    for (l, g) in iter {
        loss.adapt += l.adapt;
        loss.matching += l.matching;
        loss.total += l.total;
        for ((_, acc), (_, g)) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    loss.adapt /= k;
    loss.matching /= k;
    loss.total /= k;
    for (_, g) in grads.iter_mut() {
        g.iter_mut().for_each(|v| *v /= k);
    }
    Ok((loss, grads))
}

fn finish_step(state: &mut TrainState, models: &mut ModelHandles, loss: LossParts, grads: &Grads) -> Result<LossRecord> {
    let step = state.step + 1;
    let finite = loss.total.is_finite() && grads.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Divergence { step, loss: loss.total, snapshot: None });
    }
    state.apply(models, grads)?;
    state.step = step;
    let record = loss.record(step);
    state.history.push(record);
    Ok(record)
}

pub(crate) fn step_rng(state: &TrainState) -> ChaCha8Rng {
    rng(mix_seed(state.seed, state.step + 1))
}

/// One rectified-flow step over `draws` noise draws: noise `x0`, predict the clean latent through the
/// velocity net, decode, render, and update both the velocity net and the decoder.
pub fn train_coupled_step(
    state: &mut TrainState,
    models: &mut ModelHandles,
    x0: &Latent3D,
    cond_view: usize,
    objective: &Objective,
    schedule: &NoiseSchedule,
    draws: usize,
) -> Result<LossRecord> {
    if *schedule != NoiseSchedule::RectifiedFlow {
        return Err(Error::invalid("coupled training uses the rectified-flow schedule"));
    }
    let mut r = step_rng(state);
    let draws: Vec<_> = (0..draws.max(1)).map(|_| CoupledDraw::sample(&mut r, x0.dim())).collect();
    let (loss, grads) = coupled_batch_gradients(models, x0, cond_view, objective, &draws).map_err(|e| at_step(e, state.step + 1))?;
    finish_step(state, models, loss, &grads)
}

/// Bag-of-words text embedding from hashed per-word Gaussian vectors.
pub fn text_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    let mut any = false;
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let mut r = rng(fnv1a(word.to_lowercase().as_bytes()));
        for (a, g) in e.iter_mut().zip(gaussian_vec(&mut r, dim, 1.0)) {
            *a += g;
        }
        any = true;
    }
    if any {
        normalize(&mut e);
    }
    e
}

pub fn position_features(p: [f64; 3]) -> [f64; POSITION_FEATURES] {
    let mut f = [0.0; POSITION_FEATURES];
    f[..3].copy_from_slice(&p);
    for (a, v) in p.iter().enumerate() {
        for k in 0..2 {
            let w = std::f64::consts::PI * (k + 1) as f64 * v;
            f[3 + a * 4 + k * 2] = w.sin();
            f[3 + a * 4 + k * 2 + 1] = w.cos();
        }
    }
    f
}

fn texture_inputs(geometry: &GeometryHandle, text: &str) -> Vec<Vec<f64>> {
    let te = text_embedding(text, TEXT_DIM);
    geometry
        .positions
        .iter()
        .map(|p| {
            let mut x = te.clone();
            x.extend(position_features(*p));
            x
        })
        .collect()
}

/// Per-splat appearance predicted by the texture net.
pub fn predict_appearance(models: &ModelHandles, geometry: &GeometryHandle, text: &str) -> Result<Appearance> {
    let net = require(&models.texture_net, TEXTURE_NET)?;
    let logits: Vec<f64> = texture_inputs(geometry, text).iter().flat_map(|x| net.forward(x).out).collect();
    Appearance::from_logits(&logits)
}

pub fn feedforward_gradients(
    models: &ModelHandles,
    geometry: &GeometryHandle,
    text: &str,
    objective: &Objective,
    crop_seed: u64,
) -> Result<(LossParts, Grads)> {
    let net = require(&models.texture_net, TEXTURE_NET)?;
    let traces: Vec<_> = texture_inputs(geometry, text).iter().map(|x| net.forward(x)).collect();
    let logits: Vec<f64> = traces.iter().flat_map(|t| t.out.iter().copied()).collect();
    check_finite(&logits)?;
    let appearance = Appearance::from_logits(&logits)?;
    let scene = apply_texture(geometry, &appearance)?;
    let (loss, sgrad) = objective.scene_loss_grad(&scene, crop_seed)?;
    let mut dnet = vec![0.0; net.params.len()];
    for (k, trace) in traces.iter().enumerate() {
        let c = appearance.colors[k];
        let o = appearance.opacities[k];
        let dl = [
            sgrad.colors[k][0] * c[0] * (1.0 - c[0]),
            sgrad.colors[k][1] * c[1] * (1.0 - c[1]),
            sgrad.colors[k][2] * c[2] * (1.0 - c[2]),
            sgrad.opacities[k] * o * (1.0 - o),
        ];
        net.backward(trace, &dl, &mut dnet);
    }
    Ok((loss, vec![(TEXTURE_NET, dnet)]))
}

/// One texturing step: predict appearance for the fixed geometry from text and
/// positions, render, and update the texture net only.
pub fn train_feedforward_step(
    state: &mut TrainState,
    models: &mut ModelHandles,
    geometry: &GeometryHandle,
    text: &str,
    objective: &Objective,
) -> Result<LossRecord> {
    let crop_seed: u64 = step_rng(state).random();
    let (loss, grads) =
        feedforward_gradients(models, geometry, text, objective, crop_seed).map_err(|e| at_step(e, state.step + 1))?;
    finish_step(state, models, loss, &grads)
}

pub fn time_features(t: usize, steps: usize) -> [f64; TIME_FEATURES] {
    let tau = t as f64 / steps as f64;
    let mut f = [0.0; TIME_FEATURES];
    for i in 0..TIME_FEATURES / 2 {
        let w = tau * std::f64::consts::PI * (1u32 << i) as f64;
        f[2 * i] = w.sin();
        f[2 * i + 1] = w.cos();
    }
    f
}

/// Random quantities of one multi-view denoising step.
#[derive(Clone, Debug)]
pub struct MvDraw {
    pub t: usize,
    pub eps: MultiViewLatents,
    pub crop_seed: u64,
}

impl MvDraw {
    pub fn sample(r: &mut ChaCha8Rng, latent_len: usize, steps: usize) -> Self {
        let t = r.random_range(1..=steps);
        let eps = std::array::from_fn(|_| gaussian_vec(r, latent_len, 1.0));
        Self { t, eps, crop_seed: r.random() }
    }
}

struct NoiseForward {
    traces: Vec<crate::nn::MlpTrace>,
    eps_hat: MultiViewLatents,
}

/// The noise net emits a clean-latent guess `F`; its noise prediction is
/// `(X_t - sqrt(ab) F) / sqrt(1 - ab)`, which keeps the clean estimate well
/// conditioned when `beta_t` is large.
fn noise_forward(net: &Mlp, x_t: &MultiViewLatents, cond: &MultiViewLatents, t: usize, schedule: &NoiseSchedule) -> Result<NoiseForward> {
    let ab = schedule.alpha_bar(t)?;
    let steps = schedule.steps().expect("ddpm schedule");
    let tf = time_features(t, steps);
    let traces: Vec<_> = (0..4)
        .into_par_iter()
        .map(|v| {
            let mut input = x_t[v].clone();
            input.extend_from_slice(&cond[v]);
            input.extend_from_slice(&tf);
            net.forward(&input)
        })
        .collect();
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps_hat = std::array::from_fn(|v| x_t[v].iter().zip(&traces[v].out).map(|(x, f)| (x - sa * f) / sb).collect());
    Ok(NoiseForward { traces, eps_hat })
}

/// Decodes the clean estimate `alpha_t X_t - beta_t eps_hat` into four images.
pub fn ddpm_decode_clean(
    codec: &Codec2D,
    x_t: &MultiViewLatents,
    t: usize,
    eps_hat: &MultiViewLatents,
    schedule: &NoiseSchedule,
    resolution: usize,
) -> Result<(MultiViewLatents, Vec<ImageRGB>)> {
    let x0_hat = ddpm_predict_clean(x_t, t, eps_hat, schedule)?;
    let images = x0_hat.iter().map(|l| codec.decode(l, resolution, resolution)).collect::<Result<Vec<_>>>()?;
    Ok((x0_hat, images))
}

pub fn mv_images(
    models: &ModelHandles,
    x0: &MultiViewLatents,
    cond: &MultiViewLatents,
    schedule: &NoiseSchedule,
    resolution: usize,
    draw: &MvDraw,
) -> Result<Vec<ImageRGB>> {
    let net = require(&models.noise_net, NOISE_NET)?;
    let codec = require(&models.decoder2d, super::models::DECODER2D)?;
    let x_t = ddpm_noise(x0, draw.t, &draw.eps, schedule)?;
    let fwd = noise_forward(net, &x_t, cond, draw.t, schedule)?;
    Ok(ddpm_decode_clean(codec, &x_t, draw.t, &fwd.eps_hat, schedule, resolution)?.1)
}

pub fn mv_gradients(
    models: &ModelHandles,
    x0: &MultiViewLatents,
    cond: &MultiViewLatents,
    objective: &Objective,
    schedule: &NoiseSchedule,
    draw: &MvDraw,
) -> Result<(LossParts, Grads)> {
    let net = require(&models.noise_net, NOISE_NET)?;
    let codec = require(&models.decoder2d, super::models::DECODER2D)?;
    let res = objective.resolution();
    let x_t = ddpm_noise(x0, draw.t, &draw.eps, schedule)?;
    let fwd = noise_forward(net, &x_t, cond, draw.t, schedule)?;
    for v in 0..4 {
        check_finite(&fwd.eps_hat[v])?;
    }
    let (x0_hat, images) = ddpm_decode_clean(codec, &x_t, draw.t, &fwd.eps_hat, schedule, res)?;
    let (loss, pixel_grads) = objective.views_loss_grad(&images, draw.crop_seed)?;
    let (_, beta) = schedule.coefficients(draw.t)?;
    let ab = schedule.alpha_bar(draw.t)?;
    // d eps_hat / dF = -sqrt(ab)/sqrt(1-ab) and d X0_hat / d eps_hat = -beta, so dL/dF = dL/dX0_hat.
    let chain = beta * ab.sqrt() / (1.0 - ab).sqrt();
    let per_view: Vec<Vec<f64>> = (0..4)
        .into_par_iter()
        .map(|v| {
            let dx0 = codec.decode_backward(&x0_hat[v], res, res, &pixel_grads[v]);
            let df: Vec<f64> = dx0.iter().map(|g| g * chain).collect();
            let mut d = vec![0.0; net.params.len()];
            net.backward(&fwd.traces[v], &df, &mut d);
            d
        })
        .collect();
    let mut dnet = vec![0.0; net.params.len()];
    for d in &per_view {
        for (a, b) in dnet.iter_mut().zip(d) {
            *a += b;
        }
    }
    Ok((loss, vec![(NOISE_NET, dnet)]))
}

/// One multi-view denoising step. The 2D decoder must be frozen.
pub fn train_mv_diffusion_step(
    state: &mut TrainState,
    models: &mut ModelHandles,
    x0: &MultiViewLatents,
    geometry_renders: &MultiViewSet,
    objective: &Objective,
    schedule: &NoiseSchedule,
) -> Result<LossRecord> {
    if models.trainable.decoder2d {
        return Err(Error::config("multi-view training requires a frozen 2D decoder"));
    }
    let steps = schedule.steps().ok_or_else(|| Error::invalid("multi-view training uses a ddpm schedule"))?;
    let codec = require(&models.decoder2d, super::models::DECODER2D)?;
    let cond = codec.encode_views(geometry_renders)?;
    let len = x0[0].len();
    if x0.iter().any(|v| v.len() != len) || cond[0].len() != len {
        return Err(Error::invalid("per-view latents have inconsistent sizes"));
    }
    let draw = MvDraw::sample(&mut step_rng(state), len, steps);
    let (loss, grads) = mv_gradients(models, x0, &cond, objective, schedule, &draw).map_err(|e| at_step(e, state.step + 1))?;
    finish_step(state, models, loss, &grads)
}
