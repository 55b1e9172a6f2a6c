use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, Resampler};
use crate::losses::l2_loss_grad;
use crate::nn::{AdamW, AdamWConfig};
use crate::toyscene::{load_scene, render, render_backward, CameraPose, ToySplatScene};
use crate::util::{rng, sigmoid};

pub const DEFAULT_MATTE_THRESHOLD: f64 = 0.94;

/// Foreground mask: a pixel is background when every channel is at least `threshold`.
pub fn white_matte(image: &ImageRGB, threshold: f64) -> Vec<bool> {
    image.data().chunks_exact(3).map(|p| p.iter().any(|v| *v < threshold)).collect()
}

/// Sets background pixels to pure white.
pub fn remove_background(image: &ImageRGB, threshold: f64) -> ImageRGB {
    let mask = white_matte(image, threshold);
    let data = image
        .data()
        .chunks_exact(3)
        .zip(&mask)
        .flat_map(|(p, fg)| if *fg { [p[0], p[1], p[2]] } else { [1.0; 3] })
        .collect();
    ImageRGB::new(image.height(), image.width(), data).expect("same shape")
}

/// Produces the 3D scene of a record from its seed image.
pub trait SceneSource: Send + Sync {
    fn obtain(&self, record_id: &str, seed_image: &ImageRGB, seed: u64) -> Result<ToySplatScene>;
}

/// Fits splats to the matted seed image by Adam on the L2 loss of the front render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyReconstructor {
    pub resolution: usize,
    pub splats: usize,
    pub steps: usize,
    pub lr: f64,
    pub matte_threshold: f64,
}

impl Default for ToyReconstructor {
    fn default() -> Self {
        Self { resolution: 32, splats: 32, steps: 500, lr: 0.05, matte_threshold: DEFAULT_MATTE_THRESHOLD }
    }
}

const POSITION_BOUND: f64 = 0.95;
const SCALE_MIN: f64 = 0.02;
const SCALE_RANGE: f64 = 0.3;
// raw layout per splat: position (3), color logits (3), scale logit, opacity logit
const RAW: usize = 8;

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

fn scene_from_raw(raw: &[f64]) -> ToySplatScene {
    let mut s = ToySplatScene::empty();
    for r in raw.chunks_exact(RAW) {
        s.positions.push(std::array::from_fn(|i| POSITION_BOUND * r[i].tanh()));
        s.colors.push(std::array::from_fn(|i| sigmoid(r[3 + i])));
        s.scales.push(SCALE_MIN + SCALE_RANGE * sigmoid(r[6]));
        s.opacities.push(sigmoid(r[7]));
    }
    s
}

impl ToyReconstructor {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < crate::toyscene::MIN_RESOLUTION || self.splats == 0 {
            return Err(Error::config("reconstructor needs a valid resolution and at least one splat"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.matte_threshold) {
            return Err(Error::config("reconstructor lr must be positive and matte_threshold in [0, 1]"));
        }
        Ok(())
    }

    /// The matted target at the fitting resolution.
    pub fn target(&self, seed_image: &ImageRGB) -> Result<ImageRGB> {
        let rs = Resampler::new(seed_image.height(), seed_image.width(), self.resolution, self.resolution);
        let small = ImageRGB::from_clamped(self.resolution, self.resolution, rs.forward(seed_image.data()))?;
        Ok(remove_background(&small, self.matte_threshold))
    }

    fn initial_raw(&self, target: &ImageRGB, seed: u64) -> Vec<f64> {
        let res = self.resolution;
        let mask = white_matte(target, self.matte_threshold);
        let fg: Vec<usize> = (0..mask.len()).filter(|i| mask[*i]).collect();
        let mut r = rng(seed);
        let step = 2.0 / res as f64;
        let mut raw = Vec::with_capacity(self.splats * RAW);
        for _ in 0..self.splats {
            let pix = if fg.is_empty() { r.random_range(0..res * res) } else { fg[r.random_range(0..fg.len())] };
            let (i, j) = (pix / res, pix % res);
            let u = -1.0 + (j as f64 + 0.5) * step;
            let v = 1.0 - (i as f64 + 0.5) * step;
            let z: f64 = r.random_range(-0.2..0.2);
            raw.extend([u, v, z].map(|p| (p / POSITION_BOUND).clamp(-0.99, 0.99).atanh()));
            raw.extend(target.pixel(i, j).map(logit));
            raw.push(logit((0.08 - SCALE_MIN) / SCALE_RANGE));
            raw.push(logit(if fg.is_empty() { 0.05 } else { 0.7 }));
        }
        raw
    }

    /// Front-view L2 fit. Deterministic for a fixed `seed`.
    pub fn fit(&self, seed_image: &ImageRGB, seed: u64) -> Result<ToySplatScene> {
        self.validate()?;
        let target = self.target(seed_image)?;
        let front = CameraPose::new(0)?;
        let mut raw = self.initial_raw(&target, seed);
        let mut opt = AdamW::new(AdamWConfig::with_lr(self.lr), raw.len());
        for _ in 0..self.steps {
            let scene = scene_from_raw(&raw);
            let img = render(&scene, front, self.resolution)?;
            let (_, upstream) = l2_loss_grad(&img, &target)?;
            let g = render_backward(&scene, front, self.resolution, &upstream)?;
            let mut graw = vec![0.0; raw.len()];
            for (k, (r, gr)) in raw.chunks_exact(RAW).zip(graw.chunks_exact_mut(RAW)).enumerate() {
                for i in 0..3 {
                    gr[i] = g.positions[k][i] * POSITION_BOUND * (1.0 - r[i].tanh().powi(2));
                    let c = sigmoid(r[3 + i]);
                    gr[3 + i] = g.colors[k][i] * c * (1.0 - c);
                }
                let s = sigmoid(r[6]);
                gr[6] = g.scales[k] * SCALE_RANGE * s * (1.0 - s);
                let o = sigmoid(r[7]);
                gr[7] = g.opacities[k] * o * (1.0 - o);
            }
            if graw.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite gradient while fitting the seed image"));
            }
            opt.step(&mut raw, &graw);
        }
        Ok(scene_from_raw(&raw))
    }
}

impl SceneSource for ToyReconstructor {
    fn obtain(&self, _record_id: &str, seed_image: &ImageRGB, seed: u64) -> Result<ToySplatScene> {
        self.fit(seed_image, seed)
    }
}

/// Loads externally produced scenes from `<root>/<record id>.bin`.
#[derive(Clone, Debug)]
pub struct SceneImporter {
    pub root: PathBuf,
}

impl SceneSource for SceneImporter {
    fn obtain(&self, record_id: &str, _seed_image: &ImageRGB, _seed: u64) -> Result<ToySplatScene> {
        let path = self.root.join(format!("{record_id}.bin"));
        if !path.exists() {
            return Err(Error::Ingestion { missing: vec![path.display().to_string()] });
        }
        load_scene(&path)
    }
}
