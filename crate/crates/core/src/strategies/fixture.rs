use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::codec::Codec2D;
use super::schedule::MultiViewLatents;
use crate::error::Result;
use crate::imageops::MultiViewSet;
use crate::toyscene::{apply_texture, render_views, Appearance, GeometryHandle, Latent3D, ToySplatScene};
use crate::util::{mix_seed, rng};

pub const FIXTURE_SPLATS: usize = 24;
pub const FIXTURE_TEXT: &str = "a glazed ceramic teapot with a red lid and blue handle";

/// A single ground-truth asset the training strategies overfit to.
#[derive(Clone, Debug)]
pub struct TrainAsset {
    pub scene: ToySplatScene,
    pub views: MultiViewSet,
    pub text: String,
    pub resolution: usize,
}

impl TrainAsset {
    /// A procedural object: a warm body blob with a cool ring and a bright cap.
    pub fn fixture(seed: u64, resolution: usize) -> Result<Self> {
        let mut r = rng(mix_seed(seed, 0xa55e7));
        let mut scene = ToySplatScene::empty();
        for k in 0..FIXTURE_SPLATS {
            let part = k % 3;
            let (pos, color, scale) = match part {
                0 => {
                    let p = [r.random_range(-0.35..0.35), r.random_range(-0.45..0.15), r.random_range(-0.35..0.35)];
                    (p, [0.85, 0.45 + 0.3 * (p[1] + 0.45), 0.2], r.random_range(0.16..0.26))
                }
                1 => {
                    let a = r.random_range(0.0..std::f64::consts::TAU);
                    let p = [0.55 * a.cos(), r.random_range(-0.1..0.1), 0.55 * a.sin()];
                    (p, [0.15, 0.3 + 0.2 * a.sin().abs(), 0.8], r.random_range(0.08..0.14))
                }
                _ => {
                    let p = [r.random_range(-0.2..0.2), r.random_range(0.35..0.6), r.random_range(-0.2..0.2)];
                    (p, [0.95, 0.95, 0.55], r.random_range(0.1..0.18))
                }
            };
            scene.positions.push(pos);
            scene.colors.push(color);
            scene.scales.push(scale);
            scene.opacities.push(r.random_range(0.7..0.95));
        }
        scene.validate()?;
        let views = render_views(&scene, resolution)?;
        Ok(Self { scene, views, text: FIXTURE_TEXT.to_string(), resolution })
    }

    pub fn geometry(&self) -> GeometryHandle {
        self.scene.geometry()
    }

    /// Geometry rendered with neutral gray, half-opacity appearance.
    pub fn geometry_renders(&self) -> Result<MultiViewSet> {
        let gray = Appearance::from_logits(&vec![0.0; 4 * self.scene.len()])?;
        render_views(&apply_texture(&self.geometry(), &gray)?, self.resolution)
    }

    /// Clean 3D latent: a fixed seeded projection of the flattened scene parameters,
    /// scaled to unit variance per coordinate.
    pub fn latent(&self, dim: usize, seed: u64) -> Result<Latent3D> {
        let mut params = Vec::new();
        for k in 0..self.scene.len() {
            params.extend(self.scene.positions[k]);
            params.extend(self.scene.colors[k].iter().map(|c| 2.0 * c - 1.0));
            params.push(self.scene.scales[k]);
            params.push(self.scene.opacities[k]);
        }
        let mut r = rng(mix_seed(seed, 0x1a7e));
        let scale = 1.0 / (params.len() as f64).sqrt();
        let mut z: Vec<f64> = (0..dim)
            .map(|_| {
                params
                    .iter()
                    .map(|p| {
                        let w: f64 = StandardNormal.sample(&mut r);
                        w * p * scale
                    })
                    .sum()
            })
            .collect();
        let rms = (z.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
        z.iter_mut().for_each(|v| *v /= rms);
        Latent3D::new(z)
    }

    pub fn view_latents(&self, codec: &Codec2D) -> Result<MultiViewLatents> {
        codec.encode_views(&self.views)
    }
}
