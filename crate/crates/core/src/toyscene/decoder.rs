use serde::{Deserialize, Serialize};

use super::scene::{SceneGrad, ToySplatScene};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpTrace};
use crate::util::sigmoid;

pub const DEFAULT_LATENT_DIM: usize = 256;
pub const DEFAULT_SPLATS: usize = 64;
/// Raw decoder outputs per splat: position (3), color (3), scale, opacity.
pub const RAW_PER_SPLAT: usize = 8;
pub const SCALE_MIN: f64 = 0.02;
pub const SCALE_RANGE: f64 = 0.48;

/// Structured 3D latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent3D {
    code: Vec<f64>,
}

impl Latent3D {
    pub fn new(code: Vec<f64>) -> Result<Self> {
        if code.is_empty() || code.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent code must be non-empty and finite"));
        }
        Ok(Self { code })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { code: vec![0.0; dim] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.code
    }

    pub fn dim(&self) -> usize {
        self.code.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.code
    }
}

/// Latent-to-splats decoder: an MLP whose raw outputs pass through bounded heads
/// (`tanh` positions, sigmoid colors/opacities, `0.02 + 0.48 sigmoid` scales).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder3D {
    pub mlp: Mlp,
    pub splats: usize,
}

/// Forward intermediates needed by [`Decoder3D::backward`].
pub struct DecodeTrace {
    mlp: MlpTrace,
    scene: ToySplatScene,
}

impl DecodeTrace {
    pub fn scene(&self) -> &ToySplatScene {
        &self.scene
    }

    pub fn into_scene(self) -> ToySplatScene {
        self.scene
    }
}

impl Decoder3D {
    pub fn zeros(latent_dim: usize, hidden: usize, splats: usize) -> Self {
        Self { mlp: Mlp::zeros(latent_dim, hidden, splats * RAW_PER_SPLAT), splats }
    }

    pub fn seeded(seed: u64, latent_dim: usize, hidden: usize, splats: usize) -> Self {
        Self { mlp: Mlp::seeded(seed, latent_dim, hidden, splats * RAW_PER_SPLAT, 1.0), splats }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.input
    }

    pub fn decode(&self, latent: &Latent3D) -> Result<ToySplatScene> {
        Ok(self.decode_traced(latent)?.scene)
    }

    pub fn decode_traced(&self, latent: &Latent3D) -> Result<DecodeTrace> {
        if latent.dim() != self.latent_dim() {
            return Err(Error::invalid(format!(
                "latent dimension {} does not match decoder input {}",
                latent.dim(),
                self.latent_dim()
            )));
        }
        let mlp = self.mlp.forward(latent.as_slice());
        let scene = heads(&mlp.out);
        Ok(DecodeTrace { mlp, scene })
    }

    /// Accumulates decoder parameter gradients into `dparams` and returns `dL/dz`.
    pub fn backward(&self, trace: &DecodeTrace, grad: &SceneGrad, dparams: &mut [f64]) -> Vec<f64> {
        let s = &trace.scene;
        let mut draw = vec![0.0; trace.mlp.out.len()];
        for k in 0..self.splats {
            let r = &mut draw[k * RAW_PER_SPLAT..(k + 1) * RAW_PER_SPLAT];
            for a in 0..3 {
                let p = s.positions[k][a];
                r[a] = grad.positions[k][a] * (1.0 - p * p);
                let c = s.colors[k][a];
                r[3 + a] = grad.colors[k][a] * c * (1.0 - c);
            }
            let sg = (s.scales[k] - SCALE_MIN) / SCALE_RANGE;
            r[6] = grad.scales[k] * SCALE_RANGE * sg * (1.0 - sg);
            let o = s.opacities[k];
            r[7] = grad.opacities[k] * o * (1.0 - o);
        }
        self.mlp.backward(&trace.mlp, &draw, dparams)
    }
}

fn heads(raw: &[f64]) -> ToySplatScene {
    let mut scene = ToySplatScene::empty();
    for r in raw.chunks_exact(RAW_PER_SPLAT) {
        scene.positions.push([r[0].tanh(), r[1].tanh(), r[2].tanh()]);
        scene.colors.push([sigmoid(r[3]), sigmoid(r[4]), sigmoid(r[5])]);
        scene.scales.push(SCALE_MIN + SCALE_RANGE * sigmoid(r[6]));
        scene.opacities.push(sigmoid(r[7]));
    }
    scene
}

pub fn decode_latent(latent: &Latent3D, decoder: &Decoder3D) -> Result<ToySplatScene> {
    decoder.decode(latent)
}
