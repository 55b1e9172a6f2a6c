//! Linear-projection encoders. The toy encoders draw their weights from a
//! seeded generator; the external adapter loads the same structure from a file.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{EncoderConfig, GlobalEmbedding, PatchTokenMap};
use super::{GlobalEncoder, PatchEncoder};
use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, Resampler};
use crate::util::{gaussian_vec, mix_seed, normalize, normalize_vjp, rng};

/// Pixels are centered by this offset before projection.
const CENTER: f64 = 0.5;
const BIAS_STD: f64 = 0.01;

/// `y = W (x - 0.5) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn seeded(seed: u64, out_dim: usize, in_dim: usize) -> Self {
        let mut r = rng(seed);
        let weights = gaussian_vec(&mut r, out_dim * in_dim, 1.0 / (in_dim as f64).sqrt());
        let bias = gaussian_vec(&mut r, out_dim, BIAS_STD);
        Self { out_dim, in_dim, weights, bias }
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.out_dim * self.in_dim || self.bias.len() != self.out_dim {
            return Err(Error::config("projection weight shape mismatch"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite projection weight"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * (v - CENTER)).sum::<f64>() + b)
            .collect()
    }

    /// `W^T g`.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (row, gi) in self.weights.chunks_exact(self.in_dim).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    fn digest(&self, hasher: &mut Sha256) {
        for v in self.weights.iter().chain(&self.bias) {
            hasher.update(v.to_le_bytes());
        }
    }
}

/// Resize to `resolution x resolution`, project, normalize.
#[derive(Clone, Debug)]
pub struct LinearGlobalEncoder {
    resolution: usize,
    projection: Projection,
    label: String,
}

impl LinearGlobalEncoder {
    pub fn toy(config: &EncoderConfig) -> Self {
        let r = config.global_resolution;
        Self {
            resolution: r,
            projection: Projection::seeded(mix_seed(config.seed, 0x6c0b), config.d_g, r * r * 3),
            label: format!("toy-global(seed={},d={},r={})", config.seed, config.d_g, r),
        }
    }

    pub fn from_projection(resolution: usize, projection: Projection, label: impl Into<String>) -> Result<Self> {
        projection.validate()?;
        if projection.in_dim != resolution * resolution * 3 {
            return Err(Error::config("global projection input size does not match resolution"));
        }
        Ok(Self { resolution, projection, label: label.into() })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    fn pre_activation(&self, image: &ImageRGB) -> (Resampler, Vec<f64>) {
        let rs = Resampler::new(image.height(), image.width(), self.resolution, self.resolution);
        let x = rs.forward(image.data());
        (rs, self.projection.apply(&x))
    }
}

impl GlobalEncoder for LinearGlobalEncoder {
    fn dim(&self) -> usize {
        self.projection.out_dim
    }

    fn embed_global(&self, image: &ImageRGB) -> GlobalEmbedding {
        let (_, mut y) = self.pre_activation(image);
        normalize(&mut y);
        GlobalEmbedding::new(y).expect("normalized projection is unit norm")
    }

    fn embed_global_vjp(&self, image: &ImageRGB, upstream: &[f64]) -> Vec<f64> {
        let (rs, mut y) = self.pre_activation(image);
        let n = normalize(&mut y);
        let g = normalize_vjp(&y, n, upstream);
        rs.adjoint(&self.projection.apply_transpose(&g))
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        self.projection.digest(&mut h);
        hex::encode(&h.finalize()[..8])
    }
}

/// Resize to `m x m`, cut into `patch x patch` tiles, project each, normalize.
#[derive(Clone, Debug)]
pub struct LinearPatchEncoder {
    m: usize,
    patch: usize,
    projection: Projection,
    label: String,
}

impl LinearPatchEncoder {
    pub fn toy(config: &EncoderConfig) -> Self {
        let p = config.patch_size;
        Self {
            m: config.m,
            patch: p,
            projection: Projection::seeded(mix_seed(config.seed, 0x9a7c), config.d_p, p * p * 3),
            label: format!("toy-patch(seed={},d={},p={},m={})", config.seed, config.d_p, p, config.m),
        }
    }

    pub fn from_projection(m: usize, patch: usize, projection: Projection, label: impl Into<String>) -> Result<Self> {
        projection.validate()?;
        if patch == 0 || m % patch != 0 || (m / patch) < 2 {
            return Err(Error::config(format!("m={m} must be a multiple of patch={patch} with at least 2x2 tokens")));
        }
        if projection.in_dim != patch * patch * 3 {
            return Err(Error::config("patch projection input size does not match patch size"));
        }
        Ok(Self { m, patch, projection, label: label.into() })
    }

    pub fn grid_side(&self) -> usize {
        self.m / self.patch
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn gather(&self, buf: &[f64], token: usize) -> Vec<f64> {
        let g = self.grid_side();
        let (ty, tx) = (token / g, token % g);
        let p = self.patch;
        let mut v = Vec::with_capacity(p * p * 3);
        for y in 0..p {
            let start = ((ty * p + y) * self.m + tx * p) * 3;
            v.extend_from_slice(&buf[start..start + p * 3]);
        }
        v
    }

    fn rescaled(&self, image: &ImageRGB) -> (Resampler, Vec<f64>) {
        let rs = Resampler::new(image.height(), image.width(), self.m, self.m);
        let buf = rs.forward(image.data());
        (rs, buf)
    }

    fn pre_activations(&self, buf: &[f64]) -> Vec<Vec<f64>> {
        let g = self.grid_side();
        (0..g * g)
            .into_par_iter()
            .map(|t| self.projection.apply(&self.gather(buf, t)))
            .collect()
    }
}

impl PatchEncoder for LinearPatchEncoder {
    fn dim(&self) -> usize {
        self.projection.out_dim
    }

    fn grid_side(&self) -> usize {
        LinearPatchEncoder::grid_side(self)
    }

    fn embed_patches(&self, image: &ImageRGB) -> PatchTokenMap {
        let (_, buf) = self.rescaled(image);
        let tokens: Vec<f64> = self
            .pre_activations(&buf)
            .into_iter()
            .flat_map(|mut y| {
                normalize(&mut y);
                y
            })
            .collect();
        let g = self.grid_side();
        PatchTokenMap::new(g, g, self.dim(), tokens, self.m).expect("normalized tokens are unit norm")
    }

    fn embed_patches_vjp(&self, image: &ImageRGB, upstream: &[f64]) -> Vec<f64> {
        let (rs, buf) = self.rescaled(image);
        let d = self.dim();
        let g = self.grid_side();
        let p = self.patch;
        assert_eq!(upstream.len(), g * g * d);
        let patch_grads: Vec<Vec<f64>> = self
            .pre_activations(&buf)
            .into_par_iter()
            .enumerate()
            .map(|(t, mut y)| {
                let up = &upstream[t * d..(t + 1) * d];
                if up.iter().all(|v| *v == 0.0) {
                    return Vec::new();
                }
                let n = normalize(&mut y);
                self.projection.apply_transpose(&normalize_vjp(&y, n, up))
            })
            .collect();
        let mut grad_buf = vec![0.0; self.m * self.m * 3];
        for (t, pg) in patch_grads.iter().enumerate() {
            if pg.is_empty() {
                continue;
            }
            let (ty, tx) = (t / g, t % g);
            for y in 0..p {
                let start = ((ty * p + y) * self.m + tx * p) * 3;
                for (dst, src) in grad_buf[start..start + p * 3].iter_mut().zip(&pg[y * p * 3..(y + 1) * p * 3]) {
                    *dst += src;
                }
            }
        }
        rs.adjoint(&grad_buf)
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        self.projection.digest(&mut h);
        hex::encode(&h.finalize()[..8])
    }
}

/// On-disk format of the external adapter's weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExternalWeights {
    Global { resolution: usize, projection: Projection },
    Patch { m: usize, patch_size: usize, projection: Projection },
}

impl ExternalWeights {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read encoder weights {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
