use serde::{Deserialize, Serialize};

use super::schedule::MultiViewLatents;
use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, MultiViewSet, Resampler};

/// Toy 2D autoencoder: 2x average-pool encoder, bilinear-upsample decoder with
/// a per-channel affine (`params = [gain r, g, b, bias r, g, b]`) and a clamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codec2D {
    pub params: Vec<f64>,
}

pub const CODEC_FACTOR: usize = 2;

impl Default for Codec2D {
    fn default() -> Self {
        Self { params: vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0] }
    }
}

impl Codec2D {
    pub fn latent_dims(height: usize, width: usize) -> (usize, usize) {
        (height / CODEC_FACTOR, width / CODEC_FACTOR)
    }

    pub fn latent_len(height: usize, width: usize) -> usize {
        let (h, w) = Self::latent_dims(height, width);
        h * w * 3
    }

    pub fn encode(&self, image: &ImageRGB) -> Result<Vec<f64>> {
        let (h, w) = image.dims();
        if h % CODEC_FACTOR != 0 || w % CODEC_FACTOR != 0 {
            return Err(Error::invalid(format!("codec needs even image sides, got {h}x{w}")));
        }
        let (lh, lw) = Self::latent_dims(h, w);
        let norm = (CODEC_FACTOR * CODEC_FACTOR) as f64;
        let mut out = vec![0.0; lh * lw * 3];
        for y in 0..h {
            for x in 0..w {
                let o = ((y / CODEC_FACTOR) * lw + x / CODEC_FACTOR) * 3;
                let p = image.pixel(y, x);
                for c in 0..3 {
                    out[o + c] += p[c] / norm;
                }
            }
        }
        Ok(out)
    }

    fn upsample(height: usize, width: usize) -> Resampler {
        let (lh, lw) = Self::latent_dims(height, width);
        Resampler::new(lh, lw, height, width)
    }

    fn affine(&self, up: &[f64]) -> Vec<f64> {
        up.iter().enumerate().map(|(i, v)| self.params[i % 3] * v + self.params[3 + i % 3]).collect()
    }

    pub fn decode(&self, latent: &[f64], height: usize, width: usize) -> Result<ImageRGB> {
        if latent.len() != Self::latent_len(height, width) {
            return Err(Error::invalid("latent size does not match the output image"));
        }
        let raw = self.affine(&Self::upsample(height, width).forward(latent));
        ImageRGB::from_clamped(height, width, raw)
    }

    /// Latent gradient of `decode`; clamped pixels pass no gradient.
    pub fn decode_backward(&self, latent: &[f64], height: usize, width: usize, grad: &[f64]) -> Vec<f64> {
        let up = Self::upsample(height, width);
        let raw = self.affine(&up.forward(latent));
        let g: Vec<f64> = raw
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (r, g))| if (0.0..=1.0).contains(r) { g * self.params[i % 3] } else { 0.0 })
            .collect();
        up.adjoint(&g)
    }

    pub fn encode_views(&self, views: &MultiViewSet) -> Result<MultiViewLatents> {
        let v = views.views();
        Ok([self.encode(&v[0])?, self.encode(&v[1])?, self.encode(&v[2])?, self.encode(&v[3])?])
    }

    pub fn decode_views(&self, latents: &MultiViewLatents, height: usize, width: usize) -> Result<MultiViewSet> {
        MultiViewSet::from_vec(latents.iter().map(|l| self.decode(l, height, width)).collect::<Result<Vec<_>>>()?)
    }
}

pub fn encode_views(views: &MultiViewSet, codec: &Codec2D) -> Result<MultiViewLatents> {
    codec.encode_views(views)
}

pub fn decode_views(latents: &MultiViewLatents, codec: &Codec2D, height: usize, width: usize) -> Result<MultiViewSet> {
    codec.decode_views(latents, height, width)
}
