//! Realism supervision losses and the ablation baselines.
//!
//! Every loss comes in a value-only form and a `*_grad` form returning the
//! gradient with respect to the synthesized image's pixels (same layout as
//! [`ImageRGB::data`]).

mod supervisor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use supervisor::{Supervision, SupervisionTarget, Supervisor};

use crate::encoders::{Encoders, GlobalEncoder, PatchEncoder, PatchTokenMap};
use crate::error::{Error, Result};
use crate::imageops::{apply_crop, scatter_add_crop, CropSpec, ImageRGB};
use crate::util::dot;

/// Scalar loss plus its named sub-terms (unweighted).
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub breakdown: Vec<(&'static str, f64)>,
}

impl LossValue {
    fn single(name: &'static str, value: f64) -> Self {
        Self { value, breakdown: vec![(name, value)] }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Weights of the two realism terms; `1:1` is the plain sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adapt: f64,
    #[serde(rename = "match")]
    pub matching: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adapt: 1.0, matching: 1.0 }
    }
}

fn check_same_size(a: &ImageRGB, b: &ImageRGB) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn check_crops(crops: &[CropSpec], image: &ImageRGB) -> Result<()> {
    if crops.is_empty() {
        return Err(Error::invalid("perceptual adaptation needs at least one crop"));
    }
    if let Some(c) = crops.iter().find(|c| !c.fits(image.height(), image.width())) {
        return Err(Error::invalid(format!("crop {c:?} outside image")));
    }
    Ok(())
}

/// Crop-wise perceptual adaptation:
/// `mean_c (1 - <phi(crop_c(syn)), phi(crop_c(gt))>)`.
pub fn adapt_loss(syn: &ImageRGB, gt: &ImageRGB, crops: &[CropSpec], encoder: &dyn GlobalEncoder) -> Result<LossValue> {
    check_same_size(syn, gt)?;
    check_crops(crops, syn)?;
    let total: f64 = crops
        .iter()
        .map(|c| {
            let es = encoder.embed_global(&apply_crop(syn, c)?);
            let eg = encoder.embed_global(&apply_crop(gt, c)?);
            Ok(1.0 - es.cosine(&eg))
        })
        .sum::<Result<f64>>()?;
    Ok(LossValue::single("adapt", total / crops.len() as f64))
}

pub fn adapt_loss_grad(
    syn: &ImageRGB,
    gt: &ImageRGB,
    crops: &[CropSpec],
    encoder: &dyn GlobalEncoder,
) -> Result<(LossValue, Vec<f64>)> {
    check_same_size(syn, gt)?;
    check_crops(crops, syn)?;
    let scale = 1.0 / crops.len() as f64;
    let mut grad = vec![0.0; syn.data().len()];
    let mut total = 0.0;
    for c in crops {
        let cs = apply_crop(syn, c)?;
        let es = encoder.embed_global(&cs);
        let eg = encoder.embed_global(&apply_crop(gt, c)?);
        total += 1.0 - dot(es.as_slice(), eg.as_slice());
        let up: Vec<f64> = eg.as_slice().iter().map(|v| -scale * v).collect();
        scatter_add_crop(&mut grad, syn.width(), c, &encoder.embed_global_vjp(&cs, &up));
    }
    Ok((LossValue::single("adapt", total * scale), grad))
}

/// For each synthesized token, the index and cosine of its best ground-truth
/// match. Ties go to the lowest ground-truth index.
pub fn best_matches(syn: &PatchTokenMap, gt: &PatchTokenMap) -> Vec<(usize, f64)> {
    assert_eq!(syn.dim(), gt.dim(), "token dimensions differ");
    (0..syn.len())
        .into_par_iter()
        .map(|p| {
            let fp = syn.token(p);
            let mut best = (0usize, f64::NEG_INFINITY);
            for (q, fq) in gt.iter().enumerate() {
                let s = dot(fp, fq);
                if s > best.1 {
                    best = (q, s);
                }
            }
            best
        })
        .collect()
}

/// `1 - mean_p max_q <f_p, f_q>` over two token maps.
pub fn match_loss_from_tokens(syn: &PatchTokenMap, gt: &PatchTokenMap) -> f64 {
    let matches = best_matches(syn, gt);
    1.0 - matches.iter().map(|(_, s)| s).sum::<f64>() / matches.len() as f64
}

/// Semantic structure matching between patch tokens of both images at the
/// encoder's rescale resolution.
pub fn match_loss(syn: &ImageRGB, gt: &ImageRGB, encoder: &dyn PatchEncoder) -> Result<LossValue> {
    let gt_tokens = encoder.embed_patches(gt);
    Ok(match_against(syn, &gt_tokens, encoder))
}

pub fn match_loss_grad(syn: &ImageRGB, gt: &ImageRGB, encoder: &dyn PatchEncoder) -> Result<(LossValue, Vec<f64>)> {
    let gt_tokens = encoder.embed_patches(gt);
    Ok(match_against_grad(syn, &gt_tokens, encoder, 1.0))
}

pub(crate) fn match_against(syn: &ImageRGB, gt_tokens: &PatchTokenMap, encoder: &dyn PatchEncoder) -> LossValue {
    LossValue::single("match", match_loss_from_tokens(&encoder.embed_patches(syn), gt_tokens))
}

/// Loss and `weight`-scaled gradient. The gradient flows through the winning pair only.
pub(crate) fn match_against_grad(
    syn: &ImageRGB,
    gt_tokens: &PatchTokenMap,
    encoder: &dyn PatchEncoder,
    weight: f64,
) -> (LossValue, Vec<f64>) {
    let syn_tokens = encoder.embed_patches(syn);
    let matches = best_matches(&syn_tokens, gt_tokens);
    let n = matches.len() as f64;
    let value = 1.0 - matches.iter().map(|(_, s)| s).sum::<f64>() / n;
    let d = syn_tokens.dim();
    let mut up = vec![0.0; syn_tokens.len() * d];
    for (p, (q, _)) in matches.iter().enumerate() {
        for (u, v) in up[p * d..(p + 1) * d].iter_mut().zip(gt_tokens.token(*q)) {
            *u = -weight * v / n;
        }
    }
    (LossValue::single("match", value), encoder.embed_patches_vjp(syn, &up))
}

/// `L_adapt + L_match` (weighted; both `1.0` by default).
pub fn realism_loss(
    syn: &ImageRGB,
    gt: &ImageRGB,
    crops: &[CropSpec],
    encoders: &Encoders,
    weights: LossWeights,
) -> Result<LossValue> {
    let a = adapt_loss(syn, gt, crops, encoders.global.as_ref())?.value;
    let m = match_loss(syn, gt, encoders.patch.as_ref())?.value;
    Ok(LossValue { value: weights.adapt * a + weights.matching * m, breakdown: vec![("adapt", a), ("match", m)] })
}

pub fn realism_loss_grad(
    syn: &ImageRGB,
    gt: &ImageRGB,
    crops: &[CropSpec],
    encoders: &Encoders,
    weights: LossWeights,
) -> Result<(LossValue, Vec<f64>)> {
    let (a, mut grad) = adapt_loss_grad(syn, gt, crops, encoders.global.as_ref())?;
    let gt_tokens = encoders.patch.embed_patches(gt);
    let (m, gm) = match_against_grad(syn, &gt_tokens, encoders.patch.as_ref(), weights.matching);
    for (g, x) in grad.iter_mut().zip(&gm) {
        *g = weights.adapt * *g + x;
    }
    let (a, m) = (a.value, m.value);
    Ok((
        LossValue { value: weights.adapt * a + weights.matching * m, breakdown: vec![("adapt", a), ("match", m)] },
        grad,
    ))
}

/// Mean squared pixel difference.
pub fn l2_loss(syn: &ImageRGB, gt: &ImageRGB) -> Result<LossValue> {
    check_same_size(syn, gt)?;
    let n = syn.data().len() as f64;
    let v = syn.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    Ok(LossValue::single("l2", v))
}

pub fn l2_loss_grad(syn: &ImageRGB, gt: &ImageRGB) -> Result<(LossValue, Vec<f64>)> {
    let loss = l2_loss(syn, gt)?;
    let n = syn.data().len() as f64;
    let grad = syn.data().iter().zip(gt.data()).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((loss, grad))
}

/// Token Gram matrix `(1/|P|) sum_p f_p f_p^T`, row-major `d x d`.
pub fn token_gram(tokens: &PatchTokenMap) -> Vec<f64> {
    let d = tokens.dim();
    let mut g = vec![0.0; d * d];
    for f in tokens.iter() {
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] += f[i] * f[j];
            }
        }
    }
    let n = tokens.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Mean squared difference of token Gram matrices.
pub fn gram_loss(syn: &ImageRGB, gt: &ImageRGB, encoder: &dyn PatchEncoder) -> Result<LossValue> {
    let gg = token_gram(&encoder.embed_patches(gt));
    Ok(gram_against(syn, &gg, encoder))
}

pub fn gram_loss_grad(syn: &ImageRGB, gt: &ImageRGB, encoder: &dyn PatchEncoder) -> Result<(LossValue, Vec<f64>)> {
    let gg = token_gram(&encoder.embed_patches(gt));
    Ok(gram_against_grad(syn, &gg, encoder))
}

fn gram_against(syn: &ImageRGB, gt_gram: &[f64], encoder: &dyn PatchEncoder) -> LossValue {
    let gs = token_gram(&encoder.embed_patches(syn));
    let v = gs.iter().zip(gt_gram).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gs.len() as f64;
    LossValue::single("gram", v)
}

fn gram_against_grad(syn: &ImageRGB, gt_gram: &[f64], encoder: &dyn PatchEncoder) -> (LossValue, Vec<f64>) {
    let tokens = encoder.embed_patches(syn);
    let gs = token_gram(&tokens);
    let d = tokens.dim();
    let dd = (d * d) as f64;
    let value = gs.iter().zip(gt_gram).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / dd;
    // dL/dG = 2 (Gs - Gg) / d^2, symmetric; dL/df_p = (2 / |P|) dL/dG f_p.
    let dg: Vec<f64> = gs.iter().zip(gt_gram).map(|(a, b)| 2.0 * (a - b) / dd).collect();
    let scale = 2.0 / tokens.len() as f64;
    let up: Vec<f64> = tokens
        .iter()
        .flat_map(|f| (0..d).map(|i| scale * dot(&dg[i * d..(i + 1) * d], f)).collect::<Vec<_>>())
        .collect();
    (LossValue::single("gram", value), encoder.embed_patches_vjp(syn, &up))
}
