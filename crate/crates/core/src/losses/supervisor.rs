use serde::{Deserialize, Serialize};

use super::{adapt_loss, adapt_loss_grad, gram_against, gram_against_grad, l2_loss, l2_loss_grad, match_against, match_against_grad, token_gram, LossValue, LossWeights};
use crate::encoders::{Encoders, PatchTokenMap};
use crate::error::Result;
use crate::imageops::{sample_shared_crops, ImageRGB};

/// Which objective supervises rendered images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", try_from = "SupervisionRepr")]
pub enum Supervision {
    Realism { adapt: f64, #[serde(rename = "match")] matching: f64 },
    L2,
    Gram,
}

/// Flat form used for parsing, so stray keys on `l2` / `gram` are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SupervisionRepr {
    #[serde(rename = "type")]
    kind: String,
    adapt: Option<f64>,
    #[serde(rename = "match")]
    matching: Option<f64>,
}

impl TryFrom<SupervisionRepr> for Supervision {
    type Error = String;

    fn try_from(r: SupervisionRepr) -> std::result::Result<Self, String> {
        match (r.kind.as_str(), r.adapt, r.matching) {
            ("realism", Some(adapt), Some(matching)) => Ok(Supervision::Realism { adapt, matching }),
            ("realism", _, _) => Err("realism supervision needs both `adapt` and `match`".into()),
            ("l2", None, None) => Ok(Supervision::L2),
            ("gram", None, None) => Ok(Supervision::Gram),
            ("l2" | "gram", _, _) => Err(format!("`{}` supervision takes no weights", r.kind)),
            (other, _, _) => Err(format!("unknown supervision `{other}` (expected realism, l2 or gram)")),
        }
    }
}

impl Default for Supervision {
    fn default() -> Self {
        Self::realism(LossWeights::default())
    }
}

impl Supervision {
    pub fn realism(w: LossWeights) -> Self {
        Supervision::Realism { adapt: w.adapt, matching: w.matching }
    }

    fn needs_tokens(&self) -> bool {
        matches!(self, Supervision::Realism { matching, .. } if *matching != 0.0)
    }
}

/// A ground-truth view with its cached patch tokens / Gram matrix.
#[derive(Clone, Debug)]
pub struct SupervisionTarget {
    pub image: ImageRGB,
    tokens: Option<PatchTokenMap>,
    gram: Option<Vec<f64>>,
}

/// Evaluates a [`Supervision`] objective with fresh shared crops per call.
#[derive(Clone)]
pub struct Supervisor {
    pub encoders: Encoders,
    pub supervision: Supervision,
    pub crop_count: usize,
    pub crop_scale: (f64, f64),
}

impl Supervisor {
    pub fn new(encoders: Encoders, supervision: Supervision, crop_count: usize, crop_scale: (f64, f64)) -> Self {
        Self { encoders, supervision, crop_count, crop_scale }
    }

    /// Ground-truth tokens are computed once here and reused every step.
    pub fn prepare(&self, gt: &ImageRGB) -> SupervisionTarget {
        let tokens = self.supervision.needs_tokens().then(|| self.encoders.patch.embed_patches(gt));
        let gram = matches!(self.supervision, Supervision::Gram)
            .then(|| token_gram(&self.encoders.patch.embed_patches(gt)));
        SupervisionTarget { image: gt.clone(), tokens, gram }
    }

    pub fn evaluate(&self, syn: &ImageRGB, target: &SupervisionTarget, crop_seed: u64) -> Result<(LossValue, Vec<f64>)> {
        match self.supervision {
            Supervision::Realism { adapt, matching } => {
                let mut grad = vec![0.0; syn.data().len()];
                let mut value = 0.0;
                let mut breakdown = Vec::with_capacity(2);
                if adapt != 0.0 {
                    let crops = self.crops(syn, crop_seed)?;
                    let (a, g) = adapt_loss_grad(syn, &target.image, &crops, self.encoders.global.as_ref())?;
                    for (acc, x) in grad.iter_mut().zip(&g) {
                        *acc += adapt * x;
                    }
                    value += adapt * a.value;
                    breakdown.push(("adapt", a.value));
                }
                if matching != 0.0 {
                    let tokens = target.tokens.as_ref().expect("prepared with tokens");
                    let (m, g) = match_against_grad(syn, tokens, self.encoders.patch.as_ref(), matching);
                    for (acc, x) in grad.iter_mut().zip(&g) {
                        *acc += x;
                    }
                    value += matching * m.value;
                    breakdown.push(("match", m.value));
                }
                Ok((LossValue { value, breakdown }, grad))
            }
            Supervision::L2 => l2_loss_grad(syn, &target.image),
            Supervision::Gram => {
                Ok(gram_against_grad(syn, target.gram.as_ref().expect("prepared with gram"), self.encoders.patch.as_ref()))
            }
        }
    }

    pub fn evaluate_value(&self, syn: &ImageRGB, target: &SupervisionTarget, crop_seed: u64) -> Result<LossValue> {
        match self.supervision {
            Supervision::Realism { adapt, matching } => {
                let mut value = 0.0;
                let mut breakdown = Vec::with_capacity(2);
                if adapt != 0.0 {
                    let crops = self.crops(syn, crop_seed)?;
                    let a = adapt_loss(syn, &target.image, &crops, self.encoders.global.as_ref())?.value;
                    value += adapt * a;
                    breakdown.push(("adapt", a));
                }
                if matching != 0.0 {
                    let tokens = target.tokens.as_ref().expect("prepared with tokens");
                    let m = match_against(syn, tokens, self.encoders.patch.as_ref()).value;
                    value += matching * m;
                    breakdown.push(("match", m));
                }
                Ok(LossValue { value, breakdown })
            }
            Supervision::L2 => l2_loss(syn, &target.image),
            Supervision::Gram => {
                Ok(gram_against(syn, target.gram.as_ref().expect("prepared with gram"), self.encoders.patch.as_ref()))
            }
        }
    }

    fn crops(&self, image: &ImageRGB, seed: u64) -> Result<Vec<crate::imageops::CropSpec>> {
        sample_shared_crops(seed, image.height(), image.width(), self.crop_count, self.crop_scale)
    }
}
