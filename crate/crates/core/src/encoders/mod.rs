//! Global (perceptual) and dense patch encoders.
//!
//! Both encoder families are differentiable with respect to input pixels:
//! the `*_vjp` methods return `dL/dpixels` given `dL/doutput`. Encoders are
//! immutable after construction and safe to share across threads.

mod linear;
mod types;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use linear::{ExternalWeights, LinearGlobalEncoder, LinearPatchEncoder, Projection};
pub use types::{EncoderConfig, EncoderKind, GlobalEmbedding, PatchTokenMap, UNIT_NORM_TOL};

use crate::error::{Error, Result};
use crate::imageops::ImageRGB;

pub trait GlobalEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_global(&self, image: &ImageRGB) -> GlobalEmbedding;
    /// Pullback of `upstream` (gradient w.r.t. the embedding) to image pixels.
    fn embed_global_vjp(&self, image: &ImageRGB, upstream: &[f64]) -> Vec<f64>;
    fn fingerprint(&self) -> String;
}

pub trait PatchEncoder: Send + Sync {
    fn dim(&self) -> usize;
    /// Token grid side; fixed by the encoder, independent of input size.
    fn grid_side(&self) -> usize;
    fn embed_patches(&self, image: &ImageRGB) -> PatchTokenMap;
    /// Pullback of `upstream` (gradient w.r.t. all tokens, row-major) to image pixels.
    fn embed_patches_vjp(&self, image: &ImageRGB, upstream: &[f64]) -> Vec<f64>;
    fn fingerprint(&self) -> String;
}

/// What a registry entry produced; either side may be absent.
#[derive(Clone, Default)]
pub struct EncoderHandle {
    pub global: Option<Arc<dyn GlobalEncoder>>,
    pub patch: Option<Arc<dyn PatchEncoder>>,
}

impl std::fmt::Debug for EncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderHandle")
            .field("global", &self.global.as_ref().map(|g| g.fingerprint()))
            .field("patch", &self.patch.as_ref().map(|p| p.fingerprint()))
            .finish()
    }
}

pub type EncoderBuilder = fn(&EncoderConfig) -> Result<EncoderHandle>;

/// Named encoder constructors. The default registry knows `toy-global`,
/// `toy-patch` and `external`.
#[derive(Clone)]
pub struct EncoderRegistry {
    entries: BTreeMap<String, EncoderBuilder>,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("toy-global", build_toy_global);
        r.register("toy-patch", build_toy_patch);
        r.register("external", build_external);
        r
    }
}

impl EncoderRegistry {
    pub fn register(&mut self, name: &str, builder: EncoderBuilder) {
        self.entries.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, config: &EncoderConfig) -> Result<EncoderHandle> {
        let builder = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Lookup { kind: "encoder", name: name.to_string() })?;
        builder(config)
    }

    pub fn global(&self, config: &EncoderConfig) -> Result<Arc<dyn GlobalEncoder>> {
        self.build(config.kind.registry_name(), config)?
            .global
            .ok_or_else(|| Error::config(format!("encoder `{}` has no global embedding", config.kind.registry_name())))
    }

    pub fn patch(&self, config: &EncoderConfig) -> Result<Arc<dyn PatchEncoder>> {
        self.build(config.kind.registry_name(), config)?
            .patch
            .ok_or_else(|| Error::config(format!("encoder `{}` has no patch embedding", config.kind.registry_name())))
    }
}

fn build_toy_global(config: &EncoderConfig) -> Result<EncoderHandle> {
    config.validate()?;
    Ok(EncoderHandle { global: Some(Arc::new(LinearGlobalEncoder::toy(config))), patch: None })
}

fn build_toy_patch(config: &EncoderConfig) -> Result<EncoderHandle> {
    config.validate()?;
    Ok(EncoderHandle { global: None, patch: Some(Arc::new(LinearPatchEncoder::toy(config))) })
}

fn build_external(config: &EncoderConfig) -> Result<EncoderHandle> {
    config.validate()?;
    let path = config.weights.as_deref().expect("validated");
    let label = format!("external({})", path.display());
    Ok(match ExternalWeights::load(path)? {
        ExternalWeights::Global { resolution, projection } => EncoderHandle {
            global: Some(Arc::new(LinearGlobalEncoder::from_projection(resolution, projection, label)?)),
            patch: None,
        },
        ExternalWeights::Patch { m, patch_size, projection } => EncoderHandle {
            global: None,
            patch: Some(Arc::new(LinearPatchEncoder::from_projection(m, patch_size, projection, label)?)),
        },
    })
}

/// The encoder pair every realism loss needs.
#[derive(Clone)]
pub struct Encoders {
    pub global: Arc<dyn GlobalEncoder>,
    pub patch: Arc<dyn PatchEncoder>,
}

impl Encoders {
    pub fn from_configs(global: &EncoderConfig, patch: &EncoderConfig) -> Result<Self> {
        let reg = EncoderRegistry::default();
        Ok(Self { global: reg.global(global)?, patch: reg.patch(patch)? })
    }

    pub fn fingerprint(&self) -> String {
        format!("{}/{}", self.global.fingerprint(), self.patch.fingerprint())
    }
}

/// One-shot global embedding with an encoder built from `config`.
pub fn embed_global(image: &ImageRGB, config: &EncoderConfig) -> Result<GlobalEmbedding> {
    Ok(EncoderRegistry::default().global(config)?.embed_global(image))
}

/// One-shot patch embedding with an encoder built from `config`.
pub fn embed_patches(image: &ImageRGB, config: &EncoderConfig) -> Result<PatchTokenMap> {
    Ok(EncoderRegistry::default().patch(config)?.embed_patches(image))
}
