use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::dot;

/// Tolerance on the unit-norm invariant of encoder outputs.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    ToyGlobal,
    ToyPatch,
    External,
}

impl EncoderKind {
    pub fn registry_name(self) -> &'static str {
        match self {
            EncoderKind::ToyGlobal => "toy-global",
            EncoderKind::ToyPatch => "toy-patch",
            EncoderKind::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub seed: u64,
    /// Patch side in pixels at resolution `m`.
    pub patch_size: usize,
    pub d_g: usize,
    pub d_p: usize,
    /// Side of the square resolution images are rescaled to before patching.
    pub m: usize,
    /// Input side of the toy global encoder; images and crops are resized to it.
    pub global_resolution: usize,
    /// Weight file for the external adapter.
    pub weights: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::ToyPatch,
            seed: 0,
            patch_size: 16,
            d_g: 64,
            d_p: 64,
            m: 1024,
            global_resolution: 16,
            weights: None,
        }
    }
}

impl EncoderConfig {
    pub fn toy_global(seed: u64) -> Self {
        Self { kind: EncoderKind::ToyGlobal, seed, ..Self::default() }
    }

    pub fn toy_patch(seed: u64, m: usize, patch_size: usize) -> Self {
        Self { kind: EncoderKind::ToyPatch, seed, m, patch_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.m == 0 || self.m % self.patch_size != 0 {
            return Err(Error::config(format!(
                "rescale resolution m={} must be a positive multiple of patch_size={}",
                self.m, self.patch_size
            )));
        }
        let grid = self.m / self.patch_size;
        if grid * grid < 4 {
            return Err(Error::config(format!("token grid {grid}x{grid} has fewer than 4 tokens")));
        }
        if self.d_g == 0 || self.d_p == 0 || self.global_resolution == 0 {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if self.kind == EncoderKind::External && self.weights.is_none() {
            return Err(Error::config("external encoder requires a `weights` file"));
        }
        Ok(())
    }
}

/// Unit-norm global embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEmbedding {
    vector: Vec<f64>,
}

impl GlobalEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        check_unit(&vector)?;
        Ok(Self { vector })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &GlobalEmbedding) -> f64 {
        dot(&self.vector, &other.vector).clamp(-1.0, 1.0)
    }
}

/// Grid of unit-norm patch tokens, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTokenMap {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    tokens: Vec<f64>,
    source_resolution: usize,
}

impl PatchTokenMap {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, tokens: Vec<f64>, source_resolution: usize) -> Result<Self> {
        if grid_h * grid_w < 4 {
            return Err(Error::invalid(format!("token grid {grid_h}x{grid_w} has fewer than 4 tokens")));
        }
        if tokens.len() != grid_h * grid_w * dim {
            return Err(Error::invalid("token buffer size mismatch"));
        }
        for t in tokens.chunks_exact(dim) {
            check_unit(t)?;
        }
        Ok(Self { grid_h, grid_w, dim, tokens, source_resolution })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_resolution(&self) -> usize {
        self.source_resolution
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_at(&self, row: usize, col: usize) -> &[f64] {
        self.token(row * self.grid_w + col)
    }

    pub fn tokens(&self) -> &[f64] {
        &self.tokens
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.tokens.chunks_exact(self.dim)
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite embedding component"));
    }
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}
