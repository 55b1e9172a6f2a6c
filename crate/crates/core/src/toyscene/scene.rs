use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sigmoid;

pub const MIN_SCALE: f64 = 1e-4;

/// Isotropic Gaussian splats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySplatScene {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
}

impl ToySplatScene {
    pub fn empty() -> Self {
        Self { positions: vec![], colors: vec![], scales: vec![], opacities: vec![] }
    }

    pub fn new(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>, scales: Vec<f64>, opacities: Vec<f64>) -> Result<Self> {
        let s = Self { positions, colors, scales, opacities };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n || self.scales.len() != n || self.opacities.len() != n {
            return Err(Error::invalid("splat arrays have different lengths"));
        }
        for i in 0..n {
            let p = self.positions[i];
            if p.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
                return Err(Error::invalid(format!("splat {i} position {p:?} outside [-1, 1]^3")));
            }
            if self.colors[i].iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("splat {i} color outside [0, 1]")));
            }
            if !(self.scales[i].is_finite() && self.scales[i] > MIN_SCALE) {
                return Err(Error::invalid(format!("splat {i} scale {} not above {MIN_SCALE}", self.scales[i])));
            }
            if !(0.0..=1.0).contains(&self.opacities[i]) {
                return Err(Error::invalid(format!("splat {i} opacity outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> GeometryHandle {
        GeometryHandle { positions: self.positions.clone(), scales: self.scales.clone() }
    }

    pub fn appearance(&self) -> Appearance {
        Appearance { colors: self.colors.clone(), opacities: self.opacities.clone() }
    }
}

/// Gradient of a scalar with respect to every scene parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
}

impl SceneGrad {
    pub fn zeros(n: usize) -> Self {
        Self { positions: vec![[0.0; 3]; n], colors: vec![[0.0; 3]; n], scales: vec![0.0; n], opacities: vec![0.0; n] }
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for i in 0..self.scales.len() {
            for k in 0..3 {
                self.positions[i][k] += other.positions[i][k];
                self.colors[i][k] += other.colors[i][k];
            }
            self.scales[i] += other.scales[i];
            self.opacities[i] += other.opacities[i];
        }
    }
}

/// Fixed geometry of a splat set (the conditioning shape for texturing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryHandle {
    pub positions: Vec<[f64; 3]>,
    pub scales: Vec<f64>,
}

impl GeometryHandle {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Per-splat colors and opacities in value space.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

impl Appearance {
    /// From unconstrained logits, 4 per splat (r, g, b, opacity), squashed by sigmoids.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() % 4 != 0 {
            return Err(Error::invalid("appearance logits must come in groups of 4"));
        }
        let (colors, opacities) = logits
            .chunks_exact(4)
            .map(|l| ([sigmoid(l[0]), sigmoid(l[1]), sigmoid(l[2])], sigmoid(l[3])))
            .unzip();
        Ok(Self { colors, opacities })
    }
}

/// Merges fixed geometry with predicted appearance. Geometry is copied untouched.
pub fn apply_texture(geometry: &GeometryHandle, appearance: &Appearance) -> Result<ToySplatScene> {
    let n = geometry.len();
    if appearance.colors.len() != n || appearance.opacities.len() != n || geometry.scales.len() != n {
        return Err(Error::invalid(format!(
            "appearance for {} splats does not fit geometry with {n}",
            appearance.colors.len()
        )));
    }
    ToySplatScene::new(
        geometry.positions.clone(),
        appearance.colors.clone(),
        geometry.scales.clone(),
        appearance.opacities.clone(),
    )
}

const MAGIC: &[u8; 4] = b"TSPL";
const VERSION: u32 = 1;

/// Binary layout (little endian): magic `TSPL`, `u32` version (1), `u32` count N,
/// then `f64` arrays: positions (3N, xyz interleaved), colors (3N), scales (N),
/// opacities (N).
pub fn write_scene(scene: &ToySplatScene, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(scene.len() as u32).to_le_bytes())?;
    let values = scene
        .positions
        .iter()
        .flatten()
        .chain(scene.colors.iter().flatten())
        .chain(&scene.scales)
        .chain(&scene.opacities);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_scene(mut r: impl Read) -> Result<ToySplatScene> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::invalid("not a splat scene file"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported scene version {version}")));
    }
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; n * 8 * 8];
    r.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let triple = |off: usize, i: usize| [vals[off + 3 * i], vals[off + 3 * i + 1], vals[off + 3 * i + 2]];
    let positions = (0..n).map(|i| triple(0, i)).collect();
    let colors = (0..n).map(|i| triple(3 * n, i)).collect();
    let scales = vals[6 * n..7 * n].to_vec();
    let opacities = vals[7 * n..8 * n].to_vec();
    ToySplatScene::new(positions, colors, scales, opacities)
}

pub fn save_scene(scene: &ToySplatScene, path: &std::path::Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_scene(scene, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_scene(path: &std::path::Path) -> Result<ToySplatScene> {
    read_scene(std::fs::File::open(path)?)
}
