use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::codec::Codec2D;
use crate::error::{Error, Result};
use crate::nn::{AdamW, Mlp};
use crate::toyscene::Decoder3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Rectified-flow latent generator with a trainable 3D decoder.
    Coupled,
    /// Text-and-geometry conditioned texture predictor.
    Feedforward,
    /// Multi-view latent denoiser with a frozen 2D decoder.
    Mvdiff,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Coupled, Strategy::Feedforward, Strategy::Mvdiff];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Coupled => "coupled",
            Strategy::Feedforward => "feedforward",
            Strategy::Mvdiff => "mvdiff",
        }
    }

    /// AdamW learning rate for the toy networks.
    pub fn default_lr(self) -> f64 {
        match self {
            Strategy::Coupled => 1e-3,
            Strategy::Feedforward => 4e-2,
            Strategy::Mvdiff => 3e-3,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup { kind: "strategy", name: s.to_string() })
    }
}

pub const VELOCITY_NET: &str = "velocity_net";
pub const DECODER3D: &str = "decoder3d";
pub const TEXTURE_NET: &str = "texture_net";
pub const NOISE_NET: &str = "noise_net";
pub const DECODER2D: &str = "decoder2d";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainableFlags {
    pub velocity_net: bool,
    pub decoder3d: bool,
    pub texture_net: bool,
    pub noise_net: bool,
    pub decoder2d: bool,
}

impl TrainableFlags {
    pub fn for_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::Coupled => Self { velocity_net: true, decoder3d: true, ..Self::default() },
            Strategy::Feedforward => Self { texture_net: true, ..Self::default() },
            Strategy::Mvdiff => Self { noise_net: true, ..Self::default() },
        }
    }

    pub fn is_trainable(&self, component: &str) -> bool {
        match component {
            VELOCITY_NET => self.velocity_net,
            DECODER3D => self.decoder3d,
            TEXTURE_NET => self.texture_net,
            NOISE_NET => self.noise_net,
            DECODER2D => self.decoder2d,
            _ => false,
        }
    }
}

/// Every network the three strategies touch. Components a strategy does not
/// use stay `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHandles {
    pub velocity_net: Option<Mlp>,
    pub decoder3d: Option<Decoder3D>,
    pub texture_net: Option<Mlp>,
    pub noise_net: Option<Mlp>,
    pub decoder2d: Option<Codec2D>,
    pub trainable: TrainableFlags,
}

impl ModelHandles {
    pub fn empty(trainable: TrainableFlags) -> Self {
        Self { velocity_net: None, decoder3d: None, texture_net: None, noise_net: None, decoder2d: None, trainable }
    }

    pub fn params(&self, component: &str) -> Option<&[f64]> {
        match component {
            VELOCITY_NET => self.velocity_net.as_ref().map(|m| m.params.as_slice()),
            DECODER3D => self.decoder3d.as_ref().map(|d| d.mlp.params.as_slice()),
            TEXTURE_NET => self.texture_net.as_ref().map(|m| m.params.as_slice()),
            NOISE_NET => self.noise_net.as_ref().map(|m| m.params.as_slice()),
            DECODER2D => self.decoder2d.as_ref().map(|c| c.params.as_slice()),
            _ => None,
        }
    }

    fn params_mut(&mut self, component: &str) -> Option<&mut Vec<f64>> {
        match component {
            VELOCITY_NET => self.velocity_net.as_mut().map(|m| &mut m.params),
            DECODER3D => self.decoder3d.as_mut().map(|d| &mut d.mlp.params),
            TEXTURE_NET => self.texture_net.as_mut().map(|m| &mut m.params),
            NOISE_NET => self.noise_net.as_mut().map(|m| &mut m.params),
            DECODER2D => self.decoder2d.as_mut().map(|c| &mut c.params),
            _ => None,
        }
    }

    /// MLP behind a component, for per-layer parameter groups.
    pub fn mlp(&self, component: &str) -> Option<&Mlp> {
        match component {
            VELOCITY_NET => self.velocity_net.as_ref(),
            DECODER3D => self.decoder3d.as_ref().map(|d| &d.mlp),
            TEXTURE_NET => self.texture_net.as_ref(),
            NOISE_NET => self.noise_net.as_ref(),
            _ => None,
        }
    }
}

pub(crate) fn require<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    slot.as_ref().ok_or_else(|| Error::config(format!("model handles have no {name}")))
}

/// One logged step, with losses summed over the four views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub adapt: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub optimizers: BTreeMap<String, AdamW>,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self { step: 0, seed, optimizers: BTreeMap::new(), history: Vec::new() }
    }

    /// Updates every trainable component that has a gradient. Frozen ones are never touched.
    pub fn apply(&mut self, models: &mut ModelHandles, grads: &[(&'static str, Vec<f64>)]) -> Result<()> {
        for (name, g) in grads {
            if !models.trainable.is_trainable(name) {
                continue;
            }
            let opt = self
                .optimizers
                .get_mut(*name)
                .ok_or_else(|| Error::config(format!("no optimizer for trainable component {name}")))?;
            let params = models.params_mut(name).ok_or_else(|| Error::config(format!("missing component {name}")))?;
            opt.step(params, g);
        }
        Ok(())
    }
}
