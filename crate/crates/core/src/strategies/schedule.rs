use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyscene::Latent3D;

pub const DEFAULT_DDPM_STEPS: usize = 100;
pub const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-view latents of a four-view set.
pub type MultiViewLatents = [Vec<f64>; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSchedule {
    /// Continuous `t` in `(0, 1]`.
    RectifiedFlow,
    /// `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1`.
    Ddpm { alpha_bar: Vec<f64> },
}

impl NoiseSchedule {
    /// Cosine `alpha_bar` with per-step betas clipped at 0.999.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("ddpm schedule needs at least one step"));
        }
        let f = |t: f64| {
            let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut alpha_bar = vec![1.0];
        for t in 1..=steps {
            let beta = (1.0 - (f(t as f64) / f0) / (f((t - 1) as f64) / f0)).min(MAX_BETA);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * (1.0 - beta));
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::invalid("ddpm schedule needs at least one step"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid("alpha_bar[0] must be 1"));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0 && w[1].is_finite()) {
                return Err(Error::invalid("alpha_bar must be strictly decreasing in (0, 1]"));
            }
        }
        Ok(Self::Ddpm { alpha_bar })
    }

    /// Number of DDPM steps `T`.
    pub fn steps(&self) -> Option<usize> {
        match self {
            Self::RectifiedFlow => None,
            Self::Ddpm { alpha_bar } => Some(alpha_bar.len() - 1),
        }
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match self {
            Self::RectifiedFlow => Err(Error::invalid("rectified flow has no discrete alpha_bar")),
            Self::Ddpm { alpha_bar } => alpha_bar
                .get(t)
                .copied()
                .ok_or_else(|| Error::invalid(format!("step {t} outside 0..={}", alpha_bar.len() - 1))),
        }
    }

    /// `(alpha_t, beta_t) = (1/sqrt(ab), sqrt(1 - ab)/sqrt(ab))`.
    pub fn coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((1.0 / ab.sqrt(), (1.0 - ab).sqrt() / ab.sqrt()))
    }
}

fn check_rf_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("rectified-flow t = {t} outside (0, 1]")));
    }
    Ok(())
}

/// `x_t = (1 - t) x0 + t eps`.
pub fn rf_noise(x0: &Latent3D, t: f64, eps: &Latent3D) -> Result<Latent3D> {
    check_rf_t(t)?;
    if x0.dim() != eps.dim() {
        return Err(Error::invalid("noise and latent dimensions differ"));
    }
    Latent3D::new(x0.as_slice().iter().zip(eps.as_slice()).map(|(a, e)| (1.0 - t) * a + t * e).collect())
}

/// `x0_hat = x_t - t v`.
pub fn rf_predict_clean(x_t: &Latent3D, t: f64, v: &Latent3D) -> Latent3D {
    assert_eq!(x_t.dim(), v.dim(), "velocity and latent dimensions differ");
    Latent3D::new(x_t.as_slice().iter().zip(v.as_slice()).map(|(x, v)| x - t * v).collect())
        .expect("finite inputs give a finite estimate")
}

/// `X_t = sqrt(ab) X0 + sqrt(1 - ab) eps` per view.
pub fn ddpm_noise(x0: &MultiViewLatents, t: usize, eps: &MultiViewLatents, schedule: &NoiseSchedule) -> Result<MultiViewLatents> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(std::array::from_fn(|v| x0[v].iter().zip(&eps[v]).map(|(x, e)| a * x + b * e).collect()))
}

/// `X0_hat = alpha_t X_t - beta_t eps_hat` per view.
pub fn ddpm_predict_clean(
    x_t: &MultiViewLatents,
    t: usize,
    eps_hat: &MultiViewLatents,
    schedule: &NoiseSchedule,
) -> Result<MultiViewLatents> {
    let (alpha, beta) = schedule.coefficients(t)?;
    for v in 0..4 {
        if x_t[v].len() != eps_hat[v].len() {
            return Err(Error::invalid("noise prediction and latent sizes differ"));
        }
    }
    Ok(std::array::from_fn(|v| x_t[v].iter().zip(&eps_hat[v]).map(|(x, e)| alpha * x - beta * e).collect()))
}
