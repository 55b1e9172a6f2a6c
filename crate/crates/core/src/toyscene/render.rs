use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{SceneGrad, ToySplatScene};
use crate::error::{Error, Result};
use crate::imageops::{CameraId, ImageRGB, MultiViewSet};

pub const MIN_RESOLUTION: usize = 8;

/// One of the four orthogonal azimuths. Elevation is fixed at 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CameraPose {
    azimuth: u16,
}

impl CameraPose {
    pub fn new(azimuth_degrees: u16) -> Result<Self> {
        match azimuth_degrees {
            0 | 90 | 180 | 270 => Ok(Self { azimuth: azimuth_degrees }),
            a => Err(Error::invalid(format!("azimuth {a} is not one of 0, 90, 180, 270"))),
        }
    }

    pub fn for_view(camera: CameraId) -> Self {
        Self { azimuth: 90 * camera.index() as u16 }
    }

    pub fn all() -> [CameraPose; 4] {
        CameraId::ALL.map(Self::for_view)
    }

    pub fn azimuth(&self) -> u16 {
        self.azimuth
    }

    /// Exact `(cos, sin)` of the azimuth.
    fn cos_sin(&self) -> (f64, f64) {
        match self.azimuth {
            0 => (1.0, 0.0),
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    }

    /// Screen coordinates `(u, v)` and closeness to the camera (larger is nearer).
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let (c, s) = self.cos_sin();
        (c * p[0] - s * p[2], p[1], s * p[0] + c * p[2])
    }
}

/// Rotates splat positions about the vertical axis by a multiple of 90 degrees.
/// Rendering the result at azimuth `a` equals rendering the original at `a - degrees`.
pub fn rotate_about_vertical(scene: &ToySplatScene, degrees: u16) -> Result<ToySplatScene> {
    let (c, s) = CameraPose::new(degrees % 360)?.cos_sin();
    let mut out = scene.clone();
    for p in &mut out.positions {
        *p = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
    }
    Ok(out)
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!("render resolution {resolution} below {MIN_RESOLUTION}")));
    }
    Ok(())
}

struct Projected {
    order: Vec<usize>,
    uv: Vec<(f64, f64)>,
}

fn project_scene(scene: &ToySplatScene, camera: CameraPose) -> Projected {
    let proj: Vec<_> = scene.positions.iter().map(|p| camera.project(*p)).collect();
    let mut order: Vec<usize> = (0..scene.len()).collect();
    // back to front; stable sort keeps index order on ties
    order.sort_by(|&a, &b| proj[a].2.total_cmp(&proj[b].2));
    Projected { order, uv: proj.iter().map(|p| (p.0, p.1)).collect() }
}

fn pixel_center(i: usize, j: usize, res: usize) -> (f64, f64) {
    let step = 2.0 / res as f64;
    (-1.0 + (j as f64 + 0.5) * step, 1.0 - (i as f64 + 0.5) * step)
}

/// Returns `(alpha, gaussian)` of splat `k` at pixel centre `(u, v)`.
fn splat_weight(scene: &ToySplatScene, proj: &Projected, k: usize, u: f64, v: f64) -> (f64, f64) {
    let (uk, vk) = proj.uv[k];
    let s = scene.scales[k];
    let d2 = (u - uk) * (u - uk) + (v - vk) * (v - vk);
    let e = (-d2 / (2.0 * s * s)).exp();
    (scene.opacities[k] * e, e)
}

/// Orthographic, back-to-front alpha compositing over a white background.
pub fn render(scene: &ToySplatScene, camera: CameraPose, resolution: usize) -> Result<ImageRGB> {
    check_resolution(resolution)?;
    scene.validate()?;
    let proj = project_scene(scene, camera);
    let data: Vec<f64> = (0..resolution)
        .into_par_iter()
        .flat_map_iter(|i| {
            let proj = &proj;
            (0..resolution).flat_map(move |j| {
                let (u, v) = pixel_center(i, j, resolution);
                let mut c = [1.0; 3];
                for &k in &proj.order {
                    let (a, _) = splat_weight(scene, proj, k, u, v);
                    for ch in 0..3 {
                        c[ch] = a * scene.colors[k][ch] + (1.0 - a) * c[ch];
                    }
                }
                c
            })
        })
        .collect();
    ImageRGB::from_clamped(resolution, resolution, data)
}

/// Vector-Jacobian product of [`render`]: `upstream` is `dL/dpixel` in image layout.
/// Depth ordering is treated as piecewise constant.
pub fn render_backward(
    scene: &ToySplatScene,
    camera: CameraPose,
    resolution: usize,
    upstream: &[f64],
) -> Result<SceneGrad> {
    check_resolution(resolution)?;
    if upstream.len() != resolution * resolution * 3 {
        return Err(Error::invalid("upstream gradient size does not match the render"));
    }
    let n = scene.len();
    let proj = project_scene(scene, camera);
    let (cos, sin) = camera.cos_sin();
    // per-row accumulators of [du, dv, dcolor x3, dscale, dopacity], summed in row order
    let rows: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; n * 7];
            let mut alphas = vec![0.0; n];
            let mut gauss = vec![0.0; n];
            let mut behind = vec![[0.0; 3]; n];
            for j in 0..resolution {
                let g = &upstream[(i * resolution + j) * 3..(i * resolution + j) * 3 + 3];
                if g.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let (u, v) = pixel_center(i, j, resolution);
                let mut c = [1.0; 3];
                for &k in &proj.order {
                    let (a, e) = splat_weight(scene, &proj, k, u, v);
                    alphas[k] = a;
                    gauss[k] = e;
                    behind[k] = c;
                    for ch in 0..3 {
                        c[ch] = a * scene.colors[k][ch] + (1.0 - a) * c[ch];
                    }
                }
                let mut t = 1.0;
                for &k in proj.order.iter().rev() {
                    let a = alphas[k];
                    let col = scene.colors[k];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        acc[k * 7 + 2 + ch] += g[ch] * t * a;
                        d_alpha += g[ch] * t * (col[ch] - behind[k][ch]);
                    }
                    let e = gauss[k];
                    let o = scene.opacities[k];
                    let s = scene.scales[k];
                    let (uk, vk) = proj.uv[k];
                    let (du, dv) = (u - uk, v - vk);
                    let oe = o * e;
                    acc[k * 7] += d_alpha * oe * du / (s * s);
                    acc[k * 7 + 1] += d_alpha * oe * dv / (s * s);
                    acc[k * 7 + 5] += d_alpha * oe * (du * du + dv * dv) / (s * s * s);
                    acc[k * 7 + 6] += d_alpha * e;
                    t *= 1.0 - a;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n * 7];
    for r in &rows {
        for (t, x) in total.iter_mut().zip(r) {
            *t += x;
        }
    }
    let mut grad = SceneGrad::zeros(n);
    for k in 0..n {
        let a = &total[k * 7..k * 7 + 7];
        // u = cos x - sin z, v = y
        grad.positions[k] = [cos * a[0], a[1], -sin * a[0]];
        grad.colors[k] = [a[2], a[3], a[4]];
        grad.scales[k] = a[5];
        grad.opacities[k] = a[6];
    }
    Ok(grad)
}

/// Renders the four orthogonal views in camera order.
pub fn render_views(scene: &ToySplatScene, resolution: usize) -> Result<MultiViewSet> {
    let views = CameraPose::all()
        .par_iter()
        .map(|cam| render(scene, *cam, resolution))
        .collect::<Result<Vec<_>>>()?;
    MultiViewSet::from_vec(views)
}
