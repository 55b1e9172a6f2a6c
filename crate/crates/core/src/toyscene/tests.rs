use rand::Rng;

use super::*;
use crate::gradcheck::{central_differences, vector_relative_error};
use crate::util::rng;

fn random_scene(seed: u64, n: usize) -> ToySplatScene {
    let mut r = rng(seed);
    let mut s = ToySplatScene::empty();
    for k in 0..n {
        // well-separated depths so finite differences never reorder splats
        let depth = -0.7 + 1.4 * k as f64 / n.max(1) as f64;
        s.positions.push([r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), depth]);
        s.colors.push([r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)]);
        s.scales.push(r.random_range(0.15..0.4));
        s.opacities.push(r.random_range(0.3..0.9));
    }
    s
}

/// Splats in a shuffled order with distinct depths in every view direction.
fn view_scene(seed: u64, n: usize) -> ToySplatScene {
    let mut s = random_scene(seed, n);
    let mut r = rng(seed ^ 0xabc);
    for p in &mut s.positions {
        p[0] = r.random_range(-0.6..0.6);
        p[2] = r.random_range(-0.6..0.6);
    }
    s
}

#[test]
fn empty_scene_is_white() {
    let img = render(&ToySplatScene::empty(), CameraPose::new(0).unwrap(), 16).unwrap();
    assert!(img.data().iter().all(|v| *v == 1.0));
}

#[test]
fn transparent_scene_is_white() {
    let mut s = random_scene(1, 5);
    s.opacities.iter_mut().for_each(|o| *o = 0.0);
    let img = render(&s, CameraPose::new(90).unwrap(), 16).unwrap();
    assert!(img.data().iter().all(|v| *v == 1.0));
}

#[test]
fn single_red_splat_center_pixel() {
    let s = ToySplatScene::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]], vec![5.0], vec![1.0]).unwrap();
    let res = 32;
    let img = render(&s, CameraPose::new(0).unwrap(), res).unwrap();
    // pixel (16, 16) has centre (1/32, -1/32)
    let d2 = 2.0 * (1.0f64 / 32.0).powi(2);
    let alpha = (-d2 / (2.0 * 25.0)).exp();
    let expect = [1.0, 1.0 - alpha, 1.0 - alpha];
    let px = img.pixel(16, 16);
    for c in 0..3 {
        assert!((px[c] - expect[c]).abs() < 1e-12);
        assert!((px[c] - [1.0, 0.0, 0.0][c]).abs() < 1e-2);
    }
}

#[test]
fn front_splat_occludes_back_splat() {
    let s = ToySplatScene::new(
        vec![[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]],
        vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        vec![0.5, 0.5],
        vec![1.0, 1.0],
    )
    .unwrap();
    let front = render(&s, CameraPose::new(0).unwrap(), 16).unwrap().pixel(8, 8);
    let back = render(&s, CameraPose::new(180).unwrap(), 16).unwrap().pixel(8, 8);
    assert!(front[0] > 0.9 && front[2] < 0.1);
    assert!(back[2] > 0.9 && back[0] < 0.1);
}

#[test]
fn rotation_equivariance_all_azimuths() {
    let s = view_scene(4, 8);
    for rot in [0u16, 90, 180, 270] {
        let rotated = rotate_about_vertical(&s, rot).unwrap();
        for az in [0u16, 90, 180, 270] {
            let a = render(&rotated, CameraPose::new(az).unwrap(), 24).unwrap();
            let b = render(&s, CameraPose::new((az + 360 - rot) % 360).unwrap(), 24).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-5, "rot {rot} az {az}");
        }
    }
    let rotated = rotate_about_vertical(&s, 90).unwrap();
    let a = render(&s, CameraPose::new(0).unwrap(), 24).unwrap();
    let b = render(&rotated, CameraPose::new(90).unwrap(), 24).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-5);
}

#[test]
fn render_is_deterministic_and_bounded() {
    let s = view_scene(9, 8);
    for cam in CameraPose::all() {
        let a = render(&s, cam, 20).unwrap();
        let b = render(&s, cam, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn rejects_bad_camera_and_resolution() {
    assert!(CameraPose::new(45).is_err());
    assert!(matches!(render(&ToySplatScene::empty(), CameraPose::new(0).unwrap(), 7), Err(crate::Error::InvalidInput(_))));
}

fn flatten(s: &ToySplatScene) -> Vec<f64> {
    let mut v = Vec::new();
    for k in 0..s.len() {
        v.extend(s.positions[k]);
        v.extend(s.colors[k]);
        v.push(s.scales[k]);
        v.push(s.opacities[k]);
    }
    v
}

fn unflatten(v: &[f64]) -> ToySplatScene {
    let mut s = ToySplatScene::empty();
    for c in v.chunks_exact(8) {
        s.positions.push([c[0], c[1], c[2]]);
        s.colors.push([c[3], c[4], c[5]]);
        s.scales.push(c[6]);
        s.opacities.push(c[7]);
    }
    s
}

fn flatten_grad(g: &SceneGrad) -> Vec<f64> {
    let mut v = Vec::new();
    for k in 0..g.scales.len() {
        v.extend(g.positions[k]);
        v.extend(g.colors[k]);
        v.push(g.scales[k]);
        v.push(g.opacities[k]);
    }
    v
}

#[test]
fn render_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        let scene = view_scene(100 + seed, 8);
        let res = 32;
        let mut r = rng(seed);
        let w: Vec<f64> = (0..res * res * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        for cam in CameraPose::all() {
            let f = |p: &[f64]| {
                let img = render(&unflatten(p), cam, res).unwrap();
                img.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let analytic = flatten_grad(&render_backward(&scene, cam, res, &w).unwrap());
            let numeric = central_differences(f, &flatten(&scene), 1e-5);
            // per parameter class
            for class in 0..8 {
                let a: Vec<f64> = analytic.iter().skip(class).step_by(8).copied().collect();
                let n: Vec<f64> = numeric.iter().skip(class).step_by(8).copied().collect();
                let err = vector_relative_error(&a, &n);
                assert!(err < 1e-3, "seed {seed} cam {} class {class}: {err}", cam.azimuth());
            }
        }
    }
}

#[test]
fn zero_decoder_gives_bias_defaults() {
    let d = Decoder3D::zeros(16, 8, 4);
    let s = d.decode(&Latent3D::zeros(16)).unwrap();
    assert_eq!(s.len(), 4);
    for k in 0..4 {
        assert_eq!(s.positions[k], [0.0; 3]);
        assert_eq!(s.colors[k], [0.5; 3]);
        assert_eq!(s.scales[k], SCALE_MIN + 0.5 * SCALE_RANGE);
        assert_eq!(s.opacities[k], 0.5);
    }
}

#[test]
fn decoded_scenes_are_valid() {
    let d = Decoder3D::seeded(5, DEFAULT_LATENT_DIM, 64, DEFAULT_SPLATS);
    let mut r = rng(6);
    for _ in 0..1000 {
        let z: Vec<f64> = (0..DEFAULT_LATENT_DIM).map(|_| r.random_range(-3.0..3.0)).collect();
        let s = d.decode(&Latent3D::new(z).unwrap()).unwrap();
        assert_eq!(s.len(), DEFAULT_SPLATS);
        s.validate().unwrap();
    }
}

#[test]
fn decoder_rejects_wrong_latent_dim() {
    let d = Decoder3D::zeros(16, 8, 4);
    assert!(d.decode(&Latent3D::zeros(15)).is_err());
    assert!(Latent3D::new(vec![f64::NAN]).is_err());
}

#[test]
fn pixel_gradient_through_decoder() {
    let d = Decoder3D::seeded(8, 12, 16, 6);
    let mut r = rng(9);
    let z: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let res = 16;
    let cam = CameraPose::new(90).unwrap();
    let (pi, pj, ch) = (7, 9, 1);
    let idx = (pi * res + pj) * 3 + ch;
    let f = |zz: &[f64]| render(&d.decode(&Latent3D::new(zz.to_vec()).unwrap()).unwrap(), cam, res).unwrap().data()[idx];
    let trace = d.decode_traced(&Latent3D::new(z.clone()).unwrap()).unwrap();
    let mut up = vec![0.0; res * res * 3];
    up[idx] = 1.0;
    let sg = render_backward(trace.scene(), cam, res, &up).unwrap();
    let mut dp = vec![0.0; d.mlp.params.len()];
    let dz = d.backward(&trace, &sg, &mut dp);
    let numeric = central_differences(f, &z, 1e-5);
    assert!(vector_relative_error(&dz, &numeric) < 1e-3);
    let fp = |p: &[f64]| {
        let dd = Decoder3D { mlp: crate::nn::Mlp { params: p.to_vec(), ..d.mlp.clone() }, splats: d.splats };
        render(&dd.decode(&Latent3D::new(z.clone()).unwrap()).unwrap(), cam, res).unwrap().data()[idx]
    };
    let np = central_differences(fp, &d.mlp.params, 1e-5);
    assert!(vector_relative_error(&dp, &np) < 1e-3);
}

#[test]
fn texture_application() {
    let scene = random_scene(11, 6);
    let geom = geometry_of(&scene);
    let gray = apply_texture(&geom, &Appearance::from_logits(&[0.0; 24]).unwrap()).unwrap();
    assert!(gray.colors.iter().all(|c| *c == [0.5; 3]));
    assert!(gray.opacities.iter().all(|o| *o == 0.5));
    assert_eq!(gray.positions, scene.positions);
    assert_eq!(gray.scales, scene.scales);
    assert_eq!(apply_texture(&geom, &extract_appearance(&scene)).unwrap(), scene);
    let short = Appearance::from_logits(&[0.0; 20]).unwrap();
    assert!(matches!(apply_texture(&geom, &short), Err(crate::Error::InvalidInput(_))));
}

#[test]
fn scene_serialization_round_trip() {
    let scene = random_scene(12, 7);
    let mut bytes = Vec::new();
    write_scene(&scene, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 12 + 7 * 8 * 8);
    assert_eq!(read_scene(bytes.as_slice()).unwrap(), scene);
    bytes[0] = b'X';
    assert!(read_scene(bytes.as_slice()).is_err());
}
