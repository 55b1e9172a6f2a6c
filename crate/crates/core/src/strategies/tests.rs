use rand::Rng;

use super::*;
use crate::imageops::{ImageRGB, MultiViewSet};
use crate::toyscene::Latent3D;
use crate::util::{gaussian_vec, rng};

#[test]
fn rf_oracle_velocity_recovers_x0() {
    let mut r = rng(1);
    for _ in 0..100 {
        let x0 = Latent3D::new(gaussian_vec(&mut r, 32, 1.0)).unwrap();
        let eps = Latent3D::new(gaussian_vec(&mut r, 32, 1.0)).unwrap();
        let t = 1.0 - r.random::<f64>();
        let x_t = rf_noise(&x0, t, &eps).unwrap();
        let v = Latent3D::new(eps.as_slice().iter().zip(x0.as_slice()).map(|(e, x)| e - x).collect()).unwrap();
        let rec = rf_predict_clean(&x_t, t, &v);
        for (a, b) in rec.as_slice().iter().zip(x0.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn ddpm_oracle_noise_recovers_x0_at_every_step() {
    let s = NoiseSchedule::cosine(DEFAULT_DDPM_STEPS).unwrap();
    let mut r = rng(2);
    for t in 0..=DEFAULT_DDPM_STEPS {
        let x0: MultiViewLatents = std::array::from_fn(|_| gaussian_vec(&mut r, 16, 1.0));
        let eps: MultiViewLatents = std::array::from_fn(|_| gaussian_vec(&mut r, 16, 1.0));
        let x_t = ddpm_noise(&x0, t, &eps, &s).unwrap();
        let rec = ddpm_predict_clean(&x_t, t, &eps, &s).unwrap();
        for v in 0..4 {
            for (a, b) in rec[v].iter().zip(&x0[v]) {
                assert!((a - b).abs() < 1e-5, "t {t}: {a} vs {b}");
            }
        }
    }
    assert!(ddpm_predict_clean(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0]], 101, &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]], &s).is_err());
}

#[test]
fn ddpm_step_zero_is_identity_and_affine() {
    let s = NoiseSchedule::cosine(10).unwrap();
    let x: MultiViewLatents = std::array::from_fn(|v| vec![v as f64, 0.5]);
    let e: MultiViewLatents = std::array::from_fn(|_| vec![3.0, -1.0]);
    assert_eq!(ddpm_predict_clean(&x, 0, &e, &s).unwrap(), x);
    let (a, b) = s.coefficients(4).unwrap();
    let out = ddpm_predict_clean(&x, 4, &e, &s).unwrap();
    for v in 0..4 {
        for i in 0..2 {
            assert_eq!(out[v][i], a * x[v][i] - b * e[v][i]);
        }
    }
}

fn smooth_views(seed: u64, res: usize) -> MultiViewSet {
    MultiViewSet::from_vec(
        (0..4)
            .map(|v| {
                let f = (seed + v) as f64 * 0.37 + 0.2;
                ImageRGB::from_fn(res, res, |y, x| {
                    let (u, w) = (x as f64 / res as f64, y as f64 / res as f64);
                    [0.5 + 0.4 * (3.0 * u + f).sin(), 0.5 + 0.4 * (2.0 * w - f).cos(), 0.5 + 0.3 * (u * w * 4.0 + f).sin()]
                })
                .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn codec_round_trips() {
    let codec = Codec2D::default();
    let views = smooth_views(3, 32);
    let lat = encode_views(&views, &codec).unwrap();
    assert!(lat.iter().all(|l| l.len() == 16 * 16 * 3));
    let back = decode_views(&lat, &codec, 32, 32).unwrap();
    for (a, b) in back.views().iter().zip(views.views()) {
        assert!(a.mean_abs_diff(b) <= 0.05, "{}", a.mean_abs_diff(b));
    }
    let flat = MultiViewSet::new(std::array::from_fn(|_| ImageRGB::filled(32, 32, [0.2, 0.6, 0.9]))).unwrap();
    let back = decode_views(&encode_views(&flat, &codec).unwrap(), &codec, 32, 32).unwrap();
    for (a, b) in back.views().iter().zip(flat.views()) {
        assert!(a.max_abs_diff(b) <= 1e-6);
    }
    assert!(codec.encode(&ImageRGB::filled(9, 8, [0.0; 3])).is_err());
}

#[test]
fn fixture_asset_renders_an_object() {
    let asset = TrainAsset::fixture(7, 32).unwrap();
    assert_eq!(asset.scene.len(), FIXTURE_SPLATS);
    for v in asset.views.views() {
        let white = v.data().iter().filter(|x| **x > 0.999).count();
        assert!(white > 0 && white < v.data().len());
    }
    let z = asset.latent(64, 7).unwrap();
    assert_eq!(z.dim(), 64);
    assert_eq!(z, asset.latent(64, 7).unwrap());
}

#[test]
fn text_embedding_is_stable_and_text_dependent() {
    let a = text_embedding("A red mug", TEXT_DIM);
    assert_eq!(a, text_embedding("a RED mug", TEXT_DIM));
    assert_ne!(a, text_embedding("a blue mug", TEXT_DIM));
    assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(text_embedding("", TEXT_DIM).iter().all(|v| *v == 0.0));
}

#[test]
fn strategy_names_parse() {
    for s in Strategy::ALL {
        assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
    }
    assert!(matches!("gan".parse::<Strategy>(), Err(crate::Error::Lookup { .. })));
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::new(Strategy::Coupled);
    c.validate().unwrap();
    c.crop_scale = (0.9, 0.5);
    assert!(c.validate().is_err());
    let mut c = TrainConfig::new(Strategy::Mvdiff);
    c.resolution = 33;
    assert!(c.validate().is_err());
    let c: std::result::Result<TrainConfig, _> = toml::from_str("strategy = \"coupled\"\nbogus = 1\n");
    assert!(c.is_err());
}

fn small(strategy: Strategy) -> TrainConfig {
    TrainConfig { steps: 3, probe_draws: 2, ..TrainConfig::new(strategy) }
}

#[test]
fn every_trainable_group_gets_gradient() {
    for strategy in Strategy::ALL {
        let trainer = Trainer::new(small(strategy)).unwrap();
        let grads = trainer.step_gradients().unwrap();
        for (name, g) in &grads {
            assert!(trainer.models.trainable.is_trainable(name));
            let mlp = trainer.models.mlp(name).unwrap();
            for (i, range) in mlp.groups().into_iter().enumerate() {
                assert!(g[range].iter().any(|v| *v != 0.0), "{strategy} {name} group {i}");
            }
        }
        assert!(!grads.is_empty());
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    for strategy in Strategy::ALL {
        let mut a = Trainer::new(small(strategy)).unwrap();
        let mut b = Trainer::new(small(strategy)).unwrap();
        a.run().unwrap();
        b.run().unwrap();
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.models, b.models);
        let mut c = Trainer::new(TrainConfig { seed: 1, ..small(strategy) }).unwrap();
        c.run().unwrap();
        assert_ne!(a.state.history, c.state.history);
    }
}

#[test]
fn checkpoint_resume_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { steps: 4, ..small(Strategy::Coupled) };
    let mut full = Trainer::new(config.clone()).unwrap();
    full.run().unwrap();

    let mut half = Trainer::new(config).unwrap();
    half.step().unwrap();
    half.step().unwrap();
    let path = dir.path().join("ckpt.json");
    half.checkpoint().save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::from_checkpoint(ck).unwrap();
    assert_eq!(resumed.state.step, 2);
    resumed.run().unwrap();
    assert_eq!(resumed.state.history, full.state.history);
    assert_eq!(resumed.models, full.models);
}

#[test]
fn frozen_components_stay_bit_identical() {
    let mut mv = Trainer::new(small(Strategy::Mvdiff)).unwrap();
    let codec = mv.models.decoder2d.clone().unwrap();
    let net = mv.models.noise_net.clone().unwrap();
    mv.run().unwrap();
    assert_eq!(mv.models.decoder2d.as_ref().unwrap(), &codec);
    assert_ne!(mv.models.noise_net.as_ref().unwrap(), &net);

    let mut ff = Trainer::new(small(Strategy::Feedforward)).unwrap();
    let geom = ff.asset.geometry();
    ff.run().unwrap();
    assert_eq!(ff.asset.geometry(), geom);
}

#[test]
fn mvdiff_rejects_trainable_decoder() {
    let mut t = Trainer::new(small(Strategy::Mvdiff)).unwrap();
    t.models.trainable.decoder2d = true;
    assert!(matches!(t.step(), Err(crate::Error::Config(_))));
}

#[test]
fn mvdiff_oracle_noise_decodes_clean_latents() {
    let t = Trainer::new(small(Strategy::Mvdiff)).unwrap();
    let codec = t.models.decoder2d.clone().unwrap();
    let x0 = t.asset.view_latents(&codec).unwrap();
    let expect = decode_views(&x0, &codec, 32, 32).unwrap();
    let mut r = rng(5);
    for step in [1, 10, 50, 90, 100] {
        let eps: MultiViewLatents = std::array::from_fn(|_| gaussian_vec(&mut r, x0[0].len(), 1.0));
        let x_t = ddpm_noise(&x0, step, &eps, &t.schedule).unwrap();
        let (_, images) = ddpm_decode_clean(&codec, &x_t, step, &eps, &t.schedule, 32).unwrap();
        for (a, b) in images.iter().zip(expect.views()) {
            assert!(a.max_abs_diff(b) <= 1e-4, "t {step}: {}", a.max_abs_diff(b));
        }
    }
}

#[test]
fn feedforward_text_conditioning_is_live() {
    let t = Trainer::new(small(Strategy::Feedforward)).unwrap();
    let g = t.asset.geometry();
    let a = predict_appearance(&t.models, &g, "a weathered bronze statue").unwrap();
    let b = predict_appearance(&t.models, &g, "a glossy plastic toy duck").unwrap();
    assert_ne!(a, b);
}

#[test]
fn divergence_is_reported_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { snapshot_dir: Some(dir.path().to_path_buf()), ..small(Strategy::Feedforward) };
    let mut t = Trainer::new(config).unwrap();
    t.models.texture_net.as_mut().unwrap().params[0] = f64::NAN;
    match t.step() {
        Err(crate::Error::Divergence { step, snapshot: Some(path), .. }) => {
            assert_eq!(step, 1);
            assert!(path.exists());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(t.state.step, 0);
}

#[test]
fn moving_average_rise_detects_increase() {
    let rec = |step, total| LossRecord { step, adapt: 0.0, matching: 0.0, total };
    let falling: Vec<_> = (0..300).map(|i| rec(i, 10.0 - i as f64 * 0.01)).collect();
    assert_eq!(moving_average_rise(&falling, 50, 100), 0.0);
    let mut bump = falling.clone();
    for r in bump.iter_mut().skip(200) {
        r.total += 1.0;
    }
    assert!(moving_average_rise(&bump, 50, 100) > 0.05);
}

#[test]
fn cosine_schedule_decays_to_zero() {
    let c = TrainConfig { steps: 100, lr: Some(0.2), ..TrainConfig::new(Strategy::Coupled) };
    assert_eq!(c.lr_at(0), 0.2);
    assert!((c.lr_at(50) - 0.1).abs() < 1e-12);
    assert!(c.lr_at(100).abs() < 1e-12);
    let flat = TrainConfig { lr_schedule: LrSchedule::Constant, ..c };
    assert_eq!(flat.lr_at(80), 0.2);
}

#[test]
fn batched_coupled_draws_average_single_draws() {
    let t = Trainer::new(small(Strategy::Coupled)).unwrap();
    let x0 = t.asset.latent(t.config.latent_dim, t.config.asset_seed).unwrap();
    let mut r = rng(8);
    let draws: Vec<_> = (0..3).map(|_| CoupledDraw::sample(&mut r, x0.dim())).collect();
    let (loss, grads) = coupled_batch_gradients(&t.models, &x0, 1, &t.objective, &draws).unwrap();
    let singles: Vec<_> = draws.iter().map(|d| coupled_gradients(&t.models, &x0, 1, &t.objective, d).unwrap()).collect();
    let mean = singles.iter().map(|s| s.0.total).sum::<f64>() / 3.0;
    assert!((loss.total - mean).abs() < 1e-12);
    for (i, (_, g)) in grads.iter().enumerate() {
        let m = (singles[0].1[i].1[5] + singles[1].1[i].1[5] + singles[2].1[i].1[5]) / 3.0;
        assert!((g[5] - m).abs() < 1e-12);
    }
}

#[test]
fn moving_average_rise_in_standard_errors() {
    let rec = |step, total| LossRecord { step, adapt: 0.0, matching: 0.0, total };
    let mut noisy: Vec<_> = (0..400).map(|i| rec(i, 1.0 + 0.01 * ((i * 7919) % 13) as f64)).collect();
    noisy[250].total += 5.0;
    assert!(moving_average_rise_se(&noisy, 50, 100) < MOVING_AVERAGE_NOISE_BAND);
    let drift: Vec<_> = (0..400).map(|i| rec(i, 1.0 + 0.01 * ((i * 7919) % 13) as f64 + if i > 200 { 0.002 * (i - 200) as f64 } else { 0.0 })).collect();
    assert!(moving_average_rise_se(&drift, 50, 100) > MOVING_AVERAGE_NOISE_BAND);
}
