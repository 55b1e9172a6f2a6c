//! Built-in invariant checks, grouped into oracle, gradient and identity
//! suites. Everything runs on small seeded inputs in a few seconds.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{EncoderConfig, Encoders, PatchTokenMap};
use crate::evalsuite::{clip_similarity, kid, kid_vectors, mv_consistency, ConsistencyConfig};
use crate::gradcheck::{central_difference_at, relative_error, vector_relative_error, ZERO_FLOOR};
use crate::imageops::{compose_four_panel, histogram_match_lab, sample_shared_crops, split_four_panel, CropSpec, ImageRGB, MultiViewSet};
use crate::losses::{adapt_loss, gram_loss, l2_loss, match_loss, realism_loss, realism_loss_grad, LossWeights};
use crate::pipeline::{build_generation_prompt, rewrite_request, TextPrompt, REALISM_TEMPLATE, REWRITE_TEMPLATE};
use crate::strategies::{ddpm_noise, ddpm_predict_clean, rf_noise, rf_predict_clean, NoiseSchedule};
use crate::toyscene::{render, render_backward, CameraPose, Latent3D, SceneGrad, ToySplatScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Gradient,
    Identity,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Oracle, Suite::Gradient, Suite::Identity];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Gradient => "gradient",
            Suite::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: &'static str,
    /// `None` on success, otherwise what went wrong.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failure.is_none())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            match &c.failure {
                None => writeln!(s, "pass {}/{}", c.suite.as_str(), c.name),
                Some(why) => writeln!(s, "FAIL {}/{}: {why}", c.suite.as_str(), c.name),
            }
            .expect("write to string");
        }
        let failed = self.checks.iter().filter(|c| c.failure.is_some()).count();
        writeln!(s, "{} checks, {failed} failed, {:.1}s", self.checks.len(), self.elapsed.as_secs_f64()).expect("write to string");
        s
    }
}

type Check = fn() -> Result<(), String>;

const CHECKS: &[(Suite, &str, Check)] = &[
    (Suite::Oracle, "match_loss_vs_similarity_matrix", match_oracle),
    (Suite::Oracle, "rectified_flow_recovery", rf_oracle),
    (Suite::Oracle, "ddpm_recovery", ddpm_oracle),
    (Suite::Oracle, "kid_hand_expansion", kid_oracle),
    (Suite::Oracle, "prompt_templates", template_oracle),
    (Suite::Gradient, "realism_loss_input_gradient", realism_gradient),
    (Suite::Gradient, "renderer_parameter_gradient", render_gradient),
    (Suite::Identity, "losses_vanish_at_identity", loss_identity),
    (Suite::Identity, "four_panel_round_trip", panel_identity),
    (Suite::Identity, "histogram_self_match", histogram_identity),
    (Suite::Identity, "metrics_on_identical_inputs", metric_identity),
];

/// Runs every check; a panicking check counts as a failure.
pub fn run_selftest() -> SelftestReport {
    let start = Instant::now();
    let checks = CHECKS
        .iter()
        .map(|&(suite, name, f)| {
            let failure = match std::panic::catch_unwind(f) {
                Ok(Ok(())) => None,
                Ok(Err(msg)) => Some(msg),
                Err(_) => Some("panicked".to_string()),
            };
            CheckResult { suite, name, failure }
        })
        .collect();
    SelftestReport { checks, elapsed: start.elapsed() }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRGB {
    ImageRGB::new(h, w, (0..h * w * 3).map(|_| rng.random_range(0.05..0.95)).collect()).expect("in range")
}

fn encoders() -> Encoders {
    Encoders::from_configs(&EncoderConfig::toy_global(1), &EncoderConfig::toy_patch(2, 32, 8)).expect("valid toy config")
}

fn exhaustive_match(syn: &PatchTokenMap, gt: &PatchTokenMap) -> f64 {
    let mut total = 0.0;
    for p in 0..syn.len() {
        let mut best = f64::NEG_INFINITY;
        for q in 0..gt.len() {
            best = best.max(syn.token(p).iter().zip(gt.token(q)).map(|(a, b)| a * b).sum());
        }
        total += best;
    }
    1.0 - total / syn.len() as f64
}

fn match_oracle() -> Result<(), String> {
    let enc = encoders();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..10 {
        let syn = random_image(&mut rng, 24, 24);
        let gt = random_image(&mut rng, 32, 32);
        let got = match_loss(&syn, &gt, enc.patch.as_ref()).map_err(|e| e.to_string())?.value;
        let want = exhaustive_match(&enc.patch.embed_patches(&syn), &enc.patch.embed_patches(&gt));
        ensure((got - want).abs() <= 1e-12, || format!("instance {k}: {got} vs {want}"))?;
    }
    Ok(())
}

fn rf_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x0 = Latent3D::new((0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).map_err(|e| e.to_string())?;
        let eps = Latent3D::new((0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).map_err(|e| e.to_string())?;
        let t: f64 = rng.random();
        let x_t = rf_noise(&x0, t, &eps).map_err(|e| e.to_string())?;
        let v = Latent3D::new(eps.as_slice().iter().zip(x0.as_slice()).map(|(e, x)| e - x).collect()).map_err(|e| e.to_string())?;
        let err = rf_predict_clean(&x_t, t, &v).as_slice().iter().zip(x0.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(err <= 1e-6, || format!("t={t}: error {err}"))?;
    }
    Ok(())
}

fn ddpm_oracle() -> Result<(), String> {
    let schedule = NoiseSchedule::cosine(100).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut draw = || std::array::from_fn(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        let (x0, eps) = (draw(), draw());
        let t = rng.random_range(1..=100);
        let x_t = ddpm_noise(&x0, t, &eps, &schedule).map_err(|e| e.to_string())?;
        let back = ddpm_predict_clean(&x_t, t, &eps, &schedule).map_err(|e| e.to_string())?;
        for v in 0..4 {
            let err = back[v].iter().zip(&x0[v]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure(err <= 1e-5, || format!("t={t}: error {err}"))?;
        }
    }
    Ok(())
}

fn kid_oracle() -> Result<(), String> {
    let a: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]];
    let b: [&[f64]; 3] = [&[1.0, 0.0], &[-1.0, 0.0], &[0.0, -1.0]];
    let v = kid_vectors(&a, &b).map_err(|e| e.to_string())?;
    ensure((v - 151.0 / 250.0).abs() < 1e-12, || format!("{v} vs 0.604"))
}

fn template_oracle() -> Result<(), String> {
    let req = rewrite_request("a wolf").map_err(|e| e.to_string())?;
    ensure(req == REWRITE_TEMPLATE.replace("{Raw_Text}", "a wolf"), || "rewrite template".into())?;
    let p = TextPrompt { raw: "a wolf".into(), rewritten: "A grey wolf".into(), realism_suffixed: String::new() };
    let g = build_generation_prompt(&p).map_err(|e| e.to_string())?;
    ensure(g == REALISM_TEMPLATE.replace("{Text_Prompt}", "A grey wolf"), || "realism template".into())
}

fn realism_gradient() -> Result<(), String> {
    let enc = encoders();
    let crops = [CropSpec::new(0, 0, 16, 16), CropSpec::new(2, 3, 12, 12)];
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let syn = random_image(&mut rng, 16, 16);
        let gt = random_image(&mut rng, 16, 16);
        let (_, grad) = realism_loss_grad(&syn, &gt, &crops, &enc, LossWeights::default()).map_err(|e| e.to_string())?;
        let f = |x: &[f64]| {
            let img = ImageRGB::new(16, 16, x.to_vec()).expect("finite");
            realism_loss(&img, &gt, &crops, &enc, LossWeights::default()).expect("valid").value
        };
        for k in 0..10 {
            let idx = (k * 73 + seed as usize * 11) % grad.len();
            let num = central_difference_at(f, syn.data(), idx, 1e-3);
            let err = relative_error(grad[idx], num, ZERO_FLOOR);
            ensure(err < 1e-3, || format!("seed {seed} index {idx}: analytic {} numeric {num}", grad[idx]))?;
        }
    }
    Ok(())
}

fn flatten(s: &ToySplatScene) -> Vec<f64> {
    (0..s.len())
        .flat_map(|k| s.positions[k].into_iter().chain(s.colors[k]).chain([s.scales[k], s.opacities[k]]))
        .collect()
}

fn flatten_grad(g: &SceneGrad) -> Vec<f64> {
    (0..g.scales.len())
        .flat_map(|k| g.positions[k].into_iter().chain(g.colors[k]).chain([g.scales[k], g.opacities[k]]))
        .collect()
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

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> ToySplatScene {
    let mut s = ToySplatScene::empty();
    for _ in 0..n {
        s.positions.push([rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)]);
        s.colors.push([rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]);
        s.scales.push(rng.random_range(0.15..0.35));
        s.opacities.push(rng.random_range(0.3..0.9));
    }
    s
}

fn render_gradient() -> Result<(), String> {
    let res = 32;
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let scene = random_scene(&mut rng, 6);
        let w: Vec<f64> = (0..res * res * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        for cam in CameraPose::all() {
            let f = |p: &[f64]| render(&unflatten(p), cam, res).expect("valid").data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let analytic = flatten_grad(&render_backward(&scene, cam, res, &w).map_err(|e| e.to_string())?);
            let point = flatten(&scene);
            let numeric: Vec<f64> = (0..point.len()).map(|i| central_difference_at(f, &point, i, 1e-5)).collect();
            let err = vector_relative_error(&analytic, &numeric);
            ensure(err < 1e-3, || format!("seed {seed} azimuth {}: {err}", cam.azimuth()))?;
        }
    }
    Ok(())
}

fn loss_identity() -> Result<(), String> {
    let enc = encoders();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..5 {
        let img = random_image(&mut rng, 32, 32);
        let crops = sample_shared_crops(rng.random(), 32, 32, 4, (0.5, 1.0)).map_err(|e| e.to_string())?;
        let vals = [
            adapt_loss(&img, &img, &crops, enc.global.as_ref()).map_err(|e| e.to_string())?.value,
            match_loss(&img, &img, enc.patch.as_ref()).map_err(|e| e.to_string())?.value,
            realism_loss(&img, &img, &crops, &enc, LossWeights::default()).map_err(|e| e.to_string())?.value,
            l2_loss(&img, &img).map_err(|e| e.to_string())?.value,
            gram_loss(&img, &img, enc.patch.as_ref()).map_err(|e| e.to_string())?.value,
        ];
        ensure(vals.iter().all(|v| v.abs() <= 1e-6), || format!("{vals:?}"))?;
    }
    Ok(())
}

fn random_views(rng: &mut ChaCha8Rng, size: usize) -> MultiViewSet {
    MultiViewSet::from_vec((0..4).map(|_| random_image(rng, size, size)).collect()).expect("four equal views")
}

fn panel_identity() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..20 {
        let views = random_views(&mut rng, 16);
        let back = split_four_panel(&compose_four_panel(&views)).map_err(|e| e.to_string())?;
        ensure(back == views, || "split(compose(v)) != v".into())?;
    }
    Ok(())
}

fn histogram_identity() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..5 {
        let img = random_image(&mut rng, 24, 24);
        let d = histogram_match_lab(&img, &img).map_err(|e| e.to_string())?.max_abs_diff(&img);
        ensure(d <= 1.0 / 255.0, || format!("max deviation {d}"))?;
    }
    Ok(())
}

fn metric_identity() -> Result<(), String> {
    let enc = Encoders::from_configs(&EncoderConfig::toy_global(11), &EncoderConfig::toy_patch(12, 56, 8)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let img = random_image(&mut rng, 32, 32);
    let same = MultiViewSet::from_vec(vec![img.clone(); 4]).map_err(|e| e.to_string())?;
    let c = mv_consistency(&same, enc.patch.as_ref(), &ConsistencyConfig::default());
    ensure((c - 1.0).abs() <= 1e-6, || format!("consistency {c}"))?;
    let s = clip_similarity(&img, &same, enc.global.as_ref());
    ensure((s - 1.0).abs() <= 1e-6, || format!("clip similarity {s}"))?;
    let feats: Vec<_> = (0..12).map(|_| enc.global.embed_global(&random_image(&mut rng, 32, 32))).collect();
    let k = kid(&feats, &feats).map_err(|e| e.to_string())?;
    ensure(k <= 1e-6, || format!("kid(X, X) = {k}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        let r = run_selftest();
        assert!(r.passed(), "{}", r.to_text());
        for suite in Suite::ALL {
            assert!(r.checks.iter().any(|c| c.suite == suite));
        }
    }
}
