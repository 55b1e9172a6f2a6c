use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::encoders::EncoderRegistry;
use crate::pipeline::{run_pipeline, MockClient, PipelineConfig, Stage, ToyReconstructor, MANIFEST_FILE};

fn noise_views(seed: u64, size: usize) -> MultiViewSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MultiViewSet::from_vec(
        (0..4).map(|_| ImageRGB::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()).collect(),
    )
    .unwrap()
}

fn patch_encoder() -> Arc<dyn PatchEncoder> {
    EncoderRegistry::default().patch(&EvalConfig::default().patch_encoder).unwrap()
}

fn unit(v: &[f64]) -> GlobalEmbedding {
    let n = dot(v, v).sqrt();
    GlobalEmbedding::new(v.iter().map(|x| x / n).collect()).unwrap()
}

#[test]
fn kid_matches_hand_expansion() {
    let a: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]];
    let b: [&[f64]; 3] = [&[1.0, 0.0], &[-1.0, 0.0], &[0.0, -1.0]];
    // expanded by hand in exact arithmetic
    assert!((kid_vectors(&a, &b).unwrap() - 151.0 / 250.0).abs() < 1e-12);
    assert!((kid_vectors(&b, &a).unwrap() - 151.0 / 250.0).abs() < 1e-12);
}

#[test]
fn kid_rejects_small_or_ragged_sets() {
    let one: [&[f64]; 1] = [&[1.0]];
    let two: [&[f64]; 2] = [&[1.0], &[0.5]];
    let ragged: [&[f64]; 2] = [&[1.0], &[0.5, 0.1]];
    assert!(kid_vectors(&one, &two).is_err());
    assert!(kid_vectors(&two, &ragged).is_err());
}

#[test]
fn kid_of_a_set_with_itself_is_not_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<GlobalEmbedding> =
        (0..20).map(|_| unit(&(0..8).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>())).collect();
    let v = kid(&xs, &xs).unwrap();
    assert!(v <= 1e-6, "{v}");
    // with identical sets the estimator reduces to 2(U - mean diagonal)/m
    let m = xs.len() as f64;
    let (mut off, mut diag) = (0.0, 0.0);
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in xs.iter().enumerate() {
            let k = polynomial_kernel(x.as_slice(), y.as_slice());
            if i == j {
                diag += k;
            } else {
                off += k;
            }
        }
    }
    let expected = 2.0 * (off / (m * (m - 1.0)) - diag / m) / m;
    assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
}

#[test]
fn kid_separates_shifted_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cluster = |centre: f64| -> Vec<GlobalEmbedding> {
        (0..30)
            .map(|_| {
                let v: Vec<f64> = (0..8).map(|k| if k == 0 { centre } else { 0.0 } + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                unit(&v)
            })
            .collect()
    };
    let a = cluster(1.0);
    let b = cluster(-1.0);
    assert!(kid(&a, &b).unwrap() > 0.1);
    assert!((kid(&a, &b).unwrap() - kid(&b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn identical_views_are_fully_consistent() {
    let v = crate::pipeline::procedural_object(32, 3);
    let views = MultiViewSet::from_vec(vec![v.clone(), v.clone(), v.clone(), v]).unwrap();
    let enc = patch_encoder();
    for pairs in [ViewPairs::Adjacent, ViewPairs::All] {
        let c = mv_consistency(&views, enc.as_ref(), &ConsistencyConfig { pairs });
        assert!((c - 1.0).abs() < 1e-9, "{c}");
    }
}

#[test]
fn noise_views_fall_below_the_null_threshold() {
    let enc = patch_encoder();
    let scores: Vec<f64> =
        (0..100).map(|k| mv_consistency(&noise_views(k, 32), enc.as_ref(), &ConsistencyConfig::default())).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(max < CONSISTENCY_NULL_THRESHOLD, "{max}");
}

#[test]
fn consistency_is_invariant_to_reversing_the_ring() {
    let enc = patch_encoder();
    let views = noise_views(7, 32);
    let v = views.views();
    let reversed = MultiViewSet::from_vec(vec![v[3].clone(), v[2].clone(), v[1].clone(), v[0].clone()]).unwrap();
    let c = ConsistencyConfig::default();
    assert!((mv_consistency(&views, enc.as_ref(), &c) - mv_consistency(&reversed, enc.as_ref(), &c)).abs() < 1e-12);
}

#[test]
fn mutual_neighbours_are_symmetric() {
    let enc = patch_encoder();
    let views = noise_views(2, 32);
    let a = enc.embed_patches(&views.views()[0]);
    let b = enc.embed_patches(&views.views()[1]);
    let ab = mutual_nearest_neighbors(&a, &b);
    let mut ba: Vec<(usize, usize, f64)> = mutual_nearest_neighbors(&b, &a).into_iter().map(|(j, i, s)| (i, j, s)).collect();
    ba.sort_by_key(|x| x.0);
    assert_eq!(ab, ba);
    assert!(!ab.is_empty());
}

#[test]
fn clip_similarity_of_an_image_with_itself_is_one() {
    let enc = EncoderRegistry::default().global(&EvalConfig::default().global_encoder).unwrap();
    let v = crate::pipeline::procedural_object(32, 1);
    let views = MultiViewSet::from_vec(vec![v.clone(), v.clone(), v.clone(), v.clone()]).unwrap();
    assert!((clip_similarity(&v, &views, enc.as_ref()) - 1.0).abs() < 1e-12);
    let other = noise_views(1, 32);
    let e = enc.embed_global(&v);
    let hand = other.views().iter().map(|w| dot(e.as_slice(), enc.embed_global(w).as_slice())).sum::<f64>() / 4.0;
    assert!((clip_similarity(&v, &other, enc.as_ref()) - hand).abs() < 1e-12);
}

#[test]
fn empty_manifest_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = build_report(&DatasetManifest::empty(), dir.path(), &EvalConfig::default()).unwrap();
    assert!(r.rows.is_empty());
    assert_eq!(r.kid, None);
    r.write(dir.path()).unwrap();
    assert!(std::fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("kid n/a"));
}

#[test]
fn report_covers_a_small_dataset_and_isolates_a_bad_record() {
    let root = tempfile::tempdir().unwrap();
    let prompts: Vec<String> = (0..12).map(|k| format!("object number {k}")).collect();
    let config = PipelineConfig { reconstructor: ToyReconstructor { steps: 40, ..ToyReconstructor::default() }, ..PipelineConfig::default() };
    let summary = run_pipeline(&prompts, root.path(), Arc::new(MockClient::default()), &config.reconstructor, &config, Stage::Complete).unwrap();
    assert_eq!(summary.appended, 12);
    let manifest = DatasetManifest::load(&root.path().join(MANIFEST_FILE)).unwrap();

    let report = build_report(&manifest, root.path(), &EvalConfig::default()).unwrap();
    assert_eq!(report.counts.evaluated, 12);
    assert!(report.kid.is_some());
    for row in &report.rows {
        assert!(row.clip_sim.unwrap().is_finite() && row.consistency.unwrap() <= 1.0 + 1e-12);
    }

    let broken = &manifest.records[3];
    std::fs::remove_file(root.path().join(&broken.dir).join("aligned").join("left.png")).unwrap();
    let report = build_report(&manifest, root.path(), &EvalConfig::default()).unwrap();
    assert_eq!(report.counts.failed, 1);
    assert_eq!(report.counts.evaluated, 11);
    let bad: Vec<_> = report.errors().collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].asset_id, broken.id);
    assert!(bad[0].clip_sim.is_none());
    let out = root.path().join("eval");
    report.write(&out).unwrap();
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
}
