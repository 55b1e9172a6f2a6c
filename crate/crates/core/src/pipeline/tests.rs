use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::*;
use crate::imageops::{bin_width, compose_four_panel, split_four_panel, CameraId, ImageRGB, MultiViewSet};

#[test]
fn rewrite_request_fills_the_template() {
    let req = rewrite_request("a wolf").unwrap();
    assert_eq!(
        req,
        "Optimize this prompt into a single, high-quality, photorealistic physical object description, focusing on realistic materials, detailed textures, and authentic visual qualities: a wolf."
    );
    assert_eq!(raw_from_request(&req), Some("a wolf"));
    assert!(matches!(rewrite_request("  "), Err(crate::Error::InvalidInput(_))));
}

#[test]
fn generation_prompt_appends_the_suffix_once() {
    let p = TextPrompt { raw: "x".into(), rewritten: "X".into(), realism_suffixed: String::new() };
    let out = build_generation_prompt(&p).unwrap();
    assert_eq!(
        out,
        "X, real camera shot, real photograph, pure white background with no shadows, complete object, high-quality photography, macro lens detail, professional studio lighting."
    );
    let again = build_generation_prompt(&TextPrompt { rewritten: out.clone(), ..p.clone() }).unwrap();
    assert_eq!(again, out);
    assert_eq!(out.matches("real camera shot").count(), 1);
    assert!(build_generation_prompt(&TextPrompt::default()).is_err());
}

#[test]
fn edit_prompt_is_constant() {
    let e = build_edit_prompt();
    assert!(e.contains("lock camera parameters (position, rotation, FOV, focal length)"));
    assert!(e.starts_with("Edit Image, photorealistic micro-refinement only"));
    assert!(e.ends_with("keep colors and lighting exactly the same."));
    assert_eq!(e, build_edit_prompt());
    assert!(!e.contains('\n'));
}

#[test]
fn mock_client_is_deterministic_and_counts_calls() {
    let a = MockClient::default();
    let b = MockClient::default();
    let req = rewrite_request("a red mug").unwrap();
    assert_eq!(a.rewrite_text(&req).unwrap(), b.rewrite_text(&req).unwrap());
    assert_eq!(a.text_to_image("p", 3).unwrap(), b.text_to_image("p", 3).unwrap());
    assert_ne!(a.text_to_image("p", 3).unwrap(), a.text_to_image("p", 4).unwrap());
    let img = a.text_to_image("q", 1).unwrap();
    assert_eq!(a.edit_image(&img, EDIT_PROMPT).unwrap(), ColorShift::default().apply(&img));
    assert_eq!(a.counts(), ClientCounts { rewrite_text: 1, text_to_image: 4, edit_image: 1 });
}

#[test]
fn procedural_object_sits_on_white() {
    let img = procedural_object(64, 5);
    assert_eq!(img.pixel(0, 0), [1.0; 3]);
    let fg = white_matte(&img, DEFAULT_MATTE_THRESHOLD).iter().filter(|m| **m).count();
    assert!(fg > 200 && fg < 64 * 64 - 200, "{fg}");
}

#[test]
fn matte_whitens_background_only() {
    let img = ImageRGB::from_fn(4, 4, |y, _| if y < 2 { [0.97, 0.99, 0.96] } else { [0.2, 0.3, 0.4] }).unwrap();
    let out = remove_background(&img, 0.95);
    assert_eq!(out.pixel(0, 0), [1.0; 3]);
    assert_eq!(out.pixel(3, 3), [0.2, 0.3, 0.4]);
}

#[test]
fn reconstructor_fits_the_front_view() {
    let img = procedural_object(64, 9);
    let rec = ToyReconstructor { steps: 200, ..ToyReconstructor::default() };
    let target = rec.target(&img).unwrap();
    let scene = rec.fit(&img, 1).unwrap();
    scene.validate().unwrap();
    let front = crate::toyscene::render(&scene, crate::toyscene::CameraPose::new(0).unwrap(), rec.resolution).unwrap();
    let init = ToyReconstructor { steps: 0, ..rec.clone() }.fit(&img, 1).unwrap();
    let front0 = crate::toyscene::render(&init, crate::toyscene::CameraPose::new(0).unwrap(), rec.resolution).unwrap();
    let l = crate::losses::l2_loss(&front, &target).unwrap().value;
    let l0 = crate::losses::l2_loss(&front0, &target).unwrap().value;
    assert!(l < 0.5 * l0, "{l} vs {l0}");
    assert_eq!(scene, rec.fit(&img, 1).unwrap());
}

#[test]
fn stages_are_ordered() {
    for w in Stage::ALL.windows(2) {
        assert!(w[0] < w[1]);
        assert_eq!(w[0].next(), Some(w[1]));
        assert_eq!(w[1].as_str().parse::<Stage>().unwrap(), w[1]);
    }
    assert_eq!(Stage::Complete.next(), None);
}

#[test]
fn manifest_rejects_duplicates_and_wrong_schema() {
    let e = ManifestEntry::from_record(&AssetRecord::new("a", "p", 0));
    let line = serde_json::to_string(&e).unwrap();
    assert_eq!(DatasetManifest::parse(&line).unwrap().records.len(), 1);
    assert!(DatasetManifest::parse(&format!("{line}\n{line}\n")).is_err());
    let bad = line.replace("\"schema_version\":1", "\"schema_version\":9");
    assert!(DatasetManifest::parse(&bad).is_err());
    assert!(DatasetManifest::parse("").unwrap().records.is_empty());
}

#[test]
fn manifest_writer_skips_known_ids() {
    let dir = tempfile::tempdir().unwrap();
    let w = ManifestWriter::new(dir.path().join(MANIFEST_FILE));
    let e = ManifestEntry::from_record(&AssetRecord::new("a", "p", 0));
    assert!(w.append(&e).unwrap());
    assert!(!w.append(&e).unwrap());
    assert_eq!(DatasetManifest::load(w.path()).unwrap().records, vec![e]);
}

struct Slow {
    inner: MockClient,
    active: AtomicU64,
}

impl GeneratorClient for Slow {
    fn rewrite_text(&self, request: &str) -> crate::Result<String> {
        self.active.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_millis(5));
        self.active.fetch_sub(1, Ordering::SeqCst);
        self.inner.rewrite_text(request)
    }
    fn text_to_image(&self, prompt: &str, seed: u64) -> crate::Result<ImageRGB> {
        self.inner.text_to_image(prompt, seed)
    }
    fn edit_image(&self, image: &ImageRGB, instruction: &str) -> crate::Result<ImageRGB> {
        self.inner.edit_image(image, instruction)
    }
    fn counts(&self) -> ClientCounts {
        self.inner.counts()
    }
}

#[test]
fn capped_client_bounds_concurrency() {
    let inner = Arc::new(Slow { inner: MockClient::default(), active: AtomicU64::new(0) });
    let capped = CappedClient::new(inner.clone(), 2).unwrap();
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| capped.rewrite_text("x").unwrap());
        }
    });
    assert!(capped.peak() <= 2 && capped.peak() >= 1);
    assert_eq!(capped.counts().rewrite_text, 8);
    assert!(CappedClient::new(inner, 0).is_err());
}

#[test]
fn replay_client_serves_recorded_responses() {
    let dir = tempfile::tempdir().unwrap();
    let req = rewrite_request("a lamp").unwrap();
    std::fs::create_dir_all(dir.path().join("rewrite")).unwrap();
    std::fs::write(dir.path().join("rewrite").join(format!("{}.txt", replay_key("rewrite", &[req.as_bytes()]))), "a brass lamp\n")
        .unwrap();
    let img = procedural_object(16, 2);
    std::fs::create_dir_all(dir.path().join("text_to_image")).unwrap();
    let key = replay_key("text_to_image", &[b"p", &7u64.to_le_bytes()]);
    img.save_png(dir.path().join("text_to_image").join(format!("{key}.png"))).unwrap();

    let c = ReplayClient::new(dir.path()).unwrap();
    assert_eq!(c.rewrite_text(&req).unwrap(), "a brass lamp");
    assert_eq!(c.text_to_image("p", 7).unwrap(), img.quantized());
    assert!(matches!(c.text_to_image("p", 8), Err(crate::Error::Client(_))));
    assert!(matches!(c.edit_image(&img, "x"), Err(crate::Error::Client(_))));
    assert_eq!(c.counts().total(), 4);
}

#[test]
fn client_settings_never_print_the_credential() {
    let s = ClientSettings::default().with_credential("sk-secret");
    assert!(!format!("{s:?}").contains("sk-secret"));
    assert!(s.has_credential());
    assert!(ClientSettings::default().with_mode(ClientMode::Live).build(MockClient::default()).is_err());
}

fn small_config() -> PipelineConfig {
    PipelineConfig { reconstructor: ToyReconstructor { steps: 60, ..ToyReconstructor::default() }, ..PipelineConfig::default() }
}

fn context_parts() -> (MockClient, ToyReconstructor, PipelineConfig) {
    let config = small_config();
    (MockClient::default(), config.reconstructor.clone(), config)
}

#[test]
fn fixture_record_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let (client, source, config) = context_parts();
    let ctx = PipelineContext::new(&client, &source, &config).unwrap();
    let mut rec = AssetRecord::new("r0", "a ceramic teapot", 3);
    let rdir = dir.path().join("r0");
    run_record(&mut rec, &rdir, &ctx).unwrap();
    assert_eq!(rec.stage, Stage::Complete);
    assert!(rec.audit(&rdir).is_empty(), "{:?}", rec.audit(&rdir));
    assert_eq!(AssetRecord::load(&rdir).unwrap(), rec);
    assert_eq!(client.counts(), ClientCounts { rewrite_text: 1, text_to_image: 1, edit_image: 1 });

    let stats = rec.stats.unwrap();
    for c in 0..3 {
        assert!(stats.lab_w1_after[c] <= stats.lab_w1_before[c] + 1e-12, "{stats:?}");
        assert!(stats.lab_w1_after[c] <= 2.0 * bin_width(c), "{stats:?}");
    }
    let panel = ImageRGB::load_png(rdir.join(rec.enhanced_panel.as_ref().unwrap())).unwrap();
    let enhanced = MultiViewSet::from_vec(rec.enhanced_views.iter().map(|p| ImageRGB::load_png(rdir.join(p)).unwrap()).collect()).unwrap();
    assert_eq!(compose_four_panel(&enhanced), panel);
    assert_eq!(split_four_panel(&panel).unwrap(), enhanced);
    assert!(std::fs::read_to_string(rdir.join(STATS_FILE)).unwrap().starts_with("consistency_rendered "));
}

struct FailingEdit(MockClient);

impl GeneratorClient for FailingEdit {
    fn rewrite_text(&self, request: &str) -> crate::Result<String> {
        self.0.rewrite_text(request)
    }
    fn text_to_image(&self, prompt: &str, seed: u64) -> crate::Result<ImageRGB> {
        self.0.text_to_image(prompt, seed)
    }
    fn edit_image(&self, _image: &ImageRGB, _instruction: &str) -> crate::Result<ImageRGB> {
        Err(crate::Error::Client("service unavailable".into()))
    }
    fn counts(&self) -> ClientCounts {
        self.0.counts()
    }
}

#[test]
fn failed_stage_keeps_prior_state_and_resume_skips_done_work() {
    let dir = tempfile::tempdir().unwrap();
    let (_, source, config) = context_parts();
    let failing = FailingEdit(MockClient::default());
    let ctx = PipelineContext::new(&failing, &source, &config).unwrap();
    let rdir = dir.path().join("r1");
    let mut rec = AssetRecord::new("r1", "a wooden chair", 5);
    match run_record(&mut rec, &rdir, &ctx) {
        Err(crate::Error::Pipeline { stage, retriable, .. }) => {
            assert_eq!(stage, "enhanced");
            assert!(retriable);
        }
        other => panic!("expected a pipeline error, got {other:?}"),
    }
    assert_eq!(rec.stage, Stage::Rendered);
    let on_disk = AssetRecord::load(&rdir).unwrap();
    assert_eq!(on_disk.stage, Stage::Rendered);
    assert!(on_disk.audit(&rdir).is_empty());

    let client = MockClient::default();
    let ctx = PipelineContext::new(&client, &source, &config).unwrap();
    let mut resumed = AssetRecord::load(&rdir).unwrap();
    run_record(&mut resumed, &rdir, &ctx).unwrap();
    assert_eq!(client.counts(), ClientCounts { rewrite_text: 0, text_to_image: 0, edit_image: 1 });
    assert_eq!(resumed.stage, Stage::Complete);
}

fn write_views(dir: &std::path::Path, sub: &str, views: &MultiViewSet, skip: Option<CameraId>) {
    std::fs::create_dir_all(dir.join(sub)).unwrap();
    for (cam, v) in CameraId::ALL.iter().zip(views.views()) {
        if Some(*cam) != skip {
            v.save_png(dir.join(sub).join(format!("{cam}.png"))).unwrap();
        }
    }
}

fn sample_views(size: usize, seed: u64) -> MultiViewSet {
    MultiViewSet::from_vec((0..4).map(|k| procedural_object(size, seed + k)).collect()).unwrap()
}

#[test]
fn import_loads_both_view_sets() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let asset = src.path().join("ext-1");
    let views = sample_views(32, 1);
    write_views(&asset, RENDERED_DIR, &views, None);
    write_views(&asset, ENHANCED_DIR, &sample_views(32, 10), None);
    std::fs::write(asset.join("prompt.txt"), "an old kettle\n").unwrap();
    let rec = import_external_views(&asset, out.path()).unwrap();
    assert_eq!(rec.stage, Stage::Enhanced);
    assert_eq!(rec.origin, Origin::Imported);
    assert_eq!(rec.prompt.raw, "an old kettle");
    assert!(rec.audit(&out.path().join("ext-1")).is_empty());

    let (client, source, config) = context_parts();
    let ctx = PipelineContext::new(&client, &source, &config).unwrap();
    let mut rec = rec;
    run_record(&mut rec, &out.path().join("ext-1"), &ctx).unwrap();
    assert_eq!(rec.stage, Stage::Complete);
    assert_eq!(client.counts().total(), 0);
}

#[test]
fn import_names_the_missing_camera() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let asset = src.path().join("ext-2");
    write_views(&asset, RENDERED_DIR, &sample_views(32, 1), None);
    write_views(&asset, ENHANCED_DIR, &sample_views(32, 2), Some(CameraId::Back));
    match import_external_views(&asset, out.path()) {
        Err(crate::Error::Ingestion { missing }) => {
            assert_eq!(missing.len(), 1);
            assert!(missing[0].contains("back"), "{missing:?}");
        }
        other => panic!("expected ingestion error, got {other:?}"),
    }
}

#[test]
fn import_rejects_mismatched_sizes() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let asset = src.path().join("ext-3");
    write_views(&asset, RENDERED_DIR, &sample_views(32, 1), None);
    write_views(&asset, ENHANCED_DIR, &sample_views(24, 2), None);
    assert!(matches!(import_external_views(&asset, out.path()), Err(crate::Error::InvalidInput(_))));
}

#[test]
fn prompt_file_skips_blank_and_comment_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("prompts.txt");
    std::fs::write(&p, "# objects\na red mug\n\n  a wooden chair  \n").unwrap();
    assert_eq!(read_prompts(&p).unwrap(), vec!["a red mug".to_string(), "a wooden chair".to_string()]);
    assert!(read_prompts(&dir.path().join("missing.txt")).is_err());
}
