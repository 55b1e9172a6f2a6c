use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{CappedClient, ColorShift, GeneratorClient};
use super::manifest::{ManifestEntry, ManifestWriter, MANIFEST_FILE};
use super::reconstruct::{SceneSource, ToyReconstructor};
use super::record::{
    load_views, save_png_atomic, view_paths, write_atomic, AlignmentStats, AssetRecord, Origin, Stage, ALIGNED_DIR,
    ENHANCED_DIR, PANEL_FILE, RENDERED_DIR, SCENE_FILE, SEED_IMAGE, STATS_FILE,
};
use super::templates::{build_edit_prompt, build_generation_prompt, rewrite_request};
use crate::encoders::{EncoderConfig, EncoderRegistry, PatchEncoder};
use crate::error::{Error, Result};
use crate::evalsuite::{mv_consistency, ConsistencyConfig};
use crate::imageops::{compose_four_panel, histogram_match_lab, lab_wasserstein, split_four_panel, CameraId, ImageRGB, MultiViewSet};
use crate::toyscene::{load_scene, render_views, write_scene};
use crate::util::{fnv1a, mix_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Side of the rendered views.
    pub resolution: usize,
    /// Side of the mock client's generated images.
    pub mock_image_size: usize,
    pub mock_shift: ColorShift,
    pub reconstructor: ToyReconstructor,
    pub workers: usize,
    pub max_concurrent_requests: usize,
    /// Records whose aligned-view consistency falls below this are left out of
    /// the manifest. `None` keeps all.
    pub min_consistency: Option<f64>,
    pub consistency_encoder: EncoderConfig,
    pub consistency: ConsistencyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 32,
            mock_image_size: 64,
            mock_shift: ColorShift::default(),
            reconstructor: ToyReconstructor::default(),
            workers: 4,
            max_concurrent_requests: 4,
            min_consistency: None,
            consistency_encoder: EncoderConfig::toy_patch(12, 56, 8),
            consistency: ConsistencyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.reconstructor.validate()?;
        self.consistency_encoder.validate()?;
        if self.resolution < crate::toyscene::MIN_RESOLUTION || self.resolution % 2 != 0 {
            return Err(Error::config("pipeline resolution must be even and at least 8"));
        }
        if self.mock_image_size == 0 || self.workers == 0 || self.max_concurrent_requests == 0 {
            return Err(Error::config("mock_image_size, workers and max_concurrent_requests must be positive"));
        }
        Ok(())
    }
}

/// Everything a stage needs besides the record itself.
pub struct PipelineContext<'a> {
    pub client: &'a dyn GeneratorClient,
    pub scene_source: &'a dyn SceneSource,
    pub config: &'a PipelineConfig,
    pub patch_encoder: Arc<dyn PatchEncoder>,
}

impl<'a> PipelineContext<'a> {
    pub fn new(client: &'a dyn GeneratorClient, scene_source: &'a dyn SceneSource, config: &'a PipelineConfig) -> Result<Self> {
        config.validate()?;
        let patch_encoder = EncoderRegistry::default().patch(&config.consistency_encoder)?;
        Ok(Self { client, scene_source, config, patch_encoder })
    }
}

/// Stable id from the prompt position and text.
pub fn record_id(index: usize, raw: &str) -> String {
    format!("{index:04}-{:08x}", fnv1a(raw.as_bytes()) as u32)
}

/// Non-empty, non-comment lines of a prompt list.
pub fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("prompt file {}: {e}", path.display()))))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn stage_error(record: &AssetRecord, stage: Stage, err: Error) -> Error {
    let retriable = matches!(err, Error::Client(_) | Error::Io(_));
    Error::Pipeline { record: record.id.clone(), stage: stage.to_string(), message: err.to_string(), retriable }
}

fn mean_lab_w1(a: &MultiViewSet, b: &MultiViewSet) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (x, y) in a.views().iter().zip(b.views()) {
        let w = lab_wasserstein(x, y);
        for c in 0..3 {
            out[c] += w[c] / 4.0;
        }
    }
    out
}

fn save_views(dir: &Path, sub: &str, views: &MultiViewSet) -> Result<Vec<PathBuf>> {
    let paths = view_paths(sub);
    for (p, v) in paths.iter().zip(views.views()) {
        save_png_atomic(v, &dir.join(p))?;
    }
    Ok(paths)
}

/// Performs the stage after `record.stage`, writing its artifacts before the
/// record file that marks the advance.
fn advance(record: &mut AssetRecord, dir: &Path, ctx: &PipelineContext) -> Result<()> {
    let next = record.stage.next().ok_or_else(|| Error::invalid("record is already complete"))?;
    let mut r = record.clone();
    match next {
        Stage::Pending => unreachable!("pending is never a successor"),
        Stage::Prompted => {
            let request = rewrite_request(&r.prompt.raw)?;
            r.prompt.rewritten = ctx.client.rewrite_text(&request)?;
            r.prompt.realism_suffixed = build_generation_prompt(&r.prompt)?;
        }
        Stage::Imaged => {
            let image = ctx.client.text_to_image(&r.prompt.realism_suffixed, r.seed)?;
            save_png_atomic(&image, &dir.join(SEED_IMAGE))?;
            r.seed_image = Some(PathBuf::from(SEED_IMAGE));
        }
        Stage::Reconstructed => {
            let seed_image = ImageRGB::load_png(dir.join(SEED_IMAGE))?;
            let scene = ctx.scene_source.obtain(&r.id, &seed_image, mix_seed(r.seed, 0x5ce4e))?;
            let mut bytes = Vec::new();
            write_scene(&scene, &mut bytes)?;
            write_atomic(&dir.join(SCENE_FILE), &bytes)?;
            r.scene = Some(PathBuf::from(SCENE_FILE));
        }
        Stage::Rendered => {
            let scene = load_scene(&dir.join(SCENE_FILE))?;
            r.rendered_views = save_views(dir, RENDERED_DIR, &render_views(&scene, ctx.config.resolution)?)?;
        }
        Stage::Enhanced => {
            let rendered = load_views(dir, &r.rendered_views)?;
            let panel = compose_four_panel(&rendered);
            let edited = ctx.client.edit_image(&panel, build_edit_prompt())?;
            if edited.dims() != panel.dims() {
                return Err(Error::invalid(format!(
                    "edited panel is {}x{}, expected {}x{}",
                    edited.height(),
                    edited.width(),
                    panel.height(),
                    panel.width()
                )));
            }
            let edited = edited.quantized();
            let panel_path = Path::new(ENHANCED_DIR).join(PANEL_FILE);
            save_png_atomic(&edited, &dir.join(&panel_path))?;
            r.enhanced_views = save_views(dir, ENHANCED_DIR, &split_four_panel(&edited)?)?;
            r.enhanced_panel = Some(panel_path);
        }
        Stage::Aligned => {
            let rendered = load_views(dir, &r.rendered_views)?;
            let enhanced = load_views(dir, &r.enhanced_views)?;
            let aligned = MultiViewSet::from_vec(
                enhanced
                    .views()
                    .par_iter()
                    .zip(rendered.views())
                    .map(|(e, v)| histogram_match_lab(e, v))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            r.aligned_views = save_views(dir, ALIGNED_DIR, &aligned)?;
            let aligned = load_views(dir, &r.aligned_views)?;
            let consistency = |v: &MultiViewSet| mv_consistency(v, ctx.patch_encoder.as_ref(), &ctx.config.consistency);
            r.stats = Some(AlignmentStats {
                consistency_rendered: consistency(&rendered),
                consistency_enhanced: consistency(&enhanced),
                consistency_aligned: consistency(&aligned),
                lab_w1_before: mean_lab_w1(&enhanced, &rendered),
                lab_w1_after: mean_lab_w1(&aligned, &rendered),
            });
        }
        Stage::Complete => {
            let stats = r.stats.ok_or_else(|| Error::invalid("alignment stats missing"))?;
            write_atomic(&dir.join(STATS_FILE), stats.to_text().as_bytes())?;
        }
    }
    r.stage = next;
    r.save(dir)?;
    *record = r;
    Ok(())
}

/// Advances `record` (stored in `dir`) until it reaches `until`. A failing
/// stage leaves the record file and earlier artifacts as they were.
pub fn run_record_until(record: &mut AssetRecord, dir: &Path, ctx: &PipelineContext, until: Stage) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    while record.stage < until {
        let next = record.stage.next().expect("below until");
        advance(record, dir, ctx).map_err(|e| stage_error(record, next, e))?;
    }
    Ok(())
}

pub fn run_record(record: &mut AssetRecord, dir: &Path, ctx: &PipelineContext) -> Result<()> {
    run_record_until(record, dir, ctx, Stage::Complete)
}

/// The record stored under `root/<id>`, or a fresh one.
pub fn open_record(root: &Path, index: usize, raw: &str, seed: u64) -> Result<AssetRecord> {
    let id = record_id(index, raw);
    let dir = root.join(&id);
    if dir.join(super::record::RECORD_FILE).exists() {
        let r = AssetRecord::load(&dir)?;
        if r.prompt.raw != raw {
            return Err(Error::invalid(format!("record {id} holds a different prompt")));
        }
        return Ok(r);
    }
    Ok(AssetRecord::new(id, raw, mix_seed(seed, index as u64)))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineSummary {
    pub completed: Vec<String>,
    pub failed: Vec<(String, String)>,
    /// Complete but below `min_consistency`.
    pub filtered: Vec<String>,
    pub appended: usize,
}

/// Runs every prompt to `until` with one worker per record, then appends the
/// completed records to `root/manifest.jsonl` in prompt order.
pub fn run_pipeline(
    prompts: &[String],
    root: &Path,
    client: Arc<dyn GeneratorClient>,
    scene_source: &dyn SceneSource,
    config: &PipelineConfig,
    until: Stage,
) -> Result<PipelineSummary> {
    config.validate()?;
    std::fs::create_dir_all(root)?;
    let capped = CappedClient::new(client, config.max_concurrent_requests)?;
    let ctx = PipelineContext::new(&capped, scene_source, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let results: Vec<(String, Result<AssetRecord>)> = pool.install(|| {
        prompts
            .par_iter()
            .enumerate()
            .map(|(i, raw)| {
                let id = record_id(i, raw);
                let out = open_record(root, i, raw, config.seed).and_then(|mut rec| {
                    let dir = root.join(&rec.id);
                    run_record_until(&mut rec, &dir, &ctx, until)?;
                    Ok(rec)
                });
                (id, out)
            })
            .collect()
    });
    let writer = ManifestWriter::new(root.join(MANIFEST_FILE));
    let mut summary = PipelineSummary::default();
    for (id, res) in results {
        match res {
            Ok(rec) if rec.stage == Stage::Complete => {
                let consistency = rec.stats.map(|s| s.consistency_aligned).unwrap_or(f64::NAN);
                if config.min_consistency.is_some_and(|t| !(consistency >= t)) {
                    summary.filtered.push(id);
                    continue;
                }
                if writer.append(&ManifestEntry::from_record(&rec))? {
                    summary.appended += 1;
                }
                summary.completed.push(id);
            }
            Ok(_) => {}
            Err(e) => summary.failed.push((id, e.to_string())),
        }
    }
    Ok(summary)
}

/// Ingests pre-made rendered and enhanced views from `dir`
/// (`views/<camera>.png`, `enhanced/<camera>.png`, optional `prompt.txt`) into
/// `root/<dir name>`, as a record at stage `enhanced`.
pub fn import_external_views(dir: &Path, root: &Path) -> Result<AssetRecord> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("cannot derive a record id from {}", dir.display())))?
        .to_string();
    let mut missing = Vec::new();
    for sub in [RENDERED_DIR, ENHANCED_DIR] {
        for cam in CameraId::ALL {
            let p = Path::new(sub).join(format!("{cam}.png"));
            if !dir.join(&p).is_file() {
                missing.push(format!("{} ({cam})", p.display()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Ingestion { missing });
    }
    let rendered = load_views(dir, &view_paths(RENDERED_DIR))?;
    let enhanced = load_views(dir, &view_paths(ENHANCED_DIR))?;
    if rendered.dims() != enhanced.dims() {
        return Err(Error::invalid("rendered and enhanced views differ in size"));
    }
    let prompt = std::fs::read_to_string(dir.join("prompt.txt")).map(|s| s.trim().to_string()).unwrap_or_else(|_| id.clone());
    let out = root.join(&id);
    let mut record = AssetRecord::new(&id, prompt, fnv1a(id.as_bytes()));
    record.origin = Origin::Imported;
    record.rendered_views = save_views(&out, RENDERED_DIR, &rendered)?;
    record.enhanced_views = save_views(&out, ENHANCED_DIR, &enhanced)?;
    record.stage = Stage::Enhanced;
    record.save(&out)?;
    Ok(record)
}
