//! Multi-view dataset construction: prompt rewriting, image generation, a 3D
//! scene per image, four orthogonal renders, a four-panel edit and per-view
//! Lab histogram alignment back to the renders.
//!
//! External services sit behind [`GeneratorClient`]; [`MockClient`] makes the
//! whole flow run offline and deterministically. Every stage writes its
//! artifacts before the record file advances, so an interrupted run resumes
//! where it stopped and produces the same bytes.

mod client;
mod manifest;
mod reconstruct;
mod record;
mod run;
mod templates;

pub use client::{
    procedural_object, replay_key, CappedClient, ClientCounts, ClientMode, ClientSettings, ColorShift, GeneratorClient,
    MockClient, ReplayClient, ENV_CREDENTIAL, ENV_ENDPOINT, ENV_MODE,
};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestWriter, MANIFEST_FILE, SCHEMA_VERSION};
pub use reconstruct::{remove_background, white_matte, SceneImporter, SceneSource, ToyReconstructor, DEFAULT_MATTE_THRESHOLD};
pub use record::{
    view_paths, AlignmentStats, AssetRecord, Origin, Stage, ALIGNED_DIR, ENHANCED_DIR, PANEL_FILE, RECORD_FILE,
    RENDERED_DIR, SCENE_FILE, SEED_IMAGE, STATS_FILE,
};
pub use run::{
    import_external_views, open_record, read_prompts, record_id, run_pipeline, run_record, run_record_until,
    PipelineConfig, PipelineContext, PipelineSummary,
};
pub use templates::{
    build_edit_prompt, build_generation_prompt, raw_from_request, rewrite_request, TextPrompt, EDIT_PROMPT,
    REALISM_TEMPLATE, REWRITE_TEMPLATE,
};

#[cfg(test)]
mod tests;
