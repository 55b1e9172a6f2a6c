use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::templates::TextPrompt;
use crate::error::{Error, Result};
use crate::imageops::{CameraId, ImageRGB, MultiViewSet};

pub const RECORD_FILE: &str = "record.json";
pub const SEED_IMAGE: &str = "seed.png";
pub const SCENE_FILE: &str = "scene.bin";
pub const STATS_FILE: &str = "stats.txt";
pub const RENDERED_DIR: &str = "views";
pub const ENHANCED_DIR: &str = "enhanced";
pub const ALIGNED_DIR: &str = "aligned";
pub const PANEL_FILE: &str = "panel.png";

/// Pipeline progress of a record. `Pending` precedes the first stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pending,
    Prompted,
    Imaged,
    Reconstructed,
    Rendered,
    Enhanced,
    Aligned,
    Complete,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Pending,
        Stage::Prompted,
        Stage::Imaged,
        Stage::Reconstructed,
        Stage::Rendered,
        Stage::Enhanced,
        Stage::Aligned,
        Stage::Complete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pending => "pending",
            Stage::Prompted => "prompted",
            Stage::Imaged => "imaged",
            Stage::Reconstructed => "reconstructed",
            Stage::Rendered => "rendered",
            Stage::Enhanced => "enhanced",
            Stage::Aligned => "aligned",
            Stage::Complete => "complete",
        }
    }

    pub fn next(self) -> Option<Stage> {
        Stage::ALL.get(self as usize + 1).copied()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup { kind: "stage", name: s.to_string() })
    }
}

/// Generated by the pipeline from a prompt, or ingested from pre-made views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Generated,
    Imported,
}

/// Numbers recorded by the alignment stage. Lab distances are per channel,
/// averaged over the four views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub consistency_rendered: f64,
    pub consistency_enhanced: f64,
    pub consistency_aligned: f64,
    pub lab_w1_before: [f64; 3],
    pub lab_w1_after: [f64; 3],
}

impl AlignmentStats {
    pub fn to_text(&self) -> String {
        let lab = |v: [f64; 3]| format!("{:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        format!(
            "consistency_rendered {:.6}\nconsistency_enhanced {:.6}\nconsistency_aligned {:.6}\nlab_w1_before {}\nlab_w1_after {}\n",
            self.consistency_rendered,
            self.consistency_enhanced,
            self.consistency_aligned,
            lab(self.lab_w1_before),
            lab(self.lab_w1_after),
        )
    }
}

/// One dataset entry. All paths are relative to the record directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetRecord {
    pub id: String,
    pub seed: u64,
    pub origin: Origin,
    pub prompt: TextPrompt,
    pub stage: Stage,
    pub seed_image: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub rendered_views: Vec<PathBuf>,
    pub enhanced_panel: Option<PathBuf>,
    pub enhanced_views: Vec<PathBuf>,
    pub aligned_views: Vec<PathBuf>,
    pub stats: Option<AlignmentStats>,
}

/// `<dir>/<camera>.png` for the four cameras.
pub fn view_paths(dir: &str) -> Vec<PathBuf> {
    CameraId::ALL.iter().map(|c| Path::new(dir).join(format!("{c}.png"))).collect()
}

impl AssetRecord {
    pub fn new(id: impl Into<String>, raw_prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            origin: Origin::Generated,
            prompt: TextPrompt { raw: raw_prompt.into(), ..TextPrompt::default() },
            stage: Stage::Pending,
            seed_image: None,
            scene: None,
            rendered_views: Vec::new(),
            enhanced_panel: None,
            enhanced_views: Vec::new(),
            aligned_views: Vec::new(),
            stats: None,
        }
    }

    pub fn load(record_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(record_dir.join(RECORD_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, record_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&record_dir.join(RECORD_FILE), text.as_bytes())
    }

    /// Paths a record at its current stage must have on disk.
    pub fn required_paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let at = |s: Stage| self.stage >= s;
        if self.origin == Origin::Generated {
            if at(Stage::Imaged) {
                out.push(PathBuf::from(SEED_IMAGE));
            }
            if at(Stage::Reconstructed) {
                out.push(PathBuf::from(SCENE_FILE));
            }
        }
        if at(Stage::Rendered) {
            out.extend(view_paths(RENDERED_DIR));
        }
        if at(Stage::Enhanced) {
            out.extend(view_paths(ENHANCED_DIR));
            if self.origin == Origin::Generated {
                out.push(Path::new(ENHANCED_DIR).join(PANEL_FILE));
            }
        }
        if at(Stage::Aligned) {
            out.extend(view_paths(ALIGNED_DIR));
        }
        if at(Stage::Complete) {
            out.push(PathBuf::from(STATS_FILE));
        }
        out
    }

    /// Missing artifacts and field inconsistencies; empty when the record is sound.
    pub fn audit(&self, record_dir: &Path) -> Vec<String> {
        let mut problems: Vec<String> = self
            .required_paths()
            .into_iter()
            .filter(|p| !record_dir.join(p).is_file())
            .map(|p| format!("missing {}", p.display()))
            .collect();
        if self.stage >= Stage::Prompted && self.origin == Origin::Generated && self.prompt.rewritten.is_empty() {
            problems.push("prompt not rewritten".into());
        }
        if self.stage >= Stage::Aligned && self.stats.is_none() {
            problems.push("alignment stats missing".into());
        }
        problems
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub(crate) fn save_png_atomic(image: &ImageRGB, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = tmp_path(path);
    image.save_png(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn load_views(record_dir: &Path, paths: &[PathBuf]) -> Result<MultiViewSet> {
    MultiViewSet::from_vec(paths.iter().map(|p| ImageRGB::load_png(record_dir.join(p))).collect::<Result<Vec<_>>>()?)
}
