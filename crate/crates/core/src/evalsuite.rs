//! Fidelity and consistency metrics over encoder features, and the dataset
//! report built from them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, Encoders, GlobalEmbedding, GlobalEncoder, PatchEncoder, PatchTokenMap};
use crate::error::{Error, Result};
use crate::imageops::{ImageRGB, MultiViewSet};
use crate::pipeline::{AssetRecord, DatasetManifest};
use crate::util::dot;

/// Mean cosine similarity between the input image and each rendered view.
pub fn clip_similarity(input: &ImageRGB, renders: &MultiViewSet, encoder: &dyn GlobalEncoder) -> f64 {
    let e = encoder.embed_global(input);
    renders.views().iter().map(|v| encoder.embed_global(v).cosine(&e)).sum::<f64>() / 4.0
}

/// `(x.y / d + 1)^3`.
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    (dot(x, y) / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased squared MMD under [`polynomial_kernel`]: U-statistics for the
/// within-set terms, the full mean for the cross term.
pub fn kid_vectors(a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!("KID needs at least 2 samples per set, got {} and {}", a.len(), b.len())));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) || d == 0 {
        return Err(Error::invalid("KID features must share one non-zero dimension"));
    }
    let within = |s: &[&[f64]]| {
        let n = s.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += polynomial_kernel(s[i], s[j]);
                }
            }
        }
        sum / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += polynomial_kernel(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok(within(a) + within(b) - 2.0 * cross)
}

pub fn kid(a: &[GlobalEmbedding], b: &[GlobalEmbedding]) -> Result<f64> {
    let a: Vec<&[f64]> = a.iter().map(GlobalEmbedding::as_slice).collect();
    let b: Vec<&[f64]> = b.iter().map(GlobalEmbedding::as_slice).collect();
    kid_vectors(&a, &b)
}

/// Which view pairs the consistency score averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewPairs {
    /// front-right, right-back, back-left, left-front.
    #[default]
    Adjacent,
    /// All six unordered pairs.
    All,
}

impl ViewPairs {
    pub fn pairs(self) -> &'static [(usize, usize)] {
        match self {
            ViewPairs::Adjacent => &[(0, 1), (1, 2), (2, 3), (3, 0)],
            ViewPairs::All => &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub pairs: ViewPairs,
}

/// Noise views score below this; frozen from the null distribution of
/// independent uniform-noise views under the default toy patch encoder.
pub const CONSISTENCY_NULL_THRESHOLD: f64 = 0.5;

fn nearest(tokens: &PatchTokenMap, query: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, t) in tokens.iter().enumerate() {
        let s = dot(query, t);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Token pairs `(i, j, cos)` where `j` is the nearest neighbour of `a_i` in
/// `b` and `i` the nearest neighbour of `b_j` in `a`. Ties go to the lowest index.
pub fn mutual_nearest_neighbors(a: &PatchTokenMap, b: &PatchTokenMap) -> Vec<(usize, usize, f64)> {
    let ab: Vec<(usize, f64)> = a.iter().collect::<Vec<_>>().par_iter().map(|t| nearest(b, t)).collect();
    let ba: Vec<usize> = b.iter().collect::<Vec<_>>().par_iter().map(|t| nearest(a, t).0).collect();
    ab.iter()
        .enumerate()
        .filter(|(i, (j, _))| ba[*j] == *i)
        .map(|(i, (j, s))| (i, *j, *s))
        .collect()
}

fn pair_score(a: &PatchTokenMap, b: &PatchTokenMap) -> f64 {
    let m = mutual_nearest_neighbors(a, b);
    m.iter().map(|x| x.2).sum::<f64>() / m.len() as f64
}

/// Mean over view pairs of the mean cosine of mutual-nearest-neighbour token pairs.
pub fn mv_consistency(views: &MultiViewSet, encoder: &dyn PatchEncoder, config: &ConsistencyConfig) -> f64 {
    let tokens: Vec<PatchTokenMap> = views.views().par_iter().map(|v| encoder.embed_patches(v)).collect();
    let pairs = config.pairs.pairs();
    pairs.iter().map(|&(i, j)| pair_score(&tokens[i], &tokens[j])).sum::<f64>() / pairs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub global_encoder: EncoderConfig,
    pub patch_encoder: EncoderConfig,
    pub consistency: ConsistencyConfig,
    /// KID is reported only when both corpora have at least this many samples.
    pub min_kid_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            global_encoder: EncoderConfig::toy_global(11),
            patch_encoder: EncoderConfig::toy_patch(12, 56, 8),
            consistency: ConsistencyConfig::default(),
            min_kid_samples: 10,
        }
    }
}

/// One report row. Metrics are absent when the record could not be evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub asset_id: String,
    pub clip_sim: Option<f64>,
    pub consistency: Option<f64>,
    pub errors: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub records: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub input_features: usize,
    pub view_features: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<AssetMetrics>,
    /// Between input images and final views; `None` below the sample minimum.
    pub kid: Option<f64>,
    pub counts: ReportCounts,
    pub encoder_fingerprint: String,
}

impl MetricReport {
    pub fn errors(&self) -> impl Iterator<Item = &AssetMetrics> {
        self.rows.iter().filter(|r| !r.errors.is_empty())
    }

    fn mean(&self, f: impl Fn(&AssetMetrics) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn summary_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        s.push_str(&format!("records {}\n", self.counts.records));
        s.push_str(&format!("evaluated {}\n", self.counts.evaluated));
        s.push_str(&format!("failed {}\n", self.counts.failed));
        s.push_str(&format!("mean_clip_sim {}\n", opt(self.mean(|r| r.clip_sim))));
        s.push_str(&format!("mean_consistency {}\n", opt(self.mean(|r| r.consistency))));
        s.push_str(&format!(
            "kid {} (input images {}, views {})\n",
            opt(self.kid),
            self.counts.input_features,
            self.counts.view_features
        ));
        s.push_str(&format!("encoders {}\n", self.encoder_fingerprint));
        for r in self.errors() {
            s.push_str(&format!("error {}: {}\n", r.asset_id, r.errors));
        }
        s
    }

    /// Writes `report.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        std::fs::write(dir.join("summary.txt"), self.summary_text())?;
        Ok(())
    }
}

struct Evaluated {
    metrics: AssetMetrics,
    input: Option<GlobalEmbedding>,
    views: Vec<GlobalEmbedding>,
}

fn evaluate_record(root: &Path, dir: &Path, encoders: &Encoders, config: &EvalConfig) -> Result<(f64, f64, GlobalEmbedding, Vec<GlobalEmbedding>)> {
    let dir = root.join(dir);
    let record = AssetRecord::load(&dir)?;
    let problems = record.audit(&dir);
    if !problems.is_empty() {
        return Err(Error::invalid(problems.join("; ")));
    }
    if record.aligned_views.len() != 4 {
        return Err(Error::invalid(format!("record {} has no aligned views (stage {})", record.id, record.stage)));
    }
    let views = MultiViewSet::from_vec(record.aligned_views.iter().map(|p| ImageRGB::load_png(dir.join(p))).collect::<Result<_>>()?)?;
    // imported records have no seed image; their front render stands in
    let input = match &record.seed_image {
        Some(p) => ImageRGB::load_png(dir.join(p))?,
        None => ImageRGB::load_png(dir.join(&record.rendered_views[0]))?,
    };
    let clip = clip_similarity(&input, &views, encoders.global.as_ref());
    let consistency = mv_consistency(&views, encoders.patch.as_ref(), &config.consistency);
    let feats = views.views().iter().map(|v| encoders.global.embed_global(v)).collect();
    Ok((clip, consistency, encoders.global.embed_global(&input), feats))
}

/// Per-record metrics for every manifest entry plus corpus KID. Records that
/// fail to load are reported as error rows and do not stop the report.
pub fn build_report(manifest: &DatasetManifest, root: &Path, config: &EvalConfig) -> Result<MetricReport> {
    let encoders = Encoders::from_configs(&config.global_encoder, &config.patch_encoder)?;
    let evaluated: Vec<Evaluated> = manifest
        .records
        .par_iter()
        .map(|entry| match evaluate_record(root, &entry.dir, &encoders, config) {
            Ok((clip, consistency, input, views)) => Evaluated {
                metrics: AssetMetrics { asset_id: entry.id.clone(), clip_sim: Some(clip), consistency: Some(consistency), errors: String::new() },
                input: Some(input),
                views,
            },
            Err(e) => Evaluated {
                metrics: AssetMetrics { asset_id: entry.id.clone(), clip_sim: None, consistency: None, errors: e.to_string() },
                input: None,
                views: Vec::new(),
            },
        })
        .collect();
    let inputs: Vec<GlobalEmbedding> = evaluated.iter().filter_map(|e| e.input.clone()).collect();
    let views: Vec<GlobalEmbedding> = evaluated.iter().flat_map(|e| e.views.clone()).collect();
    let kid = if inputs.len() >= config.min_kid_samples.max(2) && views.len() >= config.min_kid_samples.max(2) {
        Some(kid(&inputs, &views)?)
    } else {
        None
    };
    let failed = evaluated.iter().filter(|e| e.input.is_none()).count();
    Ok(MetricReport {
        counts: ReportCounts {
            records: evaluated.len(),
            evaluated: evaluated.len() - failed,
            failed,
            input_features: inputs.len(),
            view_features: views.len(),
        },
        rows: evaluated.into_iter().map(|e| e.metrics).collect(),
        kid,
        encoder_fingerprint: encoders.fingerprint(),
    })
}

#[cfg(test)]
mod tests;
