//! End-to-end segmentation: normalize, prompt, vote, filter, merge, upsample.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{rle_encode, ImageMasks, MaskEntry, MaskFile};
use crate::exec::Execution;
use crate::features::{l2_normalize, FeatureMap};
use crate::mask::BinaryMask;
use crate::merging::{finalize, merge_all, MergeConfig};
use crate::prompting::{generate_proposals, PromptStrategy};
use crate::pruning::{vote_background, FilterStrategy};

/// Post-processing recorded in prediction files.
pub const POSTPROCESS: &str = "nearest";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    RegularGrid,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Cascade,
    IoaOnly,
    SimilarityOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Mask area over frame area.
    AreaFraction,
    Constant,
}

/// All pipeline knobs. Serialized as flat JSON with these field names;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stride: usize,
    pub tau_b: f32,
    pub tau_ioa_bg: f32,
    pub tau_f_bg: f32,
    pub tau_ioa_merge: f32,
    pub tau_f_merge: f32,
    pub prompt_strategy: PromptKind,
    /// Prompt count for random prompting.
    pub prompt_count: usize,
    /// Seed for random prompting.
    pub seed: u64,
    pub filter_strategy: FilterKind,
    /// Threshold of the IoA-only filter.
    pub tau_ioa_only: f32,
    /// Threshold of the similarity-only filter.
    pub tau_sim_only: f32,
    pub enable_feature_condition: bool,
    pub enable_ioa_condition: bool,
    pub min_area_fraction: Option<f64>,
    pub score_mode: ScoreMode,
    /// `[height, width]` of the output masks; feature resolution when unset.
    pub output_size: Option<[usize; 2]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stride: 4,
            tau_b: 0.2,
            tau_ioa_bg: 0.8,
            tau_f_bg: 0.1,
            tau_ioa_merge: 0.1,
            tau_f_merge: 0.1,
            prompt_strategy: PromptKind::RegularGrid,
            prompt_count: 225,
            seed: 0,
            filter_strategy: FilterKind::Cascade,
            tau_ioa_only: 0.5,
            tau_sim_only: 0.0,
            enable_feature_condition: true,
            enable_ioa_condition: true,
            min_area_fraction: None,
            score_mode: ScoreMode::AreaFraction,
            output_size: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Overrides one field from a `key=value` style pair. The value is
    /// parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut obj = match serde_json::to_value(&*self)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        let cfg: PipelineConfig =
            serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let thresholds = [
            ("tau_b", self.tau_b),
            ("tau_ioa_bg", self.tau_ioa_bg),
            ("tau_f_bg", self.tau_f_bg),
            ("tau_ioa_merge", self.tau_ioa_merge),
            ("tau_f_merge", self.tau_f_merge),
            ("tau_ioa_only", self.tau_ioa_only),
            ("tau_sim_only", self.tau_sim_only),
        ];
        for (name, v) in thresholds {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.prompt_strategy == PromptKind::Random && self.prompt_count == 0 {
            return Err(Error::Config("prompt_count must be at least 1".into()));
        }
        if let Some(f) = self.min_area_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config("min_area_fraction must lie in [0, 1]".into()));
            }
        }
        if let Some([h, w]) = self.output_size {
            if h == 0 || w == 0 {
                return Err(Error::Config("output_size must be positive".into()));
            }
        }
        self.merge_config().validate()
    }

    pub fn prompt(&self) -> PromptStrategy {
        match self.prompt_strategy {
            PromptKind::RegularGrid => PromptStrategy::RegularGrid { stride: self.stride },
            PromptKind::Random => PromptStrategy::Random {
                count: self.prompt_count,
                seed: self.seed,
            },
        }
    }

    pub fn filter(&self) -> FilterStrategy {
        match self.filter_strategy {
            FilterKind::Cascade => FilterStrategy::Cascade {
                tau_ioa: self.tau_ioa_bg,
                tau_sim: self.tau_f_bg,
            },
            FilterKind::IoaOnly => FilterStrategy::IoaOnly(self.tau_ioa_only),
            FilterKind::SimilarityOnly => FilterStrategy::SimilarityOnly(self.tau_sim_only),
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            tau_sim: self.tau_f_merge,
            tau_ioa: self.tau_ioa_merge,
            enable_feature_condition: self.enable_feature_condition,
            enable_ioa_condition: self.enable_ioa_condition,
        }
    }
}

/// Nearest-neighbour upscaling: output pixel `(y, x)` reads source pixel
/// `(y*h/H, x*w/W)`.
pub fn upsample_mask(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    if height < h || width < w {
        return Err(Error::Downscale {
            from: (h, w),
            to: (height, width),
        });
    }
    if (height, width) == (h, w) {
        return Ok(mask.clone());
    }
    let src_cols: Vec<usize> = (0..width).map(|x| x * w / width).collect();
    Ok(BinaryMask::from_fn(height, width, |y, x| mask.get(y * h / height, src_cols[x])))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub normalize: Duration,
    pub prompting: Duration,
    pub voting: Duration,
    pub filtering: Duration,
    pub merging: Duration,
    pub finalize: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.normalize + self.prompting + self.voting + self.filtering + self.merging + self.finalize
    }

    pub fn stages(&self) -> [(&'static str, Duration); 6] {
        [
            ("normalize", self.normalize),
            ("prompting", self.prompting),
            ("voting", self.voting),
            ("filtering", self.filtering),
            ("merging", self.merging),
            ("finalize", self.finalize),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub image_id: String,
    pub feature_dims: (usize, usize),
    pub output_dims: (usize, usize),
    /// Instance masks at output resolution; they may overlap.
    pub masks: Vec<ScoredMask>,
    pub timing: StageTimings,
    /// Counts of intermediate objects, for diagnostics.
    pub stats: StageCounts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub prompts: usize,
    pub background_candidates: usize,
    pub foreground_proposals: usize,
    pub filtered: usize,
    pub clusters: usize,
}

impl SegmentationResult {
    pub fn to_image_masks(&self) -> ImageMasks {
        ImageMasks {
            image_id: self.image_id.clone(),
            height: self.output_dims.0,
            width: self.output_dims.1,
            masks: self
                .masks
                .iter()
                .map(|m| MaskEntry {
                    counts: rle_encode(&m.mask).counts,
                    score: Some(m.score),
                })
                .collect(),
        }
    }
}

/// Prediction file for a batch of results, tagged with the post-processing used.
pub fn predictions_file(results: &[SegmentationResult]) -> MaskFile {
    MaskFile {
        postprocess: Some(POSTPROCESS.to_string()),
        images: results.iter().map(SegmentationResult::to_image_masks).collect(),
    }
}

pub fn run_pipeline(fm: &FeatureMap, cfg: &PipelineConfig) -> Result<SegmentationResult> {
    run_pipeline_with(fm, cfg, Execution::default())
}

pub fn run_pipeline_with(fm: &FeatureMap, cfg: &PipelineConfig, exec: Execution) -> Result<SegmentationResult> {
    cfg.validate()?;
    let mut timing = StageTimings::default();
    let mut stats = StageCounts::default();
    let (h, w) = fm.dims();
    let output_dims = cfg.output_size.map(|[oh, ow]| (oh, ow)).unwrap_or((h, w));
    if output_dims.0 < h || output_dims.1 < w {
        return Err(Error::Downscale {
            from: (h, w),
            to: output_dims,
        });
    }

    let t = Instant::now();
    let normalized = l2_normalize(fm);
    timing.normalize = t.elapsed();

    let t = Instant::now();
    let proposals = generate_proposals(&normalized, &cfg.prompt(), cfg.tau_b, exec)?;
    timing.prompting = t.elapsed();
    stats.prompts = proposals.prompts;
    stats.background_candidates = proposals.background.len();
    stats.foreground_proposals = proposals.foreground.len();

    let t = Instant::now();
    let bg = vote_background(&proposals.background, h, w)?;
    timing.voting = t.elapsed();

    let t = Instant::now();
    let foreground = proposals.foreground;
    exec.try_map(&foreground, |p| p.embedding(&normalized).map(|_| ()))?;
    let filtered = cfg.filter().apply(foreground, &bg, &normalized)?;
    timing.filtering = t.elapsed();
    stats.filtered = filtered.len();

    let t = Instant::now();
    let clusters = merge_all(&filtered, &normalized, &cfg.merge_config())?;
    timing.merging = t.elapsed();
    stats.clusters = clusters.len();

    let t = Instant::now();
    let frame = (output_dims.0 * output_dims.1) as f64;
    let masks = finalize(clusters, cfg.min_area_fraction)
        .into_iter()
        .map(|m| {
            let mask = upsample_mask(&m, output_dims.0, output_dims.1)?;
            let score = match cfg.score_mode {
                ScoreMode::AreaFraction => mask.area() as f64 / frame,
                ScoreMode::Constant => 1.0,
            };
            Ok(ScoredMask { mask, score })
        })
        .collect::<Result<Vec<_>>>()?;
    timing.finalize = t.elapsed();

    Ok(SegmentationResult {
        image_id: String::new(),
        feature_dims: (h, w),
        output_dims,
        masks,
        timing,
        stats,
    })
}
