//! Throughput harness: untimed warm-up images, then timed images.
//!
//! Only the in-process pipeline is timed (feature loading is excluded), so
//! reports are labelled core-only and are not comparable with end-to-end
//! figures that include feature extraction and CRF refinement.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{list_feature_files, load_feature_map, FeatureMap};
use crate::pipeline::{run_pipeline_with, PipelineConfig};

pub const REPORT_LABEL: &str = "core-only";
pub const REPORT_NOTE: &str = "Times the segmentation core on precomputed features only (no feature \
extraction, no CRF); not comparable with end-to-end FPS figures such as 0.54 FPS.";

/// Indexed supply of feature maps.
pub trait FeatureSource {
    fn len(&self) -> usize;

    fn load(&self, index: usize) -> Result<FeatureMap>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every `*.pmfm` file of a directory, in file-name order.
pub struct DirSource {
    paths: Vec<PathBuf>,
}

impl DirSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(DirSource {
            paths: list_feature_files(dir)?,
        })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl FeatureSource for DirSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<FeatureMap> {
        load_feature_map(&self.paths[index])
    }
}

/// Maps generated on demand by a closure.
pub struct FnSource<F> {
    count: usize,
    make: F,
}

impl<F: Fn(usize) -> Result<FeatureMap>> FnSource<F> {
    pub fn new(count: usize, make: F) -> Self {
        FnSource { count, make }
    }
}

impl<F: Fn(usize) -> Result<FeatureMap>> FeatureSource for FnSource<F> {
    fn len(&self) -> usize {
        self.count
    }

    fn load(&self, index: usize) -> Result<FeatureMap> {
        (self.make)(index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    fn from_ms(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        // nearest-rank percentile
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencySummary {
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: p95,
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub note: String,
    pub warmup: usize,
    pub measured: usize,
    pub parallel: bool,
    pub per_image: LatencySummary,
    pub total_measured_s: f64,
    pub fps: f64,
    /// Mean time per stage over measured images.
    pub stage_mean_ms: BTreeMap<String, f64>,
    /// SHA-256 over the RLE output of every processed image, in order.
    pub output_digest: String,
    pub masks_per_image: f64,
    pub config: PipelineConfig,
}

pub fn bench(
    source: &impl FeatureSource,
    warmup: usize,
    measure: usize,
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<BenchReport> {
    if measure == 0 || source.len() < warmup + measure {
        return Err(Error::NotEnoughInputs {
            needed: warmup + measure.max(1),
            found: source.len(),
        });
    }
    let mut hasher = Sha256::new();
    let mut samples_ms = Vec::with_capacity(measure);
    let mut stage_totals: BTreeMap<String, f64> = BTreeMap::new();
    let mut total_masks = 0usize;

    for i in 0..warmup + measure {
        let fm = source.load(i)?;
        let start = Instant::now();
        let result = run_pipeline_with(&fm, cfg, exec)?;
        let elapsed = start.elapsed();
        drop(fm);

        let im = result.to_image_masks();
        hasher.update((i as u64).to_le_bytes());
        for m in &im.masks {
            hasher.update((m.counts.len() as u64).to_le_bytes());
            for c in &m.counts {
                hasher.update(c.to_le_bytes());
            }
        }
        if i >= warmup {
            samples_ms.push(elapsed.as_secs_f64() * 1e3);
            total_masks += result.masks.len();
            for (name, d) in result.timing.stages() {
                *stage_totals.entry(name.to_string()).or_default() += d.as_secs_f64() * 1e3;
            }
        }
    }

    let total_measured_s = samples_ms.iter().sum::<f64>() / 1e3;
    Ok(BenchReport {
        label: REPORT_LABEL.to_string(),
        note: REPORT_NOTE.to_string(),
        warmup,
        measured: measure,
        parallel: exec.is_parallel(),
        per_image: LatencySummary::from_ms(&samples_ms),
        total_measured_s,
        fps: measure as f64 / total_measured_s,
        stage_mean_ms: stage_totals.into_iter().map(|(k, v)| (k, v / measure as f64)).collect(),
        output_digest: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        masks_per_image: total_masks as f64 / measure as f64,
        config: cfg.clone(),
    })
}
