use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rle::RleMask;
use crate::error::Result;

/// Predictions or ground truth: one entry per image, masks as RLE counts.
/// Ground-truth files omit `score`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    /// Post-processing applied to the masks, e.g. `"nearest"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postprocess: Option<String>,
    pub images: Vec<ImageMasks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMasks {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<MaskEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub counts: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl MaskFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl ImageMasks {
    pub fn rle(&self, idx: usize) -> Result<RleMask> {
        RleMask::new(self.height, self.width, self.masks[idx].counts.clone())
    }
}
