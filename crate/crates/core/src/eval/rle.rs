//! Uncompressed COCO run-length encoding.
//!
//! Runs alternate zeros and ones over the mask in column-major order,
//! starting with a (possibly empty) run of zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn new(height: usize, width: usize, counts: Vec<u32>) -> Result<Self> {
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = (height * width) as u64;
        if sum != expected {
            return Err(Error::BadCounts { sum, expected });
        }
        Ok(RleMask { height, width, counts })
    }

    /// Positive pixel count, read straight from the runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let v = mask.get_index(r * w + c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        height: h,
        width: w,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let (h, w) = (rle.height, rle.width);
    let sum: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if sum != (h * w) as u64 {
        return Err(Error::BadCounts {
            sum,
            expected: (h * w) as u64,
        });
    }
    let mut mask = BinaryMask::new(h, w);
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + run as usize {
                let (c, r) = (p / h, p % h);
                mask.set_index(r * w + c, true);
            }
        }
        pos += run as usize;
    }
    Ok(mask)
}
