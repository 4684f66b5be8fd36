//! Synthetic scenes with known instance masks.
//!
//! Objects are axis-aligned rectangles with at least a two-pixel gap
//! between any pair. The background and each object get distinct standard
//! basis vectors, plus isotropic Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mask::BinaryMask;

const MAX_ATTEMPTS: usize = 10_000;
const GAP: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    fn separated(&self, other: &Rect) -> bool {
        self.row + self.height + GAP <= other.row
            || other.row + other.height + GAP <= self.row
            || self.col + self.width + GAP <= other.col
            || other.col + other.width + GAP <= self.col
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row..self.row + self.height).contains(&r) && (self.col..self.col + self.width).contains(&c)
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub features: FeatureMap,
    pub objects: Vec<BinaryMask>,
    pub rects: Vec<Rect>,
}

/// Side lengths drawn from `[dim/8, dim/3]`, so objects never hold a
/// majority of any image side.
fn side_range(dim: usize) -> (usize, usize) {
    let lo = (dim / 8).max(1);
    (lo, (dim / 3).max(lo))
}

pub fn synth_scene(
    height: usize,
    width: usize,
    channels: usize,
    num_objects: usize,
    noise_sigma: f32,
    seed: u64,
) -> Result<SynthScene> {
    if num_objects + 1 > channels {
        return Err(Error::Config(format!(
            "{num_objects} objects need at least {} channels",
            num_objects + 1
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidDims {
            height,
            width,
            channels,
        });
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Config("noise sigma must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hlo, hhi) = side_range(height);
    let (wlo, whi) = side_range(width);

    let mut rects: Vec<Rect> = Vec::with_capacity(num_objects);
    let mut attempts = 0;
    while rects.len() < num_objects {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::PlacementFailure { attempts });
        }
        attempts += 1;
        let rh = rng.random_range(hlo..=hhi).min(height);
        let rw = rng.random_range(wlo..=whi).min(width);
        let cand = Rect {
            row: rng.random_range(0..=height - rh),
            col: rng.random_range(0..=width - rw),
            height: rh,
            width: rw,
        };
        if rects.iter().all(|r| r.separated(&cand)) {
            rects.push(cand);
        }
    }

    let mut values = vec![0f32; height * width * channels];
    for r in 0..height {
        for c in 0..width {
            let label = rects.iter().position(|rect| rect.contains(r, c)).map_or(0, |k| k + 1);
            values[(r * width + c) * channels + label] = 1.0;
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, noise_sigma).expect("sigma validated above");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let objects = rects
        .iter()
        .map(|rect| BinaryMask::from_fn(height, width, |r, c| rect.contains(r, c)))
        .collect();
    Ok(SynthScene {
        features: FeatureMap::new(height, width, channels, values)?,
        objects,
        rects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_scene(30, 30, 6, 3, 0.05, 11).unwrap();
        let b = synth_scene(30, 30, 6, 3, 0.05, 11).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.rects, b.rects);
        let c = synth_scene(30, 30, 6, 3, 0.05, 12).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn objects_are_separated_and_labelled() {
        for seed in 0..50 {
            let s = synth_scene(60, 60, 8, 5, 0.0, seed).unwrap();
            assert_eq!(s.objects.len(), 5);
            for (i, a) in s.rects.iter().enumerate() {
                for b in &s.rects[i + 1..] {
                    assert!(a.separated(b));
                }
            }
            for (k, obj) in s.objects.iter().enumerate() {
                for idx in obj.iter_ones() {
                    assert_eq!(s.features.patch_at(idx)[k + 1], 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_objects_and_errors() {
        let s = synth_scene(10, 10, 2, 0, 0.0, 0).unwrap();
        assert!(s.objects.is_empty());
        assert!(s.features.values().chunks(2).all(|p| p == [1.0, 0.0]));
        assert!(matches!(synth_scene(10, 10, 3, 3, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(synth_scene(6, 6, 40, 30, 0.0, 0), Err(Error::PlacementFailure { .. })));
    }
}
