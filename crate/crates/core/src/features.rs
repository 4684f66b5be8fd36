//! Patch feature maps, the PMFM file format and embedding arithmetic.
//!
//! PMFM layout (all little-endian):
//!
//! | bytes   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..4    | magic `PMFM`                              |
//! | 4..8    | version, `u32` = 1                        |
//! | 8..20   | height, width, channels as `u32`          |
//! | 20..    | `h*w*c` `f32`, index `((i*w)+j)*c + k`    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{check_dims, Error, Result};
use crate::mask::BinaryMask;

pub const PMFM_MAGIC: [u8; 4] = *b"PMFM";
pub const PMFM_VERSION: u32 = 1;
pub const PMFM_HEADER_LEN: usize = 20;

/// An `h x w` grid of `c`-dimensional patch embeddings, row-major with the
/// channel innermost.
#[derive(Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl std::fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureMap")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDims {
                height,
                width,
                channels,
            });
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::TruncatedPayload {
                expected: expected * 4,
                found: values.len() * 4,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        self.patch_at(row * self.width + col)
    }

    #[inline]
    pub fn patch_at(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PMFM_HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(&PMFM_MAGIC);
        out.extend_from_slice(&PMFM_VERSION.to_le_bytes());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != PMFM_MAGIC {
            let mut magic = [0u8; 4];
            let n = bytes.len().min(4);
            magic[..n].copy_from_slice(&bytes[..n]);
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < PMFM_HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: PMFM_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != PMFM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (h, w, c) = (word(8) as usize, word(12) as usize, word(16) as usize);
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidDims {
                height: h,
                width: w,
                channels: c,
            });
        }
        let payload = &bytes[PMFM_HEADER_LEN..];
        let expected = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::InvalidDims {
                height: h,
                width: w,
                channels: c,
            })?;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        let values = payload[..expected]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        FeatureMap::new(h, w, c, values)
    }
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    FeatureMap::from_bytes(&bytes)
}

/// `*.pmfm` files directly inside `dir`, sorted by file name.
pub fn list_feature_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "pmfm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&fm.to_bytes())?;
    out.flush()?;
    Ok(())
}

/// Scales every patch vector to unit L2 norm; all-zero patches stay zero.
pub fn l2_normalize(fm: &FeatureMap) -> FeatureMap {
    let c = fm.channels;
    let mut values = fm.values.clone();
    for patch in values.chunks_exact_mut(c) {
        let norm = patch.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in patch.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }
    FeatureMap { values, ..*fm }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }
}

impl From<Vec<f32>> for Embedding {
    fn from(v: Vec<f32>) -> Self {
        Embedding(v)
    }
}

/// Mean of the patch vectors under `mask`, accumulated in `f64`.
pub fn mean_embedding(fm: &FeatureMap, mask: &BinaryMask) -> Result<Embedding> {
    check_dims(fm.dims(), mask.dims())?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut acc = vec![0f64; fm.channels];
    for idx in mask.iter_ones() {
        for (a, &v) in acc.iter_mut().zip(fm.patch_at(idx)) {
            *a += v as f64;
        }
    }
    let n = mask.area() as f64;
    Ok(Embedding(acc.into_iter().map(|a| (a / n) as f32).collect()))
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector is zero.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f32> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: (1, a.dim()),
            actual: (1, b.dim()),
        });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.0.iter().zip(&b.0) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(((dot / (na.sqrt() * nb.sqrt())) as f32).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    fn fm_strategy() -> impl Strategy<Value = FeatureMap> {
        (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(h, w, c)| {
            prop::collection::vec(-10.0f32..10.0, h * w * c)
                .prop_map(move |v| FeatureMap::new(h, w, c, v).unwrap())
        })
    }

    #[test]
    fn tiny_map_bytes() {
        let fm = FeatureMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let bytes = fm.to_bytes();
        assert_eq!(&bytes[..4], b"PMFM");
        assert_eq!(bytes.len(), 28);
        assert_eq!(FeatureMap::from_bytes(&bytes).unwrap(), fm);

        let one = FeatureMap::new(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(one.to_bytes().len(), PMFM_HEADER_LEN + 4);
    }

    #[test]
    fn parse_errors() {
        let fm = FeatureMap::new(2, 2, 2, vec![0.0; 8]).unwrap();
        let good = fm.to_bytes();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(FeatureMap::from_bytes(&bad), Err(Error::BadMagic(m)) if &m == b"XXXX"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(FeatureMap::from_bytes(&bad), Err(Error::UnsupportedVersion(2))));

        let bad = &good[..good.len() - 1];
        assert!(matches!(FeatureMap::from_bytes(bad), Err(Error::TruncatedPayload { .. })));

        let mut bad = good.clone();
        bad[PMFM_HEADER_LEN..PMFM_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(FeatureMap::from_bytes(&bad), Err(Error::NonFiniteValue { index: 0 })));

        let mut bad = good;
        bad[PMFM_HEADER_LEN + 4..PMFM_HEADER_LEN + 8].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(FeatureMap::from_bytes(&bad), Err(Error::NonFiniteValue { index: 1 })));
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let fm = FeatureMap::new(1, 1, 1, vec![0.5]).unwrap();
        let err = save_feature_map(&fm, "/nonexistent-dir/x/y.pmfm").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn normalize_examples() {
        let fm = FeatureMap::new(1, 3, 2, vec![1.0, 0.0, 3.0, 4.0, 0.0, 0.0]).unwrap();
        let n = l2_normalize(&fm);
        assert_eq!(n.patch_at(0), &[1.0, 0.0]);
        assert!((n.patch_at(1)[0] - 0.6).abs() < 1e-7 && (n.patch_at(1)[1] - 0.8).abs() < 1e-7);
        assert_eq!(n.patch_at(2), &[0.0, 0.0]);
    }

    #[test]
    fn mean_examples() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let single = BinaryMask::from_bools(1, 2, &[false, true]);
        assert_eq!(mean_embedding(&fm, &single).unwrap().as_slice(), fm.patch_at(1));
        let both = BinaryMask::full(1, 2);
        assert_eq!(mean_embedding(&fm, &both).unwrap().as_slice(), &[0.5, 0.5]);

        assert!(matches!(mean_embedding(&fm, &BinaryMask::new(1, 2)), Err(Error::EmptyMask)));
        assert!(matches!(
            mean_embedding(&fm, &BinaryMask::full(2, 1)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_similarity(&emb(&[1.0, 1.0]), &emb(&[1.0, 0.0])).unwrap();
        assert!((s - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine_similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&emb(&[1.0]), &emb(&[1.0, 0.0])).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(fm in fm_strategy()) {
            let back = FeatureMap::from_bytes(&fm.to_bytes()).unwrap();
            let same = back.values().iter().zip(fm.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(back.dims(), fm.dims());
        }

        #[test]
        fn normalize_is_idempotent_and_unit(fm in fm_strategy()) {
            let once = l2_normalize(&fm);
            let twice = l2_normalize(&once);
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            for idx in 0..once.num_patches() {
                let p = once.patch_at(idx);
                let norm = p.iter().map(|v| v * v).sum::<f32>().sqrt();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f32..5.0, 4),
            b in prop::collection::vec(-5.0f32..5.0, 4),
            k in 0.01f32..100.0,
        ) {
            let (ea, eb) = (emb(&a), emb(&b));
            let ka = emb(&a.iter().map(|v| v * k).collect::<Vec<_>>());
            let ab = cosine_similarity(&ea, &eb).unwrap();
            let ba = cosine_similarity(&eb, &ea).unwrap();
            let kab = cosine_similarity(&ka, &eb).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-6);
            prop_assert!((ab - kab).abs() <= 1e-6);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn mean_of_disjoint_union_is_area_weighted(
            fm in fm_strategy(),
            labels in prop::collection::vec(0u8..3, 16),
        ) {
            let (h, w) = fm.dims();
            let a = BinaryMask::from_fn(h, w, |r, c| labels[(r * w + c) % 16] == 1);
            let b = BinaryMask::from_fn(h, w, |r, c| labels[(r * w + c) % 16] == 2);
            prop_assume!(!a.is_empty() && !b.is_empty());
            let ma = mean_embedding(&fm, &a).unwrap();
            let mb = mean_embedding(&fm, &b).unwrap();
            let mu = mean_embedding(&fm, &a.or(&b)).unwrap();
            let (na, nb) = (a.area() as f64, b.area() as f64);
            for k in 0..fm.channels() {
                let weighted = (ma.as_slice()[k] as f64 * na + mb.as_slice()[k] as f64 * nb) / (na + nb);
                prop_assert!((mu.as_slice()[k] as f64 - weighted).abs() < 1e-5);
            }
        }
    }
}
