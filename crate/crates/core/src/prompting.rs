//! Point prompting: seed patches, affinity maps, bipartition, background
//! classification and connected-component splitting.

use std::sync::OnceLock;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{mean_embedding, Embedding, FeatureMap};
use crate::kernel;
use crate::mask::BinaryMask;

/// Prompts handled per kernel call; one unit of parallel work.
const PROMPT_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatchCoord {
    pub row: usize,
    pub col: usize,
}

impl PatchCoord {
    pub fn new(row: usize, col: usize) -> Self {
        PatchCoord { row, col }
    }
}

/// Where a proposal came from. Prompt origins sort row-major and before
/// synthetic ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProposalOrigin {
    Prompt(PatchCoord),
    Synthetic(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptStrategy {
    RegularGrid { stride: usize },
    Random { count: usize, seed: u64 },
}

impl PromptStrategy {
    pub fn prompts(&self, height: usize, width: usize) -> Result<Vec<PatchCoord>> {
        match *self {
            PromptStrategy::RegularGrid { stride } => grid_prompts(height, width, stride),
            PromptStrategy::Random { count, seed } => random_prompts(height, width, count, seed),
        }
    }
}

/// Prompts at multiples of `stride` along both axes, anchored at `(0, 0)`.
pub fn grid_prompts(height: usize, width: usize, stride: usize) -> Result<Vec<PatchCoord>> {
    let max = height.min(width);
    if stride == 0 || stride > max {
        return Err(Error::InvalidStride { stride, max });
    }
    let mut out = Vec::with_capacity(height.div_ceil(stride) * width.div_ceil(stride));
    for row in (0..height).step_by(stride) {
        for col in (0..width).step_by(stride) {
            out.push(PatchCoord { row, col });
        }
    }
    Ok(out)
}

/// `count` distinct patches drawn without replacement, reproducible per seed.
pub fn random_prompts(height: usize, width: usize, count: usize, seed: u64) -> Result<Vec<PatchCoord>> {
    let available = height * width;
    if count == 0 || count > available {
        return Err(Error::KTooLarge { k: count, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, available, count)
        .into_iter()
        .map(|i| PatchCoord::new(i / width, i % width))
        .collect())
}

/// Similarities between one prompt and every patch, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl AffinityMap {
    pub fn new(height: usize, width: usize, mut values: Vec<f32>) -> Self {
        assert_eq!(values.len(), height * width);
        for v in values.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        AffinityMap { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

fn check_prompt(fm: &FeatureMap, p: PatchCoord) -> Result<()> {
    if p.row >= fm.height() || p.col >= fm.width() {
        return Err(Error::OutOfBounds {
            row: p.row,
            col: p.col,
            height: fm.height(),
            width: fm.width(),
        });
    }
    Ok(())
}

/// Affinity of `prompt` against all patches of an L2-normalized map.
pub fn affinity(fm: &FeatureMap, prompt: PatchCoord) -> Result<AffinityMap> {
    check_prompt(fm, prompt)?;
    let mut out = vec![0f32; fm.num_patches()];
    kernel::affinity_block(fm.values(), fm.channels(), &[fm.patch(prompt.row, prompt.col)], &mut out);
    Ok(AffinityMap::new(fm.height(), fm.width(), out))
}

pub fn bipartition(a: &AffinityMap, tau_b: f32) -> BinaryMask {
    BinaryMask::from_threshold(a.height, a.width, &a.values, tau_b)
}

/// True when at least two image sides each have strictly more than half of
/// their pixels set.
pub fn classify_background(mask: &BinaryMask) -> bool {
    let (h, w) = mask.dims();
    if h == 0 || w == 0 {
        return false;
    }
    let sides = [
        (mask.row_count(0), w),
        (mask.row_count(h - 1), w),
        (mask.col_count(0), h),
        (mask.col_count(w - 1), h),
    ];
    sides.iter().filter(|&&(count, len)| 2 * count > len).count() >= 2
}

/// Splits a mask into maximal 8-connected components, ordered by their
/// first pixel in row-major order.
pub fn split_connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    let (h, w) = mask.dims();
    let mut visited = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in mask.iter_ones() {
        if visited[start] {
            continue;
        }
        let mut comp = vec![0u64; (h * w).div_ceil(64)];
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            comp[idx / 64] |= 1 << (idx % 64);
            let (r, c) = (idx / w, idx % w);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let nidx = nr as usize * w + nc as usize;
                    if !visited[nidx] && mask.get_index(nidx) {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        out.push(BinaryMask::from_words(h, w, comp));
    }
    out
}

/// A foreground mask at feature resolution with a lazily computed mean
/// embedding.
#[derive(Clone, Debug)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub origin: ProposalOrigin,
    embedding: OnceLock<Embedding>,
}

impl MaskProposal {
    pub fn new(mask: BinaryMask, origin: ProposalOrigin) -> Self {
        MaskProposal {
            mask,
            origin,
            embedding: OnceLock::new(),
        }
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }

    /// Mean embedding of the mask over `fm`, computed on first use.
    pub fn embedding(&self, fm: &FeatureMap) -> Result<&Embedding> {
        if let Some(e) = self.embedding.get() {
            return Ok(e);
        }
        let e = mean_embedding(fm, &self.mask)?;
        Ok(self.embedding.get_or_init(|| e))
    }
}

impl PartialEq for MaskProposal {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask && self.origin == other.origin
    }
}

#[derive(Clone, Debug, Default)]
pub struct Proposals {
    pub foreground: Vec<MaskProposal>,
    pub background: Vec<BinaryMask>,
    /// Number of prompts evaluated.
    pub prompts: usize,
}

enum Outcome {
    Empty,
    Background(BinaryMask),
    Foreground(Vec<BinaryMask>),
}

fn classify_and_split(mask: BinaryMask) -> Outcome {
    if mask.is_empty() {
        Outcome::Empty
    } else if classify_background(&mask) {
        Outcome::Background(mask)
    } else {
        Outcome::Foreground(split_connected_components(&mask))
    }
}

/// Prompts an L2-normalized map and sorts the resulting masks into
/// foreground components and background candidates, in prompt order.
pub fn generate_proposals(
    fm: &FeatureMap,
    strategy: &PromptStrategy,
    tau_b: f32,
    exec: Execution,
) -> Result<Proposals> {
    let prompts = strategy.prompts(fm.height(), fm.width())?;
    for &p in &prompts {
        check_prompt(fm, p)?;
    }
    let (h, w) = fm.dims();
    let n = fm.num_patches();
    let blocks: Vec<&[PatchCoord]> = prompts.chunks(PROMPT_BLOCK).collect();
    let outcomes = exec.map(&blocks, |block| {
        let vecs: Vec<&[f32]> = block.iter().map(|p| fm.patch(p.row, p.col)).collect();
        let mut scores = vec![0f32; block.len() * n];
        kernel::affinity_block(fm.values(), fm.channels(), &vecs, &mut scores);
        scores
            .chunks_exact(n)
            .map(|row| classify_and_split(BinaryMask::from_threshold(h, w, row, tau_b)))
            .collect::<Vec<_>>()
    });

    let mut out = Proposals {
        prompts: prompts.len(),
        ..Proposals::default()
    };
    for (outcome, &p) in outcomes.into_iter().flatten().zip(&prompts) {
        match outcome {
            Outcome::Empty => {}
            Outcome::Background(m) => out.background.push(m),
            Outcome::Foreground(parts) => out
                .foreground
                .extend(parts.into_iter().map(|m| MaskProposal::new(m, ProposalOrigin::Prompt(p)))),
        }
    }
    Ok(out)
}
