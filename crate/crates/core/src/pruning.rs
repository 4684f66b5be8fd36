//! Background voting and foreground filtering.

use crate::error::{check_dims, Error, Result};
use crate::features::{cosine_similarity, mean_embedding, Embedding, FeatureMap};
use crate::mask::BinaryMask;
use crate::prompting::MaskProposal;

#[derive(Clone, Debug, PartialEq)]
pub struct VotedBackground {
    pub mask: BinaryMask,
    /// Number of candidates that voted.
    pub support: usize,
}

impl VotedBackground {
    pub fn empty(height: usize, width: usize) -> Self {
        VotedBackground {
            mask: BinaryMask::new(height, width),
            support: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterStrategy {
    Cascade { tau_ioa: f32, tau_sim: f32 },
    IoaOnly(f32),
    SimilarityOnly(f32),
}

impl Default for FilterStrategy {
    fn default() -> Self {
        FilterStrategy::Cascade {
            tau_ioa: 0.8,
            tau_sim: 0.1,
        }
    }
}

/// Pixel-wise majority vote: a pixel is background when strictly more than
/// half of the candidates contain it.
pub fn vote_background(candidates: &[BinaryMask], height: usize, width: usize) -> Result<VotedBackground> {
    for c in candidates {
        check_dims((height, width), c.dims())?;
    }
    if candidates.is_empty() {
        return Ok(VotedBackground::empty(height, width));
    }
    let mut votes = vec![0u32; height * width];
    for c in candidates {
        for idx in c.iter_ones() {
            votes[idx] += 1;
        }
    }
    let n = candidates.len() as u32;
    let bits: Vec<bool> = votes.iter().map(|&v| 2 * v > n).collect();
    Ok(VotedBackground {
        mask: BinaryMask::from_bools(height, width, &bits),
        support: candidates.len(),
    })
}

/// Intersection over the area of `a`.
pub fn ioa(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    if a.is_empty() {
        return Err(Error::EmptyFirstMask);
    }
    Ok(a.intersection_area(b) as f64 / a.area() as f64)
}

fn background_embedding(bg: &VotedBackground, fm: &FeatureMap) -> Result<Option<Embedding>> {
    if bg.mask.is_empty() {
        Ok(None)
    } else {
        mean_embedding(fm, &bg.mask).map(Some)
    }
}

fn check_all(proposals: &[MaskProposal], bg: &VotedBackground, fm: &FeatureMap) -> Result<()> {
    check_dims(fm.dims(), bg.mask.dims())?;
    for p in proposals {
        check_dims(fm.dims(), p.mask.dims())?;
    }
    Ok(())
}

/// Indices (into `proposals`) accepted by cascade filtering, in acceptance
/// order.
///
/// Proposals are visited by ascending area, ties by origin then input
/// index. A proposal is judged on the pixels no earlier accepted proposal
/// covered: it is kept when those pixels exist, overlap the background by
/// less than `tau_ioa`, and the whole mask's mean embedding has similarity
/// below `tau_sim` with the background's.
pub fn cascade_select(
    proposals: &[MaskProposal],
    bg: &VotedBackground,
    fm: &FeatureMap,
    tau_ioa: f32,
    tau_sim: f32,
) -> Result<Vec<usize>> {
    check_all(proposals, bg, fm)?;
    let bg_emb = background_embedding(bg, fm)?;
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by_key(|&i| (proposals[i].area(), proposals[i].origin));

    let (h, w) = fm.dims();
    let mut seen = BinaryMask::new(h, w);
    let mut accepted = Vec::new();
    for i in order {
        let p = &proposals[i];
        let unseen = p.mask.and_not(&seen);
        if unseen.is_empty() {
            continue;
        }
        let pass = match &bg_emb {
            None => true,
            Some(bg_emb) => {
                let overlap = unseen.intersection_area(&bg.mask) as f64 / unseen.area() as f64;
                overlap < tau_ioa as f64 && cosine_similarity(p.embedding(fm)?, bg_emb)? < tau_sim
            }
        };
        if pass {
            seen.or_assign(&unseen);
            accepted.push(i);
        }
    }
    Ok(accepted)
}

pub fn cascade_filter(
    proposals: Vec<MaskProposal>,
    bg: &VotedBackground,
    fm: &FeatureMap,
    tau_ioa: f32,
    tau_sim: f32,
) -> Result<Vec<MaskProposal>> {
    let keep = cascade_select(&proposals, bg, fm, tau_ioa, tau_sim)?;
    Ok(take_indices(proposals, &keep))
}

/// Keeps proposals overlapping the background by at most `tau` (IoA).
pub fn ioa_only_filter(proposals: Vec<MaskProposal>, bg: &VotedBackground, tau: f32) -> Result<Vec<MaskProposal>> {
    let mut out = Vec::with_capacity(proposals.len());
    for p in proposals {
        check_dims(bg.mask.dims(), p.mask.dims())?;
        if ioa(&p.mask, &bg.mask)? <= tau as f64 {
            out.push(p);
        }
    }
    Ok(out)
}

/// Keeps proposals whose mean embedding has similarity at most `tau` with
/// the background's. An empty background keeps everything.
pub fn similarity_only_filter(
    proposals: Vec<MaskProposal>,
    bg: &VotedBackground,
    fm: &FeatureMap,
    tau: f32,
) -> Result<Vec<MaskProposal>> {
    check_all(&proposals, bg, fm)?;
    let Some(bg_emb) = background_embedding(bg, fm)? else {
        return Ok(proposals);
    };
    let mut out = Vec::with_capacity(proposals.len());
    for p in proposals {
        if cosine_similarity(p.embedding(fm)?, &bg_emb)? <= tau {
            out.push(p);
        }
    }
    Ok(out)
}

impl FilterStrategy {
    pub fn apply(
        &self,
        proposals: Vec<MaskProposal>,
        bg: &VotedBackground,
        fm: &FeatureMap,
    ) -> Result<Vec<MaskProposal>> {
        match *self {
            FilterStrategy::Cascade { tau_ioa, tau_sim } => cascade_filter(proposals, bg, fm, tau_ioa, tau_sim),
            FilterStrategy::IoaOnly(tau) => ioa_only_filter(proposals, bg, tau),
            FilterStrategy::SimilarityOnly(tau) => similarity_only_filter(proposals, bg, fm, tau),
        }
    }
}

fn take_indices(items: Vec<MaskProposal>, keep: &[usize]) -> Vec<MaskProposal> {
    let mut slots: Vec<Option<MaskProposal>> = items.into_iter().map(Some).collect();
    keep.iter().map(|&i| slots[i].take().expect("index kept twice")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{PatchCoord, ProposalOrigin};
    use proptest::prelude::*;

    fn prop(m: BinaryMask, tag: u32) -> MaskProposal {
        MaskProposal::new(m, ProposalOrigin::Synthetic(tag))
    }

    fn rect(h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| (r0..r1).contains(&r) && (c0..c1).contains(&c))
    }

    /// Background region gets e0; everything else e1.
    fn bg_fm(bg: &BinaryMask) -> FeatureMap {
        let (h, w) = bg.dims();
        let mut v = Vec::new();
        for idx in 0..h * w {
            v.extend(if bg.get_index(idx) { [1.0, 0.0] } else { [0.0, 1.0] });
        }
        FeatureMap::new(h, w, 2, v).unwrap()
    }

    #[test]
    fn voting_examples() {
        let a = BinaryMask::from_bools(1, 3, &[true, true, false]);
        let b = BinaryMask::from_bools(1, 3, &[true, false, false]);
        let c = BinaryMask::from_bools(1, 3, &[false, true, true]);
        assert_eq!(vote_background(std::slice::from_ref(&a), 1, 3).unwrap().mask, a);
        let two = vote_background(&[a.clone(), b.clone()], 1, 3).unwrap();
        assert_eq!(two.mask.to_bools(), vec![true, false, false]);
        let three = vote_background(&[a, b, c], 1, 3).unwrap();
        assert_eq!(three.mask.to_bools(), vec![true, true, false]);
        assert_eq!(three.support, 3);
        let none = vote_background(&[], 2, 2).unwrap();
        assert!(none.mask.is_empty() && none.support == 0);
        assert!(vote_background(&[BinaryMask::new(2, 3)], 3, 2).is_err());
    }

    #[test]
    fn ioa_examples() {
        let a = BinaryMask::from_bools(1, 4, &[true, true, false, false]);
        let b = BinaryMask::from_bools(1, 4, &[false, true, true, false]);
        let d = BinaryMask::from_bools(1, 4, &[false, false, false, true]);
        assert_eq!(ioa(&a, &a).unwrap(), 1.0);
        assert_eq!(ioa(&a, &d).unwrap(), 0.0);
        assert_eq!(ioa(&a, &b).unwrap(), 0.5);
        assert!(matches!(ioa(&BinaryMask::new(1, 4), &a), Err(Error::EmptyFirstMask)));
        assert!(matches!(ioa(&a, &BinaryMask::new(4, 1)), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn cascade_empty_background_accepts_disjoint() {
        let fm = FeatureMap::new(4, 4, 1, vec![1.0; 16]).unwrap();
        let props: Vec<_> = (0..4).map(|i| prop(rect(4, 4, i, i + 1, 0, 4), i as u32)).collect();
        let bg = VotedBackground::empty(4, 4);
        assert_eq!(cascade_select(&props, &bg, &fm, 0.8, 0.1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cascade_rejects_background_like_mask() {
        let bg_mask = rect(6, 6, 0, 6, 0, 3);
        let fm = bg_fm(&bg_mask);
        let bg = VotedBackground { mask: bg_mask.clone(), support: 3 };
        let inside = prop(rect(6, 6, 1, 3, 0, 2), 0);
        assert!(cascade_select(&[inside], &bg, &fm, 0.8, 0.1).unwrap().is_empty());
    }

    #[test]
    fn cascade_nested_masks() {
        // bg = left half; A = small square on the right; B = A plus a strip of bg.
        let bg_mask = rect(8, 8, 0, 8, 0, 4);
        let fm = bg_fm(&bg_mask);
        let bg = VotedBackground { mask: bg_mask, support: 5 };
        let a = rect(8, 8, 2, 4, 5, 7);
        let b = a.or(&rect(8, 8, 2, 4, 1, 4));
        let props = vec![prop(b, 0), prop(a, 1)];
        assert_eq!(cascade_select(&props, &bg, &fm, 0.8, 0.1).unwrap(), vec![1]);
        // looser IoA keeps B too
        assert_eq!(cascade_select(&props, &bg, &fm, 1.01, 1.01).unwrap(), vec![1, 0]);
    }

    #[test]
    fn cascade_drops_fully_covered() {
        let fm = FeatureMap::new(3, 3, 1, vec![1.0; 9]).unwrap();
        let m = rect(3, 3, 0, 2, 0, 2);
        let props = vec![prop(m.clone(), 0), prop(m, 1)];
        let bg = VotedBackground::empty(3, 3);
        assert_eq!(cascade_select(&props, &bg, &fm, 0.8, 0.1).unwrap(), vec![0]);
    }

    #[test]
    fn cascade_tie_break_uses_origin() {
        let fm = FeatureMap::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let bg = VotedBackground::empty(2, 2);
        let late = MaskProposal::new(rect(2, 2, 0, 1, 0, 1), ProposalOrigin::Prompt(PatchCoord::new(1, 0)));
        let early = MaskProposal::new(rect(2, 2, 1, 2, 1, 2), ProposalOrigin::Prompt(PatchCoord::new(0, 1)));
        assert_eq!(cascade_select(&[late, early], &bg, &fm, 0.8, 0.1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn ioa_only_boundaries() {
        let bg_mask = rect(4, 4, 0, 4, 0, 2);
        let bg = VotedBackground { mask: bg_mask, support: 1 };
        let disjoint = prop(rect(4, 4, 0, 1, 2, 4), 0);
        let inside = prop(rect(4, 4, 0, 2, 0, 2), 1);
        let half = prop(rect(4, 4, 0, 1, 1, 3), 2);
        let kept = ioa_only_filter(vec![disjoint, inside, half], &bg, 0.5).unwrap();
        let tags: Vec<_> = kept.iter().map(|p| p.origin).collect();
        assert_eq!(tags, vec![ProposalOrigin::Synthetic(0), ProposalOrigin::Synthetic(2)]);
    }

    #[test]
    fn similarity_only_boundaries() {
        let bg_mask = rect(4, 4, 0, 4, 0, 2);
        let fm = bg_fm(&bg_mask);
        let bg = VotedBackground { mask: bg_mask, support: 1 };
        let orthogonal = prop(rect(4, 4, 0, 4, 2, 4), 0);
        let same = prop(rect(4, 4, 0, 1, 0, 1), 1);
        let kept = similarity_only_filter(vec![orthogonal, same], &bg, &fm, 0.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].origin, ProposalOrigin::Synthetic(0));

        let empty = VotedBackground::empty(4, 4);
        let all = similarity_only_filter(vec![prop(rect(4, 4, 0, 1, 0, 1), 1)], &empty, &fm, 0.0).unwrap();
        assert_eq!(all.len(), 1);
    }

    fn random_masks(n: usize, h: usize, w: usize) -> impl Strategy<Value = Vec<BinaryMask>> {
        prop::collection::vec(prop::collection::vec(any::<bool>(), h * w), n)
            .prop_map(move |v| v.iter().map(|b| BinaryMask::from_bools(h, w, b)).collect())
    }

    proptest! {
        #[test]
        fn vote_is_subset_and_permutation_invariant(masks in random_masks(5, 4, 4), shift in 0usize..5) {
            let v = vote_background(&masks, 4, 4).unwrap();
            let mut union = BinaryMask::new(4, 4);
            for m in &masks { union.or_assign(m); }
            prop_assert!(v.mask.is_subset_of(&union));
            let mut rotated = masks.clone();
            rotated.rotate_left(shift);
            prop_assert_eq!(vote_background(&rotated, 4, 4).unwrap().mask, v.mask);
            let same = vec![masks[0].clone(); 3];
            prop_assert_eq!(&vote_background(&same, 4, 4).unwrap().mask, &masks[0]);
        }

        #[test]
        fn ioa_full_is_one(m in random_masks(1, 5, 3)) {
            prop_assume!(!m[0].is_empty());
            prop_assert_eq!(ioa(&m[0], &BinaryMask::full(5, 3)).unwrap(), 1.0);
        }
    }
}
