//! Greedy merging of filtered proposals into instance clusters.

use crate::error::{check_dims, Error, Result};
use crate::features::{cosine_similarity, mean_embedding, Embedding, FeatureMap};
use crate::mask::BinaryMask;
use crate::prompting::MaskProposal;

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub mask: BinaryMask,
    pub member_count: usize,
    /// Mean embedding over `mask`, recomputed after every merge.
    pub embedding: Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeConfig {
    pub tau_sim: f32,
    pub tau_ioa: f32,
    pub enable_feature_condition: bool,
    pub enable_ioa_condition: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            tau_sim: 0.1,
            tau_ioa: 0.1,
            enable_feature_condition: true,
            enable_ioa_condition: true,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enable_feature_condition && !self.enable_ioa_condition {
            return Err(Error::Config("at least one merge condition must be enabled".into()));
        }
        if !self.tau_sim.is_finite() || !self.tau_ioa.is_finite() {
            return Err(Error::Config("merge thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Whether `proposal` joins `cluster`: IoA over the proposal's own area
/// above `tau_ioa`, or embedding similarity above `tau_sim`.
pub fn should_merge(cluster: &Cluster, proposal: &MaskProposal, fm: &FeatureMap, cfg: &MergeConfig) -> Result<bool> {
    check_dims(cluster.mask.dims(), proposal.mask.dims())?;
    if cfg.enable_ioa_condition {
        if proposal.mask.is_empty() {
            return Err(Error::EmptyFirstMask);
        }
        let ioa = proposal.mask.intersection_area(&cluster.mask) as f64 / proposal.area() as f64;
        if ioa > cfg.tau_ioa as f64 {
            return Ok(true);
        }
    }
    if cfg.enable_feature_condition {
        let sim = cosine_similarity(proposal.embedding(fm)?, &cluster.embedding)?;
        if sim > cfg.tau_sim {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Single pass over proposals by descending area (ties: origin, then input
/// index). Each proposal absorbs every compatible existing cluster, or
/// starts a new one. Clusters are returned in creation order.
pub fn merge_all(proposals: &[MaskProposal], fm: &FeatureMap, cfg: &MergeConfig) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    for p in proposals {
        check_dims(fm.dims(), p.mask.dims())?;
        if p.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(proposals[i].area()), proposals[i].origin));

    let mut clusters: Vec<Cluster> = Vec::new();
    for i in order {
        let p = &proposals[i];
        let mut compatible = Vec::new();
        for (ci, c) in clusters.iter().enumerate() {
            if should_merge(c, p, fm, cfg)? {
                compatible.push(ci);
            }
        }
        if compatible.is_empty() {
            clusters.push(Cluster {
                mask: p.mask.clone(),
                member_count: 1,
                embedding: p.embedding(fm)?.clone(),
            });
            continue;
        }
        let mut mask = p.mask.clone();
        let mut members = 1;
        for &ci in compatible.iter().rev() {
            let c = clusters.remove(ci);
            mask.or_assign(&c.mask);
            members += c.member_count;
        }
        let embedding = mean_embedding(fm, &mask)?;
        clusters.push(Cluster {
            mask,
            member_count: members,
            embedding,
        });
    }
    Ok(clusters)
}

/// Cluster masks, optionally dropping those below `min_area_fraction` of
/// the frame.
pub fn finalize(clusters: Vec<Cluster>, min_area_fraction: Option<f64>) -> Vec<BinaryMask> {
    clusters
        .into_iter()
        .map(|c| c.mask)
        .filter(|m| match min_area_fraction {
            Some(frac) => m.area() as f64 >= frac * m.len() as f64,
            None => true,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::ProposalOrigin;

    fn prop(m: BinaryMask, tag: u32) -> MaskProposal {
        MaskProposal::new(m, ProposalOrigin::Synthetic(tag))
    }

    fn rect(h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| (r0..r1).contains(&r) && (c0..c1).contains(&c))
    }

    fn one_hot_rows(h: usize, w: usize) -> FeatureMap {
        // row r carries basis vector e_r
        let mut v = vec![0.0; h * w * h];
        for r in 0..h {
            for c in 0..w {
                v[(r * w + c) * h + r] = 1.0;
            }
        }
        FeatureMap::new(h, w, h, v).unwrap()
    }

    fn cluster_of(m: BinaryMask, fm: &FeatureMap) -> Cluster {
        Cluster {
            embedding: mean_embedding(fm, &m).unwrap(),
            mask: m,
            member_count: 1,
        }
    }

    #[test]
    fn should_merge_examples() {
        let fm = one_hot_rows(4, 4);
        let cfg = MergeConfig::default();
        let m = rect(4, 4, 0, 2, 0, 4);
        assert!(should_merge(&cluster_of(m.clone(), &fm), &prop(m, 0), &fm, &cfg).unwrap());

        let a = rect(4, 4, 0, 1, 0, 4);
        let b = rect(4, 4, 2, 3, 0, 4);
        assert!(!should_merge(&cluster_of(a, &fm), &prop(b.clone(), 0), &fm, &cfg).unwrap());

        let constant = FeatureMap::new(4, 4, 2, vec![0.5; 32]).unwrap();
        let a = rect(4, 4, 0, 1, 0, 4);
        let on = should_merge(&cluster_of(a.clone(), &constant), &prop(b.clone(), 0), &constant, &cfg).unwrap();
        assert!(on);
        let ioa_only = MergeConfig {
            enable_feature_condition: false,
            ..cfg
        };
        assert!(!should_merge(&cluster_of(a, &constant), &prop(b, 0), &constant, &ioa_only).unwrap());
    }

    #[test]
    fn disjoint_orthogonal_stay_separate() {
        let fm = one_hot_rows(5, 3);
        let props: Vec<_> = (0..5).map(|r| prop(rect(5, 3, r, r + 1, 0, 3), r as u32)).collect();
        let out = merge_all(&props, &fm, &MergeConfig::default()).unwrap();
        assert_eq!(out.len(), 5);
        for p in &props {
            assert!(out.iter().any(|c| c.mask == p.mask));
        }
    }

    #[test]
    fn repeated_mask_collapses() {
        let fm = one_hot_rows(4, 4);
        let m = rect(4, 4, 1, 3, 1, 3);
        let props: Vec<_> = (0..5).map(|i| prop(m.clone(), i)).collect();
        let out = merge_all(&props, &fm, &MergeConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mask, m);
        assert_eq!(out[0].member_count, 5);
    }

    #[test]
    fn proposal_bridges_two_clusters() {
        let fm = one_hot_rows(4, 6);
        let left = rect(4, 6, 0, 4, 0, 2);
        let right = rect(4, 6, 0, 4, 4, 6);
        // shares one column with each side: IoA 2/8 > 0.1 on both
        let bridge = rect(4, 6, 0, 2, 1, 5);
        let cfg = MergeConfig {
            enable_feature_condition: false,
            ..MergeConfig::default()
        };
        let out = merge_all(&[prop(left.clone(), 0), prop(right.clone(), 1), prop(bridge.clone(), 2)], &fm, &cfg)
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mask, left.or(&right).or(&bridge));
        assert_eq!(out[0].member_count, 3);
        assert_eq!(out[0].embedding, mean_embedding(&fm, &out[0].mask).unwrap());
    }

    #[test]
    fn both_conditions_disabled_is_config_error() {
        let fm = one_hot_rows(2, 2);
        let cfg = MergeConfig {
            enable_feature_condition: false,
            enable_ioa_condition: false,
            ..MergeConfig::default()
        };
        assert!(matches!(merge_all(&[], &fm, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn finalize_area_filter() {
        let fm = one_hot_rows(60, 60);
        let small = cluster_of(rect(60, 60, 0, 1, 0, 10), &fm);
        let big = cluster_of(rect(60, 60, 0, 10, 0, 20), &fm);
        let full = cluster_of(BinaryMask::full(60, 60), &fm);
        let all = vec![small.clone(), big.clone(), full.clone()];
        assert_eq!(finalize(all.clone(), None).len(), 3);
        assert_eq!(finalize(all.clone(), Some(0.05)), vec![big.mask.clone(), full.mask.clone()]);
        assert_eq!(finalize(all, Some(1.0)), vec![full.mask]);
    }
}
