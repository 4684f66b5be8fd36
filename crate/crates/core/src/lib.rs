//! Training-free instance segmentation from self-supervised patch features.
//!
//! A feature map is point-prompted on a grid; each prompt's affinity map is
//! thresholded into a mask. Masks touching most of two image sides vote a
//! background; the remaining foreground components are filtered against
//! it and greedily merged into instances. The [`eval`] module scores the
//! result with the COCO protocol.
//!
//! ```
//! use promerge::{run_pipeline, synth::synth_scene, PipelineConfig};
//!
//! let scene = synth_scene(60, 60, 8, 3, 0.02, 7).unwrap();
//! let result = run_pipeline(&scene.features, &PipelineConfig::default()).unwrap();
//! assert_eq!(result.masks.len(), 3);
//! ```

pub mod bench;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
mod kernel;
pub mod mask;
pub mod merging;
pub mod pipeline;
pub mod prompting;
pub mod pruning;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use features::{
    cosine_similarity, l2_normalize, load_feature_map, mean_embedding, save_feature_map, Embedding, FeatureMap,
};
pub use mask::BinaryMask;
pub use merging::{finalize, merge_all, should_merge, Cluster, MergeConfig};
pub use pipeline::{run_pipeline, run_pipeline_with, upsample_mask, PipelineConfig, SegmentationResult};
pub use prompting::{
    affinity, bipartition, classify_background, generate_proposals, grid_prompts, random_prompts,
    split_connected_components, AffinityMap, MaskProposal, PatchCoord, PromptStrategy, ProposalOrigin,
};
pub use pruning::{
    cascade_filter, cascade_select, ioa, ioa_only_filter, similarity_only_filter, vote_background, FilterStrategy,
    VotedBackground,
};

