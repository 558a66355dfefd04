//! Segmentation analysis: fertility, subword productivity and
//! idiosyncrasy, morphological boundary scores, and their trajectories
//! across checkpoints.

mod measures;
mod morphology;
mod segmented;
mod trajectory;

pub use measures::{fertility, fertility_histogram, idiosyncrasy, productivity, SubwordStats};
pub use morphology::{internal_boundaries, morph_boundary_prf, BoundaryScores, GoldMorphology};
pub use segmented::{segment_corpus, SegmentedCorpus, WordSegmentation};
pub use trajectory::{
    build_trajectory, SegmentationMetrics, SegmentationSource, TrajectoryReport, TrajectoryRow, HISTOGRAM_HEADER,
    TRAJECTORY_HEADER,
};
