//! Video-text retrieval objectives and evaluation over precomputed
//! embeddings.
//!
//! * [`losses`]: InfoNCE, EgoNCE (action-aware positives, scene-aware
//!   negatives), multi-instance max-margin and its correlation-adaptive
//!   variant, each with analytic gradients.
//! * [`sampling`]: positive sets, scene negatives and action correlations
//!   from clip metadata.
//! * [`inference`]: similarity, plain and dual-softmax scoring, ranking.
//! * [`metrics`]: mAP and nDCG in both retrieval directions.
//! * [`trainer`]: gradient-descent fine-tuning of linear projection heads.
//! * [`io`]: embedding, metadata, CSV and curve file formats.
//!
//! Per-row work runs on rayon when the `parallel` feature (default) is on.
//! Reductions always happen sequentially in index order, so results do not
//! depend on the number of threads.

pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod numeric;
mod par;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::{
    l2_normalize, validate_correlation, CorrelationMatrix, EmbeddingMatrix, Matrix, ScoreMatrix,
    SimilarityMatrix,
};
pub use par::is_parallel;
