//! Probabilistic embeddings: each feature vector is a diagonal Gaussian,
//! compared with the mutual likelihood score and fused into templates by
//! Bayesian posterior updates. Includes the uncertainty-head trainer, a
//! synthetic degradation lab and biometric evaluation metrics.

pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod synthlab;
pub mod trainer;

pub use embedding::{
    confidence, confidence_with, cosine_score, mls_score, neg_sq_euclid_score,
    validate_embedding, ConfidenceBasis, GaussianEmbedding, MatchScore, ScoreKind, Scorer,
    Violation, VARIANCE_FLOOR,
};
pub use error::{PfeError, Result};
pub use fusion::{fuse_batch, fuse_min_variance, fuse_sequential, quality_pool, FusionMode, Template};
