//! Speaker-verification backend: LDA, length normalization, a Joint Bayesian
//! two-covariance model fitted by EM, and a discriminatively fine-tuned Siamese
//! version of the same scoring function, with detection metrics and synthetic corpora.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod hybrid;
pub mod jb;
mod linalg;
pub mod metrics;
pub mod synth;
mod textio;
pub mod transform;

pub use corpus::{EmbeddingSet, Label, ScoreSet, Trial, TrialList};
pub use error::{Error, Result};
pub use jb::JbModel;
pub use transform::LdaTransform;
