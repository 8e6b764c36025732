//! Fair top-K retrieval.
//!
//! Candidates are scored by cosine similarity against a query embedding and
//! then re-ranked so that every demographic group is equally represented in
//! the returned bag, with images whose attribute is not applicable (neutral)
//! competing on score alone. Around the selection engine sit the attribute
//! predictors that feed it, the bias and retrieval metrics that judge it, and
//! the statistics used to separate model-encoded bias from the bias a skewed
//! candidate pool induces on its own.
//!
//! Modules:
//! - [`corpus`]: data model and line-delimited record files
//! - [`similarity`]: cosine scoring and plain top-K
//! - [`attributes`]: zero-shot and classifier attribute predictors
//! - [`selection`]: group-balanced re-ranking, its stochastic trade-off
//!   variant, and random selection
//! - [`metrics`]: AbsBias@K, Bias@K, Recall@K, mAP@K
//! - [`analysis`]: binomial expected bias, quantile curves, OLS, Spearman,
//!   synthetic corpora
//! - [`cli`]: the `fairsift` command-line front end

pub mod analysis;
pub mod attributes;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod similarity;

pub use error::{Error, Result};
