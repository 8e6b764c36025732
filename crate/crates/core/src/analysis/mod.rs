//! Statistics behind the bias analysis: the expected bias of an
//! attribute-blind retriever, quantile bias curves, regression and rank
//! correlation, trade-off sweeps, and seeded synthetic corpora.

mod binomial;
mod per_query;
mod stats;
mod synthetic;
mod tradeoff;

pub use binomial::{expected_bias_binomial, monte_carlo_expected_bias, MonteCarloEstimate};
pub use per_query::{labeled_scores, query_bias_curve, query_score_spearman};
pub use stats::{
    mid_ranks, ols_fit, quantile_bias_curve, spearman, QuantileBiasCurve, QuantileBin,
    RegressionFit,
};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};
pub use tradeoff::{tradeoff_sweep, Estimate, TradeoffPoint};
