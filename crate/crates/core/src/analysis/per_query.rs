use crate::corpus::{AttributeLabel, Corpus, QueryRecord};
use crate::error::Result;
use crate::similarity::{score_all, ScoredImage};

use super::stats::{quantile_bias_curve, spearman, QuantileBiasCurve};

/// Every labeled image scored against `query`, paired with its label.
pub fn labeled_scores(corpus: &Corpus, query: &QueryRecord) -> Result<Vec<(ScoredImage, AttributeLabel)>> {
    let labels = corpus.labels();
    let labeled: Vec<_> = corpus.images.iter().filter(|im| im.label.is_some()).cloned().collect();
    score_all(query, &labeled)?
        .into_iter()
        .map(|s| {
            let l = labels.get(&s.image_id)?;
            Ok((s, l))
        })
        .collect()
}

/// Quantile bias curve of the query's similarity scores over the labeled corpus.
pub fn query_bias_curve(corpus: &Corpus, query: &QueryRecord, bins: usize) -> Result<QuantileBiasCurve> {
    quantile_bias_curve(&labeled_scores(corpus, query)?, bins)
}

/// Spearman correlation between similarity score and signed attribute
/// weight (+1, -1, 0 for neutral) over the labeled corpus.
pub fn query_score_spearman(corpus: &Corpus, query: &QueryRecord) -> Result<f64> {
    let pairs = labeled_scores(corpus, query)?;
    let scores: Vec<f64> = pairs.iter().map(|(s, _)| s.score).collect();
    let signs: Vec<f64> = pairs.iter().map(|(_, l)| l.sign() as f64).collect();
    spearman(&scores, &signs)
}
