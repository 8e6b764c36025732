use serde::Serialize;

use crate::attributes::PredictionTable;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{abs_bias_at_k, map_at_k, recall_at_k};
use crate::rng::derive_seed;
use crate::selection::{select_scored, OddPickPolicy, SelectionConfig};
use crate::similarity::{score_all, ScoredImage};

/// Mean and standard error of a metric over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_error = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub fair_probability: f64,
    pub abs_bias: Estimate,
    /// `None` when no query has relevant images.
    pub recall: Option<Estimate>,
    pub map: Estimate,
}

/// Sweeps the fair-step probability over `grid`, repeating the stochastic
/// selection `reps` times per value with seeds derived from `seed`, and
/// reports AbsBias@K (against ground-truth labels), Recall@K and mAP@K.
pub fn tradeoff_sweep(
    corpus: &Corpus,
    predictions: &PredictionTable,
    k: usize,
    grid: &[f64],
    reps: usize,
    seed: u64,
    policy: OddPickPolicy,
) -> Result<Vec<TradeoffPoint>> {
    if grid.is_empty() || reps == 0 {
        return Err(Error::InvalidConfig("trade-off sweep needs a non-empty grid and reps >= 1".into()));
    }
    let labels = corpus.labels();
    let scored: Vec<(&str, Vec<ScoredImage>)> = corpus
        .queries
        .iter()
        .map(|q| Ok((q.id.as_str(), score_all(q, &corpus.images)?)))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(grid.len());
    for &p in grid {
        let (mut biases, mut recalls, mut maps) = (Vec::new(), Vec::new(), Vec::new());
        for rep in 0..reps {
            let config = SelectionConfig::new(k)
                .with_fair_probability(p)
                .with_seed(derive_seed(seed, &format!("rep{rep}")))
                .with_policy(policy);
            let bags = scored
                .iter()
                .map(|(qid, s)| select_scored(qid, s, predictions.for_query(qid), &config))
                .collect::<Result<Vec<_>>>()?;
            biases.push(abs_bias_at_k(&bags, &labels)?);
            match recall_at_k(&bags, &corpus.queries) {
                Ok(r) => recalls.push(r),
                Err(Error::NoRelevantImages) => {}
                Err(e) => return Err(e),
            }
            maps.push(map_at_k(&bags, &corpus.queries)?);
        }
        out.push(TradeoffPoint {
            fair_probability: p,
            abs_bias: Estimate::from_samples(&biases),
            recall: (!recalls.is_empty()).then(|| Estimate::from_samples(&recalls)),
            map: Estimate::from_samples(&maps),
        });
    }
    Ok(out)
}
