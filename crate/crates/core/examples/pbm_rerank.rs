//! Group-balanced re-ranking next to plain top-K on a skewed corpus.

use fairsift::analysis::{generate_synthetic_corpus, SyntheticSpec};
use fairsift::attributes::PredictionSet;
use fairsift::metrics::bag_bias;
use fairsift::selection::{pbm_select, OddPickPolicy, SelectionConfig};
use fairsift::similarity::rank_top_k;

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { alpha: 0.7, neutral_fraction: 0.1, model_bias: 0.25, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;
    let preds = PredictionSet::from_ground_truth(&corpus.images, &corpus.scheme)?;
    let labels = corpus.labels();

    for k in [10, 11, 100] {
        let config = SelectionConfig::new(k).with_policy(OddPickPolicy::BestScore);
        println!("K = {k}");
        for q in corpus.queries.iter().take(3) {
            let top = rank_top_k(q, &corpus.images, k)?;
            let fair = pbm_select(q, &corpus.images, &preds, &config)?;
            let kept = fair.ids().filter(|id| top.ids().any(|t| t == *id)).count();
            println!(
                "  {}: top-K bias {:.3}, PBM bias {:.3}, {kept}/{k} top-K images kept",
                q.id,
                bag_bias(&top, &labels)?,
                bag_bias(&fair, &labels)?,
            );
        }
    }
    Ok(())
}
