//! Bias across similarity quantiles for an attribute-neutral model and a
//! biased one.

use fairsift::analysis::{generate_synthetic_corpus, query_bias_curve, query_score_spearman, SyntheticSpec};

fn main() -> fairsift::Result<()> {
    for model_bias in [0.0, 0.05] {
        let spec = SyntheticSpec { n_images: 10_000, n_queries: 3, model_bias, ..Default::default() };
        let corpus = generate_synthetic_corpus(&spec)?;
        println!("model_bias = {model_bias}");
        for q in &corpus.queries {
            let curve = query_bias_curve(&corpus, q, 20)?;
            let fit = curve.fit()?;
            let top = curve.bins.last().expect("bins");
            println!(
                "  {}: slope {:+.3}, top-bin bias {:.3}, spearman(score, g) {:+.3}",
                q.id,
                fit.slope,
                top.bias,
                query_score_spearman(&corpus, q)?
            );
        }
    }
    Ok(())
}
