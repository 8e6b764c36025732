//! Sweeps the fair-step probability and prints the bias/recall frontier.

use fairsift::analysis::{generate_synthetic_corpus, tradeoff_sweep, SyntheticSpec};
use fairsift::attributes::{PredictionSet, PredictionTable};
use fairsift::selection::OddPickPolicy;

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { model_bias: 0.3, alpha: 0.65, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;
    let table = PredictionTable::from_global(PredictionSet::from_ground_truth(&corpus.images, &corpus.scheme)?);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let points = tradeoff_sweep(&corpus, &table, 100, &grid, 10, 7, OddPickPolicy::BestScore)?;

    println!("{:>4} {:>14} {:>14} {:>10}", "p", "AbsBias@100", "Recall@100", "mAP@100");
    for pt in points {
        let recall = pt.recall.expect("relevant sets are non-empty");
        println!(
            "{:>4.1} {:>8.4}±{:.4} {:>8.2}±{:.2} {:>10.2}",
            pt.fair_probability, pt.abs_bias.mean, pt.abs_bias.std_error, recall.mean, recall.std_error, pt.map.mean
        );
    }
    Ok(())
}
