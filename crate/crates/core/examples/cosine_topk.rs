//! Plain cosine top-K retrieval over a small synthetic corpus.

use fairsift::analysis::{generate_synthetic_corpus, SyntheticSpec};
use fairsift::similarity::rank_top_k;

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { n_images: 1000, d: 32, n_queries: 3, model_bias: 0.2, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;
    for q in &corpus.queries {
        let bag = rank_top_k(q, &corpus.images, 5)?;
        println!("{} ({})", q.id, q.text);
        for (rank, item) in bag.items.iter().enumerate() {
            println!("  {:>2}. {} {:.4}", rank + 1, item.image_id, item.score);
        }
    }
    Ok(())
}
