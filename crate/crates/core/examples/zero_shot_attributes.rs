//! Zero-shot attribute inference from class-word embeddings, scored
//! against the ground truth.

use fairsift::analysis::{generate_synthetic_corpus, SyntheticSpec};
use fairsift::attributes::{zero_shot_embed_predict, ClassEmbeddings};

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { n_images: 2000, neutral_fraction: 0.2, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;
    let classes = ClassEmbeddings::new(&corpus.scheme, spec.class_vectors())?;
    let preds = zero_shot_embed_predict(&corpus.images, &classes)?;

    let correct = corpus
        .images
        .iter()
        .filter(|im| preds.get(&im.id).map(|p| p.label) == im.label)
        .count();
    println!("accuracy {:.2}%", 100.0 * correct as f64 / corpus.images.len() as f64);
    for (id, p) in preds.iter().take(5) {
        println!("{id}: {} ({:.3})", corpus.scheme.label_name(p.label), p.confidence);
    }
    Ok(())
}
