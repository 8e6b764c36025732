//! Trains the linear softmax attribute classifier on a labeled split and
//! reports held-out accuracy.

use fairsift::analysis::{generate_synthetic_corpus, SyntheticSpec};
use fairsift::attributes::{classifier_predict, train_softmax_classifier};

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { n_images: 3000, d: 32, neutral_fraction: 0.15, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;
    let (train, test) = corpus.images.split_at(1000);
    let data: Vec<_> = train.iter().map(|im| (im.embedding.clone(), im.label.expect("labeled"))).collect();

    let clf = train_softmax_classifier(&data, &corpus.scheme, 0.5, 300, 0)?;
    let meta = clf.training_meta().expect("trained");
    println!("loss {:.4} -> {:.4} over {} epochs", meta.loss_history[0], meta.final_loss, meta.epochs);

    let preds = classifier_predict(&clf, test)?;
    let correct = test.iter().filter(|im| preds.get(&im.id).map(|p| p.label) == im.label).count();
    println!("held-out accuracy {:.2}%", 100.0 * correct as f64 / test.len() as f64);
    Ok(())
}
