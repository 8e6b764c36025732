use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeLabel, AttributeScheme, Corpus, ImageRecord, QueryRecord};
use crate::error::{Error, Result};
use crate::similarity::{rank_order, ScoredImage};

const OCCUPATIONS: &[&str] = &[
    "chef", "nurse", "engineer", "teacher", "pilot", "librarian", "carpenter", "pharmacist",
    "firefighter", "accountant", "baker", "dentist", "architect", "cashier", "farmer", "surgeon",
];

/// Parameters of a seeded synthetic corpus.
///
/// Embeddings are unit vectors built from three orthogonal parts:
/// coordinate 0 carries the two-group attribute (+1 for group 0, -1 for
/// group 1), coordinate 1 marks neutral images, and the remaining
/// coordinates hold a random content direction. Query vectors mix a random
/// content direction with coordinate 0, so every cosine score decomposes as
///
/// `score = c * content_match + model_bias * g(v)`
///
/// where `content_match` is the (noisy) content cosine and `c` a constant
/// scale. With `model_bias = 0` scores are independent of the attribute.
/// Each query's relevant set is the top `relevant_per_query` images by the
/// same formula evaluated on the noise-free content direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub d: usize,
    /// Share of group 0 among non-neutral images.
    pub alpha: f64,
    pub neutral_fraction: f64,
    /// Score shift `+model_bias` for group 0 and `-model_bias` for group 1.
    pub model_bias: f64,
    pub n_queries: usize,
    pub seed: u64,
    pub relevant_per_query: usize,
    /// Relative size of the content perturbation separating observed scores
    /// from ground-truth relevance.
    pub noise: f64,
    /// Weight of the attribute direction inside each image embedding; bounds
    /// `|model_bias|` from above.
    pub attribute_strength: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_images: 5000,
            d: 64,
            alpha: 0.5,
            neutral_fraction: 0.0,
            model_bias: 0.0,
            n_queries: 10,
            seed: 0,
            relevant_per_query: 100,
            noise: 0.5,
            attribute_strength: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_images == 0 {
            return fail("n_images must be at least 1".into());
        }
        if self.d < 4 {
            return fail(format!("d must be at least 4, got {}", self.d));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.neutral_fraction) {
            return fail(format!("neutral_fraction must lie in [0, 1), got {}", self.neutral_fraction));
        }
        if self.n_queries == 0 {
            return fail("n_queries must be at least 1".into());
        }
        if self.relevant_per_query > self.n_images {
            return fail(format!(
                "relevant_per_query {} exceeds n_images {}",
                self.relevant_per_query, self.n_images
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(self.attribute_strength > 0.0 && self.attribute_strength < 1.0) {
            return fail(format!("attribute_strength must lie in (0, 1), got {}", self.attribute_strength));
        }
        if self.model_bias.is_nan() || self.model_bias.abs() >= self.attribute_strength {
            return fail(format!(
                "|model_bias| must be below attribute_strength {}, got {}",
                self.attribute_strength, self.model_bias
            ));
        }
        Ok(())
    }

    pub fn scheme() -> AttributeScheme {
        AttributeScheme::gender()
    }

    /// Class-word embeddings matching this geometry: `+e0`, `-e0`, and `e1`
    /// for neutral.
    pub fn class_vectors(&self) -> Vec<(AttributeLabel, Vec<f64>)> {
        let axis = |i: usize, s: f64| {
            let mut v = vec![0.0; self.d];
            v[i] = s;
            v
        };
        vec![
            (AttributeLabel::Group(0), axis(0, 1.0)),
            (AttributeLabel::Group(1), axis(0, -1.0)),
            (AttributeLabel::Neutral, axis(1, 1.0)),
        ]
    }
}

fn unit_content(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        for x in &mut v[2..] {
            *x = rng.sample(StandardNormal);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let d = spec.d;
    let beta = spec.attribute_strength;
    let lambda = spec.model_bias / beta;
    let content_scale = (1.0 - beta * beta).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut images = Vec::with_capacity(spec.n_images);
    let mut clean = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let label = if rng.random::<f64>() < spec.neutral_fraction {
            AttributeLabel::Neutral
        } else if rng.random::<f64>() < spec.alpha {
            AttributeLabel::Group(0)
        } else {
            AttributeLabel::Group(1)
        };
        let w = unit_content(&mut rng, d);
        let xi = unit_content(&mut rng, d);
        let mut noisy: Vec<f64> = w.iter().zip(&xi).map(|(a, b)| a + spec.noise * b).collect();
        let n = noisy.iter().map(|x| x * x).sum::<f64>().sqrt();
        noisy.iter_mut().for_each(|x| *x *= content_scale / n);
        match label {
            AttributeLabel::Neutral => noisy[1] = beta,
            l => noisy[0] = beta * l.sign() as f64,
        }
        images.push(ImageRecord { id: format!("img{i:06}"), embedding: noisy, label: Some(label) });
        clean.push(w);
    }

    let query_scale = (1.0 - lambda * lambda).sqrt();
    let mut queries = Vec::with_capacity(spec.n_queries);
    for j in 0..spec.n_queries {
        let t = unit_content(&mut rng, d);
        let mut q: Vec<f64> = t.iter().map(|x| x * query_scale).collect();
        q[0] = lambda;

        let mut truth: Vec<ScoredImage> = images
            .iter()
            .zip(&clean)
            .map(|(im, w)| {
                let g = im.label.map_or(0, AttributeLabel::sign) as f64;
                ScoredImage::new(
                    im.id.clone(),
                    content_scale * query_scale * dot(w, &t) + spec.model_bias * g,
                )
            })
            .collect();
        truth.sort_by(rank_order);
        let relevant_ids = truth
            .into_iter()
            .take(spec.relevant_per_query)
            .map(|s| s.image_id)
            .collect();

        let word = OCCUPATIONS[j % OCCUPATIONS.len()];
        let text = if j < OCCUPATIONS.len() { word.to_string() } else { format!("{word} {}", j / OCCUPATIONS.len()) };
        queries.push(QueryRecord { id: format!("q{j:03}"), text, embedding: q, relevant_ids });
    }

    Ok(Corpus { d, images, queries, scheme: SyntheticSpec::scheme() })
}
