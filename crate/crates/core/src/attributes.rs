//! Attribute predictors: zero-shot matching against class or prompted-query
//! embeddings, and a linear softmax classifier trained on image embeddings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{AttributeLabel, AttributeScheme, ImageRecord};
use crate::error::{Error, Result};
use crate::similarity::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub label: AttributeLabel,
    /// In `[0, 1]`.
    pub confidence: f64,
}

/// Predicted attribute per image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    groups: usize,
    entries: BTreeMap<String, Prediction>,
}

impl PredictionSet {
    pub fn new(groups: usize) -> Self {
        Self { groups, entries: BTreeMap::new() }
    }

    /// Uses each image's ground-truth label as a prediction with confidence 1.
    pub fn from_ground_truth(images: &[ImageRecord], scheme: &AttributeScheme) -> Result<Self> {
        let mut set = Self::new(scheme.m());
        for im in images {
            let label = im.label.ok_or_else(|| Error::MissingLabel(im.id.clone()))?;
            set.insert(im.id.clone(), Prediction { label, confidence: 1.0 });
        }
        Ok(set)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn insert(&mut self, id: String, p: Prediction) {
        self.entries.insert(id, p);
    }

    pub fn get(&self, id: &str) -> Option<&Prediction> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Prediction)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A global prediction set plus optional per-query overrides, as read from a
/// prediction file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    global: PredictionSet,
    per_query: BTreeMap<String, PredictionSet>,
}

impl PredictionTable {
    pub fn new(groups: usize) -> Self {
        Self { global: PredictionSet::new(groups), per_query: BTreeMap::new() }
    }

    pub fn from_global(set: PredictionSet) -> Self {
        Self { global: set, per_query: BTreeMap::new() }
    }

    pub fn global(&self) -> &PredictionSet {
        &self.global
    }

    pub fn global_mut(&mut self) -> &mut PredictionSet {
        &mut self.global
    }

    pub fn query_mut(&mut self, query_id: &str) -> &mut PredictionSet {
        let groups = self.global.groups;
        self.per_query
            .entry(query_id.to_string())
            .or_insert_with(|| PredictionSet::new(groups))
    }

    pub fn insert_query(&mut self, query_id: &str, set: PredictionSet) {
        self.per_query.insert(query_id.to_string(), set);
    }

    /// The query's own prediction set if the table has one, else the global set.
    pub fn for_query(&self, query_id: &str) -> &PredictionSet {
        self.per_query.get(query_id).unwrap_or(&self.global)
    }

    pub fn per_query(&self) -> impl Iterator<Item = (&str, &PredictionSet)> {
        self.per_query.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Labeled prototype vectors, one per class, kept in tie-break order
/// (groups by index, neutral last).
#[derive(Debug, Clone, PartialEq)]
struct Prototypes {
    groups: usize,
    vectors: Vec<(AttributeLabel, Vec<f64>)>,
}

impl Prototypes {
    fn new(scheme: &AttributeScheme, mut vectors: Vec<(AttributeLabel, Vec<f64>)>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidScheme("no class vectors".into()));
        }
        let d = vectors[0].1.len();
        for (label, v) in &vectors {
            scheme.check(*label).map_err(|e| Error::InvalidScheme(e.to_string()))?;
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
        }
        vectors.sort_by_key(|(l, _)| *l);
        if vectors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidScheme("more than one vector for a class".into()));
        }
        let groups = vectors.iter().filter(|(l, _)| !l.is_neutral()).count();
        if groups != scheme.m() {
            return Err(Error::InvalidScheme(format!(
                "expected one vector for each of {} groups, got {groups}",
                scheme.m()
            )));
        }
        Ok(Self { groups: scheme.m(), vectors })
    }

    fn dim(&self) -> usize {
        self.vectors[0].1.len()
    }

    fn classify(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        let scores = self
            .vectors
            .iter()
            .map(|(_, v)| cosine(x, v))
            .collect::<Result<Vec<_>>>()?;
        let best = argmax(&scores);
        Ok(Prediction { label: self.vectors[best].0, confidence: softmax(&scores)[best] })
    }

    fn predict_all(&self, images: &[ImageRecord]) -> Result<PredictionSet> {
        let mut out = PredictionSet::new(self.groups);
        for im in images {
            out.insert(im.id.clone(), self.classify(&im.embedding)?);
        }
        Ok(out)
    }
}

/// Text embeddings of the class words themselves (e.g. "Man", "Woman").
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings(Prototypes);

impl ClassEmbeddings {
    pub fn new(scheme: &AttributeScheme, vectors: Vec<(AttributeLabel, Vec<f64>)>) -> Result<Self> {
        Prototypes::new(scheme, vectors).map(Self)
    }
}

/// Embeddings of the query with a class adjective prepended
/// (e.g. "Male nurse"); the neutral entry uses the bare query.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptedQueryEmbeddings {
    pub query_id: String,
    prototypes: Prototypes,
}

impl PromptedQueryEmbeddings {
    pub fn new(
        query_id: impl Into<String>,
        scheme: &AttributeScheme,
        vectors: Vec<(AttributeLabel, Vec<f64>)>,
    ) -> Result<Self> {
        Ok(Self { query_id: query_id.into(), prototypes: Prototypes::new(scheme, vectors)? })
    }
}

pub fn zero_shot_embed_predict(images: &[ImageRecord], classes: &ClassEmbeddings) -> Result<PredictionSet> {
    classes.0.predict_all(images)
}

/// Predictions valid only for the candidate pool of `prompted.query_id`.
pub fn zero_shot_prompt_predict(
    images: &[ImageRecord],
    prompted: &PromptedQueryEmbeddings,
) -> Result<PredictionSet> {
    prompted.prototypes.predict_all(images)
}

/// First index of the maximum; later equal values never win.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingMeta {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: f64,
    /// Loss before each update, followed by the final loss.
    pub loss_history: Vec<f64>,
}

/// Gradient of the mean cross-entropy, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Linear softmax classifier over image embeddings. One row of weights per
/// class; classes follow the scheme's tie-break order.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    classes: Vec<AttributeLabel>,
    scheme: AttributeScheme,
    meta: Option<TrainingMeta>,
}

impl SoftmaxClassifier {
    /// Builds a classifier from explicit parameters. `weights` needs one row
    /// per class of `scheme.classes()`.
    pub fn from_parameters(
        scheme: &AttributeScheme,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let classes = scheme.classes();
        if weights.len() != classes.len() || biases.len() != classes.len() {
            return Err(Error::DimensionMismatch { expected: classes.len(), actual: weights.len() });
        }
        let d = weights[0].len();
        if let Some(row) = weights.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: row.len() });
        }
        if weights.iter().flatten().chain(&biases).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite classifier parameter".into()));
        }
        Ok(Self { weights, biases, classes, scheme: scheme.clone(), meta: None })
    }

    fn zeros(scheme: &AttributeScheme, d: usize) -> Self {
        let c = scheme.classes().len();
        Self::from_parameters(scheme, vec![vec![0.0; d]; c], vec![0.0; c]).expect("zero parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn classes(&self) -> &[AttributeLabel] {
        &self.classes
    }

    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding component".into()));
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    fn class_index(&self, label: AttributeLabel) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::InvalidInput(format!("label {label:?} not in scheme {:?}", self.scheme.name())))
    }

    /// Class probabilities for one embedding.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.logits(x)))
    }

    /// Mean cross-entropy over `data` and its analytic gradient.
    pub fn loss_and_gradient(&self, data: &[(Vec<f64>, AttributeLabel)]) -> Result<(f64, Gradient)> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let c = self.classes.len();
        let d = self.dim();
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        for (x, label) in data {
            self.check_input(x)?;
            let y = self.class_index(*label)?;
            let z = self.logits(x);
            loss += log_sum_exp(&z) - z[y];
            for (k, p) in softmax(&z).into_iter().enumerate() {
                let err = p - if k == y { 1.0 } else { 0.0 };
                gb[k] += err;
                for (g, xi) in gw[k].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        let n = data.len() as f64;
        gw.iter_mut().flatten().for_each(|g| *g /= n);
        gb.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, Gradient { weights: gw, biases: gb }))
    }

    fn step(&mut self, grad: &Gradient, lr: f64) {
        for (row, grow) in self.weights.iter_mut().zip(&grad.weights) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= lr * g;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            *b -= lr * g;
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy from zero-initialized
/// parameters. `seed` is recorded but unused: full-batch descent has no
/// randomness.
pub fn train_softmax_classifier(
    train: &[(Vec<f64>, AttributeLabel)],
    scheme: &AttributeScheme,
    lr: f64,
    epochs: usize,
    seed: u64,
) -> Result<SoftmaxClassifier> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    let mut clf = SoftmaxClassifier::zeros(scheme, train[0].0.len());
    let mut history = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (loss, grad) = clf.loss_and_gradient(train)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        clf.step(&grad, lr);
    }
    let (final_loss, _) = clf.loss_and_gradient(train)?;
    if !final_loss.is_finite() || clf.weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: epochs });
    }
    history.push(final_loss);
    clf.meta = Some(TrainingMeta { learning_rate: lr, epochs, seed, final_loss, loss_history: history });
    Ok(clf)
}

pub fn classifier_predict(clf: &SoftmaxClassifier, images: &[ImageRecord]) -> Result<PredictionSet> {
    let mut out = PredictionSet::new(clf.scheme.m());
    for im in images {
        let probs = clf.probabilities(&im.embedding)?;
        let best = argmax(&probs);
        out.insert(im.id.clone(), Prediction { label: clf.classes[best], confidence: probs[best] });
    }
    Ok(out)
}
