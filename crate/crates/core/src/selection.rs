//! Group-balanced re-ranking.
//!
//! Candidates are split into one ranked pool per predicted group plus a
//! neutral pool. Each step compares the mean score of the tuple formed by
//! the top of every non-empty group pool against the top neutral candidate:
//! the tuple is taken only when its mean is strictly greater, otherwise the
//! neutral candidate is taken. With ground-truth labels and ample pools this
//! yields bags whose group counts differ by at most `k mod 2`.
//!
//! Edge handling:
//! - an exhausted group drops out and later tuples are formed from the
//!   remaining groups;
//! - when the remaining capacity cannot hold a whole tuple, a neutral
//!   candidate is preferred (it adds no imbalance); without one, the
//!   [`OddPickPolicy`] picks which groups contribute;
//! - a bag comes back short only when fewer than `k` candidates exist.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::PredictionSet;
use crate::corpus::{AttributeLabel, ImageRecord, QueryRecord};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};
use crate::similarity::{cosine, rank_order, score_all, RetrievalBag, ScoredImage};

/// Which groups fill the last slots when a whole tuple no longer fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OddPickPolicy {
    /// Uniformly random groups, drawn from the query's seeded generator.
    RandomGroup,
    /// Groups whose current top candidates score highest.
    #[default]
    BestScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    /// Probability of taking a balanced step rather than the single best
    /// remaining candidate. `1.0` is pure group-balanced selection.
    pub fair_probability: f64,
    pub seed: u64,
    pub odd_pick_policy: OddPickPolicy,
}

impl SelectionConfig {
    pub fn new(k: usize) -> Self {
        Self { k, fair_probability: 1.0, seed: 0, odd_pick_policy: OddPickPolicy::BestScore }
    }

    pub fn with_fair_probability(mut self, p: f64) -> Self {
        self.fair_probability = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_policy(mut self, policy: OddPickPolicy) -> Self {
        self.odd_pick_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fair_probability) {
            return Err(Error::InvalidConfig(format!(
                "fair probability must lie in [0, 1], got {}",
                self.fair_probability
            )));
        }
        Ok(())
    }
}

/// Candidates split by predicted group, each pool in ranking order.
#[derive(Debug, Clone)]
pub struct GroupedPool {
    groups: Vec<Vec<ScoredImage>>,
    neutral: Vec<ScoredImage>,
    cursors: Vec<usize>,
    neutral_cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Group(usize),
    Neutral,
}

impl GroupedPool {
    /// Splits `scored` by the predictions. Every candidate needs a prediction.
    pub fn build(scored: &[ScoredImage], predictions: &PredictionSet) -> Result<Self> {
        let m = predictions.groups();
        let mut groups = vec![Vec::new(); m];
        let mut neutral = Vec::new();
        for s in scored {
            let pred = predictions
                .get(&s.image_id)
                .ok_or_else(|| Error::MissingPrediction(s.image_id.clone()))?;
            match pred.label {
                AttributeLabel::Group(g) if g < m => groups[g].push(s.clone()),
                AttributeLabel::Group(g) => {
                    return Err(Error::InvalidInput(format!(
                        "prediction for {:?} has group {g} >= {m}",
                        s.image_id
                    )))
                }
                AttributeLabel::Neutral => neutral.push(s.clone()),
            }
        }
        for pool in groups.iter_mut().chain(std::iter::once(&mut neutral)) {
            pool.sort_by(rank_order);
        }
        Ok(Self { cursors: vec![0; m], groups, neutral, neutral_cursor: 0 })
    }

    pub fn group_pool(&self, g: usize) -> &[ScoredImage] {
        &self.groups[g]
    }

    pub fn neutral_pool(&self) -> &[ScoredImage] {
        &self.neutral
    }

    pub fn remaining(&self) -> usize {
        self.groups.iter().zip(&self.cursors).map(|(p, c)| p.len() - c).sum::<usize>()
            + self.neutral.len()
            - self.neutral_cursor
    }

    fn top(&self, slot: Slot) -> Option<&ScoredImage> {
        match slot {
            Slot::Group(g) => self.groups[g].get(self.cursors[g]),
            Slot::Neutral => self.neutral.get(self.neutral_cursor),
        }
    }

    fn take(&mut self, slot: Slot) -> ScoredImage {
        let item = self.top(slot).expect("slot is non-empty").clone();
        match slot {
            Slot::Group(g) => self.cursors[g] += 1,
            Slot::Neutral => self.neutral_cursor += 1,
        }
        item
    }

    fn present_groups(&self) -> Vec<usize> {
        (0..self.groups.len()).filter(|&g| self.top(Slot::Group(g)).is_some()).collect()
    }

    /// The single best remaining candidate across all pools.
    fn best_slot(&self) -> Option<Slot> {
        (0..self.groups.len())
            .map(Slot::Group)
            .chain(std::iter::once(Slot::Neutral))
            .filter_map(|s| self.top(s).map(|item| (s, item)))
            .min_by(|a, b| rank_order(a.1, b.1))
            .map(|(s, _)| s)
    }
}

struct Selector<'a> {
    pool: GroupedPool,
    config: &'a SelectionConfig,
    odd_rng: ChaCha8Rng,
    out: Vec<ScoredImage>,
}

impl Selector<'_> {
    fn capacity(&self) -> usize {
        self.config.k - self.out.len()
    }

    /// One balanced step; returns false when nothing is left.
    fn fair_step(&mut self) -> bool {
        let present = self.pool.present_groups();
        let neutral = self.pool.top(Slot::Neutral).map(|n| n.score);
        if present.is_empty() {
            if neutral.is_none() {
                return false;
            }
            let n = self.pool.take(Slot::Neutral);
            self.out.push(n);
            return true;
        }
        let mean = present
            .iter()
            .map(|&g| self.pool.top(Slot::Group(g)).expect("present").score)
            .sum::<f64>()
            / present.len() as f64;
        if let Some(n) = neutral {
            if mean <= n {
                let n = self.pool.take(Slot::Neutral);
                self.out.push(n);
                return true;
            }
        }
        let cap = self.capacity();
        if present.len() <= cap {
            for g in present {
                let item = self.pool.take(Slot::Group(g));
                self.out.push(item);
            }
        } else if neutral.is_some() {
            let n = self.pool.take(Slot::Neutral);
            self.out.push(n);
        } else {
            for g in self.odd_pick(present, cap) {
                let item = self.pool.take(Slot::Group(g));
                self.out.push(item);
            }
        }
        true
    }

    fn odd_pick(&mut self, mut present: Vec<usize>, cap: usize) -> Vec<usize> {
        match self.config.odd_pick_policy {
            OddPickPolicy::BestScore => {
                let pool = &self.pool;
                present.sort_by(|&a, &b| {
                    rank_order(
                        pool.top(Slot::Group(a)).expect("present"),
                        pool.top(Slot::Group(b)).expect("present"),
                    )
                });
            }
            OddPickPolicy::RandomGroup => present.shuffle(&mut self.odd_rng),
        }
        present.truncate(cap);
        present
    }

    fn greedy_step(&mut self) -> bool {
        match self.pool.best_slot() {
            Some(slot) => {
                let item = self.pool.take(slot);
                self.out.push(item);
                true
            }
            None => false,
        }
    }
}

/// Runs the selection loop over candidates that are already scored for
/// `query_id`. Each iteration draws `u ~ U[0, 1)` and takes a balanced step
/// when `u < fair_probability`, else the best remaining candidate.
pub fn select_scored(
    query_id: &str,
    scored: &[ScoredImage],
    predictions: &PredictionSet,
    config: &SelectionConfig,
) -> Result<RetrievalBag> {
    config.validate()?;
    if scored.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut coin = keyed_rng(config.seed, query_id, Stream::Coin);
    let mut sel = Selector {
        pool: GroupedPool::build(scored, predictions)?,
        config,
        odd_rng: keyed_rng(config.seed, query_id, Stream::OddPick),
        out: Vec::with_capacity(config.k),
    };
    while sel.out.len() < config.k {
        let u: f64 = coin.random();
        let progressed = if u < config.fair_probability { sel.fair_step() } else { sel.greedy_step() };
        if !progressed {
            break;
        }
    }
    Ok(RetrievalBag::sorted(query_id, sel.out, config.k))
}

/// Group-balanced selection (`fair_probability` is treated as 1).
pub fn pbm_select(
    query: &QueryRecord,
    images: &[ImageRecord],
    predictions: &PredictionSet,
    config: &SelectionConfig,
) -> Result<RetrievalBag> {
    let config = config.with_fair_probability(1.0);
    pbm_select_tradeoff(query, images, predictions, &config)
}

/// Stochastic mix of balanced steps and plain best-score steps.
pub fn pbm_select_tradeoff(
    query: &QueryRecord,
    images: &[ImageRecord],
    predictions: &PredictionSet,
    config: &SelectionConfig,
) -> Result<RetrievalBag> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let scored = score_all(query, images)?;
    select_scored(&query.id, &scored, predictions, config)
}

/// Draws `k` candidates uniformly with replacement, either from every image
/// or only from the query's relevant set.
pub fn random_select(
    query: &QueryRecord,
    images: &[ImageRecord],
    k: usize,
    seed: u64,
    restrict_to_relevant: bool,
) -> Result<RetrievalBag> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let candidates: Vec<&ImageRecord> = images
        .iter()
        .filter(|im| !restrict_to_relevant || query.relevant_ids.contains(&im.id))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut rng = keyed_rng(seed, &query.id, Stream::Sample);
    let mut items = Vec::with_capacity(k);
    for _ in 0..k {
        let im = candidates[rng.random_range(0..candidates.len())];
        items.push(ScoredImage::new(im.id.clone(), cosine(&query.embedding, &im.embedding)?));
    }
    Ok(RetrievalBag::sorted(&query.id, items, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::Prediction;
    use crate::similarity::rank_top_k;
    use AttributeLabel::{Group, Neutral};

    fn preds(entries: &[(&str, AttributeLabel)]) -> PredictionSet {
        let mut p = PredictionSet::new(2);
        for (id, l) in entries {
            p.insert(id.to_string(), Prediction { label: *l, confidence: 1.0 });
        }
        p
    }

    fn scored(entries: &[(&str, f64)]) -> Vec<ScoredImage> {
        entries.iter().map(|(id, s)| ScoredImage::new(*id, *s)).collect()
    }

    fn ids(bag: &RetrievalBag) -> Vec<&str> {
        bag.ids().collect()
    }

    #[test]
    fn parity_without_neutrals() {
        let s = scored(&[("a", 0.9), ("b", 0.7), ("x", 0.8), ("y", 0.1)]);
        let p = preds(&[("a", Group(0)), ("b", Group(0)), ("x", Group(1)), ("y", Group(1))]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(4)).unwrap();
        assert_eq!(ids(&bag), vec!["a", "x", "b", "y"]);
    }

    #[test]
    fn neutral_beats_pair_then_pair_follows() {
        let s = scored(&[("m1", 0.9), ("f1", 0.8), ("n1", 0.95)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1)), ("n1", Neutral)]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(3)).unwrap();
        assert_eq!(ids(&bag), vec!["n1", "m1", "f1"]);
    }

    #[test]
    fn capacity_one_uses_best_score() {
        let s = scored(&[("m1", 0.9), ("f1", 0.8), ("n1", 0.95)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1)), ("n1", Neutral)]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(2)).unwrap();
        assert_eq!(ids(&bag), vec!["n1", "m1"]);
    }

    #[test]
    fn capacity_shortfall_prefers_neutral() {
        // pair mean .85 beats neutral .5, but only one slot is left
        let s = scored(&[("m1", 0.9), ("f1", 0.8), ("n1", 0.5)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1)), ("n1", Neutral)]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(1)).unwrap();
        assert_eq!(ids(&bag), vec!["n1"]);
    }

    #[test]
    fn tie_between_pair_mean_and_neutral_goes_to_neutral() {
        let s = scored(&[("m1", 0.9), ("f1", 0.7), ("n1", 0.8)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1)), ("n1", Neutral)]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(1)).unwrap();
        assert_eq!(ids(&bag), vec!["n1"]);
    }

    #[test]
    fn exhausted_group_degrades_gracefully() {
        let s = scored(&[("m1", 0.9), ("m2", 0.8), ("m3", 0.7), ("f1", 0.1), ("n1", 0.75)]);
        let p = preds(&[("m1", Group(0)), ("m2", Group(0)), ("m3", Group(0)), ("f1", Group(1)), ("n1", Neutral)]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(5)).unwrap();
        assert_eq!(bag.items.len(), 5);
        // (m1,f1) mean .5 < .75 -> n1; then pair; then singleton males
        assert_eq!(ids(&bag), vec!["m1", "m2", "n1", "m3", "f1"]);
    }

    #[test]
    fn short_bag_only_when_candidates_run_out() {
        let s = scored(&[("m1", 0.9), ("f1", 0.8)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1))]);
        let bag = select_scored("q", &s, &p, &SelectionConfig::new(5)).unwrap();
        assert_eq!(bag.items.len(), 2);
        assert_eq!(bag.k, 5);
    }

    #[test]
    fn random_group_policy_is_seeded() {
        let s = scored(&[("m1", 0.9), ("f1", 0.8), ("m2", 0.7), ("f2", 0.6)]);
        let p = preds(&[("m1", Group(0)), ("f1", Group(1)), ("m2", Group(0)), ("f2", Group(1))]);
        let cfg = SelectionConfig::new(3).with_policy(OddPickPolicy::RandomGroup);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let a = select_scored("q", &s, &p, &cfg.with_seed(seed)).unwrap();
            let b = select_scored("q", &s, &p, &cfg.with_seed(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.items.len(), 3);
            seen.insert(ids(&a).join(","));
        }
        assert_eq!(seen.len(), 2, "both groups should be picked for the odd slot: {seen:?}");
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let s = scored(&[("m1", 0.9), ("f1", 0.8)]);
        let p = preds(&[("m1", Group(0))]);
        assert_eq!(
            select_scored("q", &s, &p, &SelectionConfig::new(2)),
            Err(Error::MissingPrediction("f1".into()))
        );
    }

    #[test]
    fn rejects_bad_config() {
        let s = scored(&[("m1", 0.9)]);
        let p = preds(&[("m1", Group(0))]);
        assert!(select_scored("q", &s, &p, &SelectionConfig::new(0)).is_err());
        assert!(select_scored("q", &s, &p, &SelectionConfig::new(1).with_fair_probability(1.5)).is_err());
        assert_eq!(select_scored("q", &[], &p, &SelectionConfig::new(1)), Err(Error::EmptyCandidateSet));
    }

    fn image(id: &str, v: &[f64]) -> ImageRecord {
        ImageRecord { id: id.into(), embedding: v.to_vec(), label: None }
    }

    fn query(relevant: &[&str]) -> QueryRecord {
        QueryRecord {
            id: "q".into(),
            text: "q".into(),
            embedding: vec![1.0, 0.0],
            relevant_ids: relevant.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn tradeoff_limits() {
        let images: Vec<_> = (0..20)
            .map(|i| image(&format!("i{i:02}"), &[1.0, i as f64 * 0.1]))
            .collect();
        let p = preds(
            &images
                .iter()
                .enumerate()
                .map(|(i, im)| (im.id.as_str(), if i % 3 == 0 { Group(1) } else if i % 5 == 0 { Neutral } else { Group(0) }))
                .collect::<Vec<_>>(),
        );
        let q = query(&[]);
        let cfg = SelectionConfig::new(7).with_seed(3);
        assert_eq!(
            pbm_select_tradeoff(&q, &images, &p, &cfg.with_fair_probability(1.0)).unwrap(),
            pbm_select(&q, &images, &p, &cfg).unwrap()
        );
        assert_eq!(
            pbm_select_tradeoff(&q, &images, &p, &cfg.with_fair_probability(0.0)).unwrap(),
            rank_top_k(&q, &images, 7).unwrap()
        );
    }

    #[test]
    fn random_select_rules() {
        let images = [image("a", &[1.0, 0.0]), image("b", &[0.0, 1.0])];
        let bag = random_select(&query(&["b"]), &images, 3, 1, true).unwrap();
        assert_eq!(ids(&bag), vec!["b", "b", "b"]);
        assert_eq!(
            random_select(&query(&[]), &images, 3, 1, true),
            Err(Error::EmptyCandidateSet)
        );
        let a = random_select(&query(&[]), &images, 10, 9, false).unwrap();
        let b = random_select(&query(&[]), &images, 10, 9, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_select_frequencies() {
        let images = [image("a", &[1.0, 0.0]), image("b", &[0.0, 1.0])];
        let mut hits_a = 0usize;
        let trials = 100_000;
        for seed in 0..trials {
            let bag = random_select(&query(&[]), &images, 1, seed, false).unwrap();
            if bag.items[0].image_id == "a" {
                hits_a += 1;
            }
        }
        let freq = hits_a as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }
}
