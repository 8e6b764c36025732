//! Bias and retrieval-quality metrics over retrieval bags.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::Serialize;

use crate::corpus::{AttributeLabel, LabelIndex, QueryRecord};
use crate::error::{Error, Result};
use crate::similarity::RetrievalBag;

/// Largest minus smallest group count. For two groups this is
/// `|#group0 - #group1|`; neutral labels are not counted.
pub fn group_imbalance<I: IntoIterator<Item = AttributeLabel>>(labels: I, groups: usize) -> usize {
    let mut counts = vec![0usize; groups.max(2)];
    for l in labels {
        if let AttributeLabel::Group(g) = l {
            if g >= counts.len() {
                counts.resize(g + 1, 0);
            }
            counts[g] += 1;
        }
    }
    counts.iter().max().unwrap() - counts.iter().min().unwrap()
}

fn bag_labels(bag: &RetrievalBag, labels: &LabelIndex) -> Result<Vec<AttributeLabel>> {
    bag.ids().map(|id| labels.get(id)).collect()
}

/// `(1/k) |sum g(v)|` over the bag, generalized to `(max - min)/k` over group
/// counts when there are more than two groups. The denominator is the bag's
/// configured `k`, so missing slots count as zero.
pub fn bag_bias(bag: &RetrievalBag, labels: &LabelIndex) -> Result<f64> {
    let ls = bag_labels(bag, labels)?;
    Ok(group_imbalance(ls, labels.groups()) as f64 / bag.k as f64)
}

/// `(1/k) sum g(v)` with group 0 weighing +1 and group 1 weighing -1.
pub fn signed_bag_bias(bag: &RetrievalBag, labels: &LabelIndex) -> Result<f64> {
    let ls = bag_labels(bag, labels)?;
    Ok(ls.iter().map(|l| l.sign()).sum::<i64>() as f64 / bag.k as f64)
}

fn mean_over<F>(bags: &[RetrievalBag], f: F) -> Result<f64>
where
    F: Fn(&RetrievalBag) -> Result<f64>,
{
    if bags.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for b in bags {
        total += f(b)?;
    }
    Ok(total / bags.len() as f64)
}

/// AbsBias@K: mean bag bias over queries.
pub fn abs_bias_at_k(bags: &[RetrievalBag], labels: &LabelIndex) -> Result<f64> {
    mean_over(bags, |b| bag_bias(b, labels))
}

/// Bias@K: mean signed bag bias; opposite signs cancel across queries.
pub fn bias_at_k(bags: &[RetrievalBag], labels: &LabelIndex) -> Result<f64> {
    mean_over(bags, |b| signed_bag_bias(b, labels))
}

fn query_map(queries: &[QueryRecord]) -> HashMap<&str, &QueryRecord> {
    queries.iter().map(|q| (q.id.as_str(), q)).collect()
}

fn lookup<'a>(map: &HashMap<&str, &'a QueryRecord>, id: &str) -> Result<&'a QueryRecord> {
    map.get(id).copied().ok_or_else(|| Error::UnknownQuery(id.to_string()))
}

/// Distinct relevant images in the bag.
pub fn recall_hits(bag: &RetrievalBag, query: &QueryRecord) -> usize {
    let ids: HashSet<&str> = bag.ids().collect();
    ids.into_iter().filter(|id| query.relevant_ids.contains(*id)).count()
}

/// Recall@K in percent, micro-averaged: total hits over total relevant.
/// Queries with an empty relevant set contribute nothing to either side.
pub fn recall_at_k(bags: &[RetrievalBag], queries: &[QueryRecord]) -> Result<f64> {
    let map = query_map(queries);
    let (mut hits, mut relevant) = (0usize, 0usize);
    for b in bags {
        let q = lookup(&map, &b.query_id)?;
        hits += recall_hits(b, q);
        relevant += q.relevant_ids.len();
    }
    if relevant == 0 {
        return Err(Error::NoRelevantImages);
    }
    Ok(100.0 * hits as f64 / relevant as f64)
}

/// `(1/k) sum_{r=1..k} |top-r ∩ relevant| / r`, a fraction in `[0, 1]`.
///
/// Precision is summed at every rank, relevant or not. Ranks past the end of
/// a short bag reuse the whole bag as the prefix.
pub fn average_precision(bag: &RetrievalBag, query: &QueryRecord) -> f64 {
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut total = 0.0;
    for r in 1..=bag.k {
        if let Some(item) = bag.items.get(r - 1) {
            if seen.insert(item.image_id.as_str()) && query.relevant_ids.contains(&item.image_id) {
                hits += 1;
            }
        }
        total += hits as f64 / r as f64;
    }
    total / bag.k as f64
}

/// mAP@K in percent: mean of [`average_precision`] over bags.
pub fn map_at_k(bags: &[RetrievalBag], queries: &[QueryRecord]) -> Result<f64> {
    let map = query_map(queries);
    mean_over(bags, |b| Ok(average_precision(b, lookup(&map, &b.query_id)?))).map(|v| 100.0 * v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub bag_bias: f64,
    pub signed_bias: f64,
    pub recall_hits: usize,
    pub relevant: usize,
    pub avg_prec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub abs_bias_at_k: f64,
    pub bias_at_k: f64,
    /// `None` when no query has relevant images.
    pub recall_at_k_percent: Option<f64>,
    pub map_at_k_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub k: usize,
    pub method: String,
    pub seed: Option<u64>,
    pub aggregate: AggregateMetrics,
    pub per_query: BTreeMap<String, QueryMetrics>,
}

/// Computes every metric for a set of bags sharing one `k`.
pub fn evaluate(
    method: &str,
    bags: &[RetrievalBag],
    queries: &[QueryRecord],
    labels: &LabelIndex,
    seed: Option<u64>,
) -> Result<EvaluationReport> {
    let first = bags.first().ok_or(Error::EmptyInput)?;
    if let Some(b) = bags.iter().find(|b| b.k != first.k) {
        return Err(Error::InvalidInput(format!(
            "bags disagree on k: {} vs {} (query {:?})",
            first.k, b.k, b.query_id
        )));
    }
    let map = query_map(queries);
    let mut per_query = BTreeMap::new();
    for b in bags {
        let q = lookup(&map, &b.query_id)?;
        per_query.insert(
            b.query_id.clone(),
            QueryMetrics {
                bag_bias: bag_bias(b, labels)?,
                signed_bias: signed_bag_bias(b, labels)?,
                recall_hits: recall_hits(b, q),
                relevant: q.relevant_ids.len(),
                avg_prec: average_precision(b, q),
            },
        );
    }
    let recall = match recall_at_k(bags, queries) {
        Ok(r) => Some(r),
        Err(Error::NoRelevantImages) => None,
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport {
        k: first.k,
        method: method.to_string(),
        seed,
        aggregate: AggregateMetrics {
            abs_bias_at_k: abs_bias_at_k(bags, labels)?,
            bias_at_k: bias_at_k(bags, labels)?,
            recall_at_k_percent: recall,
            map_at_k_percent: map_at_k(bags, queries)?,
        },
        per_query,
    })
}

impl EvaluationReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Per-query table as CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "query_id,bag_bias,signed_bias,recall_hits,relevant,avg_prec")?;
        for (id, m) in &self.per_query {
            writeln!(
                w,
                "{id},{},{},{},{},{}",
                m.bag_bias, m.signed_bias, m.recall_hits, m.relevant, m.avg_prec
            )?;
        }
        Ok(())
    }
}
