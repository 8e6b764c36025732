//! AbsBias@K, Bias@K, Recall@K and mAP@K on hand-built bags.

use std::collections::BTreeSet;

use fairsift::corpus::{AttributeLabel, LabelIndex, QueryRecord};
use fairsift::metrics::evaluate;
use fairsift::similarity::{RetrievalBag, ScoredImage};

fn bag(query_id: &str, ids: &[&str]) -> RetrievalBag {
    RetrievalBag {
        query_id: query_id.into(),
        items: ids.iter().map(|id| ScoredImage::new(*id, 0.0)).collect(),
        k: ids.len(),
    }
}

fn query(id: &str, relevant: &[&str]) -> QueryRecord {
    QueryRecord {
        id: id.into(),
        text: id.into(),
        embedding: vec![1.0],
        relevant_ids: relevant.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
    }
}

fn main() -> fairsift::Result<()> {
    use AttributeLabel::{Group, Neutral};
    let labels = LabelIndex::new(
        2,
        [("a", Group(0)), ("b", Group(0)), ("c", Group(1)), ("d", Neutral), ("e", Group(1))]
            .into_iter()
            .map(|(id, l)| (id.to_string(), l)),
    );
    // q1 leans toward group 0, q2 toward group 1: Bias@K cancels, AbsBias@K does not
    let bags = [bag("q1", &["b", "a", "d"]), bag("q2", &["c", "e", "d"])];
    let queries = [query("q1", &["a"]), query("q2", &["c", "d"])];

    let report = evaluate("demo", &bags, &queries, &labels, None)?;
    report.write_json(std::io::stdout())?;
    Ok(())
}
