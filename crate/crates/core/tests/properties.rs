use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use fairsift::attributes::PredictionSet;
use fairsift::corpus::{AttributeLabel, AttributeScheme, ImageRecord, QueryRecord};
use fairsift::metrics::group_imbalance;
use fairsift::selection::{pbm_select, pbm_select_tradeoff, SelectionConfig};
use fairsift::similarity::{cosine, rank_top_k};
use proptest::prelude::*;

fn label_strategy() -> impl Strategy<Value = AttributeLabel> {
    prop_oneof![
        4 => Just(AttributeLabel::Group(0)),
        3 => Just(AttributeLabel::Group(1)),
        1 => Just(AttributeLabel::Neutral),
    ]
}

/// Small integer coordinates, so equal scores happen often.
fn images_strategy(d: usize) -> impl Strategy<Value = Vec<ImageRecord>> {
    prop::collection::vec((prop::collection::vec(-2i8..=2, d), label_strategy()), 1..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (v, label))| ImageRecord {
                id: format!("im{i:02}"),
                embedding: v.into_iter().map(|x| f64::from(x) + 0.25).collect(),
                label: Some(label),
            })
            .collect()
    })
}

fn query(v: Vec<f64>) -> QueryRecord {
    QueryRecord { id: "q".into(), text: String::new(), embedding: v, relevant_ids: BTreeSet::new() }
}

fn by_rank(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn naive_scores(q: &QueryRecord, images: &[ImageRecord]) -> Vec<(String, f64, AttributeLabel)> {
    images
        .iter()
        .map(|im| (im.id.clone(), cosine(&q.embedding, &im.embedding).unwrap(), im.label.unwrap()))
        .collect()
}

/// Straight-line balanced selection that rescans every candidate at each step.
fn oracle_pbm(q: &QueryRecord, images: &[ImageRecord], k: usize) -> Vec<(String, f64)> {
    let mut left = naive_scores(q, images);
    let mut out: Vec<(String, f64)> = Vec::new();
    let best = |left: &[(String, f64, AttributeLabel)], want: AttributeLabel| {
        left.iter()
            .enumerate()
            .filter(|(_, c)| c.2 == want)
            .min_by(|a, b| by_rank(&(a.1 .0.clone(), a.1 .1), &(b.1 .0.clone(), b.1 .1)))
            .map(|(i, _)| i)
    };
    while out.len() < k && !left.is_empty() {
        let tops: Vec<usize> = [AttributeLabel::Group(0), AttributeLabel::Group(1)]
            .into_iter()
            .filter_map(|l| best(&left, l))
            .collect();
        let neutral = best(&left, AttributeLabel::Neutral);
        let mut take: Vec<usize> = if tops.is_empty() {
            vec![neutral.unwrap()]
        } else {
            let mean = tops.iter().map(|&i| left[i].1).sum::<f64>() / tops.len() as f64;
            match neutral {
                Some(n) if left[n].1 >= mean => vec![n],
                Some(n) if tops.len() > k - out.len() => vec![n],
                _ => tops.clone(),
            }
        };
        if take.len() > k - out.len() {
            take.sort_by(|&a, &b| by_rank(&(left[a].0.clone(), left[a].1), &(left[b].0.clone(), left[b].1)));
            take.truncate(k - out.len());
        }
        take.sort_unstable_by(|a, b| b.cmp(a));
        for i in take {
            let (id, s, _) = left.remove(i);
            out.push((id, s));
        }
    }
    out.sort_by(by_rank);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn top_k_matches_naive_sort(
        images in images_strategy(4),
        qv in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..70,
    ) {
        prop_assume!(qv.iter().any(|x| x.abs() > 1e-3));
        let q = query(qv);
        let mut naive: Vec<(String, f64)> =
            naive_scores(&q, &images).into_iter().map(|(id, s, _)| (id, s)).collect();
        naive.sort_by(by_rank);
        naive.truncate(k);
        let bag = rank_top_k(&q, &images, k).unwrap();
        let got: Vec<(String, f64)> = bag.items.iter().map(|s| (s.image_id.clone(), s.score)).collect();
        prop_assert_eq!(got, naive);
    }

    #[test]
    fn ranking_ignores_query_scale(
        images in images_strategy(3),
        qv in prop::collection::vec(-1.0f64..1.0, 3),
        scale in 0.01f64..100.0,
        k in 1usize..20,
    ) {
        prop_assume!(qv.iter().any(|x| x.abs() > 1e-3));
        let q = query(qv.clone());
        let a = rank_top_k(&q, &images, k).unwrap();
        let b = rank_top_k(&query(qv.iter().map(|x| x * scale).collect()), &images, k).unwrap();
        for (x, y) in a.items.iter().zip(&b.items) {
            prop_assert!((x.score - y.score).abs() < 1e-12);
        }
        // the rescaled bag is a valid top-k under the original scores, up to rounding
        let chosen: HashSet<&str> = b.ids().collect();
        let scores = naive_scores(&q, &images);
        let inside = scores.iter().filter(|s| chosen.contains(s.0.as_str())).map(|s| s.1).fold(f64::INFINITY, f64::min);
        let outside = scores.iter().filter(|s| !chosen.contains(s.0.as_str())).map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(inside >= outside - 1e-12);
    }

    #[test]
    fn pbm_matches_oracle_and_balances(
        images in images_strategy(3),
        qv in prop::collection::vec(-1.0f64..1.0, 3),
        k in 1usize..70,
    ) {
        prop_assume!(qv.iter().any(|x| x.abs() > 1e-3));
        let q = query(qv);
        let preds = PredictionSet::from_ground_truth(&images, &AttributeScheme::gender()).unwrap();
        let bag = pbm_select(&q, &images, &preds, &SelectionConfig::new(k)).unwrap();
        let got: Vec<(String, f64)> = bag.items.iter().map(|s| (s.image_id.clone(), s.score)).collect();
        prop_assert_eq!(&got, &oracle_pbm(&q, &images, k));

        prop_assert_eq!(bag.items.len(), k.min(images.len()));
        let ids: HashSet<&str> = bag.ids().collect();
        prop_assert_eq!(ids.len(), bag.items.len());

        let count = |g| images.iter().filter(|im| im.label == Some(AttributeLabel::Group(g))).count();
        if count(0) >= k && count(1) >= k {
            let labels = bag.ids().map(|id| preds.get(id).unwrap().label);
            prop_assert!(group_imbalance(labels, 2) <= 1);
        }
    }

    #[test]
    fn tradeoff_bag_is_a_distinct_subset(
        images in images_strategy(3),
        qv in prop::collection::vec(-1.0f64..1.0, 3),
        k in 1usize..70,
        p in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(qv.iter().any(|x| x.abs() > 1e-3));
        let q = query(qv);
        let preds = PredictionSet::from_ground_truth(&images, &AttributeScheme::gender()).unwrap();
        let config = SelectionConfig::new(k).with_fair_probability(p).with_seed(seed);
        let bag = pbm_select_tradeoff(&q, &images, &preds, &config).unwrap();
        let all: HashSet<&str> = images.iter().map(|im| im.id.as_str()).collect();
        let ids: HashSet<&str> = bag.ids().collect();
        prop_assert_eq!(ids.len(), k.min(images.len()));
        prop_assert!(ids.is_subset(&all));
        prop_assert_eq!(&bag, &pbm_select_tradeoff(&q, &images, &preds, &config).unwrap());
    }
}
