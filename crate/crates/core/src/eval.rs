//! Retrieval metrics over [`Ranking`]s.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, Ranking};
use crate::error::{Error, Result};

/// Mean average precision plus the per-query values it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub per_query_ap: BTreeMap<String, f64>,
    pub n_queries: usize,
}

/// Non-interpolated average precision. Positives missing from the ranking
/// contribute zero.
pub fn average_precision(ranking: &Ranking, positives: &BTreeSet<String>) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::InvalidParameter("positive set is empty".into()));
    }
    Ok(ap_from_hits(
        ranking.ids().map(|id| positives.contains(id)),
        positives.len(),
    ))
}

/// AP from a relevance sequence; `n_positives` is the total positive count.
pub fn ap_from_hits(hits: impl IntoIterator<Item = bool>, n_positives: usize) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in hits.into_iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    sum / n_positives as f64
}

/// Averages AP over every query in `gt`.
pub fn mean_average_precision(rankings: &BTreeMap<String, Ranking>, gt: &GroundTruth) -> Result<MetricReport> {
    let mut per_query_ap = BTreeMap::new();
    for (q, positives) in gt.iter() {
        let ranking = rankings
            .get(q)
            .ok_or_else(|| Error::MissingRanking(q.to_string()))?;
        per_query_ap.insert(q.to_string(), average_precision(ranking, positives)?);
    }
    Ok(report_from_aps(per_query_ap))
}

pub fn report_from_aps(per_query_ap: BTreeMap<String, f64>) -> MetricReport {
    let n_queries = per_query_ap.len();
    let map = if n_queries == 0 {
        0.0
    } else {
        per_query_ap.values().sum::<f64>() / n_queries as f64
    };
    MetricReport {
        map,
        per_query_ap,
        n_queries,
    }
}

/// A metric computed over the top `k`, flagged when the ranking was shorter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetric {
    pub value: f64,
    /// Number of ranking entries actually inspected.
    pub depth: usize,
    /// True when `k` exceeded the ranking length.
    pub truncated: bool,
}

fn hits_in_prefix(ranking: &Ranking, positives: &BTreeSet<String>, k: usize) -> (usize, usize) {
    let depth = k.min(ranking.len());
    let hits = ranking
        .ids()
        .take(depth)
        .filter(|id| positives.contains(*id))
        .count();
    (hits, depth)
}

/// Hits in the top `k` divided by `k` (by the available prefix when shorter).
pub fn precision_at_k(ranking: &Ranking, positives: &BTreeSet<String>, k: usize) -> Result<CutoffMetric> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let (hits, depth) = hits_in_prefix(ranking, positives, k);
    Ok(CutoffMetric {
        value: if depth == 0 { 0.0 } else { hits as f64 / depth as f64 },
        depth,
        truncated: depth < k,
    })
}

/// Hits in the top `k` divided by the number of positives.
pub fn recall_at_k(ranking: &Ranking, positives: &BTreeSet<String>, k: usize) -> Result<CutoffMetric> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if positives.is_empty() {
        return Err(Error::InvalidParameter("positive set is empty".into()));
    }
    let (hits, depth) = hits_in_prefix(ranking, positives, k);
    Ok(CutoffMetric {
        value: hits as f64 / positives.len() as f64,
        depth,
        truncated: depth < k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RankedItem;
    use proptest::prelude::*;

    /// Ranking whose ids are `p{i}` for positives and `n{i}` otherwise.
    pub(crate) fn ranking_from(pattern: &[bool]) -> (Ranking, BTreeSet<String>) {
        let n = pattern.len();
        let entries = pattern
            .iter()
            .enumerate()
            .map(|(i, &pos)| RankedItem {
                index: i,
                id: if pos { format!("p{i}") } else { format!("n{i}") }.into(),
                score: (n - i) as f64,
            })
            .collect();
        let positives = pattern
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| format!("p{i}"))
            .collect();
        (Ranking::from_sorted(entries), positives)
    }

    #[test]
    fn ap_plus_minus_plus() {
        let (r, p) = ranking_from(&[true, false, true]);
        let ap = average_precision(&r, &p).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_and_total_miss() {
        let (r, p) = ranking_from(&[true, true, false, false]);
        assert_eq!(average_precision(&r, &p).unwrap(), 1.0);
        let (r, _) = ranking_from(&[false, false]);
        let p = BTreeSet::from(["elsewhere".to_string()]);
        assert_eq!(average_precision(&r, &p).unwrap(), 0.0);
    }

    #[test]
    fn ap_counts_missing_positives_as_zero() {
        let (r, mut p) = ranking_from(&[true, false]);
        p.insert("absent".into());
        assert_eq!(average_precision(&r, &p).unwrap(), 0.5);
    }

    #[test]
    fn ap_empty_positives_error() {
        let (r, _) = ranking_from(&[true]);
        assert!(average_precision(&r, &BTreeSet::new()).is_err());
    }

    fn gt_of(pairs: &[(&str, &[&str])]) -> GroundTruth {
        GroundTruth::new(
            pairs
                .iter()
                .map(|(q, ps)| (q.to_string(), ps.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn map_is_mean_of_aps() {
        let (r1, _) = ranking_from(&[true, false]);
        let (r2, _) = ranking_from(&[false, true]);
        let gt = gt_of(&[("a", &["p0"]), ("b", &["p1"])]);
        let rankings = BTreeMap::from([("a".to_string(), r1), ("b".to_string(), r2)]);
        let rep = mean_average_precision(&rankings, &gt).unwrap();
        assert_eq!(rep.map, 0.75);
        assert_eq!(rep.n_queries, 2);
        assert_eq!(rep.per_query_ap["b"], 0.5);
    }

    #[test]
    fn map_single_query_and_missing_query() {
        let (r, _) = ranking_from(&[false, true, true]);
        let gt = gt_of(&[("a", &["p1", "p2"])]);
        let rankings = BTreeMap::from([("a".to_string(), r.clone())]);
        let rep = mean_average_precision(&rankings, &gt).unwrap();
        assert_eq!(rep.map, rep.per_query_ap["a"]);
        let gt2 = gt_of(&[("a", &["p1"]), ("zz", &["p1"])]);
        match mean_average_precision(&rankings, &gt2) {
            Err(Error::MissingRanking(q)) => assert_eq!(q, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cutoff_fixtures() {
        let (r, p) = ranking_from(&[true, false, true, false]);
        assert_eq!(precision_at_k(&r, &p, 1).unwrap().value, 1.0);
        let p3 = precision_at_k(&r, &p, 3).unwrap();
        assert!((p3.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&r, &p, 3).unwrap().value, 1.0);
        assert_eq!(recall_at_k(&r, &p, 2).unwrap().value, 0.5);
        let long = precision_at_k(&r, &p, 10).unwrap();
        assert!(long.truncated);
        assert_eq!(long.depth, 4);
        assert_eq!(long.value, 0.5);
        assert!(precision_at_k(&r, &p, 0).is_err());
    }

    #[test]
    fn recall_at_positive_count() {
        let (r, p) = ranking_from(&[true, true, false]);
        assert_eq!(recall_at_k(&r, &p, p.len()).unwrap().value, 1.0);
    }

    proptest! {
        #[test]
        fn recall_monotone_in_k(pattern in proptest::collection::vec(any::<bool>(), 1..40)) {
            prop_assume!(pattern.iter().any(|&b| b));
            let (r, p) = ranking_from(&pattern);
            let mut prev = 0.0;
            for k in 1..=pattern.len() + 2 {
                let v = recall_at_k(&r, &p, k).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v >= prev);
                prev = v;
            }
        }
    }
}
