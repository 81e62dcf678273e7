//! Click-log ingestion and behavior-neighbor mining.
//!
//! A click log is folded into a weighted bipartite query-item graph. The
//! graph then answers two lookups: a query's behavior neighbors (QBN, the
//! items clicked under it) and an item's behavior neighbors (IBN, the queries
//! that led to clicks on it), each ranked by accumulated click count.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{CoreError, Result};

/// One aggregated click observation from the search log.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClickRecord {
    pub query_text: String,
    pub item_id: String,
    pub item_text: String,
    /// Click count this record contributes; defaults to 1 in the file format.
    pub weight: u64,
}

impl ClickRecord {
    pub fn new(query_text: &str, item_id: &str, item_text: &str, weight: u64) -> Self {
        ClickRecord {
            query_text: query_text.into(),
            item_id: item_id.into(),
            item_text: item_text.into(),
            weight,
        }
    }

    fn check(&self) -> core::result::Result<(), String> {
        if self.query_text.is_empty() {
            return Err("empty query text".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item id".into());
        }
        if self.weight == 0 {
            return Err("weight must be >= 1".into());
        }
        Ok(())
    }
}

/// Weighted bipartite query-item click graph.
///
/// Both indices are kept in canonical (sorted-map) form, so graphs built from
/// the same multiset of records compare equal regardless of record order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BehaviorGraph {
    query_index: BTreeMap<String, BTreeMap<String, u64>>,
    item_index: BTreeMap<String, ItemEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ItemEntry {
    text: String,
    queries: BTreeMap<String, u64>,
}

/// Ranked behavior neighbors of one query or item.
///
/// Sorted by weight descending with ties broken by ascending text; at most
/// `k` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub owner: String,
    pub neighbors: Vec<(String, u64)>,
}

impl NeighborSet {
    pub fn empty(owner: &str) -> Self {
        NeighborSet {
            owner: owner.into(),
            neighbors: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbor texts in rank order.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.neighbors.iter().map(|(t, _)| t.as_str())
    }
}

/// Neighbor coverage of a dataset against a behavior graph.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageReport {
    /// Fraction of pairs where neither side has any behavior neighbor.
    pub frac_no_neighbors: f64,
    /// Fraction where only the query side has neighbors.
    pub frac_query_side_only: f64,
    /// Fraction where only the item side has neighbors.
    pub frac_item_side_only: f64,
    /// Fraction where both sides have neighbors.
    pub frac_both_sides: f64,
    pub n_pairs: usize,
}

/// Fold a stream of click records into a behavior graph.
///
/// Ingestion is a commutative fold: the same multiset of records produces the
/// same graph, and repeated records accumulate weight. Record indices are
/// 1-based in errors, mirroring line numbers in the click-log file format.
pub fn ingest_log<I>(records: I) -> Result<BehaviorGraph>
where
    I: IntoIterator<Item = ClickRecord>,
{
    let mut graph = BehaviorGraph::default();
    for (idx, rec) in records.into_iter().enumerate() {
        rec.check().map_err(|reason| CoreError::Parse {
            line: idx + 1,
            reason,
        })?;
        let entry = graph
            .item_index
            .entry(rec.item_id.clone())
            .or_insert_with(|| ItemEntry {
                text: rec.item_text.clone(),
                queries: BTreeMap::new(),
            });
        if entry.text != rec.item_text {
            return Err(CoreError::Parse {
                line: idx + 1,
                reason: alloc::format!(
                    "item `{}` appears with conflicting texts `{}` and `{}`",
                    rec.item_id,
                    entry.text,
                    rec.item_text
                ),
            });
        }
        *entry.queries.entry(rec.query_text.clone()).or_insert(0) += rec.weight;
        *graph
            .query_index
            .entry(rec.query_text)
            .or_default()
            .entry(rec.item_id)
            .or_insert(0) += rec.weight;
    }
    Ok(graph)
}

impl BehaviorGraph {
    /// Number of distinct (query, item) edges.
    pub fn edge_count(&self) -> usize {
        self.query_index.values().map(|m| m.len()).sum()
    }

    pub fn query_count(&self) -> usize {
        self.query_index.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_index.len()
    }

    /// Edges in canonical order: `(query_text, item_id, item_text, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str, u64)> {
        self.query_index.iter().flat_map(move |(q, items)| {
            items.iter().map(move |(i, &w)| {
                let text = self
                    .item_index
                    .get(i)
                    .map(|e| e.text.as_str())
                    .unwrap_or("");
                (q.as_str(), i.as_str(), text, w)
            })
        })
    }

    /// Accumulated weight of edge `(query, item)` as seen from the query
    /// index; used by the symmetry tests.
    pub fn weight_from_query(&self, query: &str, item_id: &str) -> Option<u64> {
        self.query_index.get(query)?.get(item_id).copied()
    }

    /// The same edge weight as seen from the item index.
    pub fn weight_from_item(&self, query: &str, item_id: &str) -> Option<u64> {
        self.item_index.get(item_id)?.queries.get(query).copied()
    }

    /// Top-k items clicked under `query_text`, as `(item_text, weight)`.
    /// Unknown queries yield an empty set.
    pub fn neighbors_of_query(&self, query_text: &str, k: usize) -> Result<NeighborSet> {
        check_k(k)?;
        let Some(items) = self.query_index.get(query_text) else {
            return Ok(NeighborSet::empty(query_text));
        };
        let mut ranked: Vec<(String, u64)> = items
            .iter()
            .map(|(id, &w)| {
                let text = self
                    .item_index
                    .get(id)
                    .map(|e| e.text.clone())
                    .unwrap_or_default();
                (text, w)
            })
            .collect();
        rank_truncate(&mut ranked, k);
        Ok(NeighborSet {
            owner: query_text.into(),
            neighbors: ranked,
        })
    }

    /// Top-k queries whose clicks reached `item_id`, as `(query_text, weight)`.
    /// Unknown items yield an empty set.
    pub fn neighbors_of_item(&self, item_id: &str, k: usize) -> Result<NeighborSet> {
        check_k(k)?;
        let Some(entry) = self.item_index.get(item_id) else {
            return Ok(NeighborSet::empty(item_id));
        };
        let mut ranked: Vec<(String, u64)> =
            entry.queries.iter().map(|(q, &w)| (q.clone(), w)).collect();
        rank_truncate(&mut ranked, k);
        Ok(NeighborSet {
            owner: item_id.into(),
            neighbors: ranked,
        })
    }

    /// Whether a pair has any behavior neighbor on either side.
    pub fn pair_has_neighbors(&self, query_text: &str, item_id: &str) -> bool {
        self.query_index.contains_key(query_text) || self.item_index.contains_key(item_id)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(CoreError::Contract("neighbor count k must be >= 1".into()));
    }
    Ok(())
}

fn rank_truncate(ranked: &mut Vec<(String, u64)>, k: usize) {
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
}

/// Fraction of dataset pairs with no behavior neighbors on either side, plus
/// the per-side breakdown.
pub fn coverage_stats(graph: &BehaviorGraph, ds: &Dataset, k: usize) -> Result<CoverageReport> {
    check_k(k)?;
    if ds.is_empty() {
        return Err(CoreError::Contract(
            "coverage_stats requires a non-empty dataset".into(),
        ));
    }
    let mut none = 0usize;
    let mut query_only = 0usize;
    let mut item_only = 0usize;
    let mut both = 0usize;
    for pair in ds.iter() {
        let q = !graph.neighbors_of_query(&pair.query, k)?.is_empty();
        let i = !graph.neighbors_of_item(&pair.item_id, k)?.is_empty();
        match (q, i) {
            (false, false) => none += 1,
            (true, false) => query_only += 1,
            (false, true) => item_only += 1,
            (true, true) => both += 1,
        }
    }
    let n = ds.len() as f64;
    Ok(CoverageReport {
        frac_no_neighbors: none as f64 / n,
        frac_query_side_only: query_only as f64 / n,
        frac_item_side_only: item_only as f64 / n,
        frac_both_sides: both as f64 / n,
        n_pairs: ds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledPair;
    use alloc::vec;

    fn rec(q: &str, i: &str, w: u64) -> ClickRecord {
        ClickRecord::new(q, i, &alloc::format!("text of {i}"), w)
    }

    #[test]
    fn empty_stream_gives_empty_graph() {
        let g = ingest_log(Vec::new()).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.query_count(), 0);
    }

    #[test]
    fn duplicate_records_accumulate() {
        let g = ingest_log(vec![rec("q1", "i1", 1), rec("q1", "i2", 1), rec("q1", "i1", 1)])
            .unwrap();
        assert_eq!(g.weight_from_query("q1", "i1"), Some(2));
        assert_eq!(g.weight_from_query("q1", "i2"), Some(1));
    }

    #[test]
    fn ingestion_is_order_independent() {
        let records = vec![
            rec("q1", "i1", 2),
            rec("q2", "i1", 5),
            rec("q1", "i2", 1),
            rec("q1", "i1", 1),
        ];
        let mut reversed = records.clone();
        reversed.reverse();
        assert_eq!(ingest_log(records).unwrap(), ingest_log(reversed).unwrap());
    }

    #[test]
    fn malformed_record_reports_line() {
        let err = ingest_log(vec![rec("q1", "i1", 1), ClickRecord::new("", "i2", "t", 1)])
            .unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 2, .. }));
        let err = ingest_log(vec![rec("q1", "i1", 0)]).unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 1, .. }));
    }

    #[test]
    fn conflicting_item_text_rejected() {
        let err = ingest_log(vec![
            ClickRecord::new("q1", "i1", "alpha", 1),
            ClickRecord::new("q2", "i1", "beta", 1),
        ])
        .unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 2, .. }));
    }

    #[test]
    fn edge_symmetry() {
        let g = ingest_log(vec![
            rec("q1", "i1", 2),
            rec("q2", "i1", 5),
            rec("q1", "i2", 1),
        ])
        .unwrap();
        for (q, i, _, w) in g.edges() {
            assert_eq!(g.weight_from_query(q, i), Some(w));
            assert_eq!(g.weight_from_item(q, i), Some(w));
        }
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn query_neighbors_ranked_by_weight() {
        let g = ingest_log(vec![rec("q1", "i1", 1), rec("q1", "i2", 1), rec("q1", "i1", 1)])
            .unwrap();
        let top1 = g.neighbors_of_query("q1", 1).unwrap();
        assert_eq!(top1.neighbors, vec![("text of i1".into(), 2)]);
        let all = g.neighbors_of_query("q1", 10).unwrap();
        assert_eq!(
            all.neighbors,
            vec![("text of i1".into(), 2), ("text of i2".into(), 1)]
        );
    }

    #[test]
    fn unknown_owner_gives_empty_set() {
        let g = ingest_log(vec![rec("q1", "i1", 1)]).unwrap();
        assert!(g.neighbors_of_query("nope", 3).unwrap().is_empty());
        assert!(g.neighbors_of_item("nope", 3).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_ascending_text() {
        let g = ingest_log(vec![
            ClickRecord::new("q1", "i9", "zebra", 3),
            ClickRecord::new("q1", "i2", "apple", 3),
        ])
        .unwrap();
        let ns = g.neighbors_of_query("q1", 2).unwrap();
        assert_eq!(
            ns.neighbors,
            vec![("apple".into(), 3), ("zebra".into(), 3)]
        );
    }

    #[test]
    fn item_neighbors_counting_case() {
        let g = ingest_log(vec![rec("q1", "i1", 2), rec("q2", "i1", 5)]).unwrap();
        let ns = g.neighbors_of_item("i1", 2).unwrap();
        assert_eq!(ns.neighbors, vec![("q2".into(), 5), ("q1".into(), 2)]);
    }

    #[test]
    fn k_larger_than_degree_saturates() {
        let g = ingest_log(vec![rec("q1", "i1", 2), rec("q2", "i1", 5)]).unwrap();
        assert_eq!(g.neighbors_of_item("i1", 100).unwrap().len(), 2);
    }

    #[test]
    fn k_zero_is_a_contract_error() {
        let g = ingest_log(vec![rec("q1", "i1", 1)]).unwrap();
        assert!(g.neighbors_of_query("q1", 0).is_err());
    }

    #[test]
    fn unbounded_neighbors_equal_adjacency() {
        let g = ingest_log(vec![
            rec("q1", "i1", 4),
            rec("q1", "i2", 2),
            rec("q1", "i3", 9),
        ])
        .unwrap();
        let ns = g.neighbors_of_query("q1", usize::MAX).unwrap();
        let mut weights: Vec<u64> = ns.neighbors.iter().map(|(_, w)| *w).collect();
        weights.sort_unstable();
        assert_eq!(weights, vec![2, 4, 9]);
        assert_eq!(ns.len(), 3);
    }

    fn pair(q: &str, i: &str) -> LabeledPair {
        LabeledPair {
            query_id: alloc::format!("id-{q}"),
            query: q.into(),
            item_id: i.into(),
            item: alloc::format!("text of {i}"),
            label: 1,
        }
    }

    #[test]
    fn coverage_all_covered() {
        let g = ingest_log(vec![rec("q1", "i1", 1), rec("q2", "i2", 1)]).unwrap();
        let ds = Dataset::new(vec![pair("q1", "i9"), pair("q9", "i2")]);
        let report = coverage_stats(&g, &ds, 5).unwrap();
        assert_eq!(report.frac_no_neighbors, 0.0);
        assert_eq!(report.frac_query_side_only, 0.5);
        assert_eq!(report.frac_item_side_only, 0.5);
    }

    #[test]
    fn coverage_empty_graph() {
        let g = BehaviorGraph::default();
        let ds = Dataset::new(vec![pair("q1", "i1")]);
        let report = coverage_stats(&g, &ds, 5).unwrap();
        assert_eq!(report.frac_no_neighbors, 1.0);
    }

    #[test]
    fn coverage_rejects_empty_dataset() {
        let g = BehaviorGraph::default();
        assert!(coverage_stats(&g, &Dataset::default(), 5).is_err());
    }
}
