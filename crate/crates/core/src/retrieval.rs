//! Exact maximum-inner-product retrieval and ranking metrics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::index::{DocId, IndexState};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc: DocId,
    pub score: f64,
}

/// Top-k hits, best first. Equal scores are ordered by ascending row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub entries: Vec<Hit>,
}

impl RankedResult {
    /// 1-based rank of `row`, if present.
    pub fn rank_of(&self, row: usize) -> Option<usize> {
        self.entries.iter().position(|h| h.doc.row == row).map(|i| i + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Heap entry ordered so that the heap's maximum is the weakest kept hit.
#[derive(PartialEq)]
struct Weakest {
    score: f64,
    row: usize,
}

impl Eq for Weakest {}

impl Ord for Weakest {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Weakest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` rows with the largest `query·v_j`.
pub fn top_k(state: &IndexState, query: &[f32], k: usize) -> Result<RankedResult> {
    if query.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: query.len(),
        });
    }
    if k == 0 || k > state.len() {
        return Err(Error::KOutOfRange {
            k,
            rows: state.len(),
        });
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    state.vectors().for_each_row(|row, v| {
        let cand = Weakest {
            score: linalg::dot(query, v),
            row,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if heap.peek().is_some_and(|worst| cand < *worst) {
            heap.pop();
            heap.push(cand);
        }
    });
    let entries = heap
        .into_sorted_vec()
        .into_iter()
        .map(|w| Hit {
            doc: state.doc_id(w.row),
            score: w.score,
        })
        .collect();
    Ok(RankedResult { entries })
}

fn check_lists(golds: &[DocId], results: &[RankedResult]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::Empty("gold list"));
    }
    if golds.len() != results.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} golds but {} results",
            golds.len(),
            results.len()
        )));
    }
    Ok(())
}

/// Fraction of queries whose gold document is within the first `k` hits.
pub fn hits_at_k(golds: &[DocId], results: &[RankedResult], k: usize) -> Result<f64> {
    check_lists(golds, results)?;
    let hits = golds
        .iter()
        .zip(results)
        .filter(|(g, r)| r.rank_of(g.row).is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Mean reciprocal rank, counting ranks beyond `k` as zero.
pub fn mrr_at_k(golds: &[DocId], results: &[RankedResult], k: usize) -> Result<f64> {
    check_lists(golds, results)?;
    let sum: f64 = golds
        .iter()
        .zip(results)
        .map(|(g, r)| match r.rank_of(g.row) {
            Some(rank) if rank <= k => 1.0 / rank as f64,
            _ => 0.0,
        })
        .sum();
    Ok(sum / golds.len() as f64)
}

/// Weighted harmonic mean of the two validation scores; larger `beta`
/// weighs `y_orig` more. Defined as 0 when both are 0.
pub fn f_beta_target(y_tune: f64, y_orig: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * y_tune + y_orig;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * y_tune * y_orig / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr10: f64,
    pub count: usize,
}

/// Metrics for queries whose gold is an original document and for those
/// whose gold was added later. A side with no queries is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub original: Option<SplitMetrics>,
    pub new: Option<SplitMetrics>,
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(10))?;
        for (suffix, part) in [("orig", &self.original), ("new", &self.new)] {
            map.serialize_entry(&format!("hits1_{suffix}"), &part.map(|p| p.hits1))?;
            map.serialize_entry(&format!("hits5_{suffix}"), &part.map(|p| p.hits5))?;
            map.serialize_entry(&format!("hits10_{suffix}"), &part.map(|p| p.hits10))?;
            map.serialize_entry(&format!("mrr10_{suffix}"), &part.map(|p| p.mrr10))?;
        }
        map.serialize_entry("n_orig_queries", &self.original.map_or(0, |p| p.count))?;
        map.serialize_entry("n_new_queries", &self.new.map_or(0, |p| p.count))?;
        map.end()
    }
}

/// A query embedding with the id of the document it should retrieve.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub embedding: Vec<f32>,
    pub gold: String,
}

/// Hits@{1,5,10} and MRR@10 over one set of queries.
pub fn score_queries(state: &IndexState, queries: &[LabeledQuery]) -> Result<SplitMetrics> {
    let golds = queries
        .iter()
        .map(|q| state.lookup(&q.gold))
        .collect::<Result<Vec<_>>>()?;
    score_with_golds(state, queries, &golds)
}

fn score_with_golds(
    state: &IndexState,
    queries: &[LabeledQuery],
    golds: &[DocId],
) -> Result<SplitMetrics> {
    let k = 10.min(state.len());
    let results = queries
        .iter()
        .map(|q| top_k(state, &q.embedding, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitMetrics {
        hits1: hits_at_k(golds, &results, 1)?,
        hits5: hits_at_k(golds, &results, 5)?,
        hits10: hits_at_k(golds, &results, 10)?,
        mrr10: mrr_at_k(golds, &results, 10)?,
        count: golds.len(),
    })
}

/// Splits queries by whether their gold row is below `n0` and scores each
/// side separately.
pub fn evaluate_split(state: &IndexState, queries: &[LabeledQuery]) -> Result<MetricsReport> {
    let mut orig = (Vec::new(), Vec::new());
    let mut new = (Vec::new(), Vec::new());
    for q in queries {
        let gold = state.lookup(&q.gold)?;
        let side = if state.is_original(gold.row) {
            &mut orig
        } else {
            &mut new
        };
        side.0.push(q.clone());
        side.1.push(gold);
    }
    let score = |(qs, golds): (Vec<LabeledQuery>, Vec<DocId>)| -> Result<Option<SplitMetrics>> {
        if qs.is_empty() {
            Ok(None)
        } else {
            score_with_golds(state, &qs, &golds).map(Some)
        }
    };
    Ok(MetricsReport {
        original: score(orig)?,
        new: score(new)?,
    })
}
