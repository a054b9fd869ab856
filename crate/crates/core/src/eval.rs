//! Evaluation metrics: average precision, best F1, recall at a precision
//! floor, retrieval recall@k in both at-least-one and all-relevant readings,
//! and the embedding-dimension sweep harness.
//!
//! All threshold metrics are step-wise with no interpolation, and equal
//! scores form a single threshold group so every metric is invariant under
//! permutation of tied items and under strictly monotone score transforms.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{truncate, EmbeddingVector};
use crate::error::{Error, Result};
use crate::index::{HnswIndex, HnswParams};
use crate::stream::{ClipRef, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: bool,
}

impl ScoredLabel {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredLabel { score, label }
    }
}

/// Precision/recall at each distinct score threshold, highest first.
/// `threshold` is the lowest score included in the prediction set.
struct PrCurve {
    points: Vec<(f64, f64, f64)>, // (threshold, precision, recall)
}

fn pr_curve(data: &[ScoredLabel]) -> Result<PrCurve> {
    if data.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let total_pos = data.iter().filter(|d| d.label).count();
    let total_neg = data.len() - total_pos;
    if total_pos == 0 || total_neg == 0 {
        return Err(Error::invalid(
            "need at least one positive and one negative example",
        ));
    }
    let mut sorted: Vec<&ScoredLabel> = data.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        // Consume the whole tie group before emitting a point.
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        points.push((threshold, precision, recall));
    }
    Ok(PrCurve { points })
}

/// Step-wise average precision: `sum_k (R_k - R_{k-1}) * P_k` over distinct
/// thresholds.
pub fn average_precision(data: &[ScoredLabel]) -> Result<f64> {
    let curve = pr_curve(data)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(_, precision, recall) in &curve.points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Max recall over thresholds whose precision is at least `p_target`;
/// 0 when no threshold qualifies.
pub fn recall_at_precision(data: &[ScoredLabel], p_target: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target <= 1.0) {
        return Err(Error::invalid("p_target must lie in (0, 1]"));
    }
    let curve = pr_curve(data)?;
    Ok(curve
        .points
        .iter()
        .filter(|(_, p, _)| *p >= p_target)
        .map(|(_, _, r)| *r)
        .fold(0.0, f64::max))
}

/// Maximize `F1 = 2PR / (P + R)` over distinct thresholds; ties resolve to
/// the lowest threshold. Returns `(f1, threshold)`.
pub fn best_f1(data: &[ScoredLabel]) -> Result<(f64, f64)> {
    let curve = pr_curve(data)?;
    let mut best = (0.0, f64::NEG_INFINITY);
    for &(threshold, precision, recall) in &curve.points {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if f1 >= best.0 {
            best = (f1, threshold);
        }
    }
    Ok(best)
}

/// One retrieval query: the ranked results and the non-empty relevant set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalCase {
    pub query_id: String,
    pub ranked: Vec<String>,
    pub relevant: BTreeSet<String>,
}

impl RetrievalCase {
    pub fn validate(&self) -> Result<()> {
        if self.relevant.is_empty() {
            return Err(Error::invalid("relevant set must be non-empty"));
        }
        let unique: BTreeSet<&String> = self.ranked.iter().collect();
        if unique.len() != self.ranked.len() {
            return Err(Error::invalid("ranked list contains duplicates"));
        }
        Ok(())
    }
}

fn check_cases(cases: &[RetrievalCase], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if cases.is_empty() {
        return Err(Error::invalid("no retrieval cases"));
    }
    for c in cases {
        c.validate()?;
    }
    Ok(())
}

/// Fraction of cases whose top-k contains at least one relevant id.
pub fn recall_one_at_k(cases: &[RetrievalCase], k: usize) -> Result<f64> {
    check_cases(cases, k)?;
    let hits = cases
        .iter()
        .filter(|c| c.ranked.iter().take(k).any(|r| c.relevant.contains(r)))
        .count();
    Ok(hits as f64 / cases.len() as f64)
}

/// Fraction of cases whose top-k contains every relevant id.
pub fn recall_all_at_k(cases: &[RetrievalCase], k: usize) -> Result<f64> {
    check_cases(cases, k)?;
    let hits = cases
        .iter()
        .filter(|c| {
            let top: BTreeSet<&String> = c.ranked.iter().take(k).collect();
            c.relevant.iter().all(|r| top.contains(r))
        })
        .count();
    Ok(hits as f64 / cases.len() as f64)
}

/// A labeled corpus item for the dimension sweep.
#[derive(Debug, Clone)]
pub struct SweepItem {
    pub id: String,
    pub vector: EmbeddingVector,
}

/// A sweep query with its ground-truth relevant corpus ids.
#[derive(Debug, Clone)]
pub struct SweepQuery {
    pub query_id: String,
    pub vector: EmbeddingVector,
    pub relevant: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub k: usize,
    pub recall_one: f64,
    pub recall_all: f64,
}

pub const SWEEP_KS: [usize; 5] = [5, 10, 20, 50, 100];

/// For each dimension: truncate corpus and queries, rebuild the index, and
/// evaluate recall one/all at each k. Rows come out in (dim, k) order.
pub fn dimension_sweep(
    corpus: &[SweepItem],
    queries: &[SweepQuery],
    dims: &[usize],
    ks: &[usize],
    params: &HnswParams,
) -> Result<Vec<SweepRow>> {
    if corpus.is_empty() || queries.is_empty() {
        return Err(Error::invalid("sweep needs a corpus and queries"));
    }
    if dims.is_empty() || ks.is_empty() {
        return Err(Error::invalid("sweep needs dims and ks"));
    }
    let max_k = *ks.iter().max().expect("non-empty");
    let mut rows = Vec::with_capacity(dims.len() * ks.len());
    for &dim in dims {
        let mut index = HnswIndex::new(params.clone())?;
        for item in corpus {
            let id = ClipRef {
                stream_id: StreamId::new(item.id.clone())?,
                clip_index: 0,
            };
            index.insert(id, &truncate(&item.vector, dim)?)?;
        }
        let mut cases = Vec::with_capacity(queries.len());
        for q in queries {
            let hits = index.search_with_ef(
                &truncate(&q.vector, dim)?,
                max_k,
                params.ef_search.max(max_k),
            )?;
            cases.push(RetrievalCase {
                query_id: q.query_id.clone(),
                ranked: hits
                    .into_iter()
                    .map(|(id, _)| id.stream_id.as_str().to_string())
                    .collect(),
                relevant: q.relevant.clone(),
            });
        }
        for &k in ks {
            rows.push(SweepRow {
                dim,
                k,
                recall_one: recall_one_at_k(&cases, k)?,
                recall_all: recall_all_at_k(&cases, k)?,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of sweep rows, header `dim,k,recall_one,recall_all`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("dim,k,recall_one,recall_all\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.dim, r.k, r.recall_one, r.recall_all));
    }
    out
}
