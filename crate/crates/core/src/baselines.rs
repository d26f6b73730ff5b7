//! Comparable sentence-level re-rankers: SDR-style hierarchical inference
//! and Birch top-sentence aggregation, both over the same sentence embeddings.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, SegmentedDocument};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrScore {
    pub doc_id: String,
    /// Query paragraphs x candidate paragraphs, before normalization.
    pub paragraph_matrix: Vec<Vec<f64>>,
    pub total: f64,
}

fn paragraph_rows(doc: &SegmentedDocument, rows: &Range<usize>) -> Vec<Range<usize>> {
    doc.paragraphs
        .iter()
        .map(|p| rows.start + p.start..rows.start + p.end)
        .collect()
}

/// `P[i][j]`: mean over sentences of query paragraph `i` of the best cosine
/// against sentences of candidate paragraph `j`.
pub fn sdr_paragraph_matrix(
    query: &SegmentedDocument,
    doc: &SegmentedDocument,
    store: &EmbeddingStore,
) -> Result<Vec<Vec<f64>>> {
    let q_paras = paragraph_rows(query, &store.rows_for(query)?);
    let d_paras = paragraph_rows(doc, &store.rows_for(doc)?);
    Ok(q_paras
        .iter()
        .map(|qp| {
            d_paras
                .iter()
                .map(|dp| {
                    if qp.is_empty() || dp.is_empty() {
                        return 0.0;
                    }
                    let sum: f64 = qp
                        .clone()
                        .map(|a| {
                            dp.clone()
                                .map(|b| store.dot_rows(a, b))
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum();
                    sum / qp.len() as f64
                })
                .collect()
        })
        .collect())
}

/// Order-independent mean and population standard deviation.
fn moments(mut values: Vec<f64>) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

/// Scores candidates by z-normalizing each query-paragraph row across every
/// candidate's paragraph matrix, then averaging the per-row maxima.
///
/// A zero-variance row normalizes to 0. A candidate without paragraphs takes
/// the row's lowest normalized value. Sorted by descending total, ties in
/// input order.
pub fn sdr_score(
    query: &SegmentedDocument,
    candidates: &[String],
    store: &EmbeddingStore,
    collection: &Collection,
) -> Result<Vec<SdrScore>> {
    if candidates.is_empty() {
        return Err(Error::InvalidParam("sdr_score needs at least one candidate".into()));
    }
    let matrices = candidates
        .iter()
        .map(|id| sdr_paragraph_matrix(query, collection.require(id)?, store))
        .collect::<Result<Vec<_>>>()?;
    let rows = query.paragraphs.len();

    let mut totals = vec![0.0; candidates.len()];
    for i in 0..rows {
        let cells: Vec<f64> = matrices.iter().flat_map(|m| m[i].iter().copied()).collect();
        let (mean, sd) = moments(cells);
        let degenerate = sd <= 1e-12 * mean.abs().max(1.0);
        let norm = |x: f64| if degenerate { 0.0 } else { (x - mean) / sd };
        let row_max: Vec<Option<f64>> = matrices
            .iter()
            .map(|m| m[i].iter().map(|&x| norm(x)).reduce(f64::max))
            .collect();
        let floor = row_max.iter().flatten().copied().reduce(f64::min).unwrap_or(0.0);
        for (t, m) in totals.iter_mut().zip(&row_max) {
            *t += m.unwrap_or(floor);
        }
    }
    if rows > 0 {
        totals.iter_mut().for_each(|t| *t /= rows as f64);
    }

    let mut scored: Vec<SdrScore> = candidates
        .iter()
        .zip(matrices)
        .zip(totals)
        .map(|((id, m), total)| SdrScore {
            doc_id: id.clone(),
            paragraph_matrix: m,
            total,
        })
        .collect();
    scored.sort_by(|a, b| b.total.total_cmp(&a.total));
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BirchParams {
    /// Weight of the normalized first-stage score.
    pub a: f64,
    /// Weights of the top sentence scores; its length is the number of sentences used.
    pub weights: Vec<f64>,
}

impl Default for BirchParams {
    fn default() -> Self {
        BirchParams {
            a: 0.0,
            weights: vec![1.0; 3],
        }
    }
}

impl BirchParams {
    pub fn top(s: usize) -> Self {
        BirchParams {
            a: 0.0,
            weights: vec![1.0; s],
        }
    }

    pub fn s(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::InvalidParam(format!("birch a = {} must be in [0, 1]", self.a)));
        }
        if self.weights.is_empty() {
            return Err(Error::InvalidParam("birch needs at least one sentence weight".into()));
        }
        Ok(())
    }
}

/// Birch aggregation with bi-encoder sentence scores.
///
/// A candidate sentence scores its best cosine against any query sentence.
/// `Score_d = a * S_doc + (1 - a) * sum_i w_i * S_i`, where `S_i` is the i-th
/// best sentence score (0 when missing) and `S_doc` the first-stage score
/// min-max normalized within the candidates. Sorted descending, ties in input order.
pub fn birch_score(
    query: &SegmentedDocument,
    candidates: &[String],
    first_stage_scores: &[f64],
    store: &EmbeddingStore,
    collection: &Collection,
    params: &BirchParams,
) -> Result<Vec<(String, f64)>> {
    params.validate()?;
    if first_stage_scores.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            left: candidates.len(),
            right: first_stage_scores.len(),
        });
    }
    let q_rows = store.rows_for(query)?;
    let (lo, hi) = first_stage_scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;

    let mut out = Vec::with_capacity(candidates.len());
    for (id, &fs) in candidates.iter().zip(first_stage_scores) {
        let d_rows = store.rows_for(collection.require(id)?)?;
        let mut sentence_scores: Vec<f64> = d_rows
            .map(|d| {
                q_rows
                    .clone()
                    .map(|q| store.dot_rows(q, d))
                    .reduce(f64::max)
                    .unwrap_or(0.0)
            })
            .collect();
        sentence_scores.sort_by(|a, b| b.total_cmp(a));
        let evidence: f64 = params
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * sentence_scores.get(i).copied().unwrap_or(0.0))
            .sum();
        let doc_score = if span > 0.0 { (fs - lo) / span } else { 0.0 };
        out.push((id.clone(), params.a * doc_score + (1.0 - params.a) * evidence));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}
