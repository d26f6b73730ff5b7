//! Diagnostics emitted as CSV: length/score correlation, retrieval probability
//! by document length, and truncation and unit-size sweeps.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Qrels, RawDocument};
use crate::error::{Error, Result};
use crate::eval::{csv_err, RunFile};
use crate::pipeline::{run, SegmentConfig, SegmentMode, Settings};

/// Pearson product-moment correlation. Undefined when either variable is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `(query, doc, score)` for the first `depth` entries of every query in `run`.
pub fn run_pairs(run: &RunFile, depth: usize) -> Vec<(&str, &str, f64)> {
    run.queries()
        .flat_map(|(q, entries)| {
            entries
                .iter()
                .take(depth)
                .map(move |e| (q, e.doc_id.as_str(), e.score))
        })
        .collect()
}

/// Correlation between document length and score.
///
/// Pairs are pooled across queries, or with `per_query` the mean of the
/// per-query coefficients that are defined.
pub fn length_score_correlation<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    doc_lengths: &HashMap<String, usize>,
    per_query: bool,
) -> Result<f64> {
    let mut grouped: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (q, d, score) in pairs {
        let len = *doc_lengths
            .get(d)
            .ok_or_else(|| Error::UnknownDoc(d.to_string()))?;
        let entry = grouped.entry(if per_query { q } else { "" }).or_default();
        entry.0.push(len as f64);
        entry.1.push(score);
    }
    if !per_query {
        let (x, y) = grouped.remove("").unwrap_or_default();
        return pearson(&x, &y);
    }
    let rs: Vec<f64> = grouped.values().filter_map(|(x, y)| pearson(x, y).ok()).collect();
    if rs.is_empty() {
        return Err(Error::Undefined("no query has a defined correlation".into()));
    }
    Ok(rs.iter().sum::<f64>() / rs.len() as f64)
}

/// Word-length bins. Bin `i` covers `[edges[i], edges[i + 1])`; the last bin
/// also includes its upper edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthBins {
    edges: Vec<usize>,
}

impl Default for LengthBins {
    fn default() -> Self {
        LengthBins {
            edges: (1..=10).map(|k| k * 1000).collect(),
        }
    }
}

impl LengthBins {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidParam("length bins need at least two edges".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam("bin edges must be strictly increasing".into()));
        }
        Ok(LengthBins { edges })
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self, i: usize) -> (usize, usize) {
        (self.edges[i], self.edges[i + 1])
    }

    pub fn bin_of(&self, len: usize) -> Option<usize> {
        let last = *self.edges.last().expect("at least two edges");
        if len < self.edges[0] || len > last {
            return None;
        }
        if len == last {
            return Some(self.len() - 1);
        }
        Some(self.edges.partition_point(|&e| e <= len) - 1)
    }

    /// Number of lengths falling in each bin.
    pub fn counts(&self, lengths: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for l in lengths {
            if let Some(b) = self.bin_of(l) {
                counts[b] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinProbability {
    pub bin_lo: usize,
    pub bin_hi: usize,
    pub docs: usize,
    /// Relevant (query, doc) pairs over all (query, doc) pairs in the bin.
    pub p_rel: Option<f64>,
    /// Relevant pairs retrieved in the top `k` over relevant pairs in the bin.
    pub p_ret: Option<f64>,
}

/// Probability of relevance and of retrieval at `k`, per length bin, pooled
/// over judged queries. Empty bins report `None`.
pub fn retrieval_probability_by_length(
    run: &RunFile,
    qrels: &Qrels,
    doc_lengths: &HashMap<String, usize>,
    bins: &LengthBins,
    k: usize,
) -> Result<Vec<BinProbability>> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let queries = qrels.judged_queries();
    let docs = bins.counts(doc_lengths.values().copied());
    let mut relevant = vec![0usize; bins.len()];
    let mut retrieved = vec![0usize; bins.len()];
    for q in &queries {
        let top: Vec<&str> = run
            .get(q)
            .unwrap_or(&[])
            .iter()
            .take(k)
            .map(|e| e.doc_id.as_str())
            .collect();
        for d in qrels.relevant(q) {
            let Some(b) = doc_lengths.get(d).and_then(|&l| bins.bin_of(l)) else {
                continue;
            };
            relevant[b] += 1;
            if top.contains(&d) {
                retrieved[b] += 1;
            }
        }
    }
    Ok((0..bins.len())
        .map(|b| {
            let (bin_lo, bin_hi) = bins.bounds(b);
            let pairs = docs[b] * queries.len();
            BinProbability {
                bin_lo,
                bin_hi,
                docs: docs[b],
                p_rel: (pairs > 0).then(|| relevant[b] as f64 / pairs as f64),
                p_ret: (relevant[b] > 0).then(|| retrieved[b] as f64 / relevant[b] as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: String,
    pub metric: String,
    pub value: f64,
}

fn sweep(
    corpus: &[RawDocument],
    queries: &[RawDocument],
    qrels: &Qrels,
    points: Vec<(String, SegmentConfig)>,
    settings: &Settings,
) -> Result<Vec<SweepRow>> {
    let metric = settings.objective.to_string();
    points
        .into_par_iter()
        .map(|(x, segment)| {
            let s = Settings {
                segment,
                ..settings.clone()
            };
            let out = run(corpus, queries, qrels, &s)?;
            Ok(SweepRow {
                x,
                metric: metric.clone(),
                value: out.objective,
            })
        })
        .collect()
}

/// Objective after truncating every document to each length in turn.
pub fn truncation_sweep(
    corpus: &[RawDocument],
    queries: &[RawDocument],
    qrels: &Qrels,
    lengths: &[usize],
    settings: &Settings,
) -> Result<Vec<SweepRow>> {
    let points = lengths
        .iter()
        .map(|&l| {
            (
                l.to_string(),
                SegmentConfig {
                    truncate: Some(l),
                    ..settings.segment.clone()
                },
            )
        })
        .collect();
    sweep(corpus, queries, qrels, points, settings)
}

/// Objective with fixed-length units of each size, followed by a `sentence`
/// row using the sentence splitter.
pub fn unit_size_sweep(
    corpus: &[RawDocument],
    queries: &[RawDocument],
    qrels: &Qrels,
    unit_sizes: &[usize],
    settings: &Settings,
) -> Result<Vec<SweepRow>> {
    let mut points: Vec<(String, SegmentConfig)> = unit_sizes
        .iter()
        .map(|&u| {
            (
                u.to_string(),
                SegmentConfig {
                    mode: SegmentMode::Fixed,
                    unit_tokens: u,
                    ..settings.segment.clone()
                },
            )
        })
        .collect();
    points.push((
        "sentence".into(),
        SegmentConfig {
            mode: SegmentMode::Sentence,
            ..settings.segment.clone()
        },
    ));
    sweep(corpus, queries, qrels, points, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub model: String,
    pub dataset: String,
    pub r: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `x,metric,value`
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_rows(path.as_ref(), rows, &["x", "metric", "value"])
}

/// `model,dataset,r`
pub fn write_correlation_csv(path: impl AsRef<Path>, rows: &[CorrelationRow]) -> Result<()> {
    write_rows(path.as_ref(), rows, &["model", "dataset", "r"])
}

/// `bin_lo,bin_hi,p_rel,p_ret`; empty bins leave the probability fields blank.
pub fn write_bins_csv(path: impl AsRef<Path>, rows: &[BinProbability]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        bin_lo: usize,
        bin_hi: usize,
        p_rel: Option<f64>,
        p_ret: Option<f64>,
    }
    let rows: Vec<Row> = rows
        .iter()
        .map(|b| Row {
            bin_lo: b.bin_lo,
            bin_hi: b.bin_hi,
            p_rel: b.p_rel,
            p_ret: b.p_ret,
        })
        .collect();
    write_rows(path.as_ref(), &rows, &["bin_lo", "bin_hi", "p_rel", "p_ret"])
}
