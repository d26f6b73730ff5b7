//! Run files, ranking metrics and paired significance testing.
//!
//! Only queries with at least one relevant judgment are evaluated; a judged
//! query missing from the run counts as retrieving nothing. Relevance is
//! binary (grade > 0).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Qrels;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranked lists per query. Ranks are `1..=m` and scores never increase with rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the ranked list of one query, assigning ranks in the given order.
    pub fn insert(&mut self, query: &str, ranking: Vec<(String, f64)>) -> Result<()> {
        if let Some(w) = ranking.windows(2).find(|w| w[1].1 > w[0].1) {
            return Err(Error::InvalidParam(format!(
                "run for {query}: score of {} exceeds score of {}",
                w[1].0, w[0].0
            )));
        }
        let entries = ranking
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        self.queries.insert(query.to_string(), entries);
        Ok(())
    }

    pub fn get(&self, query: &str) -> Option<&[RunEntry]> {
        self.queries.get(query).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Doc ids per query, borrowed.
    pub fn view(&self) -> RankedView<'_> {
        RankedView {
            lists: self
                .queries
                .iter()
                .map(|(q, v)| (q.as_str(), v.iter().map(|e| e.doc_id.as_str()).collect()))
                .collect(),
        }
    }

    /// Writes TREC format: `qid Q0 docid rank score tag`.
    pub fn write_trec(&self, path: impl AsRef<Path>, tag: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (q, entries) in &self.queries {
            for e in entries {
                writeln!(out, "{q} Q0 {} {} {} {tag}", e.doc_id, e.rank, e.score)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a TREC run. Lists are ordered by the rank column, which must be
    /// `1..=m` per query.
    pub fn load_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut raw: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::malformed(path, i + 1, format!("expected 6 columns, found {}", cols.len())));
            }
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| Error::malformed(path, i + 1, format!("bad rank {:?}", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .map_err(|_| Error::malformed(path, i + 1, format!("bad score {:?}", cols[4])))?;
            raw.entry(cols[0].to_string()).or_default().push((
                i + 1,
                RunEntry {
                    doc_id: cols[2].to_string(),
                    score,
                    rank,
                },
            ));
        }
        let mut run = RunFile::new();
        for (q, mut entries) in raw {
            entries.sort_by_key(|(_, e)| e.rank);
            for (pos, (line, e)) in entries.iter().enumerate() {
                if e.rank != pos + 1 {
                    return Err(Error::malformed(path, *line, format!("query {q}: ranks are not 1..m")));
                }
                if pos > 0 && e.score > entries[pos - 1].1.score {
                    return Err(Error::malformed(path, *line, format!("query {q}: score increases with rank")));
                }
            }
            run.queries
                .insert(q, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(run)
    }
}

/// Borrowed ranked doc ids per query; the input of every metric.
#[derive(Debug, Clone, Default)]
pub struct RankedView<'a> {
    pub lists: HashMap<&'a str, Vec<&'a str>>,
}

impl<'a> RankedView<'a> {
    pub fn get(&self, query: &str) -> &[&'a str] {
        self.lists.get(query).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Precision(usize),
    Recall(usize),
    F1(usize),
    Map(usize),
    Ndcg(usize),
    Mrr,
    Mpr,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Precision(k) => write!(f, "p@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::F1(k) => write!(f, "f1@{k}"),
            Metric::Map(k) => write!(f, "map@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Mrr => write!(f, "mrr"),
            Metric::Mpr => write!(f, "mpr"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase();
        let bad = || Error::InvalidParam(format!("unknown metric {s:?}"));
        match lower.as_str() {
            "mrr" => return Ok(Metric::Mrr),
            "mpr" => return Ok(Metric::Mpr),
            _ => {}
        }
        let (name, k) = lower.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::InvalidParam(format!("metric cutoff must be >= 1 in {s:?}")));
        }
        match name {
            "p" | "precision" => Ok(Metric::Precision(k)),
            "r" | "recall" => Ok(Metric::Recall(k)),
            "f1" => Ok(Metric::F1(k)),
            "map" => Ok(Metric::Map(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn hits_at(ranked: &[&str], relevant: &BTreeSet<&str>, k: usize) -> usize {
    ranked.iter().take(k).filter(|d| relevant.contains(*d)).count()
}

fn average_precision(ranked: &[&str], relevant: &BTreeSet<&str>, k: usize) -> f64 {
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().take(k).enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len().min(k) as f64
}

fn ndcg(ranked: &[&str], relevant: &BTreeSet<&str>, k: usize) -> f64 {
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .fold(0.0, |acc, (i, _)| acc + gain(i));
    let ideal: f64 = (0..relevant.len().min(k)).map(gain).sum();
    dcg / ideal
}

fn reciprocal_rank(ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
    ranked
        .iter()
        .position(|d| relevant.contains(d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Sum of percentile ranks of the relevant documents; unretrieved ones count 0.
fn percentile_sum(ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
    let n = ranked.len() as f64;
    ranked
        .iter()
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .fold(0.0, |acc, (i, _)| acc + 100.0 * (1.0 - i as f64 / n))
}

impl Metric {
    /// Value of this metric for one query. For F1 this is the per-query F1,
    /// which is not what [`Metric::evaluate`] aggregates.
    pub fn per_query(&self, ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
        let r = relevant.len() as f64;
        match *self {
            Metric::Precision(k) => hits_at(ranked, relevant, k) as f64 / k as f64,
            Metric::Recall(k) => hits_at(ranked, relevant, k) as f64 / r,
            Metric::F1(k) => {
                let h = hits_at(ranked, relevant, k) as f64;
                f1(h / k as f64, h / r)
            }
            Metric::Map(k) => average_precision(ranked, relevant, k),
            Metric::Ndcg(k) => ndcg(ranked, relevant, k),
            Metric::Mrr => reciprocal_rank(ranked, relevant),
            Metric::Mpr => percentile_sum(ranked, relevant) / r,
        }
    }

    /// Aggregate value over all judged queries.
    ///
    /// F1 combines macro-averaged precision and recall; MPR averages over
    /// (query, relevant document) pairs; everything else is a macro mean.
    pub fn evaluate(&self, view: &RankedView<'_>, qrels: &Qrels) -> f64 {
        let queries = qrels.judged_queries();
        if queries.is_empty() {
            return 0.0;
        }
        let nq = queries.len() as f64;
        match *self {
            Metric::F1(k) => {
                let m = set_metrics_view(view, qrels, k, Averaging::Macro);
                m.f1
            }
            Metric::Mpr => {
                let (mut sum, mut pairs) = (0.0, 0usize);
                for q in &queries {
                    let rel = qrels.relevant(q);
                    sum += percentile_sum(view.get(q), &rel);
                    pairs += rel.len();
                }
                sum / pairs as f64
            }
            _ => {
                queries
                    .iter()
                    .map(|q| self.per_query(view.get(q), &qrels.relevant(q)))
                    .sum::<f64>()
                    / nq
            }
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of the top-`k` answer set.
pub fn set_metrics(run: &RunFile, qrels: &Qrels, k: usize, averaging: Averaging) -> Result<SetMetrics> {
    if k == 0 {
        return Err(Error::InvalidParam("cutoff must be >= 1".into()));
    }
    Ok(set_metrics_view(&run.view(), qrels, k, averaging))
}

fn set_metrics_view(view: &RankedView<'_>, qrels: &Qrels, k: usize, averaging: Averaging) -> SetMetrics {
    let queries = qrels.judged_queries();
    if queries.is_empty() {
        return SetMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let (precision, recall) = match averaging {
        Averaging::Macro => {
            let (mut p, mut r) = (0.0, 0.0);
            for q in &queries {
                let rel = qrels.relevant(q);
                let h = hits_at(view.get(q), &rel, k) as f64;
                p += h / k as f64;
                r += h / rel.len() as f64;
            }
            (p / queries.len() as f64, r / queries.len() as f64)
        }
        Averaging::Micro => {
            let (mut hits, mut rel_total) = (0usize, 0usize);
            for q in &queries {
                let rel = qrels.relevant(q);
                hits += hits_at(view.get(q), &rel, k);
                rel_total += rel.len();
            }
            (
                hits as f64 / (k * queries.len()) as f64,
                hits as f64 / rel_total as f64,
            )
        }
    };
    SetMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub queries: usize,
    /// Aggregate value per metric name.
    pub metrics: BTreeMap<String, f64>,
    /// Per query, per metric name.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric.to_string()).copied()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per query, one column per metric, sorted by query id.
    pub fn write_per_query_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let names: Vec<&String> = self.metrics.keys().collect();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["query".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (q, values) in &self.per_query {
            let mut row = vec![q.clone()];
            row.extend(names.iter().map(|m| values.get(*m).map_or(String::new(), |v| v.to_string())));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Rank-based metrics at each cutoff (P, recall, MAP, NDCG) plus MRR and MPR,
/// and the set-based F1 at every cutoff.
pub fn rank_metrics(run: &RunFile, qrels: &Qrels, cutoffs: &[usize]) -> Result<MetricReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::InvalidParam("cutoffs must be non-empty and >= 1".into()));
    }
    let mut metrics_list = Vec::new();
    for &k in cutoffs {
        metrics_list.extend([
            Metric::Precision(k),
            Metric::Recall(k),
            Metric::F1(k),
            Metric::Map(k),
            Metric::Ndcg(k),
        ]);
    }
    metrics_list.extend([Metric::Mrr, Metric::Mpr]);

    let view = run.view();
    let queries = qrels.judged_queries();
    let metrics = metrics_list
        .iter()
        .map(|m| (m.to_string(), m.evaluate(&view, qrels)))
        .collect();
    let per_query = queries
        .iter()
        .map(|q| {
            let rel = qrels.relevant(q);
            let values = metrics_list
                .iter()
                .map(|m| (m.to_string(), m.per_query(view.get(q), &rel)))
                .collect();
            (q.to_string(), values)
        })
        .collect();
    Ok(MetricReport {
        cutoffs: cutoffs.to_vec(),
        queries: queries.len(),
        metrics,
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub significant: bool,
}

/// Two-sided paired t-test; significant iff `p < alpha / corrections`.
///
/// Zero variance of the differences yields `t = 0, p = 1` when the mean
/// difference is zero and `t = ±inf, p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64, corrections: usize) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParam("paired t-test needs at least 2 pairs".into()));
    }
    if corrections == 0 {
        return Err(Error::InvalidParam("number of corrections must be >= 1".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var.sqrt() / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (t, 2.0 * dist.cdf(-t.abs()))
    };
    Ok(TTest {
        t,
        p,
        df,
        significant: p < alpha / corrections as f64,
    })
}
