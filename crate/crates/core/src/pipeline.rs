//! End-to-end runs: segment, embed, retrieve with BM25, re-rank, evaluate.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{birch_score, sdr_score, BirchParams};
use crate::corpus::{segment, segment_fixed_length, truncate, write_jsonl, Collection, Qrels, RawDocument, SegmentedDocument};
use crate::embed::{stub_embed, EmbeddingStore};
use crate::error::{Error, Result};
use crate::eval::{Metric, RunFile};
use crate::lexical::{build_index, Bm25Params, InvertedIndex, Tokenizer};
use crate::rprs::{rerank, PrsParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bm25,
    Rprs,
    RprsFreq,
    Sdr,
    Birch,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Bm25, Method::Rprs, Method::RprsFreq, Method::Sdr, Method::Birch];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::Rprs => "rprs",
            Method::RprsFreq => "rprs-freq",
            Method::Sdr => "sdr",
            Method::Birch => "birch",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    #[default]
    Sentence,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub mode: SegmentMode,
    pub max_sentence_words: usize,
    /// Window size in tokens when `mode` is fixed.
    pub unit_tokens: usize,
    /// Keep only a prefix of whole sentences of at most this many tokens.
    pub truncate: Option<usize>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            mode: SegmentMode::Sentence,
            max_sentence_words: crate::corpus::DEFAULT_MAX_SENTENCE_WORDS,
            unit_tokens: 64,
            truncate: None,
        }
    }
}

impl SegmentConfig {
    pub fn apply(&self, doc: &RawDocument) -> Result<SegmentedDocument> {
        let seg = match self.mode {
            SegmentMode::Sentence => segment(doc, self.max_sentence_words)?,
            SegmentMode::Fixed => segment_fixed_length(doc, self.unit_tokens)?,
        };
        match self.truncate {
            Some(l) => truncate(&seg, l),
            None => Ok(seg),
        }
    }

    pub fn apply_all(&self, docs: &[RawDocument]) -> Result<Vec<SegmentedDocument>> {
        docs.par_iter().map(|d| self.apply(d)).collect()
    }
}

/// Every knob of a pipeline run other than file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub segment: SegmentConfig,
    pub bm25: Bm25Params,
    /// Fraction of query terms kept by KLI reduction before BM25.
    pub kli: Option<f64>,
    /// Number of first-stage results kept per query.
    pub first_stage_depth: usize,
    pub method: Method,
    /// Re-ranking depth.
    pub depth: usize,
    pub rprs: PrsParams,
    pub birch: BirchParams,
    pub embed_dim: usize,
    pub seed: u64,
    pub objective: Metric,
    pub cutoffs: Vec<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            segment: SegmentConfig::default(),
            bm25: Bm25Params::default(),
            kli: None,
            first_stage_depth: 1000,
            method: Method::RprsFreq,
            depth: 50,
            rprs: PrsParams::default(),
            birch: BirchParams::default(),
            embed_dim: 64,
            seed: 0,
            objective: Metric::F1(5),
            cutoffs: vec![1, 5, 10],
        }
    }
}

impl Settings {
    /// Re-ranking parameters with `use_freq` forced by the method.
    pub fn prs_params(&self) -> PrsParams {
        PrsParams {
            use_freq: self.method != Method::Rprs,
            ..self.rprs
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.segment.max_sentence_words == 0 {
            out.push("segment.max_sentence_words must be at least 1".into());
        }
        if self.segment.unit_tokens == 0 {
            out.push("segment.unit_tokens must be at least 1".into());
        }
        if let Err(e) = self.bm25.validate() {
            out.push(format!("bm25: {e}"));
        }
        if let Some(f) = self.kli {
            if !(f > 0.0 && f <= 1.0) {
                out.push(format!("kli fraction {f} must be in (0, 1]"));
            }
        }
        if self.first_stage_depth == 0 {
            out.push("first_stage_depth must be at least 1".into());
        }
        if self.depth == 0 {
            out.push("depth must be at least 1".into());
        }
        if let Err(e) = self.prs_params().validate() {
            out.push(format!("rprs: {e}"));
        }
        if let Err(e) = self.birch.validate() {
            out.push(format!("birch: {e}"));
        }
        if self.embed_dim < 2 {
            out.push("embed_dim must be at least 2".into());
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            out.push("cutoffs must be non-empty and positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(v.join("; ")))
        }
    }

    /// Stable 16-hex-digit digest of the method-relevant parameters.
    pub fn params_hash(&self) -> String {
        let relevant = match self.method {
            Method::Bm25 => serde_json::json!({"bm25": self.bm25, "kli": self.kli}),
            Method::Rprs | Method::RprsFreq => {
                serde_json::json!({"depth": self.depth, "rprs": self.prs_params()})
            }
            Method::Sdr => serde_json::json!({"depth": self.depth}),
            Method::Birch => serde_json::json!({"depth": self.depth, "birch": self.birch}),
        };
        let text = relevant.to_string();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// TREC tag `method:params-hash`.
    pub fn run_tag(&self) -> String {
        format!("{}:{}", self.method, self.params_hash())
    }
}

/// BM25 first stage over the whole collection, excluding each query's own id.
pub fn retrieve(
    index: &InvertedIndex,
    queries: &[SegmentedDocument],
    params: Bm25Params,
    kli: Option<f64>,
    depth: usize,
) -> Result<RunFile> {
    params.validate()?;
    let tokenizer = Tokenizer::default();
    let lists = queries
        .par_iter()
        .map(|q| {
            let mut terms = tokenizer.tokenize_doc(q);
            if let Some(fraction) = kli {
                terms = index.kli_reduce(&terms, fraction)?;
            }
            Ok((q.id.as_str(), index.bm25_search(params, &terms, depth, Some(&q.id))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = RunFile::new();
    for (q, list) in lists {
        run.insert(q, list)?;
    }
    Ok(run)
}

/// One scored candidate, as dumped for later analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub q: String,
    pub d: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reranking {
    pub run: RunFile,
    /// Re-ranked candidates only, per query in final order.
    pub breakdown: Vec<BreakdownRecord>,
}

impl Reranking {
    /// One JSON record per re-ranked candidate, in run order.
    pub fn write_breakdown(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.breakdown)
    }
}

pub fn load_breakdown(path: impl AsRef<Path>) -> Result<Vec<BreakdownRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?);
        }
    }
    Ok(out)
}

/// Appends first-stage leftovers below every re-ranked score.
fn with_tail(mut scored: Vec<(String, f64)>, tail: Vec<String>) -> Vec<(String, f64)> {
    let floor = scored.iter().map(|s| s.1).fold(0.0f64, f64::min);
    scored.extend(tail.into_iter().enumerate().map(|(i, d)| (d, floor - 1.0 - i as f64)));
    scored
}

fn rerank_one(
    query: &SegmentedDocument,
    first_stage: &[(String, f64)],
    store: &EmbeddingStore,
    collection: &Collection,
    settings: &Settings,
) -> Result<(Vec<(String, f64)>, Vec<BreakdownRecord>)> {
    let ids: Vec<String> = first_stage.iter().map(|e| e.0.clone()).collect();
    let record = |d: &str, qp, dp, score| BreakdownRecord {
        q: query.id.clone(),
        d: d.to_string(),
        qp,
        dp,
        score,
    };
    match settings.method {
        Method::Bm25 => Ok((first_stage.to_vec(), Vec::new())),
        Method::Rprs | Method::RprsFreq => {
            let r = rerank(query, &ids, settings.depth, store, collection, &settings.prs_params())?;
            let records = r
                .scored
                .iter()
                .map(|s| record(&s.doc_id, Some(s.qp), Some(s.dp), s.score))
                .collect();
            Ok((r.ranking(), records))
        }
        Method::Sdr | Method::Birch => {
            let kept: Vec<&(String, f64)> = first_stage
                .iter()
                .filter(|e| e.0 != query.id)
                .take(settings.depth)
                .collect();
            let tail: Vec<String> = first_stage
                .iter()
                .filter(|e| e.0 != query.id)
                .skip(settings.depth)
                .map(|e| e.0.clone())
                .collect();
            let cands: Vec<String> = kept.iter().map(|e| e.0.clone()).collect();
            let scored: Vec<(String, f64)> = if cands.is_empty() {
                Vec::new()
            } else if settings.method == Method::Sdr {
                sdr_score(query, &cands, store, collection)?
                    .into_iter()
                    .map(|s| (s.doc_id, s.total))
                    .collect()
            } else {
                let fs: Vec<f64> = kept.iter().map(|e| e.1).collect();
                birch_score(query, &cands, &fs, store, collection, &settings.birch)?
            };
            let records = scored.iter().map(|(d, s)| record(d, None, None, *s)).collect();
            Ok((with_tail(scored, tail), records))
        }
    }
}

/// Re-ranks every query's first-stage list with `settings.method`.
pub fn rerank_run(
    queries: &[SegmentedDocument],
    first_stage: &RunFile,
    store: &EmbeddingStore,
    collection: &Collection,
    settings: &Settings,
) -> Result<Reranking> {
    settings.validate()?;
    let per_query = queries
        .par_iter()
        .map(|q| {
            let fs: Vec<(String, f64)> = first_stage
                .get(&q.id)
                .ok_or_else(|| Error::MissingRun(q.id.clone()))?
                .iter()
                .map(|e| (e.doc_id.clone(), e.score))
                .collect();
            rerank_one(q, &fs, store, collection, settings).map(|r| (q.id.as_str(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Reranking::default();
    for (q, (ranking, records)) in per_query {
        out.run.insert(q, ranking)?;
        out.breakdown.extend(records);
    }
    Ok(out)
}

/// Everything one pipeline run produces.
pub struct PipelineRun {
    pub collection: Collection,
    pub queries: Vec<SegmentedDocument>,
    pub store: EmbeddingStore,
    pub first_stage: RunFile,
    pub reranking: Reranking,
    /// Objective of the re-ranked run over the judged input queries.
    pub objective: f64,
    /// Objective of the first-stage run.
    pub first_stage_objective: f64,
}

impl PipelineRun {
    /// Word count of every collection document.
    pub fn doc_lengths(&self) -> HashMap<String, usize> {
        self.collection
            .iter()
            .map(|d| (d.id.clone(), d.token_count))
            .collect()
    }
}

/// Runs segmentation, stub embedding, BM25 retrieval, re-ranking and evaluation.
pub fn run(corpus: &[RawDocument], queries: &[RawDocument], qrels: &Qrels, settings: &Settings) -> Result<PipelineRun> {
    settings.validate()?;
    let docs = settings.segment.apply_all(corpus)?;
    let queries = settings.segment.apply_all(queries)?;
    let index = build_index(&docs)?;
    let store = stub_embed(docs.iter().chain(&queries), settings.embed_dim, settings.seed)?;
    let collection = Collection::new(docs)?;
    let first_stage = retrieve(&index, &queries, settings.bm25, settings.kli, settings.first_stage_depth)?;
    let reranking = rerank_run(&queries, &first_stage, &store, &collection, settings)?;
    let judged = qrels.restrict(queries.iter().map(|q| q.id.as_str()));
    let objective = settings.objective.evaluate(&reranking.run.view(), &judged);
    let first_stage_objective = settings.objective.evaluate(&first_stage.view(), &judged);
    Ok(PipelineRun {
        collection,
        queries,
        store,
        first_stage,
        reranking,
        objective,
        first_stage_objective,
    })
}
