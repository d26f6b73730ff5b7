//! Proportional relevance scoring over pooled sentence neighbors.
//!
//! For one query the first-stage candidates are pooled into a single set of
//! sentences. Every query sentence picks its top-`n` most similar pool
//! sentences (its neighbor list); a candidate is scored by how many query
//! sentences it reaches through those lists (query proportion) and how many of
//! its own sentences appear in them (document proportion). The frequency
//! variant replaces the 0/1 clamp with a BM25-style saturation
//! `x / (x + k1 * ((1 - b) + b * dl / avgdl))`, where lengths count sentences
//! and `avgdl` is taken over the pool.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, SegmentedDocument};
use crate::embed::{EmbeddingStore, SentenceRef};
use crate::error::{Error, Result};

/// Largest neighbor list size accepted by [`PrsParams`].
pub const MAX_N: usize = 10;

/// Which length plays `dl` in the query-side saturation denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthSource {
    /// Sentence count of the candidate being scored.
    #[default]
    Candidate,
    /// Sentence count of the query.
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrsParams {
    pub n: usize,
    pub k1: f64,
    pub b: f64,
    pub use_freq: bool,
    pub use_qp: bool,
    pub use_dp: bool,
    /// Clamp per-sentence match counts to 1. Ignored when `use_freq` is set.
    pub use_min: bool,
    pub query_length: LengthSource,
}

impl Default for PrsParams {
    fn default() -> Self {
        PrsParams::freq(4, 2.8, 1.0)
    }
}

impl PrsParams {
    pub fn base(n: usize) -> Self {
        PrsParams {
            n,
            k1: 0.0,
            b: 0.0,
            use_freq: false,
            use_qp: true,
            use_dp: true,
            use_min: true,
            query_length: LengthSource::Candidate,
        }
    }

    pub fn freq(n: usize, k1: f64, b: f64) -> Self {
        PrsParams {
            k1,
            b,
            use_freq: true,
            ..PrsParams::base(n)
        }
    }

    pub fn with_n(self, n: usize) -> Self {
        PrsParams { n, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(1..=MAX_N).contains(&self.n) {
            problems.push(format!("n = {} must be in [1, {MAX_N}]", self.n));
        }
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            problems.push(format!("k1 = {} must be >= 0", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            problems.push(format!("b = {} must be in [0, 1]", self.b));
        }
        if !self.use_qp && !self.use_dp {
            problems.push("at least one of use_qp / use_dp must be enabled".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(problems.join("; ")))
        }
    }

    /// Short stable description, used in run tags.
    pub fn describe(&self) -> String {
        let mut s = if self.use_freq {
            format!("n={},k1={},b={}", self.n, self.k1, self.b)
        } else {
            format!("n={}", self.n)
        };
        if !self.use_qp {
            s.push_str(",no-qp");
        }
        if !self.use_dp {
            s.push_str(",no-dp");
        }
        if !self.use_freq && !self.use_min {
            s.push_str(",no-min");
        }
        if self.use_freq && self.query_length == LengthSource::Query {
            s.push_str(",dl=query");
        }
        s
    }
}

/// The top-k first-stage candidates of one query and their pooled sentences.
///
/// Pool slots are ordered by `(doc_id, sentence index)`, so ascending slot
/// order is the sentence tie-break order.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub query_id: String,
    /// Candidate ids in first-stage order.
    pub candidates: Vec<String>,
    /// Sentence count per candidate, aligned with `candidates`.
    pub doc_sentence_counts: Vec<usize>,
    pub avgdl: f64,
    /// Store row of each pool slot.
    pool_rows: Vec<usize>,
    /// Candidate index of each pool slot.
    slot_candidate: Vec<u32>,
    /// Slot range of each candidate.
    candidate_slots: Vec<Range<usize>>,
    query_rows: Range<usize>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.pool_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool_rows.is_empty()
    }

    pub fn pool_rows(&self) -> &[usize] {
        &self.pool_rows
    }

    pub fn query_len(&self) -> usize {
        self.query_rows.len()
    }

    pub fn candidate_index(&self, doc_id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == doc_id)
    }

    fn require_candidate(&self, doc_id: &str) -> Result<usize> {
        self.candidate_index(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn sentence_count(&self, doc_id: &str) -> Option<usize> {
        self.candidate_index(doc_id)
            .map(|i| self.doc_sentence_counts[i])
    }

    /// The sentence held by pool slot `slot`.
    pub fn slot_ref(&self, slot: usize) -> SentenceRef {
        let c = self.slot_candidate[slot] as usize;
        SentenceRef::new(
            self.candidates[c].clone(),
            slot - self.candidate_slots[c].start,
        )
    }
}

/// Pools the sentences of the first `depth` candidates, skipping the query's
/// own document.
pub fn build_pool(
    query: &SegmentedDocument,
    first_stage: &[String],
    depth: usize,
    store: &EmbeddingStore,
    collection: &Collection,
) -> Result<CandidatePool> {
    if depth == 0 {
        return Err(Error::InvalidParam("re-ranking depth must be at least 1".into()));
    }
    let query_rows = store.rows_for(query)?;
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for id in first_stage.iter().filter(|id| **id != query.id) {
        if candidates.len() == depth {
            break;
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        candidates.push(id.clone());
    }

    let mut doc_rows = Vec::with_capacity(candidates.len());
    for id in &candidates {
        let doc = collection.require(id)?;
        doc_rows.push(store.rows_for(doc)?);
    }
    let doc_sentence_counts: Vec<usize> = doc_rows.iter().map(Range::len).collect();
    let avgdl = if candidates.is_empty() {
        0.0
    } else {
        doc_sentence_counts.iter().sum::<usize>() as f64 / candidates.len() as f64
    };

    let mut by_id: Vec<usize> = (0..candidates.len()).collect();
    by_id.sort_by(|&a, &b| candidates[a].cmp(&candidates[b]));
    let mut pool_rows = Vec::new();
    let mut slot_candidate = Vec::new();
    let mut candidate_slots = vec![0..0; candidates.len()];
    for c in by_id {
        let start = pool_rows.len();
        pool_rows.extend(doc_rows[c].clone());
        slot_candidate.extend(std::iter::repeat_n(c as u32, doc_rows[c].len()));
        candidate_slots[c] = start..pool_rows.len();
    }

    Ok(CandidatePool {
        query_id: query.id.clone(),
        candidates,
        doc_sentence_counts,
        avgdl,
        pool_rows,
        slot_candidate,
        candidate_slots,
        query_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub slot: u32,
    pub cosine: f64,
}

/// Per query sentence, the most similar pool sentences by descending cosine
/// (ties by ascending doc id, then sentence index).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub lists: Vec<Vec<Neighbor>>,
    /// Number of query/pool sentence similarities evaluated.
    pub similarity_evaluations: u64,
}

impl NeighborSet {
    pub fn n_max(&self) -> usize {
        self.lists.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// The list for query sentence `qs` restricted to its first `n` entries.
    pub fn top(&self, qs: usize, n: usize) -> &[Neighbor] {
        let list = &self.lists[qs];
        &list[..n.min(list.len())]
    }

    pub fn refs(&self, pool: &CandidatePool, qs: usize, n: usize) -> Vec<SentenceRef> {
        self.top(qs, n)
            .iter()
            .map(|nb| pool.slot_ref(nb.slot as usize))
            .collect()
    }
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.cosine.total_cmp(&a.cosine).then(a.slot.cmp(&b.slot))
}

/// Exact top-`n_max` neighbors of every query sentence within the pool.
///
/// Lists are computed once and serve every `n <= n_max` by prefix.
pub fn neighbors(pool: &CandidatePool, store: &EmbeddingStore, n_max: usize) -> Result<NeighborSet> {
    if n_max == 0 {
        return Err(Error::InvalidParam("n_max must be at least 1".into()));
    }
    let lists: Vec<Vec<Neighbor>> = pool
        .query_rows
        .clone()
        .into_par_iter()
        .map(|qrow| {
            let query = store.row(qrow);
            let mut all: Vec<Neighbor> = pool
                .pool_rows
                .iter()
                .enumerate()
                .map(|(slot, &row)| Neighbor {
                    slot: slot as u32,
                    cosine: crate::embed::dot(query, store.row(row)),
                })
                .collect();
            if n_max < all.len() {
                all.select_nth_unstable_by(n_max - 1, neighbor_order);
                all.truncate(n_max);
            }
            all.sort_unstable_by(neighbor_order);
            all
        })
        .collect();
    Ok(NeighborSet {
        lists,
        similarity_evaluations: (pool.query_len() * pool.len()) as u64,
    })
}

/// Per-candidate membership counts of the neighbor lists truncated to `n`.
#[derive(Debug, Clone)]
pub struct MatchCounts {
    pub n: usize,
    /// Per candidate: `(query sentence, |S_d ∩ r_n(q_s)|)` for non-zero counts.
    pub query_hits: Vec<Vec<(u32, u32)>>,
    /// Per candidate: `(sentence index, occurrences across all lists)` for non-zero counts.
    pub sentence_hits: Vec<Vec<(u32, u32)>>,
}

impl MatchCounts {
    pub fn new(pool: &CandidatePool, nb: &NeighborSet, n: usize) -> Self {
        let k = pool.candidates.len();
        let mut query_hits = vec![Vec::new(); k];
        let mut per_slot = vec![0u32; pool.len()];
        let mut local: Vec<(u32, u32)> = Vec::with_capacity(n);
        for (qs, list) in nb.lists.iter().enumerate() {
            local.clear();
            for entry in &list[..n.min(list.len())] {
                per_slot[entry.slot as usize] += 1;
                let c = pool.slot_candidate[entry.slot as usize];
                match local.iter_mut().find(|(cand, _)| *cand == c) {
                    Some((_, f)) => *f += 1,
                    None => local.push((c, 1)),
                }
            }
            for &(c, f) in &local {
                query_hits[c as usize].push((qs as u32, f));
            }
        }
        let sentence_hits = pool
            .candidate_slots
            .iter()
            .map(|range| {
                per_slot[range.clone()]
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| **g > 0)
                    .map(|(s, g)| (s as u32, *g))
                    .collect()
            })
            .collect();
        MatchCounts {
            n,
            query_hits,
            sentence_hits,
        }
    }

    /// Query-side count for candidate `c`; `clamp` applies `min(1, ·)` per query sentence.
    pub fn q_rn(&self, c: usize, clamp: bool) -> u64 {
        self.query_hits[c]
            .iter()
            .map(|&(_, f)| if clamp { 1 } else { f as u64 })
            .sum()
    }

    /// Document-side count for candidate `c`; `clamp` applies `min(1, ·)` per document sentence.
    pub fn d_rn(&self, c: usize, clamp: bool) -> u64 {
        self.sentence_hits[c]
            .iter()
            .map(|&(_, g)| if clamp { 1 } else { g as u64 })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub doc_id: String,
    pub qp: f64,
    pub dp: f64,
    pub score: f64,
}

fn saturate(x: u32, k: f64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    let x = x as f64;
    x / (x + k)
}

/// Scores candidate `c` from precomputed counts.
pub fn score_candidate(
    pool: &CandidatePool,
    counts: &MatchCounts,
    c: usize,
    params: &PrsParams,
) -> ScoreBreakdown {
    let (qp, dp, score) = proportions(pool, counts, c, params);
    ScoreBreakdown {
        doc_id: pool.candidates[c].clone(),
        qp,
        dp,
        score,
    }
}

fn proportions(pool: &CandidatePool, counts: &MatchCounts, c: usize, params: &PrsParams) -> (f64, f64, f64) {
    let q_len = pool.query_len() as f64;
    let d_len = pool.doc_sentence_counts[c];
    // Folds start at +0.0: an empty f64 `sum` is -0.0, which would sort below 0.0.
    let (q_mass, d_mass) = if params.use_freq {
        let norm = |dl: usize| {
            let ratio = if pool.avgdl > 0.0 { dl as f64 / pool.avgdl } else { 1.0 };
            params.k1 * ((1.0 - params.b) + params.b * ratio)
        };
        let q_dl = match params.query_length {
            LengthSource::Candidate => d_len,
            LengthSource::Query => pool.query_len(),
        };
        let kq = norm(q_dl);
        let kd = norm(d_len);
        (
            counts.query_hits[c].iter().fold(0.0, |acc, &(_, f)| acc + saturate(f, kq)),
            counts.sentence_hits[c].iter().fold(0.0, |acc, &(_, g)| acc + saturate(g, kd)),
        )
    } else {
        (
            counts.q_rn(c, params.use_min) as f64,
            counts.d_rn(c, params.use_min) as f64,
        )
    };
    let qp = q_mass / q_len;
    let dp = if d_len == 0 { 0.0 } else { d_mass / d_len as f64 };
    let mut score = 1.0;
    if params.use_qp {
        score *= qp;
    }
    if params.use_dp {
        score *= dp;
    }
    (qp, dp, score)
}

/// Scores every candidate of the pool, in candidate order.
pub fn score_pool(pool: &CandidatePool, counts: &MatchCounts, params: &PrsParams) -> Result<Vec<ScoreBreakdown>> {
    if pool.query_len() == 0 {
        return Err(Error::EmptyQuery(pool.query_id.clone()));
    }
    Ok((0..pool.candidates.len())
        .map(|c| score_candidate(pool, counts, c, params))
        .collect())
}

/// Number of query sentences whose top-`n` list holds at least one sentence of
/// `doc_id` (or the raw membership total when `use_min` is false).
pub fn q_rn(doc_id: &str, pool: &CandidatePool, nb: &NeighborSet, n: usize, use_min: bool) -> Result<u64> {
    let c = pool.require_candidate(doc_id)?;
    Ok(MatchCounts::new(pool, nb, n).q_rn(c, use_min))
}

/// Number of sentences of `doc_id` appearing in any top-`n` list (or the raw
/// occurrence total when `use_min` is false).
pub fn d_rn(doc_id: &str, pool: &CandidatePool, nb: &NeighborSet, n: usize, use_min: bool) -> Result<u64> {
    let c = pool.require_candidate(doc_id)?;
    Ok(MatchCounts::new(pool, nb, n).d_rn(c, use_min))
}

fn score_one(doc_id: &str, pool: &CandidatePool, nb: &NeighborSet, params: &PrsParams) -> Result<ScoreBreakdown> {
    if pool.query_len() == 0 {
        return Err(Error::EmptyQuery(pool.query_id.clone()));
    }
    let c = pool.require_candidate(doc_id)?;
    let counts = MatchCounts::new(pool, nb, params.n);
    Ok(score_candidate(pool, &counts, c, params))
}

/// Clamped proportional score of one candidate. `params.use_freq` must be false.
pub fn score_base(doc_id: &str, pool: &CandidatePool, nb: &NeighborSet, params: &PrsParams) -> Result<ScoreBreakdown> {
    if params.use_freq {
        return Err(Error::InvalidParam("score_base called with use_freq set".into()));
    }
    score_one(doc_id, pool, nb, params)
}

/// Frequency-saturated proportional score of one candidate. `params.use_freq` must be true.
pub fn score_freq(doc_id: &str, pool: &CandidatePool, nb: &NeighborSet, params: &PrsParams) -> Result<ScoreBreakdown> {
    if !params.use_freq {
        return Err(Error::InvalidParam("score_freq called without use_freq".into()));
    }
    score_one(doc_id, pool, nb, params)
}

/// A re-ranked candidate list: the scored block followed by the first-stage
/// tail beyond the re-ranking depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub scored: Vec<ScoreBreakdown>,
    pub tail: Vec<String>,
}

impl Reranked {
    /// `(doc_id, score)` pairs in final order. Tail entries get scores below
    /// every re-ranked score so the list stays non-increasing.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .scored
            .iter()
            .map(|s| (s.doc_id.clone(), s.score))
            .collect();
        let floor = self
            .scored
            .iter()
            .map(|s| s.score)
            .fold(0.0f64, f64::min);
        out.extend(
            self.tail
                .iter()
                .enumerate()
                .map(|(i, d)| (d.clone(), floor - 1.0 - i as f64)),
        );
        out
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.scored
            .iter()
            .map(|s| s.doc_id.as_str())
            .chain(self.tail.iter().map(String::as_str))
    }
}

/// Sorts by descending score; the stable sort keeps first-stage order on ties.
pub fn order_scores(mut scores: Vec<ScoreBreakdown>) -> Vec<ScoreBreakdown> {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));
    scores
}

fn tail_of(query_id: &str, first_stage: &[String], pool: &CandidatePool) -> Vec<String> {
    let kept: HashSet<&str> = pool.candidates.iter().map(String::as_str).collect();
    first_stage
        .iter()
        .filter(|d| *d != query_id && !kept.contains(d.as_str()))
        .cloned()
        .collect()
}

/// A query with its pool and neighbor lists, ready to be scored under many
/// parameter settings.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub pool: CandidatePool,
    pub neighbors: NeighborSet,
    tail: Vec<String>,
}

impl PreparedQuery {
    pub fn new(
        query: &SegmentedDocument,
        first_stage: &[String],
        depth: usize,
        store: &EmbeddingStore,
        collection: &Collection,
        n_max: usize,
    ) -> Result<Self> {
        if query.is_empty() {
            return Err(Error::EmptyQuery(query.id.clone()));
        }
        let pool = build_pool(query, first_stage, depth, store, collection)?;
        let neighbors = neighbors(&pool, store, n_max)?;
        let tail = tail_of(&query.id, first_stage, &pool);
        Ok(PreparedQuery {
            pool,
            neighbors,
            tail,
        })
    }

    pub fn counts(&self, n: usize) -> MatchCounts {
        MatchCounts::new(&self.pool, &self.neighbors, n)
    }

    pub fn rerank_with(&self, counts: &MatchCounts, params: &PrsParams) -> Result<Reranked> {
        Ok(Reranked {
            scored: order_scores(score_pool(&self.pool, counts, params)?),
            tail: self.tail.clone(),
        })
    }

    pub fn rerank(&self, params: &PrsParams) -> Result<Reranked> {
        self.rerank_with(&self.counts(params.n), params)
    }

    /// Final document order under `params`, identical to the order of
    /// [`PreparedQuery::rerank_with`] without materializing score records.
    pub fn order(&self, counts: &MatchCounts, params: &PrsParams) -> Vec<&str> {
        let scores: Vec<f64> = (0..self.pool.candidates.len())
            .map(|c| proportions(&self.pool, counts, c, params).2)
            .collect();
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        idx.iter()
            .map(|&c| self.pool.candidates[c].as_str())
            .chain(self.tail.iter().map(String::as_str))
            .collect()
    }

    pub fn tail(&self) -> &[String] {
        &self.tail
    }
}

/// Re-ranks the first `depth` first-stage candidates of `query`.
pub fn rerank(
    query: &SegmentedDocument,
    first_stage: &[String],
    depth: usize,
    store: &EmbeddingStore,
    collection: &Collection,
    params: &PrsParams,
) -> Result<Reranked> {
    params.validate()?;
    PreparedQuery::new(query, first_stage, depth, store, collection, params.n)?.rerank(params)
}
