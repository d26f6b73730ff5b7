//! Brute-force reference implementations and random instance builders shared
//! by the integration tests. Nothing here calls into the engine's scoring code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rprs_core::corpus::{Collection, Qrels, SegmentedDocument};
use rprs_core::embed::{EmbeddingStore, SentenceRef};
use rprs_core::rprs::{LengthSource, PrsParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A query, its candidates and raw (unnormalized) sentence vectors.
pub struct Instance {
    pub dim: usize,
    pub query: SegmentedDocument,
    pub docs: Vec<SegmentedDocument>,
    /// First-stage order of candidate ids.
    pub first_stage: Vec<String>,
    pub store: EmbeddingStore,
    pub collection: Collection,
}

impl Instance {
    pub fn vector(&self, doc: &str, sent: usize) -> &[f32] {
        let rows = self.store.doc_rows(doc).expect("embedded doc");
        self.store.row(rows.start + sent)
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

/// Random pool with at most `max_cands` candidates of at most `max_sents`
/// sentences each. Some sentences duplicate earlier vectors to force ties.
pub fn random_instance(rng: &mut ChaCha8Rng, max_cands: usize, max_sents: usize) -> Instance {
    let dim = rng.random_range(2..=8);
    let n_cands = rng.random_range(1..=max_cands);
    let mut ids: Vec<String> = (0..n_cands).map(|i| format!("c{i}")).collect();
    let mut vectors: Vec<Vec<f32>> = Vec::new();
    let fresh = |rng: &mut ChaCha8Rng, vectors: &mut Vec<Vec<f32>>| {
        let v = if !vectors.is_empty() && rng.random_bool(0.15) {
            vectors[rng.random_range(0..vectors.len())].clone()
        } else {
            random_vector(rng, dim)
        };
        vectors.push(v.clone());
        v
    };

    let mut rows = Vec::new();
    let mut manifest = Vec::new();
    let mut docs = Vec::new();
    for id in &ids {
        let len = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..=max_sents) };
        for s in 0..len {
            rows.extend(fresh(rng, &mut vectors));
            manifest.push(SentenceRef::new(id.clone(), s));
        }
        docs.push(SegmentedDocument::from_sentences(id.clone(), (0..len).map(|s| format!("{id} s{s}")).collect()));
    }
    let q_len = rng.random_range(1..=max_sents);
    for s in 0..q_len {
        rows.extend(fresh(rng, &mut vectors));
        manifest.push(SentenceRef::new("q", s));
    }
    let query = SegmentedDocument::from_sentences("q", (0..q_len).map(|s| format!("q s{s}")).collect());
    ids.shuffle(rng);
    let store = EmbeddingStore::from_raw(dim, rows, manifest).expect("valid store");
    let collection = Collection::new(docs.clone()).expect("unique ids");
    Instance {
        dim,
        query,
        docs,
        first_stage: ids,
        store,
        collection,
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, use_freq: bool) -> PrsParams {
    let n = rng.random_range(1..=10);
    let mut p = if use_freq {
        PrsParams::freq(n, rng.random_range(0.0..=3.0), rng.random_range(0.0..=1.0))
    } else {
        PrsParams::base(n)
    };
    if rng.random_bool(0.2) {
        p.query_length = LengthSource::Query;
    }
    p
}

fn cosine(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
    let nu: f64 = u.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    dot / (nu * nv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub doc: String,
    pub qp: f64,
    pub dp: f64,
    pub score: f64,
}

/// Scores every kept candidate by literal set counting, in candidate order.
pub fn oracle_scores(inst: &Instance, depth: usize, p: &PrsParams) -> Vec<OracleScore> {
    let cands: Vec<&SegmentedDocument> = inst
        .first_stage
        .iter()
        .filter(|id| **id != inst.query.id)
        .take(depth)
        .map(|id| inst.docs.iter().find(|d| &d.id == id).expect("known doc"))
        .collect();
    let pool: Vec<(String, usize)> = cands
        .iter()
        .flat_map(|d| (0..d.len()).map(move |s| (d.id.clone(), s)))
        .collect();

    let r_n: Vec<Vec<(String, usize)>> = (0..inst.query.len())
        .map(|qs| {
            let qv = inst.vector(&inst.query.id, qs);
            let mut ranked: Vec<(f64, &(String, usize))> =
                pool.iter().map(|r| (cosine(qv, inst.vector(&r.0, r.1)), r)).collect();
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
            ranked.into_iter().take(p.n).map(|(_, r)| r.clone()).collect()
        })
        .collect();

    let avgdl = if cands.is_empty() {
        0.0
    } else {
        cands.iter().map(|d| d.len()).sum::<usize>() as f64 / cands.len() as f64
    };
    let q_len = inst.query.len() as f64;

    cands
        .iter()
        .map(|d| {
            let dl = d.len() as f64;
            let weight = |x: usize, length: f64| -> f64 {
                if p.use_freq {
                    if x == 0 {
                        return 0.0;
                    }
                    let ratio = if avgdl > 0.0 { length / avgdl } else { 1.0 };
                    let x = x as f64;
                    x / (x + p.k1 * ((1.0 - p.b) + p.b * ratio))
                } else if p.use_min {
                    x.min(1) as f64
                } else {
                    x as f64
                }
            };
            let q_length = match p.query_length {
                LengthSource::Candidate => dl,
                LengthSource::Query => q_len,
            };
            let q_mass: f64 = r_n
                .iter()
                .map(|list| weight(list.iter().filter(|r| r.0 == d.id).count(), q_length))
                .sum();
            let d_mass: f64 = (0..d.len())
                .map(|s| {
                    let occurrences = r_n
                        .iter()
                        .map(|list| list.iter().filter(|r| r.0 == d.id && r.1 == s).count())
                        .sum();
                    weight(occurrences, dl)
                })
                .sum();
            let qp = q_mass / q_len;
            let dp = if d.is_empty() { 0.0 } else { d_mass / dl };
            let score = (if p.use_qp { qp } else { 1.0 }) * (if p.use_dp { dp } else { 1.0 });
            OracleScore {
                doc: d.id.clone(),
                qp,
                dp,
                score,
            }
        })
        .collect()
}

/// Oracle final order: stable descending sort of the scored block, then the rest.
pub fn oracle_order(inst: &Instance, depth: usize, p: &PrsParams) -> Vec<String> {
    let mut scored = oracle_scores(inst, depth, p);
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut out: Vec<String> = scored.into_iter().map(|s| s.doc).collect();
    out.extend(
        inst.first_stage
            .iter()
            .filter(|id| **id != inst.query.id)
            .skip(depth)
            .cloned(),
    );
    out
}

/// Okapi BM25 over pre-tokenized documents.
pub struct Bm25Oracle {
    pub docs: Vec<(String, Vec<String>)>,
}

impl Bm25Oracle {
    fn avg_len(&self) -> f64 {
        if self.docs.is_empty() {
            return 0.0;
        }
        self.docs.iter().map(|d| d.1.len()).sum::<usize>() as f64 / self.docs.len() as f64
    }

    pub fn rsj(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.docs.iter().filter(|d| d.1.iter().any(|t| t == term)).count() as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    pub fn score(&self, k1: f64, b: f64, query: &[String], doc: &str) -> f64 {
        let terms = &self.docs.iter().find(|d| d.0 == doc).expect("known doc").1;
        let l = self.avg_len();
        let dl = terms.len() as f64;
        query
            .iter()
            .map(|t| {
                let tf = terms.iter().filter(|x| *x == t).count() as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                let ratio = if l > 0.0 { dl / l } else { 1.0 };
                self.rsj(t) * tf / (tf + k1 * ((1.0 - b) + b * ratio))
            })
            .sum()
    }

    /// Every document sharing a term with the query, best first, ties by id.
    pub fn search(&self, k1: f64, b: f64, query: &[String], exclude: Option<&str>) -> Vec<(String, f64)> {
        let mut hits: Vec<(String, f64)> = self
            .docs
            .iter()
            .filter(|d| Some(d.0.as_str()) != exclude && d.1.iter().any(|t| query.contains(t)))
            .map(|d| (d.0.clone(), self.score(k1, b, query, &d.0)))
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        hits
    }
}

/// Reference metric values for one run over judged queries.
pub struct EvalOracle<'a> {
    pub lists: &'a HashMap<String, Vec<String>>,
    pub qrels: &'a HashMap<String, BTreeSet<String>>,
}

impl EvalOracle<'_> {
    fn judged(&self) -> Vec<&String> {
        let mut q: Vec<&String> = self.qrels.iter().filter(|(_, r)| !r.is_empty()).map(|(q, _)| q).collect();
        q.sort();
        q
    }

    fn list(&self, q: &str) -> &[String] {
        self.lists.get(q).map(Vec::as_slice).unwrap_or(&[])
    }

    fn hits(&self, q: &str, k: usize) -> usize {
        let rel = &self.qrels[q];
        self.list(q).iter().take(k).filter(|d| rel.contains(*d)).count()
    }

    fn mean(&self, f: impl Fn(&str) -> f64) -> f64 {
        let qs = self.judged();
        qs.iter().map(|q| f(q)).sum::<f64>() / qs.len() as f64
    }

    pub fn precision(&self, k: usize) -> f64 {
        self.mean(|q| self.hits(q, k) as f64 / k as f64)
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.mean(|q| self.hits(q, k) as f64 / self.qrels[q].len() as f64)
    }

    pub fn f1(&self, k: usize) -> f64 {
        let (p, r) = (self.precision(k), self.recall(k));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn map(&self, k: usize) -> f64 {
        self.mean(|q| {
            let rel = &self.qrels[q];
            let mut sum = 0.0;
            for i in 1..=k.min(self.list(q).len()) {
                if rel.contains(&self.list(q)[i - 1]) {
                    sum += self.hits(q, i) as f64 / i as f64;
                }
            }
            sum / rel.len().min(k) as f64
        })
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.mean(|q| {
            let rel = &self.qrels[q];
            let dcg: f64 = self
                .list(q)
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, d)| rel.contains(*d))
                .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
                .sum();
            let ideal: f64 = (0..rel.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
            dcg / ideal
        })
    }

    pub fn mrr(&self) -> f64 {
        self.mean(|q| {
            let rel = &self.qrels[q];
            self.list(q)
                .iter()
                .position(|d| rel.contains(d))
                .map(|i| 1.0 / (i + 1) as f64)
                .unwrap_or(0.0)
        })
    }

    pub fn mpr(&self) -> f64 {
        let mut sum = 0.0;
        let mut pairs = 0;
        for q in self.judged() {
            let list = self.list(q);
            for d in &self.qrels[q] {
                pairs += 1;
                if let Some(i) = list.iter().position(|x| x == d) {
                    sum += 100.0 * (1.0 - i as f64 / list.len() as f64);
                }
            }
        }
        sum / pairs as f64
    }
}

/// Converts oracle-style qrels into the engine's type.
pub fn to_qrels(qrels: &HashMap<String, BTreeSet<String>>) -> Qrels {
    let mut out = Qrels::new();
    for (q, docs) in qrels {
        for d in docs {
            out.insert(q, d, 1).expect("unique judgments");
        }
    }
    out
}
