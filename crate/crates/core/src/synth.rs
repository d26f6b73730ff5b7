//! Seeded synthetic corpora with planted relevance.
//!
//! Every query owns a few relevant documents that copy a fraction of its
//! sentences verbatim. Lexical distractors scatter the query's words across
//! many sentences, so document-level term overlap is high while no single
//! sentence matches. Everything else is filler drawn from a shared pseudo-word
//! vocabulary.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, RawDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_queries: usize,
    pub relevant_per_query: usize,
    pub query_sentences: usize,
    /// Fraction of the query's sentences copied into each relevant document.
    pub shared_fraction: f64,
    /// Own sentences of every non-query document, before padding.
    pub doc_sentences: RangeInclusive<usize>,
    pub sentence_words: RangeInclusive<usize>,
    pub vocabulary: usize,
    pub distractors_per_query: usize,
    /// Query words placed in each distractor sentence.
    pub distractor_query_words: usize,
    /// Extra filler sentences appended to every document, drawn uniformly.
    pub padding_sentences: RangeInclusive<usize>,
    /// Whether relevant documents are padded too.
    pub pad_relevant: bool,
    /// When set, relevant documents open with at least this many filler tokens
    /// before any copied sentence.
    pub late_after_tokens: Option<usize>,
    pub paragraph_sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 200,
            num_queries: 20,
            relevant_per_query: 3,
            query_sentences: 20,
            shared_fraction: 0.3,
            doc_sentences: 14..=20,
            sentence_words: 8..=14,
            vocabulary: 6000,
            distractors_per_query: 4,
            distractor_query_words: 4,
            padding_sentences: 0..=0,
            pad_relevant: true,
            late_after_tokens: None,
            paragraph_sentences: 4,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// The planted-relevance benchmark: 200 documents, 20 queries, 3 relevant
    /// documents per query each sharing 30% of the query's sentences.
    pub fn planted() -> Self {
        Self::default()
    }

    /// Planted corpus whose irrelevant documents carry 0 to 120 extra filler
    /// sentences.
    pub fn length_bias() -> Self {
        SynthConfig {
            padding_sentences: 0..=120,
            pad_relevant: false,
            ..Self::default()
        }
    }

    /// Planted corpus whose copied sentences all sit beyond the first 256 tokens.
    pub fn late() -> Self {
        SynthConfig {
            late_after_tokens: Some(256),
            ..Self::default()
        }
    }

    pub fn shared_sentences(&self) -> usize {
        (self.shared_fraction * self.query_sentences as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let planted = self.num_queries * (self.relevant_per_query + self.distractors_per_query);
        if planted > self.num_docs {
            problems.push(format!(
                "{planted} relevant and distractor documents exceed num_docs = {}",
                self.num_docs
            ));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            problems.push(format!("shared_fraction {} outside [0, 1]", self.shared_fraction));
        }
        if self.query_sentences == 0 {
            problems.push("query_sentences must be at least 1".into());
        }
        if self.doc_sentences.is_empty() || self.sentence_words.is_empty() || self.padding_sentences.is_empty() {
            problems.push("length ranges must be non-empty".into());
        }
        if *self.sentence_words.start() == 0 {
            problems.push("sentences need at least one word".into());
        }
        if self.distractor_query_words > *self.sentence_words.start() {
            problems.push("distractor_query_words exceeds the shortest sentence".into());
        }
        if self.vocabulary < 100 {
            problems.push("vocabulary must hold at least 100 words".into());
        }
        if self.paragraph_sentences == 0 {
            problems.push("paragraph_sentences must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub corpus: Vec<RawDocument>,
    pub queries: Vec<RawDocument>,
    pub qrels: Qrels,
}

impl SynthDataset {
    /// Writes `corpus.jsonl`, `queries.jsonl` and `qrels.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::corpus::write_corpus(dir.join("corpus.jsonl"), &self.corpus)?;
        crate::corpus::write_corpus(dir.join("queries.jsonl"), &self.queries)?;
        self.qrels.write(dir.join("qrels.txt"))
    }
}

type Sentence = Vec<usize>;

struct Builder<'a> {
    cfg: &'a SynthConfig,
    words: Vec<String>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn sentence(&mut self) -> Sentence {
        let len = self.rng.random_range(self.cfg.sentence_words.clone());
        (0..len).map(|_| self.rng.random_range(0..self.words.len())).collect()
    }

    fn sentences(&mut self, count: usize) -> Vec<Sentence> {
        (0..count).map(|_| self.sentence()).collect()
    }

    fn own_length(&mut self) -> usize {
        self.rng.random_range(self.cfg.doc_sentences.clone())
    }

    fn padding(&mut self) -> Vec<Sentence> {
        let n = self.rng.random_range(self.cfg.padding_sentences.clone());
        self.sentences(n)
    }

    fn distractor_sentence(&mut self, query: &[Sentence]) -> Sentence {
        let mut s = self.sentence();
        let slots: Vec<usize> = (0..s.len()).collect();
        for &slot in slots.choose_multiple(&mut self.rng, self.cfg.distractor_query_words) {
            let source = query.choose(&mut self.rng).expect("query has sentences");
            s[slot] = *source.choose(&mut self.rng).expect("sentence has words");
        }
        s
    }

    fn render(&self, sentences: &[Sentence]) -> String {
        let rendered: Vec<String> = sentences
            .iter()
            .map(|s| {
                let mut text = String::new();
                for (i, &w) in s.iter().enumerate() {
                    if i == 0 {
                        let mut chars = self.words[w].chars();
                        let first = chars.next().expect("non-empty word");
                        text.extend(first.to_uppercase());
                        text.push_str(chars.as_str());
                    } else {
                        text.push(' ');
                        text.push_str(&self.words[w]);
                    }
                }
                text.push('.');
                text
            })
            .collect();
        rendered
            .chunks(self.cfg.paragraph_sentences)
            .map(|p| p.join(" "))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "ch", "dr",
    "fl", "gr", "kr", "pl", "sh", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = vocabulary(&mut rng, cfg.vocabulary);
    let mut b = Builder { cfg, words, rng };

    let mut docs: Vec<(Vec<Sentence>, Option<usize>)> = Vec::with_capacity(cfg.num_docs);
    let mut queries = Vec::with_capacity(cfg.num_queries);
    let shared = cfg.shared_sentences();
    for q in 0..cfg.num_queries {
        let query = b.sentences(cfg.query_sentences);
        for _ in 0..cfg.relevant_per_query {
            let picks: Vec<Sentence> = query.choose_multiple(&mut b.rng, shared).cloned().collect();
            let own = b.own_length().saturating_sub(shared);
            let mut body = b.sentences(own);
            match cfg.late_after_tokens {
                Some(tokens) => {
                    let mut lead = Vec::new();
                    let mut lead_tokens = 0;
                    while lead_tokens < tokens {
                        let s = body.pop().unwrap_or_else(|| b.sentence());
                        lead_tokens += s.len();
                        lead.push(s);
                    }
                    body.extend(picks);
                    body.shuffle(&mut b.rng);
                    lead.extend(body);
                    body = lead;
                }
                None => {
                    body.extend(picks);
                    body.shuffle(&mut b.rng);
                }
            }
            if cfg.pad_relevant {
                body.extend(b.padding());
            }
            docs.push((body, Some(q)));
        }
        for _ in 0..cfg.distractors_per_query {
            let len = b.own_length();
            let mut body: Vec<Sentence> = (0..len).map(|_| b.distractor_sentence(&query)).collect();
            body.extend(b.padding());
            docs.push((body, None));
        }
        queries.push(query);
    }
    while docs.len() < cfg.num_docs {
        let len = b.own_length();
        let mut body = b.sentences(len);
        body.extend(b.padding());
        docs.push((body, None));
    }

    let width = cfg.num_docs.to_string().len();
    let mut ids: Vec<usize> = (0..docs.len()).collect();
    ids.shuffle(&mut b.rng);
    let mut qrels = Qrels::new();
    let mut corpus = Vec::with_capacity(docs.len());
    for ((sentences, owner), id) in docs.iter().zip(ids) {
        let doc_id = format!("d{id:0width$}");
        if let Some(q) = owner {
            qrels.insert(&format!("q{q:02}"), &doc_id, 1)?;
        }
        corpus.push(RawDocument::new(doc_id, b.render(sentences)));
    }
    corpus.sort_by(|a, c| a.id.cmp(&c.id));
    let queries = queries
        .iter()
        .enumerate()
        .map(|(q, s)| RawDocument::new(format!("q{q:02}"), b.render(s)))
        .collect();
    Ok(SynthDataset { corpus, queries, qrels })
}

/// Writes the generator config next to a dataset for reproducibility.
pub fn write_config(cfg: &SynthConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, cfg).map_err(|e| Error::malformed(path, 0, e))?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
