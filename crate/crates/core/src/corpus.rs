//! Raw document loading, sentence/paragraph segmentation and relevance judgments.
//!
//! Tokens here are maximal whitespace-delimited chunks. Case folding and
//! punctuation stripping belong to the lexical module.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sentence length cap in words.
pub const DEFAULT_MAX_SENTENCE_WORDS: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        RawDocument {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A document as an ordered list of sentences grouped into paragraphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedDocument {
    pub id: String,
    pub sentences: Vec<String>,
    /// Half-open ranges into `sentences`; sorted, disjoint and covering.
    pub paragraphs: Vec<Range<usize>>,
    pub token_count: usize,
}

impl SegmentedDocument {
    /// Builds a document from already split sentences, all in one paragraph.
    pub fn from_sentences(id: impl Into<String>, sentences: Vec<String>) -> Self {
        let paragraphs = if sentences.is_empty() {
            Vec::new()
        } else {
            vec![0..sentences.len()]
        };
        Self::with_paragraphs(id, sentences, paragraphs)
    }

    pub fn with_paragraphs(
        id: impl Into<String>,
        sentences: Vec<String>,
        paragraphs: Vec<Range<usize>>,
    ) -> Self {
        let token_count = sentences.iter().map(|s| word_count(s)).sum();
        SegmentedDocument {
            id: id.into(),
            sentences,
            paragraphs,
            token_count,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    /// Checks the structural invariants; used by loaders of externally produced files.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut next = 0;
        for p in &self.paragraphs {
            if p.start != next || p.end <= p.start {
                return Err(format!("paragraph {p:?} breaks coverage at {next}"));
            }
            next = p.end;
        }
        if next != self.sentences.len() {
            return Err(format!(
                "paragraphs cover {next} of {} sentences",
                self.sentences.len()
            ));
        }
        if let Some(i) = self.sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(format!("sentence {i} is empty"));
        }
        let tokens: usize = self.sentences.iter().map(|s| word_count(s)).sum();
        if tokens != self.token_count {
            return Err(format!(
                "token_count {} does not match {tokens} sentence tokens",
                self.token_count
            ));
        }
        Ok(())
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
}

/// Reads a JSONL file of `{"id", "text"}` records, preserving file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
        if rec.id.is_empty() {
            return Err(Error::malformed(path, i + 1, "empty id"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        docs.push(RawDocument {
            id: rec.id,
            text: rec.text,
        });
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[RawDocument]) -> Result<()> {
    write_jsonl(path.as_ref(), docs)
}

/// Writes segmented documents, one JSON object per line.
pub fn write_segmented(path: impl AsRef<Path>, docs: &[SegmentedDocument]) -> Result<()> {
    write_jsonl(path.as_ref(), docs)
}

pub fn load_segmented(path: impl AsRef<Path>) -> Result<Vec<SegmentedDocument>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SegmentedDocument =
            serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
        doc.validate()
            .map_err(|msg| Error::malformed(path, i + 1, msg))?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Serialize)]
struct SentenceLine<'a> {
    doc: &'a str,
    sent: usize,
    text: &'a str,
}

/// Writes one `{"doc", "sent", "text"}` line per sentence: the input format of
/// external embedding exporters.
pub fn write_sentence_lines<'a>(
    path: impl AsRef<Path>,
    docs: impl IntoIterator<Item = &'a SegmentedDocument>,
) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for doc in docs {
        for (sent, text) in doc.sentences.iter().enumerate() {
            let line = SentenceLine {
                doc: &doc.id,
                sent,
                text,
            };
            serde_json::to_writer(&mut out, &line).expect("serializable");
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            n += 1;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

const ABBREVIATIONS: &[&str] = &[
    "al", "app", "approx", "apr", "art", "arts", "aug", "c", "cf", "ch", "co", "corp", "dec",
    "dept", "dr", "e.g", "ed", "eds", "esp", "est", "etc", "ex", "feb", "fig", "figs", "gen",
    "gov", "i.e", "inc", "jan", "jr", "jul", "jun", "ltd", "mar", "mr", "mrs", "ms", "mt", "no",
    "nos", "nov", "oct", "op", "p", "para", "paras", "pp", "prof", "r", "reg", "rev", "s", "sec",
    "secs", "sep", "sept", "sr", "ss", "st", "v", "vol", "vols", "vs",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}'];

fn ends_sentence(token: &str) -> bool {
    let core = token.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    match last {
        '!' | '?' => true,
        '.' => !is_abbreviation(core),
        _ => false,
    }
}

fn is_abbreviation(token_with_dot: &str) -> bool {
    let word = token_with_dot
        .trim_start_matches(OPENERS)
        .trim_end_matches('.');
    if word.is_empty() {
        return false;
    }
    // Initials ("J.") and dotted acronyms ("U.S.", "e.g.").
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    if word.contains('.') && word.split('.').all(|p| p.chars().count() <= 2) {
        return true;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

fn starts_sentence(token: &str) -> bool {
    token
        .trim_start_matches(OPENERS)
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
}

fn split_paragraphs(text: &str) -> Vec<Vec<&str>> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
        } else {
            current.extend(line.split_whitespace());
        }
    }
    if !current.is_empty() {
        paragraphs.push(current);
    }
    paragraphs
}

fn split_sentences<'a>(tokens: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let last = i + 1 == tokens.len();
        if last || (ends_sentence(tokens[i]) && starts_sentence(tokens[i + 1])) {
            out.push(tokens[start..=i].to_vec());
            start = i + 1;
        }
    }
    out
}

/// Splits a document into sentences and blank-line delimited paragraphs.
///
/// Sentences longer than `max_sentence_words` are cut into consecutive
/// windows of exactly that many words; the last window may be shorter.
pub fn segment(doc: &RawDocument, max_sentence_words: usize) -> Result<SegmentedDocument> {
    if max_sentence_words == 0 {
        return Err(Error::InvalidParam(
            "max_sentence_words must be at least 1".into(),
        ));
    }
    let mut sentences = Vec::new();
    let mut paragraphs = Vec::new();
    for para in split_paragraphs(&doc.text) {
        let start = sentences.len();
        for sentence in split_sentences(&para) {
            for chunk in sentence.chunks(max_sentence_words) {
                sentences.push(chunk.join(" "));
            }
        }
        paragraphs.push(start..sentences.len());
    }
    Ok(SegmentedDocument::with_paragraphs(
        doc.id.clone(),
        sentences,
        paragraphs,
    ))
}

/// Splits a document into consecutive windows of `unit_tokens` whitespace
/// tokens, ignoring sentence and paragraph structure.
pub fn segment_fixed_length(doc: &RawDocument, unit_tokens: usize) -> Result<SegmentedDocument> {
    if unit_tokens == 0 {
        return Err(Error::InvalidParam("unit_tokens must be at least 1".into()));
    }
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    let units = tokens
        .chunks(unit_tokens)
        .map(|c| c.join(" "))
        .collect::<Vec<_>>();
    Ok(SegmentedDocument::from_sentences(doc.id.clone(), units))
}

/// Keeps the longest prefix of whole sentences within `max_tokens` tokens.
///
/// The first sentence is always kept, cut to `max_tokens` words if needed.
pub fn truncate(doc: &SegmentedDocument, max_tokens: usize) -> Result<SegmentedDocument> {
    if max_tokens == 0 {
        return Err(Error::InvalidParam("max_tokens must be at least 1".into()));
    }
    if doc.token_count <= max_tokens {
        return Ok(doc.clone());
    }
    let mut sentences = Vec::new();
    let mut used = 0;
    for s in &doc.sentences {
        let n = word_count(s);
        if used + n > max_tokens {
            if sentences.is_empty() {
                let cut: Vec<&str> = s.split_whitespace().take(max_tokens).collect();
                sentences.push(cut.join(" "));
            }
            break;
        }
        used += n;
        sentences.push(s.clone());
    }
    let kept = sentences.len();
    let paragraphs = doc
        .paragraphs
        .iter()
        .map(|p| p.start.min(kept)..p.end.min(kept))
        .filter(|p| !p.is_empty())
        .collect();
    Ok(SegmentedDocument::with_paragraphs(
        doc.id.clone(),
        sentences,
        paragraphs,
    ))
}

/// Segmented documents addressable by id, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Collection {
    docs: Vec<SegmentedDocument>,
    by_id: HashMap<String, usize>,
}

impl Collection {
    pub fn new(docs: Vec<SegmentedDocument>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        Ok(Collection { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&SegmentedDocument> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, id: &str) -> Result<&SegmentedDocument> {
        self.get(id).ok_or_else(|| Error::UnknownDoc(id.to_string()))
    }

    pub fn docs(&self) -> &[SegmentedDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SegmentedDocument> {
        self.docs.iter()
    }
}

/// Relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, doc: &str, grade: u32) -> Result<()> {
        let per_query = self.judgments.entry(query.to_string()).or_default();
        if per_query.contains_key(doc) {
            return Err(Error::DuplicateJudgment {
                query: query.into(),
                doc: doc.into(),
            });
        }
        per_query.insert(doc.to_string(), grade);
        Ok(())
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.judgments
            .get(query)
            .and_then(|m| m.get(doc))
            .copied()
            .unwrap_or(0)
    }

    /// Documents with a positive grade for `query`.
    pub fn relevant(&self, query: &str) -> BTreeSet<&str> {
        self.judgments
            .get(query)
            .map(|m| {
                m.iter()
                    .filter(|(_, g)| **g > 0)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Query ids that have at least one relevant document, sorted.
    pub fn judged_queries(&self) -> Vec<&str> {
        self.judgments
            .iter()
            .filter(|(_, m)| m.values().any(|g| *g > 0))
            .map(|(q, _)| q.as_str())
            .collect()
    }

    /// Judgments of the listed queries only.
    pub fn restrict<'a>(&self, queries: impl IntoIterator<Item = &'a str>) -> Qrels {
        let judgments = queries
            .into_iter()
            .filter_map(|q| self.judgments.get_key_value(q))
            .map(|(q, m)| (q.clone(), m.clone()))
            .collect();
        Qrels { judgments }
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (q, d, g) in self.iter() {
            writeln!(out, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses TREC qrels: `qid 0 docid grade` per line.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut qrels = Qrels::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::malformed(
                path,
                i + 1,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: u32 = cols[3]
            .parse()
            .map_err(|_| Error::malformed(path, i + 1, format!("bad grade {:?}", cols[3])))?;
        qrels.insert(cols[0], cols[2], grade)?;
    }
    Ok(qrels)
}
