//! Sentence embedding storage.
//!
//! Rows are kept unit-normalized, so cosine similarity is a plain dot product.
//! On disk a store is two files: a `SEB1` vector file (magic, `u32` dim, `u64`
//! row count, row-major little-endian `f32` values) and a JSONL manifest with
//! one `{"doc", "sent"}` line per row.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::SegmentedDocument;
use crate::error::{Error, Result};
use crate::lexical::tokenize;

pub const MAGIC: &[u8; 4] = b"SEB1";

/// Maximum tolerated deviation of a stored row's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc: String,
    pub sent: usize,
}

impl SentenceRef {
    pub fn new(doc: impl Into<String>, sent: usize) -> Self {
        SentenceRef {
            doc: doc.into(),
            sent,
        }
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc, self.sent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rows: Vec<f32>,
    manifest: Vec<SentenceRef>,
    index: HashMap<String, Range<usize>>,
}

impl EmbeddingStore {
    /// Builds a store from raw row-major values, L2-normalizing every row.
    pub fn from_raw(dim: usize, mut rows: Vec<f32>, manifest: Vec<SentenceRef>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if rows.len() != manifest.len() * dim {
            return Err(Error::CountMismatch {
                header: manifest.len() as u64,
                actual: (rows.len() / dim) as u64,
                source_name: "vector data",
            });
        }
        for (r, row) in rows.chunks_exact_mut(dim).enumerate() {
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNormRow { row: r });
            }
            for x in row.iter_mut() {
                *x = (*x as f64 / norm) as f32;
            }
        }
        let index = build_index(&manifest)?;
        Ok(EmbeddingStore {
            dim,
            rows,
            manifest,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn manifest(&self) -> &[SentenceRef] {
        &self.manifest
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn doc_rows(&self, doc: &str) -> Option<Range<usize>> {
        self.index.get(doc).cloned()
    }

    /// Rows for every sentence of `doc`, failing on the first missing sentence.
    pub fn rows_for(&self, doc: &SegmentedDocument) -> Result<Range<usize>> {
        let have = self.doc_rows(&doc.id).unwrap_or(0..0);
        if have.len() < doc.len() {
            return Err(Error::MissingEmbedding(SentenceRef::new(
                doc.id.clone(),
                have.len(),
            )));
        }
        Ok(have.start..have.start + doc.len())
    }

    /// Dot product of two stored rows, accumulated in f64.
    #[inline]
    pub fn dot_rows(&self, a: usize, b: usize) -> f64 {
        dot(self.row(a), self.row(b))
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.rows
            .chunks_exact(self.dim)
            .map(|r| (dot(r, r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Reads and validates a store from a vector file and its manifest.
    pub fn ingest(vectors: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Self> {
        let (dim, header_rows, values) = read_vectors(vectors.as_ref())?;
        let refs = read_manifest(manifest.as_ref())?;
        if refs.len() as u64 != header_rows {
            return Err(Error::CountMismatch {
                header: header_rows,
                actual: refs.len() as u64,
                source_name: "manifest",
            });
        }
        Self::from_raw(dim, values, refs)
    }

    pub fn save(&self, vectors: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<()> {
        let path = vectors.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for x in &self.rows {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)?;

        let path = manifest.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.manifest {
            serde_json::to_writer(&mut out, r).expect("serializable");
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn build_index(manifest: &[SentenceRef]) -> Result<HashMap<String, Range<usize>>> {
    let mut index: HashMap<String, Range<usize>> = HashMap::new();
    for (row, r) in manifest.iter().enumerate() {
        match index.get_mut(&r.doc) {
            Some(range) if range.end == row && r.sent == range.len() => range.end += 1,
            Some(_) => {
                return Err(Error::ManifestOrder {
                    doc: r.doc.clone(),
                    row,
                })
            }
            None if r.sent == 0 => {
                index.insert(r.doc.clone(), row..row + 1);
            }
            None => {
                return Err(Error::ManifestOrder {
                    doc: r.doc.clone(),
                    row,
                })
            }
        }
    }
    Ok(index)
}

fn read_vectors(path: &Path) -> Result<(usize, u64, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut header = [0u8; 16];
    let got = read_up_to(&mut input, &mut header).map_err(io)?;
    if got < 4 || &header[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&header[..got.min(4)]).into_owned(),
        });
    }
    if got < 16 {
        return Err(Error::malformed(path, 0, "truncated header"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(Error::ZeroDim);
    }

    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io)?;
    let row_bytes = dim as u64 * 4;
    if bytes.len() as u64 != rows * row_bytes {
        return Err(Error::CountMismatch {
            header: rows,
            actual: bytes.len() as u64 / row_bytes,
            source_name: "vector data",
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((dim, rows, values))
}

fn read_up_to(input: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

fn read_manifest(path: &Path) -> Result<Vec<SentenceRef>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut refs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        refs.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?);
    }
    Ok(refs)
}

/// Dot product with f64 accumulation.
#[inline]
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Cosine of two unit-normalized vectors.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(dot(u, v).clamp(-1.0, 1.0))
}

/// Deterministic bag-of-words embedder for tests and offline runs.
///
/// Every token maps to a pseudo-random unit vector seeded by `(seed, token)`;
/// a sentence is the normalized sum of its token vectors.
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
    cache: HashMap<String, Vec<f64>>,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParam("stub embedding dim must be >= 2".into()));
        }
        Ok(StubEmbedder {
            dim,
            seed,
            cache: HashMap::new(),
        })
    }

    fn token_vector(&mut self, token: &str) -> &[f64] {
        let (dim, seed) = (self.dim, self.seed);
        self.cache.entry(token.to_string()).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(seed, token.as_bytes()));
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
    }

    pub fn embed(&mut self, sentence: &str) -> Vec<f32> {
        let mut tokens = tokenize(sentence);
        if tokens.is_empty() {
            tokens.push(sentence.trim().to_string());
        }
        let mut sum = vec![0.0f64; self.dim];
        for t in &tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        let mut norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            sum = self.token_vector(sentence).to_vec();
            norm = 1.0;
        }
        sum.iter().map(|x| (x / norm) as f32).collect()
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Embeds every sentence of `docs` with [`StubEmbedder`].
///
/// A document id seen twice is skipped when its sentences are identical to the
/// first occurrence (a query that is also a corpus document) and rejected otherwise.
pub fn stub_embed<'a>(
    docs: impl IntoIterator<Item = &'a SegmentedDocument>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingStore> {
    let mut embedder = StubEmbedder::new(dim, seed)?;
    let mut seen: HashMap<&str, &SegmentedDocument> = HashMap::new();
    let mut rows = Vec::new();
    let mut manifest = Vec::new();
    for doc in docs {
        if let Some(prev) = seen.get(doc.id.as_str()) {
            if prev.sentences != doc.sentences {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            continue;
        }
        seen.insert(&doc.id, doc);
        for (i, s) in doc.sentences.iter().enumerate() {
            rows.extend(embedder.embed(s));
            manifest.push(SentenceRef::new(doc.id.clone(), i));
        }
    }
    EmbeddingStore::from_raw(dim, rows, manifest)
}
