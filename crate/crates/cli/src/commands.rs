use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rprs_core::analysis::{
    length_score_correlation, retrieval_probability_by_length, run_pairs, truncation_sweep, unit_size_sweep,
    write_bins_csv, write_correlation_csv, write_sweep_csv, CorrelationRow, LengthBins,
};
use rprs_core::corpus::{
    load_corpus, load_qrels, load_segmented, write_segmented, write_sentence_lines, Collection, SegmentedDocument,
};
use rprs_core::embed::{stub_embed, EmbeddingStore};
use rprs_core::eval::{paired_t_test, rank_metrics, RunFile};
use rprs_core::lexical::{build_index, InvertedIndex};
use rprs_core::pipeline::{rerank_run, retrieve, Method, Settings};
use rprs_core::synth::{generate, write_config};
use rprs_core::tune::{depth_sweep, grid_search, write_depth_csv, write_grid_csv, Preset, TuneInput};
use rprs_core::Error;

use crate::config::PipelineConfig;
use crate::failure::{Failure, Kind};

pub type Outcome = Result<String, Failure>;

const CORPUS_SEG: &str = "corpus.seg.jsonl";
const QUERIES_SEG: &str = "queries.seg.jsonl";
const INDEX: &str = "index.bin";
const VECTORS: &str = "embeddings.seb";
const MANIFEST: &str = "embeddings.manifest.jsonl";

/// Fails with one violation per missing input.
fn require(inputs: &[(&str, PathBuf)]) -> Result<(), Failure> {
    let missing: Vec<String> = inputs
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(what, p)| format!("missing {what}: {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(missing))
    }
}

fn workdir(cfg: &PipelineConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.workdir();
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::new(Kind::Data, format!("cannot create workdir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn segmented(cfg: &PipelineConfig) -> Result<(Vec<SegmentedDocument>, Vec<SegmentedDocument>), Failure> {
    let (docs, queries) = (cfg.artifact(CORPUS_SEG), cfg.artifact(QUERIES_SEG));
    require(&[("segmented corpus (run `rprs segment`)", docs.clone()), ("segmented queries (run `rprs segment`)", queries.clone())])?;
    Ok((load_segmented(docs)?, load_segmented(queries)?))
}

fn store(cfg: &PipelineConfig) -> Result<EmbeddingStore, Failure> {
    let (v, m) = (cfg.artifact(VECTORS), cfg.artifact(MANIFEST));
    require(&[("embeddings (run `rprs stub-embed` or `rprs ingest-embeddings`)", v.clone()), ("embedding manifest", m.clone())])?;
    Ok(EmbeddingStore::ingest(v, m)?)
}

/// Queries that are not also corpus documents; those share the corpus rows.
fn distinct_queries<'a>(docs: &[SegmentedDocument], queries: &'a [SegmentedDocument]) -> Vec<&'a SegmentedDocument> {
    let ids: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    queries.iter().filter(|q| !ids.contains(q.id.as_str())).collect()
}

pub fn segment(cfg: &PipelineConfig) -> Outcome {
    let (corpus, queries) = (cfg.corpus_path(), cfg.queries_path());
    require(&[("corpus", corpus.clone()), ("queries", queries.clone())])?;
    let dir = workdir(cfg)?;
    let docs = cfg.settings.segment.apply_all(&load_corpus(corpus)?)?;
    let queries = cfg.settings.segment.apply_all(&load_corpus(queries)?)?;
    write_segmented(dir.join(CORPUS_SEG), &docs)?;
    write_segmented(dir.join(QUERIES_SEG), &queries)?;
    let extra = distinct_queries(&docs, &queries);
    let lines = write_sentence_lines(dir.join("sentences.jsonl"), docs.iter().chain(extra))?;
    Ok(format!(
        "segment: {} documents, {} queries, {lines} sentences -> {}",
        docs.len(),
        queries.len(),
        show(&dir)
    ))
}

pub fn index(cfg: &PipelineConfig) -> Outcome {
    let path = cfg.artifact(CORPUS_SEG);
    require(&[("segmented corpus (run `rprs segment`)", path.clone())])?;
    let dir = workdir(cfg)?;
    let index = build_index(&load_segmented(path)?)?;
    let out = dir.join(INDEX);
    index.save(&out)?;
    Ok(format!(
        "index: {} documents, {} terms -> {}",
        index.num_docs(),
        index.vocabulary_size(),
        show(&out)
    ))
}

pub fn stub_embed_cmd(cfg: &PipelineConfig) -> Outcome {
    let (docs, queries) = segmented(cfg)?;
    let dir = workdir(cfg)?;
    let store = stub_embed(docs.iter().chain(&queries), cfg.settings.embed_dim, cfg.settings.seed)?;
    store.save(dir.join(VECTORS), dir.join(MANIFEST))?;
    Ok(format!(
        "stub-embed: {} sentences, dim {}, seed {} -> {}",
        store.len(),
        store.dim(),
        cfg.settings.seed,
        show(&dir.join(VECTORS))
    ))
}

pub fn ingest_embeddings(cfg: &PipelineConfig) -> Outcome {
    let mut unset = Vec::new();
    if cfg.paths.embeddings.is_none() {
        unset.push("paths.embeddings must point at a SEB1 vector file".to_string());
    }
    if cfg.paths.manifest.is_none() {
        unset.push("paths.manifest must point at the matching manifest".to_string());
    }
    if !unset.is_empty() {
        return Err(Failure::config(unset));
    }
    let (v, m) = (cfg.paths.embeddings.clone().unwrap(), cfg.paths.manifest.clone().unwrap());
    require(&[("embeddings", v.clone()), ("manifest", m.clone())])?;
    let (docs, queries) = segmented(cfg)?;
    let store = EmbeddingStore::ingest(&v, &m)?;

    let expected: Vec<&SegmentedDocument> = docs.iter().chain(distinct_queries(&docs, &queries)).collect();
    for d in &expected {
        let rows = store.doc_rows(&d.id).map_or(0, |r| r.len());
        if rows != d.len() {
            return Err(Failure::new(
                Kind::Data,
                format!("document {:?} has {} sentences but {rows} embedding rows", d.id, d.len()),
            ));
        }
    }
    let total: usize = expected.iter().map(|d| d.len()).sum();
    if store.len() != total {
        return Err(Failure::new(
            Kind::Data,
            format!("embedding file holds {} rows for {total} sentences", store.len()),
        ));
    }
    let dir = workdir(cfg)?;
    store.save(dir.join(VECTORS), dir.join(MANIFEST))?;
    Ok(format!(
        "ingest-embeddings: {} rows, dim {}, max norm error {:.1e} -> {}",
        store.len(),
        store.dim(),
        store.max_norm_error(),
        show(&dir.join(VECTORS))
    ))
}

pub fn retrieve_cmd(cfg: &PipelineConfig) -> Outcome {
    let (idx, queries) = (cfg.artifact(INDEX), cfg.artifact(QUERIES_SEG));
    require(&[("index (run `rprs index`)", idx.clone()), ("segmented queries (run `rprs segment`)", queries.clone())])?;
    let dir = workdir(cfg)?;
    let index = InvertedIndex::load(idx)?;
    let queries = load_segmented(queries)?;
    let s = &cfg.settings;
    let run = retrieve(&index, &queries, s.bm25, s.kli, s.first_stage_depth)?;
    let tag = Settings {
        method: Method::Bm25,
        ..s.clone()
    }
    .run_tag();
    let out = dir.join("run.bm25.trec");
    run.write_trec(&out, &tag)?;
    Ok(format!("retrieve: {} queries, depth {} -> {}", run.len(), s.first_stage_depth, show(&out)))
}

pub fn rerank(cfg: &PipelineConfig) -> Outcome {
    let fs_path = cfg.first_stage_path();
    require(&[("first-stage run (run `rprs retrieve`)", fs_path.clone())])?;
    let (docs, queries) = segmented(cfg)?;
    let store = store(cfg)?;
    let first_stage = RunFile::load_trec(fs_path)?;
    let collection = Collection::new(docs)?;
    let s = &cfg.settings;
    let reranking = rerank_run(&queries, &first_stage, &store, &collection, s)?;
    workdir(cfg)?;
    let out = cfg.method_run_path();
    reranking.run.write_trec(&out, &s.run_tag())?;
    reranking.write_breakdown(cfg.breakdown_path())?;
    Ok(format!(
        "rerank: {} queries, method {}, depth {}, tag {} -> {}",
        reranking.run.len(),
        s.method,
        s.depth,
        s.run_tag(),
        show(&out)
    ))
}

/// Run file name without its directory, `run.` prefix and extension.
fn run_stem(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_prefix("run.").map(str::to_string).unwrap_or(stem)
}

pub fn evaluate(cfg: &PipelineConfig) -> Outcome {
    let (run_path, qrels_path) = (cfg.run_path(), cfg.qrels_path());
    require(&[("run", run_path.clone()), ("qrels", qrels_path.clone())])?;
    let dir = workdir(cfg)?;
    let run = RunFile::load_trec(&run_path)?;
    let qrels = load_qrels(qrels_path)?;
    if qrels.judged_queries().is_empty() {
        return Err(Failure::new(Kind::Data, "qrels hold no relevant judgments"));
    }
    let report = rank_metrics(&run, &qrels, &cfg.settings.cutoffs)?;
    let stem = run_stem(&run_path);
    let out = dir.join(format!("metrics.{stem}.json"));
    report.write_json(&out)?;
    report.write_per_query_csv(dir.join(format!("per_query.{stem}.csv")))?;
    let objective = cfg.settings.objective;
    let value = cfg.settings.objective.evaluate(&run.view(), &qrels);
    Ok(format!(
        "evaluate: {} over {} judged queries, {objective} = {value:.4} -> {}",
        show(&run_path),
        report.queries,
        show(&out)
    ))
}

pub fn tune(cfg: &PipelineConfig) -> Outcome {
    let (fs_path, qrels_path) = (cfg.first_stage_path(), cfg.qrels_path());
    require(&[("first-stage run (run `rprs retrieve`)", fs_path.clone()), ("qrels", qrels_path.clone())])?;
    let (docs, queries) = segmented(cfg)?;
    let store = store(cfg)?;
    let first_stage = RunFile::load_trec(fs_path)?;
    let qrels = load_qrels(qrels_path)?;
    let judged: Vec<SegmentedDocument> = queries
        .into_iter()
        .filter(|q| !qrels.relevant(&q.id).is_empty())
        .collect();
    if judged.is_empty() {
        return Err(Failure::new(Kind::Data, "no query has relevant judgments"));
    }
    let collection = Collection::new(docs)?;
    let input = TuneInput {
        queries: &judged,
        first_stage: &first_stage,
        store: &store,
        collection: &collection,
        qrels: &qrels,
    };
    let grid = cfg.grid();
    let dir = workdir(cfg)?;
    let result = grid_search(input, cfg.settings.depth, &grid)?;
    write_grid_csv(dir.join("grid.csv"), grid.objective, &result.table)?;
    let best = result.best.params;
    let sweep = depth_sweep(input, &best, &cfg.tune.depths, grid.objective)?;
    write_depth_csv(dir.join("depth.csv"), grid.objective, &sweep.table)?;
    let preset = Preset {
        dataset: cfg.dataset.clone(),
        n: best.n,
        k1: best.k1,
        b: best.b,
        depth: sweep.best_depth,
        objective: grid.objective.to_string(),
        value: Some(sweep.best_value),
    };
    let out = dir.join("preset.json");
    preset.write_json(&out)?;
    Ok(format!(
        "tune: {} cells over {} queries, best n={} k1={} b={} depth={} {} = {:.4} -> {}",
        result.table.len(),
        judged.len(),
        best.n,
        best.k1,
        best.b,
        sweep.best_depth,
        grid.objective,
        sweep.best_value,
        show(&out)
    ))
}

pub fn sweep(cfg: &PipelineConfig) -> Outcome {
    let (corpus, queries, qrels) = (cfg.corpus_path(), cfg.queries_path(), cfg.qrels_path());
    require(&[("corpus", corpus.clone()), ("queries", queries.clone()), ("qrels", qrels.clone())])?;
    let dir = workdir(cfg)?;
    let corpus = load_corpus(corpus)?;
    let queries = load_corpus(queries)?;
    let qrels = load_qrels(qrels)?;
    let s = &cfg.settings;
    let lengths = truncation_sweep(&corpus, &queries, &qrels, &cfg.sweep.lengths, s)?;
    write_sweep_csv(dir.join("truncation.csv"), &lengths)?;
    let units = unit_size_sweep(&corpus, &queries, &qrels, &cfg.sweep.unit_sizes, s)?;
    write_sweep_csv(dir.join("units.csv"), &units)?;
    Ok(format!(
        "sweep: {} truncation and {} unit-size points, method {} -> {}",
        lengths.len(),
        units.len(),
        s.method,
        show(&dir)
    ))
}

pub fn analyze(cfg: &PipelineConfig) -> Outcome {
    let (run_path, qrels_path, docs_path) = (cfg.run_path(), cfg.qrels_path(), cfg.artifact(CORPUS_SEG));
    let mut inputs = vec![
        ("run", run_path.clone()),
        ("qrels", qrels_path.clone()),
        ("segmented corpus (run `rprs segment`)", docs_path.clone()),
    ];
    if let Some(b) = &cfg.paths.baseline {
        inputs.push(("baseline run", b.clone()));
    }
    require(&inputs)?;
    let dir = workdir(cfg)?;
    let run = RunFile::load_trec(&run_path)?;
    let qrels = load_qrels(qrels_path)?;
    let lengths: HashMap<String, usize> = load_segmented(docs_path)?
        .into_iter()
        .map(|d| (d.id, d.token_count))
        .collect();
    let s = &cfg.settings;

    let r = length_score_correlation(run_pairs(&run, s.depth), &lengths, false)?;
    let row = CorrelationRow {
        model: run_stem(&run_path),
        dataset: cfg.dataset.clone(),
        r,
    };
    write_correlation_csv(dir.join("correlation.csv"), &[row])?;

    let bins = LengthBins::new(cfg.analysis.bins.clone())?;
    let probs = retrieval_probability_by_length(&run, &qrels, &lengths, &bins, cfg.analysis.k)?;
    write_bins_csv(dir.join("bins.csv"), &probs)?;

    let mut summary = format!("analyze: {} pearson r = {r:.4}", show(&run_path));
    if let Some(b) = &cfg.paths.baseline {
        let baseline = RunFile::load_trec(b)?;
        let per_query = |run: &RunFile| -> Vec<f64> {
            let view = run.view();
            qrels
                .judged_queries()
                .iter()
                .map(|q| s.objective.per_query(view.get(q), &qrels.relevant(q)))
                .collect()
        };
        let t = paired_t_test(&per_query(&run), &per_query(&baseline), cfg.analysis.alpha, cfg.analysis.corrections)?;
        let path = dir.join("ttest.json");
        let json = serde_json::json!({
            "run": show(&run_path),
            "baseline": show(b),
            "objective": s.objective.to_string(),
            "test": t,
        });
        fs::write(&path, format!("{json:#}\n")).map_err(|e| Failure::from(Error::Io { path: path.clone(), source: e }))?;
        summary.push_str(&format!(", t = {:.3}, p = {:.4}", t.t, t.p));
    }
    summary.push_str(&format!(" -> {}", show(&dir)));
    Ok(summary)
}

pub fn synth(cfg: &PipelineConfig) -> Outcome {
    let dir = workdir(cfg)?;
    let data = generate(&cfg.synth)?;
    data.write(&dir)?;
    write_config(&cfg.synth, dir.join("synth.json"))?;
    Ok(format!(
        "synth: {} documents, {} queries, {} judgments, seed {} -> {}",
        data.corpus.len(),
        data.queries.len(),
        data.qrels.len(),
        cfg.synth.seed,
        show(&dir)
    ))
}
