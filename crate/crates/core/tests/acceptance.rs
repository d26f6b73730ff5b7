//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{oracle_scores, random_instance, random_params, rng, Bm25Oracle};
use rprs_core::analysis::{
    length_score_correlation, truncation_sweep, write_correlation_csv, write_sweep_csv, CorrelationRow,
};
use rprs_core::corpus::{Collection, Qrels, SegmentedDocument};
use rprs_core::embed::{EmbeddingStore, SentenceRef};
use rprs_core::eval::{rank_metrics, set_metrics, Averaging, Metric, RunFile};
use rprs_core::lexical::{build_index, Bm25Params};
use rprs_core::pipeline::{self, Method, PipelineRun, Settings};
use rprs_core::rprs::{rerank, PrsParams};
use rprs_core::synth::{generate, SynthConfig, SynthDataset};
use rprs_core::tune::{evaluate_params, grid_search, write_grid_csv, GridSpec, TuneInput};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn engine(inst: &common::Instance, depth: usize, p: &PrsParams) -> Vec<(String, f64, f64, f64)> {
    rerank(&inst.query, &inst.first_stage, depth, &inst.store, &inst.collection, p)
        .unwrap()
        .scored
        .into_iter()
        .map(|s| (s.doc_id, s.qp, s.dp, s.score))
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 5, 6);
        for use_freq in [false, true] {
            let p = random_params(&mut rng, use_freq);
            let got = engine(&inst, 5, &p);
            for want in oracle_scores(&inst, 5, &p) {
                let g = got.iter().find(|g| g.0 == want.doc).expect("candidate scored");
                worst = worst.max((g.1 - want.qp).abs()).max((g.2 - want.dp).abs()).max((g.3 - want.score).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 10.0, format!("max |diff| {worst:.2e}, {secs:.2}s"))
}

fn k1_zero_reduction() -> Outcome {
    let mut rng = rng(2);
    let mut mismatches = 0;
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 5, 6);
        let n = rng.random_range(1..=10);
        let base = engine(&inst, 5, &PrsParams::base(n));
        for b in [0.0, 0.5, 1.0] {
            if engine(&inst, 5, &PrsParams::freq(n, 0.0, b)) != base {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("{mismatches} of 150 pools differ"))
}

fn extreme_constructions() -> (f64, f64) {
    let e = |i: usize| {
        let mut v = vec![0.0f32; 4];
        v[i] = 1.0;
        v
    };
    let mut rows = Vec::new();
    let mut manifest = Vec::new();
    for (doc, vecs) in [("full", [e(0), e(1)]), ("none", [e(2), e(3)]), ("q", [e(0), e(1)])] {
        for (s, v) in vecs.into_iter().enumerate() {
            rows.extend(v);
            manifest.push(SentenceRef::new(doc, s));
        }
    }
    let store = EmbeddingStore::from_raw(4, rows, manifest).unwrap();
    let doc = |id: &str| SegmentedDocument::from_sentences(id, vec!["x".into(), "y".into()]);
    let coll = Collection::new(vec![doc("full"), doc("none")]).unwrap();
    let fs = vec!["none".to_string(), "full".to_string()];
    let r = rerank(&doc("q"), &fs, 2, &store, &coll, &PrsParams::freq(1, 0.0, 0.75)).unwrap();
    let score = |id: &str| r.scored.iter().find(|s| s.doc_id == id).unwrap().score;
    (score("full"), score("none"))
}

fn bounds() -> Outcome {
    let mut rng = rng(3);
    let mut out_of_range = 0;
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, 5, 6);
        let use_freq = rng.random_bool(0.5);
        let p = random_params(&mut rng, use_freq);
        for (_, qp, dp, score) in engine(&inst, 5, &p) {
            if ![qp, dp, score].iter().all(|x| (0.0..=1.0).contains(x)) {
                out_of_range += 1;
            }
        }
    }
    let (max, min) = extreme_constructions();
    check(
        out_of_range == 0 && max == 1.0 && min == 0.0,
        format!("{out_of_range} out-of-range scores, max construction {max}, disjoint {min}"),
    )
}

fn planted_settings() -> Settings {
    Settings {
        method: Method::RprsFreq,
        rprs: PrsParams::freq(4, 2.8, 1.0),
        depth: 50,
        objective: Metric::Map(5),
        ..Settings::default()
    }
}

fn run_on(data: &SynthDataset, settings: &Settings) -> PipelineRun {
    pipeline::run(&data.corpus, &data.queries, &data.qrels, settings).unwrap()
}

fn planted() -> Outcome {
    let start = Instant::now();
    let data = generate(&SynthConfig::planted()).unwrap();
    let out = run_on(&data, &planted_settings());
    let secs = start.elapsed().as_secs_f64();
    check(
        out.objective >= 0.9 && out.objective > out.first_stage_objective && secs < 60.0,
        format!("MAP@5 {:.4} vs BM25 {:.4}, {secs:.2}s", out.objective, out.first_stage_objective),
    )
}

fn correlation(data: &SynthDataset, method: Method) -> f64 {
    let settings = Settings {
        method,
        depth: 200,
        ..planted_settings()
    };
    let out = run_on(data, &settings);
    let pairs = out.reranking.breakdown.iter().map(|r| (r.q.as_str(), r.d.as_str(), r.score));
    length_score_correlation(pairs, &out.doc_lengths(), false).unwrap()
}

fn length_bias() -> Outcome {
    let data = generate(&SynthConfig::length_bias()).unwrap();
    let r_freq = correlation(&data, Method::RprsFreq);
    let r_sdr = correlation(&data, Method::Sdr);
    check(
        r_freq.abs() < 0.2 && r_sdr > 0.4,
        format!("r(rprs-freq) {r_freq:.4}, r(sdr) {r_sdr:.4}"),
    )
}

fn bm25_fixture_corpus() -> Vec<SegmentedDocument> {
    // Ten documents of four tokens; "term" occurs in two, twice in "target".
    let mut docs = vec![
        SegmentedDocument::from_sentences("target", vec!["term term alpha beta".into()]),
        SegmentedDocument::from_sentences("other", vec!["term alpha beta gamma".into()]),
    ];
    for i in 0..8 {
        docs.push(SegmentedDocument::from_sentences(format!("filler{i}"), vec!["alpha beta gamma delta".into()]));
    }
    docs
}

fn bm25_correctness() -> Outcome {
    let index = build_index(&bm25_fixture_corpus()).unwrap();
    let params = Bm25Params { k1: 1.2, b: 0.75 };
    let query = vec!["term".to_string()];
    let score = index.bm25_score(params, &query, "target").unwrap();
    let hand = (8.5f64 / 2.5).ln() * 2.0 / (2.0 + 1.2);
    let mut failures = Vec::new();
    if (score - hand).abs() > 1e-6 || (score - 0.7649).abs() > 5e-5 {
        failures.push(format!("fixture {score:.6}"));
    }

    let mut rng = rng(4);
    let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
    for case in 0..200 {
        let n_docs = rng.random_range(1..=50);
        let docs: Vec<(String, Vec<String>)> = (0..n_docs)
            .map(|i| {
                let len = rng.random_range(0..=12);
                (format!("d{i:02}"), (0..len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect())
            })
            .collect();
        let segmented: Vec<SegmentedDocument> =
            docs.iter().map(|(id, t)| SegmentedDocument::from_sentences(id.clone(), vec![t.join(" ")])).collect();
        let query: Vec<String> = (0..rng.random_range(1..=4)).map(|_| words[rng.random_range(0..words.len())].to_string()).collect();
        let (k1, b) = (rng.random_range(0.0..3.0), rng.random_range(0.0..=1.0));
        let index = build_index(&segmented).unwrap();
        let got = index.bm25_search(Bm25Params { k1, b }, &query, usize::MAX, None);
        let want = Bm25Oracle { docs }.search(k1, b, &query, None);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-9);
        if !same {
            failures.push(format!("search case {case}"));
        }
    }
    check(failures.is_empty(), if failures.is_empty() { format!("score {score:.6}, 200 searches agree") } else { failures.join("; ") })
}

fn run_of(lists: &[(&str, &[&str])]) -> RunFile {
    let mut run = RunFile::new();
    for (q, docs) in lists {
        let n = docs.len();
        run.insert(q, docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect()).unwrap();
    }
    run
}

fn qrels_of(pairs: &[(&str, &str)]) -> Qrels {
    let mut q = Qrels::new();
    for (query, doc) in pairs {
        q.insert(query, doc, 1).unwrap();
    }
    q
}

fn metric_fixtures() -> Outcome {
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    let run = run_of(&[("q", &["r1", "x1", "r2", "x2", "x3", "r3"])]);
    let qrels = qrels_of(&[("q", "r1"), ("q", "r2"), ("q", "r3"), ("q", "r4")]);
    let set = set_metrics(&run, &qrels, 5, Averaging::Macro).unwrap();
    checks.push(("P@5", set.precision, 0.4));
    checks.push(("R@5", set.recall, 0.5));
    checks.push(("F1@5", set.f1, 0.4444));

    let run = run_of(&[("q", &["d1", "d2", "d3"])]);
    let qrels = qrels_of(&[("q", "d1"), ("q", "d3")]);
    let report = rank_metrics(&run, &qrels, &[3]).unwrap();
    checks.push(("AP@3", report.get(Metric::Map(3)).unwrap(), 0.8333));
    checks.push(("NDCG@3", report.get(Metric::Ndcg(3)).unwrap(), 0.9197));

    let run = run_of(&[("q", &["x", "r", "y"])]);
    let report = rank_metrics(&run, &qrels_of(&[("q", "r")]), &[1]).unwrap();
    checks.push(("MRR", report.get(Metric::Mrr).unwrap(), 0.5));

    let ten: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let ten: Vec<&str> = ten.iter().map(String::as_str).collect();
    let run = run_of(&[("q", &ten)]);
    let report = rank_metrics(&run, &qrels_of(&[("q", "d0")]), &[1]).unwrap();
    checks.push(("MPR", report.get(Metric::Mpr).unwrap(), 100.0));

    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-4)
        .map(|(name, got, want)| format!("{name} {got:.5} != {want}"))
        .collect();
    check(bad.is_empty(), if bad.is_empty() { format!("{} fixtures", checks.len()) } else { bad.join("; ") })
}

fn median_time(mut f: impl FnMut()) -> Duration {
    let mut t: Vec<Duration> = (0..3)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed()
        })
        .collect();
    t.sort();
    t[1]
}

fn grid_consistency() -> Outcome {
    let data = generate(&SynthConfig::planted()).unwrap();
    let out = run_on(&data, &Settings { method: Method::Bm25, ..planted_settings() });
    let input = TuneInput {
        queries: &out.queries,
        first_stage: &out.first_stage,
        store: &out.store,
        collection: &out.collection,
        qrels: &data.qrels,
    };
    let grid = GridSpec::default();
    let depth = 50;
    let start = Instant::now();
    let result = grid_search(input, depth, &grid).unwrap();
    let grid_time = start.elapsed();

    let mut rng = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let cell = result.table[rng.random_range(0..result.table.len())];
        let direct = evaluate_params(input, depth, &cell.params, grid.objective).unwrap();
        worst = worst.max((cell.value - direct).abs());
    }
    let single = median_time(|| {
        evaluate_params(input, depth, &PrsParams::default(), grid.objective).unwrap();
    });
    let ratio = grid_time.as_secs_f64() / single.as_secs_f64();
    check(
        worst <= 1e-9 && ratio < 25.0,
        format!(
            "{} cells, max |diff| {worst:.2e}, grid {:.2}s = {ratio:.1}x single rerank",
            result.table.len(),
            grid_time.as_secs_f64()
        ),
    )
}

fn write_artifacts(dir: &Path) {
    let data = generate(&SynthConfig::planted()).unwrap();
    let settings = planted_settings();
    let out = run_on(&data, &settings);
    out.first_stage.write_trec(dir.join("bm25.trec"), "bm25").unwrap();
    out.reranking.run.write_trec(dir.join("rerank.trec"), &settings.run_tag()).unwrap();
    out.reranking.write_breakdown(dir.join("breakdown.jsonl")).unwrap();
    let report = rank_metrics(&out.reranking.run, &data.qrels, &settings.cutoffs).unwrap();
    report.write_json(dir.join("metrics.json")).unwrap();
    report.write_per_query_csv(dir.join("per_query.csv")).unwrap();

    let input = TuneInput {
        queries: &out.queries,
        first_stage: &out.first_stage,
        store: &out.store,
        collection: &out.collection,
        qrels: &data.qrels,
    };
    let grid = GridSpec {
        n_values: vec![2, 4, 6],
        ..GridSpec::default()
    };
    let result = grid_search(input, 50, &grid).unwrap();
    write_grid_csv(dir.join("grid.csv"), grid.objective, &result.table).unwrap();

    let rows = truncation_sweep(&data.corpus, &data.queries, &data.qrels, &[64, 256], &settings).unwrap();
    write_sweep_csv(dir.join("truncation.csv"), &rows).unwrap();
    let pairs = out.reranking.breakdown.iter().map(|r| (r.q.as_str(), r.d.as_str(), r.score));
    let r = length_score_correlation(pairs, &out.doc_lengths(), false).unwrap();
    let row = CorrelationRow {
        model: "rprs-freq".into(),
        dataset: "planted".into(),
        r,
    };
    write_correlation_csv(dir.join("correlation.csv"), &[row]).unwrap();
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_artifacts(a.path());
    write_artifacts(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    check(
        differing.is_empty() && names.len() == 8,
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

fn truncation_endpoint() -> Outcome {
    let data = generate(&SynthConfig::late()).unwrap();
    let settings = Settings {
        objective: Metric::F1(5),
        ..planted_settings()
    };
    let full = run_on(&data, &settings).objective;
    let rows = truncation_sweep(&data.corpus, &data.queries, &data.qrels, &[256], &settings).unwrap();
    let truncated = rows[0].value;
    check(truncated < full, format!("F1@5 at 256 tokens {truncated:.4} vs full {full:.4}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("k1=0 reduction", k1_zero_reduction),
        ("bounds", bounds),
        ("planted relevance end-to-end", planted),
        ("length-bias separation", length_bias),
        ("bm25 correctness", bm25_correctness),
        ("metric fixtures", metric_fixtures),
        ("grid-search consistency", grid_consistency),
        ("determinism", determinism),
        ("truncation endpoint", truncation_endpoint),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS | {name} | {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL | {name} | {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
