//! Grid search over `(n, k1, b)`, re-ranking depth sweeps and tuned presets.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, Qrels, SegmentedDocument};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{csv_err, Metric, RankedView, RunFile};
use crate::rprs::{PreparedQuery, PrsParams, MAX_N};

/// Everything a tuning run reads. Queries are scored against their
/// first-stage lists in `first_stage` and judged against `qrels`.
#[derive(Clone, Copy)]
pub struct TuneInput<'a> {
    pub queries: &'a [SegmentedDocument],
    pub first_stage: &'a RunFile,
    pub store: &'a EmbeddingStore,
    pub collection: &'a Collection,
    pub qrels: &'a Qrels,
}

impl<'a> TuneInput<'a> {
    fn check(&self) -> Result<Qrels> {
        if self.queries.is_empty() {
            return Err(Error::InvalidParam("no queries to tune on".into()));
        }
        for q in self.queries {
            if self.first_stage.get(&q.id).is_none() {
                return Err(Error::MissingRun(q.id.clone()));
            }
            if self.qrels.relevant(&q.id).is_empty() {
                return Err(Error::Unjudged(q.id.clone()));
            }
        }
        Ok(self.qrels.restrict(self.queries.iter().map(|q| q.id.as_str())))
    }

    fn first_stage_ids(&self, query: &str) -> Vec<String> {
        self.first_stage
            .get(query)
            .unwrap_or(&[])
            .iter()
            .map(|e| e.doc_id.clone())
            .collect()
    }

    fn prepare(&self, depth: usize, n_max: usize) -> Result<Vec<PreparedQuery>> {
        self.queries
            .par_iter()
            .map(|q| {
                let fs = self.first_stage_ids(&q.id);
                PreparedQuery::new(q, &fs, depth, self.store, self.collection, n_max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n_values: Vec<usize>,
    pub b_values: Vec<f64>,
    pub k1_values: Vec<f64>,
    pub objective: Metric,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_values: (1..=MAX_N).collect(),
            b_values: (0..=10).map(|i| i as f64 / 10.0).collect(),
            k1_values: (0..=15).map(|i| (2 * i) as f64 / 10.0).collect(),
            objective: Metric::F1(5),
        }
    }
}

impl GridSpec {
    pub fn single(params: &PrsParams, objective: Metric) -> Self {
        GridSpec {
            n_values: vec![params.n],
            b_values: vec![params.b],
            k1_values: vec![params.k1],
            objective,
        }
    }

    pub fn cells(&self) -> usize {
        self.n_values.len() * self.k1_values.len() * self.b_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells() == 0 {
            return Err(Error::InvalidParam("grid has no cells".into()));
        }
        for &n in &self.n_values {
            for &k1 in &self.k1_values {
                for &b in &self.b_values {
                    PrsParams::freq(n, k1, b).validate()?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub params: PrsParams,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridCell,
    /// One cell per combination, ordered by `(n, k1, b)` as listed in the spec.
    pub table: Vec<GridCell>,
}

fn objective(
    prepared: &[PreparedQuery],
    orders: Vec<Vec<&str>>,
    metric: Metric,
    qrels: &Qrels,
) -> f64 {
    let lists: HashMap<&str, Vec<&str>> = prepared
        .iter()
        .map(|p| p.pool.query_id.as_str())
        .zip(orders)
        .collect();
    metric.evaluate(&RankedView { lists }, qrels)
}

/// Scores every `(n, k1, b)` combination with the frequency variant.
///
/// Neighbor lists are computed once per query at the largest `n` and
/// truncated for smaller ones. The best cell maximizes the objective; ties go
/// to the smallest `(n, k1, b)`.
pub fn grid_search(input: TuneInput<'_>, depth: usize, grid: &GridSpec) -> Result<GridResult> {
    grid.validate()?;
    let qrels = input.check()?;
    let n_max = *grid.n_values.iter().max().expect("validated non-empty");
    let prepared = input.prepare(depth, n_max)?;

    let per_n: Vec<Vec<GridCell>> = grid
        .n_values
        .par_iter()
        .map(|&n| {
            let counts: Vec<_> = prepared.iter().map(|p| p.counts(n)).collect();
            let mut cells = Vec::with_capacity(grid.k1_values.len() * grid.b_values.len());
            for &k1 in &grid.k1_values {
                for &b in &grid.b_values {
                    let params = PrsParams::freq(n, k1, b);
                    let orders = prepared
                        .iter()
                        .zip(&counts)
                        .map(|(p, c)| p.order(c, &params))
                        .collect();
                    let value = objective(&prepared, orders, grid.objective, &qrels);
                    cells.push(GridCell { params, value });
                }
            }
            cells
        })
        .collect();
    let table: Vec<GridCell> = per_n.into_iter().flatten().collect();

    let mut ranked: Vec<&GridCell> = table.iter().collect();
    ranked.sort_by(|x, y| {
        y.value
            .total_cmp(&x.value)
            .then(x.params.n.cmp(&y.params.n))
            .then(x.params.k1.total_cmp(&y.params.k1))
            .then(x.params.b.total_cmp(&y.params.b))
    });
    let best = *ranked[0];
    Ok(GridResult { best, table })
}

/// Objective of one parameter setting, re-ranking from scratch.
pub fn evaluate_params(
    input: TuneInput<'_>,
    depth: usize,
    params: &PrsParams,
    metric: Metric,
) -> Result<f64> {
    params.validate()?;
    let qrels = input.check()?;
    let prepared = input.prepare(depth, params.n)?;
    let mut run = RunFile::new();
    for p in &prepared {
        run.insert(&p.pool.query_id, p.rerank(params)?.ranking())?;
    }
    Ok(metric.evaluate(&run.view(), &qrels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSweep {
    pub best_depth: usize,
    pub best_value: f64,
    pub table: Vec<(usize, f64)>,
}

/// Objective at each re-ranking depth; ties go to the smaller depth.
pub fn depth_sweep(
    input: TuneInput<'_>,
    params: &PrsParams,
    depths: &[usize],
    metric: Metric,
) -> Result<DepthSweep> {
    params.validate()?;
    if depths.is_empty() {
        return Err(Error::InvalidParam("no depths to sweep".into()));
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam("depths must be strictly ascending".into()));
    }
    let qrels = input.check()?;
    let values = depths
        .par_iter()
        .map(|&depth| {
            let prepared = input.prepare(depth, params.n)?;
            let counts: Vec<_> = prepared.iter().map(|p| p.counts(params.n)).collect();
            let orders = prepared
                .iter()
                .zip(&counts)
                .map(|(p, c)| p.order(c, params))
                .collect();
            Ok(objective(&prepared, orders, metric, &qrels))
        })
        .collect::<Result<Vec<f64>>>()?;
    let table: Vec<(usize, f64)> = depths.iter().copied().zip(values).collect();
    let (best_depth, best_value) = table
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
        .expect("non-empty");
    Ok(DepthSweep {
        best_depth,
        best_value,
        table,
    })
}

/// Depths 15, 20, ..., 100.
pub fn default_depths() -> Vec<usize> {
    (15..=100).step_by(5).collect()
}

/// A tuned parameter set for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub dataset: String,
    pub n: usize,
    pub k1: f64,
    pub b: f64,
    pub depth: usize,
    pub objective: String,
    pub value: Option<f64>,
}

impl Preset {
    pub fn params(&self) -> PrsParams {
        PrsParams::freq(self.n, self.k1, self.b)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self).map_err(|e| Error::malformed(path, 0, e))?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let preset: Preset =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::malformed(path, e.line(), e))?;
        preset.params().validate()?;
        Ok(preset)
    }
}

/// Built-in presets: `coliee`, `wwg`, `wwa`, `clef-ip`.
pub fn builtin_preset(name: &str) -> Option<Preset> {
    let (dataset, n, k1, b, depth) = match name.to_ascii_lowercase().as_str() {
        "coliee" => ("coliee", 4, 2.8, 1.0, 50),
        "wwg" => ("wwg", 4, 3.0, 0.9, 100),
        "wwa" => ("wwa", 4, 3.0, 0.9, 100),
        "clef-ip" | "clefip" => ("clef-ip", 5, 2.4, 0.8, 20),
        _ => return None,
    };
    Some(Preset {
        dataset: dataset.into(),
        n,
        k1,
        b,
        depth,
        objective: Metric::F1(5).to_string(),
        value: None,
    })
}

/// One row per grid cell: `n,k1,b,objective,value`.
pub fn write_grid_csv(path: impl AsRef<Path>, metric: Metric, table: &[GridCell]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["n", "k1", "b", "objective", "value"])
        .map_err(|e| csv_err(path, e))?;
    let name = metric.to_string();
    for c in table {
        w.write_record([
            c.params.n.to_string(),
            c.params.k1.to_string(),
            c.params.b.to_string(),
            name.clone(),
            c.value.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per depth: `depth,objective,value`.
pub fn write_depth_csv(path: impl AsRef<Path>, metric: Metric, table: &[(usize, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["depth", "objective", "value"])
        .map_err(|e| csv_err(path, e))?;
    let name = metric.to_string();
    for (d, v) in table {
        w.write_record([d.to_string(), name.clone(), v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
