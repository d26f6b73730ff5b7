//! Pipeline configuration: built-in defaults, then the JSON file, then a
//! preset, then `--dotted.name value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use rprs_core::pipeline::Settings;
use rprs_core::rprs::MAX_N;
use rprs_core::synth::SynthConfig;
use rprs_core::tune::{builtin_preset, default_depths, GridSpec, Preset};
use rprs_core::lexical::Bm25Params;

use crate::failure::Failure;

/// Input and output locations. Unset inputs fall back to fixed names inside
/// `workdir`, which is also where every artifact is written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub workdir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// SEB1 vector file produced by an external exporter.
    pub embeddings: Option<PathBuf>,
    /// Manifest matching `embeddings` row for row.
    pub manifest: Option<PathBuf>,
    /// First-stage run read by `rerank` and `tune`.
    pub first_stage: Option<PathBuf>,
    /// Run read by `evaluate` and `analyze`.
    pub run: Option<PathBuf>,
    /// Second run for the paired t-test in `analyze`.
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub n_values: Vec<usize>,
    pub b_values: Vec<f64>,
    pub k1_values: Vec<f64>,
    pub depths: Vec<usize>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        TuneConfig {
            n_values: grid.n_values,
            b_values: grid.b_values,
            k1_values: grid.k1_values,
            depths: default_depths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Token budgets for the truncation sweep.
    pub lengths: Vec<usize>,
    /// Window sizes for the fixed-length unit sweep.
    pub unit_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lengths: vec![64, 128, 256, 512, 1024, 2048],
            unit_sizes: vec![16, 32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Upper and lower word-length bin edges.
    pub bins: Vec<usize>,
    /// Retrieval cutoff for the per-bin retrieval probability.
    pub k: usize,
    pub alpha: f64,
    pub corrections: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bins: (1..=10).map(|k| k * 1000).collect(),
            k: 100,
            alpha: 0.05,
            corrections: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Dataset name recorded in presets and correlation tables.
    pub dataset: String,
    /// Built-in preset name or path to a preset JSON file.
    pub preset: Option<String>,
    /// BM25 parameter preset (`default` or `coliee`).
    pub first_stage_preset: Option<String>,
    #[serde(flatten)]
    pub settings: Settings,
    pub tune: TuneConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            dataset: "synthetic".into(),
            preset: None,
            first_stage_preset: None,
            settings: Settings::default(),
            tune: TuneConfig::default(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// One `--name value` pair from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub raw: String,
}

/// Splits trailing arguments into an optional config file and overrides.
pub fn parse_overrides(args: &[String]) -> Result<(Option<PathBuf>, Vec<Override>), Failure> {
    let mut config = None;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(flag) = arg.strip_prefix("--") else {
            problems.push(format!("unexpected argument {arg:?}; overrides take the form --name value"));
            i += 1;
            continue;
        };
        let (name, value) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let value = match value {
            Some(v) => v,
            None if i + 1 < args.len() => {
                i += 1;
                args[i].clone()
            }
            None => {
                problems.push(format!("--{name} needs a value"));
                i += 1;
                continue;
            }
        };
        if name == "config" {
            config = Some(PathBuf::from(value));
        } else {
            out.push(Override { path: name, raw: value });
        }
        i += 1;
    }
    if problems.is_empty() {
        Ok((config, out))
    } else {
        Err(Failure::config(problems))
    }
}

/// Every key of `given` that has no counterpart in `schema`.
fn unknown_keys(given: &Value, schema: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(s)) = (given, schema) else {
        return;
    };
    for (k, v) in g {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            None => out.push(format!("unknown config field {path:?}")),
            Some(sv) => unknown_keys(v, sv, &path, out),
        }
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a flag value against the shape of the value it replaces.
fn parse_value(raw: &str, current: &Value) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if current.is_string() && !v.is_string() {
            return Value::String(raw.to_string());
        }
        // A bare scalar for a list field is a one-element list.
        if current.is_array() && !v.is_array() {
            return Value::Array(vec![v]);
        }
        return v;
    }
    if current.is_array() {
        return Value::Array(
            raw.split(',')
                .map(|s| serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string())))
                .collect(),
        );
    }
    Value::String(raw.to_string())
}

fn set_path(root: &mut Value, schema: &Value, o: &Override) -> Result<(), String> {
    let mut slot = root;
    let mut shape = schema;
    for part in o.path.split('.') {
        shape = shape
            .get(part)
            .ok_or_else(|| format!("unknown option --{}", o.path))?;
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| format!("unknown option --{}", o.path))?;
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *slot = parse_value(&o.raw, shape);
    Ok(())
}

fn load_preset(name: &str) -> Result<Preset, String> {
    if let Some(p) = builtin_preset(name) {
        return Ok(p);
    }
    if Path::new(name).exists() {
        return Preset::load_json(name).map_err(|e| format!("preset {name:?}: {e}"));
    }
    Err(format!("unknown preset {name:?}; expected coliee, wwg, wwa, clef-ip or a preset file"))
}

fn section<T: for<'de> Deserialize<'de>>(value: &Value, key: &str, problems: &mut Vec<String>) {
    if let Some(v) = value.get(key) {
        if let Err(e) = serde_json::from_value::<T>(v.clone()) {
            problems.push(format!("{key}: {e}"));
        }
    }
}

impl PipelineConfig {
    /// Resolves defaults, file, preset and flags, and reports every problem found.
    pub fn resolve(file: Option<&Path>, overrides: &[Override]) -> Result<Self, Failure> {
        let schema = serde_json::to_value(PipelineConfig::default()).expect("serializable");
        let mut problems = Vec::new();
        let mut value = schema.clone();

        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(vec![format!("cannot read config {}: {e}", path.display())]))?;
            let given: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::config(vec![format!("config {}: {e}", path.display())]))?;
            if !given.is_object() {
                return Err(Failure::config(vec![format!("config {} must hold a JSON object", path.display())]));
            }
            unknown_keys(&given, &schema, "", &mut problems);
            merge(&mut value, given);
        }

        // Flags are applied once to find the presets, then again on top of them.
        let mut flagged = value.clone();
        for o in overrides {
            if let Err(e) = set_path(&mut flagged, &schema, o) {
                problems.push(e);
            }
        }
        if let Some(name) = flagged.get("preset").and_then(Value::as_str) {
            match load_preset(name) {
                Ok(p) => merge(
                    &mut value,
                    serde_json::json!({"rprs": {"n": p.n, "k1": p.k1, "b": p.b}, "depth": p.depth}),
                ),
                Err(e) => problems.push(e),
            }
        }
        if let Some(name) = flagged.get("first_stage_preset").and_then(Value::as_str) {
            match Bm25Params::preset(name) {
                Some(p) => merge(&mut value, serde_json::json!({"bm25": p})),
                None => problems.push(format!("unknown first_stage_preset {name:?}; expected default or coliee")),
            }
        }
        for o in overrides {
            let _ = set_path(&mut value, &schema, o);
        }

        let config = match serde_json::from_value::<PipelineConfig>(value.clone()) {
            Ok(c) => Some(c),
            Err(_) => {
                // Re-check section by section so every type error is listed.
                section::<Paths>(&value, "paths", &mut problems);
                section::<TuneConfig>(&value, "tune", &mut problems);
                section::<SweepConfig>(&value, "sweep", &mut problems);
                section::<AnalysisConfig>(&value, "analysis", &mut problems);
                section::<SynthConfig>(&value, "synth", &mut problems);
                let mut top: Map<String, Value> = value.as_object().cloned().unwrap_or_default();
                for k in ["paths", "tune", "sweep", "analysis", "synth"] {
                    top.remove(k);
                }
                for (k, v) in &top {
                    let mut probe = schema.clone();
                    probe[k.as_str()] = v.clone();
                    if let Err(e) = serde_json::from_value::<PipelineConfig>(probe) {
                        problems.push(format!("{k}: {e}"));
                    }
                }
                if problems.is_empty() {
                    problems.push("config does not match the expected shape".into());
                }
                None
            }
        };
        if let Some(c) = &config {
            problems.extend(c.violations());
        }
        match config {
            Some(c) if problems.is_empty() => Ok(c),
            _ => Err(Failure::config(problems)),
        }
    }

    /// Semantic constraints across every section.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.settings.violations();
        let t = &self.tune;
        if t.n_values.is_empty() || t.b_values.is_empty() || t.k1_values.is_empty() {
            out.push("tune grid axes must be non-empty".into());
        }
        if t.n_values.iter().any(|&n| n == 0 || n > MAX_N) {
            out.push(format!("tune.n_values must lie in 1..={MAX_N}"));
        }
        if t.b_values.iter().any(|b| !(0.0..=1.0).contains(b)) {
            out.push("tune.b_values must lie in [0, 1]".into());
        }
        if t.k1_values.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            out.push("tune.k1_values must be finite and >= 0".into());
        }
        if t.depths.is_empty() || t.depths.contains(&0) || t.depths.windows(2).any(|w| w[0] >= w[1]) {
            out.push("tune.depths must be positive and strictly ascending".into());
        }
        if self.sweep.lengths.contains(&0) || self.sweep.unit_sizes.contains(&0) {
            out.push("sweep lengths and unit sizes must be positive".into());
        }
        let a = &self.analysis;
        if a.bins.len() < 2 || a.bins.windows(2).any(|w| w[0] >= w[1]) {
            out.push("analysis.bins needs at least two strictly ascending edges".into());
        }
        if a.k == 0 {
            out.push("analysis.k must be at least 1".into());
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            out.push("analysis.alpha must lie in (0, 1)".into());
        }
        if a.corrections == 0 {
            out.push("analysis.corrections must be at least 1".into());
        }
        if let Err(e) = self.synth.validate() {
            out.extend(e.to_string().trim_start_matches("invalid parameter: ").split("; ").map(|s| format!("synth: {s}")));
        }
        out
    }

    pub fn workdir(&self) -> PathBuf {
        self.paths.workdir.clone().unwrap_or_else(|| PathBuf::from("work"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.workdir().join(name)
    }

    fn input(&self, given: &Option<PathBuf>, fallback: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.artifact(fallback))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.input(&self.paths.corpus, "corpus.jsonl")
    }

    pub fn queries_path(&self) -> PathBuf {
        self.input(&self.paths.queries, "queries.jsonl")
    }

    pub fn qrels_path(&self) -> PathBuf {
        self.input(&self.paths.qrels, "qrels.txt")
    }

    pub fn first_stage_path(&self) -> PathBuf {
        self.input(&self.paths.first_stage, "run.bm25.trec")
    }

    /// The re-ranked run of the configured method.
    pub fn method_run_path(&self) -> PathBuf {
        self.artifact(&format!("run.{}.trec", self.settings.method))
    }

    pub fn run_path(&self) -> PathBuf {
        self.paths.run.clone().unwrap_or_else(|| self.method_run_path())
    }

    pub fn breakdown_path(&self) -> PathBuf {
        self.artifact(&format!("breakdown.{}.jsonl", self.settings.method))
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            n_values: self.tune.n_values.clone(),
            b_values: self.tune.b_values.clone(),
            k1_values: self.tune.k1_values.clone(),
            objective: self.settings.objective,
        }
    }
}
