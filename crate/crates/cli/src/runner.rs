//! Named experiments over a stored or simulated corpus.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use roomrec_core::dataset::{DatasetStore, SplitPolicy};
use roomrec_core::experiments::{
    run_arch_sweep, run_design_matrix, run_hyper_sweep, run_robustness, run_volume_curve, Corpus, ExperimentConfig,
    SweepAxis, Table,
};
use roomrec_core::nn::{build_named_arch, named_arch_names};
use roomrec_core::sim::{Interferer, SimSpec};

use crate::error::{CliError, Result};

pub const EXPERIMENTS: [&str; 7] = [
    "design-matrix",
    "arch-sweep",
    "filters",
    "filter-size",
    "dense-layers",
    "volume",
    "robustness",
];

/// Knobs shared by every experiment.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub max_steps: Option<usize>,
    pub volumes: Option<Vec<usize>>,
    pub archs: Option<Vec<String>>,
    pub interferer: Option<Interferer>,
}

/// Loads a corpus from a dataset store directory with assigned splits, or
/// generates one from a simulator spec JSON file.
pub fn load_corpus(path: &Path) -> Result<Corpus<f32>> {
    if path.is_dir() {
        let store = DatasetStore::open(path)?;
        return Ok(Corpus::from_store(&store)?);
    }
    let text = std::fs::read_to_string(path)?;
    let spec = SimSpec::from_json(&text)?;
    let policy = if spec.per_room >= SplitPolicy::default().total() {
        SplitPolicy::default()
    } else {
        SplitPolicy::proportional(spec.per_room)
    };
    Ok(Corpus::synthetic(&spec, &policy, spec.seed)?)
}

/// Writes `<out>/<name>.csv` and `<out>/<name>.json`; returns both paths.
pub fn run_experiment(name: &str, corpus: &Corpus<f32>, opts: &RunOptions, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut cfg = ExperimentConfig {
        seed: opts.seed,
        ..ExperimentConfig::default()
    };
    if let Some(steps) = opts.max_steps {
        cfg.train.max_steps = steps;
    }
    let start = Instant::now();
    let (table, results): (Table, Value) = match name {
        "design-matrix" => {
            let (m, t) = run_design_matrix(corpus, &cfg)?;
            (t, to_value(&m))
        }
        "arch-sweep" => {
            let names: Vec<&str> = match &opts.archs {
                Some(v) => v.iter().map(String::as_str).collect(),
                None => named_arch_names().iter().copied().filter(|n| n.len() == 1).collect(),
            };
            let (cells, t) = run_arch_sweep(corpus, &names, &cfg)?;
            (t, to_value(&cells))
        }
        "filters" | "filter-size" | "dense-layers" => {
            let axis = match name {
                "filters" => SweepAxis::Filters(vec![(8, 16), (16, 32), (32, 64)]),
                "filter-size" => SweepAxis::FilterSize(vec![2, 3, 4, 5]),
                _ => SweepAxis::DenseLayers(vec![1, 2, 3]),
            };
            let (cells, t) = run_hyper_sweep(corpus, &axis, &cfg)?;
            (t, to_value(&cells))
        }
        "volume" => {
            let volumes = opts.volumes.clone().unwrap_or_else(|| vec![100, 250, 375, 437, 500]);
            let arch = build_named_arch("C", corpus.classes())?;
            let (points, t) = run_volume_curve(corpus, &arch, &volumes, &cfg)?;
            (t, to_value(&points))
        }
        "robustness" => {
            let spec = opts.interferer.clone().unwrap_or_default();
            let (rows, t) = run_robustness(corpus, &spec, &cfg)?;
            (t, to_value(&rows))
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown experiment `{other}`; one of {}",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    std::fs::create_dir_all(out)?;
    let csv = out.join(format!("{name}.csv"));
    table.write_csv(std::fs::File::create(&csv)?)?;
    let summary = json!({
        "experiment": name,
        "seed": opts.seed,
        "corpus_sha256": corpus.hash,
        "classes": corpus.classes(),
        "config": to_value(&cfg),
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "results": results,
    });
    let js = out.join(format!("{name}.json"));
    std::fs::write(&js, serde_json::to_string_pretty(&summary).expect("json value"))?;
    Ok((csv, js))
}

fn to_value<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("serializable result")
}
