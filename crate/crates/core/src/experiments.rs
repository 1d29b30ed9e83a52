//! Desk-scale study harness: design matrix, architecture and hyperparameter
//! sweeps, training-volume curve and interference robustness.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioRecord;
use crate::baseline::{mfcc, svm_train, MfccConfig, SvmConfig, SvmModel};
use crate::dataset::{assign_splits, DatasetStore, RoomLabel, Split, SplitPolicy};
use crate::error::{Error, Result};
use crate::nn::network::mix;
use crate::nn::{build_named_arch, cnn_variant, count_params, evaluate, train, CnnArch, LabeledSet, ModelBundle, TrainConfig};
use crate::scalar::Scalar;
use crate::sim::{add_interference, synth_corpus, Interferer, SimSpec};

/// Records grouped by split, each tagged with its class index.
#[derive(Debug, Clone)]
pub struct Corpus<T> {
    pub labels: Vec<RoomLabel>,
    pub train: Vec<(usize, AudioRecord<T>)>,
    pub val: Vec<(usize, AudioRecord<T>)>,
    pub test: Vec<(usize, AudioRecord<T>)>,
    /// SHA-256 over every record's samples (f32 little-endian) in split order.
    pub hash: String,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(
        labels: Vec<RoomLabel>,
        train: Vec<(usize, AudioRecord<T>)>,
        val: Vec<(usize, AudioRecord<T>)>,
        test: Vec<(usize, AudioRecord<T>)>,
    ) -> Result<Self> {
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            if part.is_empty() {
                return Err(Error::Policy {
                    room: "*".into(),
                    message: format!("corpus has no {name} split"),
                });
            }
            if let Some((c, _)) = part.iter().find(|(c, _)| *c >= labels.len()) {
                return Err(Error::Argument(format!("class index {c} outside {} labels", labels.len())));
            }
        }
        let mut h = Sha256::new();
        for (c, r) in train.iter().chain(&val).chain(&test) {
            h.update((*c as u32).to_le_bytes());
            for &v in r.samples() {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(Self {
            labels,
            train,
            val,
            test,
            hash: hex::encode(h.finalize()),
        })
    }

    /// Loads the tagged splits of a store.
    pub fn from_store(store: &DatasetStore) -> Result<Self> {
        let manifest = store.manifest();
        Self::new(
            manifest.labels(),
            store.load(Some(Split::Train))?,
            store.load(Some(Split::Val))?,
            store.load(Some(Split::Test))?,
        )
    }

    /// Generates `spec` in memory and splits every room by `policy`.
    pub fn synthetic(spec: &SimSpec, policy: &SplitPolicy, split_seed: u64) -> Result<Self> {
        let rooms = spec.profiles();
        let records = synth_corpus::<T>(&rooms, spec.per_room, &spec.context, spec.seed)?;
        let labels: Vec<RoomLabel> = rooms
            .iter()
            .enumerate()
            .map(|(i, r)| RoomLabel {
                label_id: r.room_id.clone(),
                class_index: i,
            })
            .collect();
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        let mut records = records.into_iter();
        for label in &labels {
            let tags = assign_splits(&label.label_id, label.class_index, spec.per_room, policy, split_seed)?;
            for tag in tags {
                let (_, rec) = records.next().expect("per_room records per room");
                match tag {
                    Some(Split::Train) => train.push((label.class_index, rec)),
                    Some(Split::Val) => val.push((label.class_index, rec)),
                    Some(Split::Test) => test.push((label.class_index, rec)),
                    None => {}
                }
            }
        }
        Self::new(labels, train, val, test)
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    /// Training records per class.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for (c, _) in &self.train {
            counts[*c] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub svm: SvmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

/// A result table with provenance lines written as `# key: value` comments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub provenance: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str], corpus_hash: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            name: name.into(),
            provenance: vec![
                ("experiment".into(), name.into()),
                ("seed".into(), cfg.seed.to_string()),
                ("corpus_sha256".into(), corpus_hash.into()),
                ("config".into(), serde_json::to_string(cfg).unwrap_or_default()),
            ],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, v) in &self.provenance {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

fn features<T: Scalar>(arch: &CnnArch, records: &[(usize, AudioRecord<T>)]) -> LabeledSet<T> {
    let inputs = records.par_iter().map(|(_, r)| arch.feature.extract(&r.echo())).collect();
    LabeledSet {
        inputs,
        labels: records.iter().map(|(c, _)| *c).collect(),
    }
}

/// Outcome of training one network on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedCell {
    pub arch: String,
    pub params: usize,
    pub train_seconds: f64,
    pub steps: usize,
    pub accuracy: f64,
}

/// Trains `arch` on the train/val splits and scores it on `test`.
pub fn train_and_test<T: Scalar>(
    corpus: &Corpus<T>,
    arch: &CnnArch,
    train_records: &[(usize, AudioRecord<T>)],
    cfg: &ExperimentConfig,
) -> Result<TrainedCell> {
    Ok(train_model(corpus, arch, train_records, cfg)?.1)
}

/// Like [`train_and_test`], also returning the trained model.
pub fn train_model<T: Scalar>(
    corpus: &Corpus<T>,
    arch: &CnnArch,
    train_records: &[(usize, AudioRecord<T>)],
    cfg: &ExperimentConfig,
) -> Result<(ModelBundle<T>, TrainedCell)> {
    let arch = arch.with_classes(corpus.classes());
    let tr = features(&arch, train_records);
    let va = features(&arch, &corpus.val);
    let te = features(&arch, &corpus.test);
    let tcfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let start = Instant::now();
    let (model, history) = train(&arch, corpus.labels.clone(), &tr, &va, &tcfg)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let accuracy = evaluate(&model, &te)?.accuracy;
    let cell = TrainedCell {
        arch: arch.name.clone(),
        params: count_params(&arch),
        train_seconds,
        steps: history.steps_run,
        accuracy,
    };
    Ok((model, cell))
}

/// Test accuracy of `model` on `records`.
pub fn model_accuracy<T: Scalar>(model: &ModelBundle<T>, records: &[(usize, AudioRecord<T>)]) -> Result<f64> {
    Ok(evaluate(model, &features(model.arch(), records))?.accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCell {
    pub feature: String,
    pub model: String,
    pub result: TrainedCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub cells: Vec<DesignCell>,
}

impl DesignMatrix {
    pub fn accuracy(&self, feature: &str, model: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.feature == feature && c.model == model)
            .map(|c| c.result.accuracy)
    }
}

/// The four `{psd, spectrogram} x {DNN, CNN}` designs.
pub const DESIGNS: [(&str, &str, &str); 4] = [
    ("psd", "DNN", "DNN-psd"),
    ("psd", "CNN", "CNN-psd"),
    ("spectrogram", "DNN", "DNN-spec"),
    ("spectrogram", "CNN", "C"),
];

pub fn run_design_matrix<T: Scalar>(corpus: &Corpus<T>, cfg: &ExperimentConfig) -> Result<(DesignMatrix, Table)> {
    run_designs(corpus, cfg, &DESIGNS)
}

/// A subset of the design matrix, e.g. only the cells an assertion needs.
pub fn run_designs<T: Scalar>(
    corpus: &Corpus<T>,
    cfg: &ExperimentConfig,
    designs: &[(&str, &str, &str)],
) -> Result<(DesignMatrix, Table)> {
    let mut table = Table::new("design_matrix", &["feature", "model", "arch", "params", "train_seconds", "accuracy"], &corpus.hash, cfg);
    let mut cells = Vec::new();
    for &(feature, model, name) in designs {
        let arch = build_named_arch(name, corpus.classes())?;
        let result = train_and_test(corpus, &arch, &corpus.train, cfg)?;
        table.rows.push(vec![
            feature.into(),
            model.into(),
            result.arch.clone(),
            result.params.to_string(),
            format!("{:.2}", result.train_seconds),
            format!("{:.4}", result.accuracy),
        ]);
        cells.push(DesignCell {
            feature: feature.into(),
            model: model.into(),
            result,
        });
    }
    Ok((DesignMatrix { cells }, table))
}

/// Trains each named architecture; the table lists params, wall time and accuracy.
pub fn run_arch_sweep<T: Scalar>(corpus: &Corpus<T>, names: &[&str], cfg: &ExperimentConfig) -> Result<(Vec<TrainedCell>, Table)> {
    let archs = names
        .iter()
        .map(|n| build_named_arch(n, corpus.classes()))
        .collect::<Result<Vec<_>>>()?;
    sweep_table(corpus, "arch_sweep", &archs, cfg)
}

/// One axis of the CNN-C hyperparameter studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Filter counts of the two conv layers.
    Filters(Vec<(usize, usize)>),
    /// Square filter sizes.
    FilterSize(Vec<usize>),
    /// Number of dense layers including the output layer.
    DenseLayers(Vec<usize>),
}

impl SweepAxis {
    pub fn archs(&self, classes: usize) -> Result<Vec<CnnArch>> {
        match self {
            SweepAxis::Filters(v) => v.iter().map(|&f| cnn_variant(f, 4, 2, classes)).collect(),
            SweepAxis::FilterSize(v) => v.iter().map(|&k| cnn_variant((16, 32), k, 2, classes)).collect(),
            SweepAxis::DenseLayers(v) => v.iter().map(|&d| cnn_variant((16, 32), 4, d, classes)).collect(),
        }
    }
}

pub fn run_hyper_sweep<T: Scalar>(corpus: &Corpus<T>, axis: &SweepAxis, cfg: &ExperimentConfig) -> Result<(Vec<TrainedCell>, Table)> {
    let name = match axis {
        SweepAxis::Filters(_) => "filters_sweep",
        SweepAxis::FilterSize(_) => "filter_size_sweep",
        SweepAxis::DenseLayers(_) => "dense_layers_sweep",
    };
    sweep_table(corpus, name, &axis.archs(corpus.classes())?, cfg)
}

fn sweep_table<T: Scalar>(corpus: &Corpus<T>, name: &str, archs: &[CnnArch], cfg: &ExperimentConfig) -> Result<(Vec<TrainedCell>, Table)> {
    let mut table = Table::new(name, &["arch", "params", "train_seconds", "steps", "accuracy"], &corpus.hash, cfg);
    let mut cells = Vec::new();
    for arch in archs {
        let cell = train_and_test(corpus, arch, &corpus.train, cfg)?;
        table.rows.push(vec![
            cell.arch.clone(),
            cell.params.to_string(),
            format!("{:.2}", cell.train_seconds),
            cell.steps.to_string(),
            format!("{:.4}", cell.accuracy),
        ]);
        cells.push(cell);
    }
    Ok((cells, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePoint {
    pub volume: usize,
    pub accuracy: f64,
}

/// `volume` training records of every class, drawn by a seeded shuffle.
pub fn subsample_train<T: Scalar>(corpus: &Corpus<T>, volume: usize, seed: u64) -> Result<Vec<(usize, AudioRecord<T>)>> {
    let counts = corpus.train_counts();
    if let Some(c) = counts.iter().position(|&n| n < volume) {
        return Err(Error::Policy {
            room: corpus.labels[c].label_id.clone(),
            message: format!("volume {volume} exceeds its {} training records", counts[c]),
        });
    }
    let mut out = Vec::with_capacity(volume * corpus.classes());
    for class in 0..corpus.classes() {
        let mut idx: Vec<usize> = (0..corpus.train.len()).filter(|&i| corpus.train[i].0 == class).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, class as u64)));
        out.extend(idx[..volume].iter().map(|&i| corpus.train[i].clone()));
    }
    Ok(out)
}

pub fn run_volume_curve<T: Scalar>(
    corpus: &Corpus<T>,
    arch: &CnnArch,
    volumes: &[usize],
    cfg: &ExperimentConfig,
) -> Result<(Vec<VolumePoint>, Table)> {
    let mut table = Table::new("volume_curve", &["volume", "arch", "steps", "accuracy"], &corpus.hash, cfg);
    table.provenance.push(("arch".into(), arch.name.clone()));
    let subsets = volumes
        .iter()
        .map(|&v| subsample_train(corpus, v, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (&volume, subset) in volumes.iter().zip(&subsets) {
        let cell = train_and_test(corpus, arch, subset, cfg)?;
        table.rows.push(vec![
            volume.to_string(),
            cell.arch.clone(),
            cell.steps.to_string(),
            format!("{:.4}", cell.accuracy),
        ]);
        points.push(VolumePoint {
            volume,
            accuracy: cell.accuracy,
        });
    }
    Ok((points, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub clean: f64,
    pub interfered: f64,
}

impl RobustnessRow {
    pub fn drop(&self) -> f64 {
        self.clean - self.interfered
    }
}

/// MFCC features of every record.
pub fn mfcc_features<T: Scalar>(records: &[(usize, AudioRecord<T>)], cfg: &MfccConfig) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let feats = records
        .par_iter()
        .map(|(_, r)| mfcc(&r.echo(), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((feats, records.iter().map(|(c, _)| *c).collect()))
}

fn svm_accuracy(model: &SvmModel, feats: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let hits = feats
        .par_iter()
        .zip(labels)
        .map(|(f, &y)| Ok(usize::from(model.predict(f)? == y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / labels.len().max(1) as f64)
}

/// The test split with the interferer mixed into every record.
pub fn interfered_test<T: Scalar>(corpus: &Corpus<T>, spec: &Interferer, seed: u64) -> Result<Vec<(usize, AudioRecord<T>)>> {
    spec.validate()?;
    corpus
        .test
        .par_iter()
        .enumerate()
        .map(|(i, (c, r))| Ok((*c, add_interference(r, spec, mix(seed, i as u64))?)))
        .collect()
}

/// Trains on clean data and tests on the clean and interfered test split:
/// narrowband CNN-C, broadband MFCC+SVM and narrowband MFCC+SVM.
pub fn run_robustness<T: Scalar>(
    corpus: &Corpus<T>,
    spec: &Interferer,
    cfg: &ExperimentConfig,
) -> Result<(Vec<RobustnessRow>, Table)> {
    run_robustness_with(corpus, spec, cfg, None)
}

/// [`run_robustness`] reusing an already trained CNN-C when one is given.
pub fn run_robustness_with<T: Scalar>(
    corpus: &Corpus<T>,
    spec: &Interferer,
    cfg: &ExperimentConfig,
    cnn: Option<&ModelBundle<T>>,
) -> Result<(Vec<RobustnessRow>, Table)> {
    let noisy = interfered_test(corpus, spec, cfg.seed)?;
    let mut table = Table::new("robustness", &["method", "clean", "interfered"], &corpus.hash, cfg);
    table
        .provenance
        .push(("interferer".into(), serde_json::to_string(spec).unwrap_or_default()));
    let mut rows = Vec::new();

    let trained;
    let model = match cnn {
        Some(m) => m,
        None => {
            let arch = build_named_arch("C", corpus.classes())?;
            trained = train_model(corpus, &arch, &corpus.train, cfg)?.0;
            &trained
        }
    };
    rows.push(RobustnessRow {
        method: "CNN-narrowband".into(),
        clean: model_accuracy(model, &corpus.test)?,
        interfered: model_accuracy(model, &noisy)?,
    });

    for (method, mcfg) in [
        ("SVM-broadband", MfccConfig::broadband()),
        ("SVM-narrowband", MfccConfig::narrowband()),
    ] {
        let (xs, ys) = mfcc_features(&corpus.train, &mcfg)?;
        let svm = svm_train(&xs, &ys, &cfg.svm)?;
        let (cx, cy) = mfcc_features(&corpus.test, &mcfg)?;
        let (nx, ny) = mfcc_features(&noisy, &mcfg)?;
        rows.push(RobustnessRow {
            method: method.into(),
            clean: svm_accuracy(&svm, &cx, &cy)?,
            interfered: svm_accuracy(&svm, &nx, &ny)?,
        });
    }
    for r in &rows {
        table
            .rows
            .push(vec![r.method.clone(), format!("{:.4}", r.clean), format!("{:.4}", r.interfered)]);
    }
    Ok((rows, table))
}
