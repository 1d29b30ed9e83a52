use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwapOption;
use parking_lot::Mutex;
use roomrec_core::audio::AudioRecord;
use roomrec_core::dataset::{DatasetStore, Split, SplitPolicy};
use roomrec_core::nn::model::topk_indices;
use roomrec_core::nn::{build_named_arch, evaluate, softmax, train, LabeledSet, ModelBundle, Tensor};
use roomrec_core::Scalar;
use tracing::{info, warn};

use crate::api::*;
use crate::config::ServiceConfig;
use crate::error::ServiceError;

pub const TOP_K: usize = 5;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Session {
    view: SessionView,
    records: Vec<AudioRecord<f32>>,
}

struct Task {
    view: TaskView,
    sessions: Vec<String>,
}

/// Shared service state: the dataset store, the served model snapshot,
/// sessions and the training queue.
pub struct AppState {
    pub config: ServiceConfig,
    store: DatasetStore,
    model: ArcSwapOption<ModelBundle<f32>>,
    metrics: ArcSwapOption<MetricsResponse>,
    sessions: Mutex<HashMap<String, Session>>,
    tasks: Mutex<Vec<Task>>,
    queue: Mutex<Option<mpsc::Sender<String>>>,
}

fn models_dir(cfg: &ServiceConfig) -> PathBuf {
    cfg.data_dir.join("models")
}

fn model_path(dir: &Path, version: u64) -> PathBuf {
    dir.join(format!("model-v{version:06}.rrm"))
}

fn metrics_path(dir: &Path, version: u64) -> PathBuf {
    dir.join(format!("metrics-v{version:06}.json"))
}

/// Highest-versioned model file in `dir`.
fn latest_model(dir: &Path) -> Option<(u64, PathBuf)> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let v = name.strip_prefix("model-v")?.strip_suffix(".rrm")?.parse().ok()?;
            Some((v, e.path()))
        })
        .max_by_key(|(v, _)| *v)
}

fn candidates(bundle: &ModelBundle<f32>, scores: &[f32], k: usize) -> Vec<Candidate> {
    let probs = softmax(scores);
    topk_indices(scores, k)
        .into_iter()
        .map(|i| Candidate {
            label: bundle.labels[i].label_id.clone(),
            class_index: i,
            score: scores[i].as_f64(),
            confidence: probs[i].as_f64(),
        })
        .collect()
}

impl AppState {
    /// Opens the store, loads the newest saved model and starts the training
    /// worker. A store with two or more rooms but no model gets a startup task.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let store = DatasetStore::open(config.data_dir.join("store"))?;
        let dir = models_dir(&config);
        std::fs::create_dir_all(&dir)?;
        let model = match latest_model(&dir) {
            Some((v, path)) => {
                let bundle = ModelBundle::<f32>::load(&path)?;
                info!(version = v, path = %path.display(), "loaded model");
                Some(Arc::new(bundle))
            }
            None => None,
        };
        let metrics = model.as_ref().and_then(|m| {
            let text = std::fs::read_to_string(metrics_path(&dir, m.version)).ok()?;
            serde_json::from_str(&text).ok().map(Arc::new)
        });
        let needs_bootstrap = model.is_none() && store.manifest().classes() >= 2;
        let state = Arc::new(Self {
            config,
            store,
            model: ArcSwapOption::new(model),
            metrics: ArcSwapOption::new(metrics),
            sessions: Mutex::new(HashMap::new()),
            tasks: Mutex::new(Vec::new()),
            queue: Mutex::new(None),
        });
        let (tx, rx) = mpsc::channel::<String>();
        *state.queue.lock() = Some(tx);
        let worker = Arc::clone(&state);
        std::thread::Builder::new()
            .name("roomrec-trainer".into())
            .spawn(move || {
                for id in rx {
                    worker.run_task(&id);
                }
            })?;
        if needs_bootstrap {
            state.enqueue("startup".into(), Vec::new());
        }
        Ok(state)
    }

    /// Stops accepting training tasks; the worker exits after the queue drains.
    pub fn shutdown(&self) {
        self.queue.lock().take();
    }

    pub fn store(&self) -> &DatasetStore {
        &self.store
    }

    pub fn model(&self) -> Option<Arc<ModelBundle<f32>>> {
        self.model.load_full()
    }

    pub fn model_version(&self) -> Option<u64> {
        self.model.load().as_ref().map(|m| m.version)
    }

    pub fn metrics(&self) -> Option<Arc<MetricsResponse>> {
        self.metrics.load_full()
    }

    /// Top-1 and top-5 for one record against the current snapshot.
    pub fn recognize(&self, record: &AudioRecord<f32>) -> Option<roomrec_core::Result<RecognizeResponse>> {
        let model = self.model()?;
        Some(model.record_scores(record).map(|scores| {
            let topk = candidates(&model, &scores, TOP_K);
            RecognizeResponse {
                label: topk[0].label.clone(),
                confidence: topk[0].confidence,
                topk,
                model_version: model.version,
            }
        }))
    }

    /// Stores an uploaded batch as a session and ranks rooms by the mean score.
    pub fn create_session(&self, records: Vec<AudioRecord<f32>>) -> roomrec_core::Result<SamplesResponse> {
        let model = self.model();
        let mut cands = Vec::new();
        if let Some(model) = &model {
            let inputs = records
                .iter()
                .map(|r| model.normalizer.apply(&model.features(r)))
                .collect::<roomrec_core::Result<Vec<Tensor<f32>>>>()?;
            let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
            let logits = model.network.logits_batch(&refs)?;
            let mut mean = vec![0.0f64; model.classes()];
            for row in &logits {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v as f64 / logits.len() as f64;
                }
            }
            let mean: Vec<f32> = mean.into_iter().map(|v| v as f32).collect();
            cands = candidates(model, &mean, TOP_K);
        }
        let id = uuid::Uuid::new_v4().to_string();
        let count = records.len();
        let created = now_ms();
        let view = SessionView {
            session_id: id.clone(),
            state: SessionState::AwaitingLabel,
            count,
            candidates: cands.clone(),
            label: None,
            task_id: None,
            created_at_ms: created,
            expires_at_ms: created + self.config.session_ttl_secs * 1000,
        };
        let mut sessions = self.sessions.lock();
        sessions.retain(|_, s| s.view.expires_at_ms > created);
        sessions.insert(id.clone(), Session { view, records });
        Ok(SamplesResponse {
            session_id: id,
            count,
            candidates: cands,
            model_version: model.map(|m| m.version),
        })
    }

    pub fn session(&self, id: &str) -> Option<SessionView> {
        let now = now_ms();
        self.sessions
            .lock()
            .get(id)
            .filter(|s| s.view.expires_at_ms > now)
            .map(|s| s.view.clone())
    }

    /// Labels a session: ingests its records under `label` and queues a retrain.
    pub fn label_session(&self, id: &str, label: &str) -> Result<LabelResponse, LabelError> {
        let label = label.trim();
        if label.is_empty() || label.len() > 64 || label.chars().any(char::is_control) {
            return Err(LabelError::BadLabel);
        }
        let records = {
            let mut sessions = self.sessions.lock();
            let now = now_ms();
            let session = sessions
                .get_mut(id)
                .filter(|s| s.view.expires_at_ms > now)
                .ok_or(LabelError::UnknownSession)?;
            if session.view.state != SessionState::AwaitingLabel {
                return Err(LabelError::AlreadyLabeled);
            }
            session.view.state = SessionState::Labeled;
            session.view.label = Some(label.to_string());
            std::mem::take(&mut session.records)
        };
        let existed = self.store.manifest().room(label).is_some();
        let batch: Vec<(String, AudioRecord<f32>)> = records.into_iter().map(|r| (label.to_string(), r)).collect();
        let manifest = match self.store.ingest(&batch) {
            Ok(m) => m,
            Err(e) => {
                // Put the session back so the caller can retry.
                if let Some(s) = self.sessions.lock().get_mut(id) {
                    s.view.state = SessionState::AwaitingLabel;
                    s.view.label = None;
                    s.records = batch.into_iter().map(|(_, r)| r).collect();
                }
                return Err(LabelError::Store(e));
            }
        };
        let class_index = manifest.room(label).map(|r| r.class_index).unwrap_or_default();
        let task_id = self.enqueue(format!("label:{label}"), vec![id.to_string()]);
        if let Some(s) = self.sessions.lock().get_mut(id) {
            s.view.task_id = Some(task_id.clone());
        }
        Ok(LabelResponse {
            task_id,
            label: label.to_string(),
            class_index,
            new_label: !existed,
        })
    }

    pub fn enqueue(&self, reason: String, sessions: Vec<String>) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let view = TaskView {
            task_id: id.clone(),
            state: TaskState::Queued,
            reason,
            created_at_ms: now_ms(),
            started_at_ms: None,
            finished_at_ms: None,
            model_version: None,
            metrics: None,
            error: None,
        };
        self.tasks.lock().push(Task { view, sessions });
        let sent = self.queue.lock().as_ref().map(|q| q.send(id.clone()).is_ok());
        if sent != Some(true) {
            self.finish(&id, Err("service is shutting down".into()));
        }
        id
    }

    pub fn task(&self, id: &str) -> Option<TaskView> {
        self.tasks.lock().iter().find(|t| t.view.task_id == id).map(|t| t.view.clone())
    }

    pub fn tasks(&self) -> Vec<TaskView> {
        self.tasks.lock().iter().map(|t| t.view.clone()).collect()
    }

    pub fn rooms(&self) -> RoomsResponse {
        let manifest = self.store.manifest();
        let model = self.model();
        RoomsResponse {
            rooms: manifest
                .rooms
                .iter()
                .map(|r| RoomView {
                    label_id: r.label_id.clone(),
                    class_index: r.class_index,
                    samples: r.samples.len(),
                })
                .collect(),
            store_version: manifest.version,
            model_version: model.as_ref().map(|m| m.version),
            model_classes: model.as_ref().map(|m| m.classes()),
        }
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Task)) {
        if let Some(t) = self.tasks.lock().iter_mut().find(|t| t.view.task_id == id) {
            f(t);
        }
    }

    fn finish(&self, id: &str, outcome: Result<(u64, TaskMetrics), String>) {
        let mut merged = Vec::new();
        self.update(id, |t| {
            t.view.finished_at_ms = Some(now_ms());
            match outcome {
                Ok((version, metrics)) => {
                    t.view.state = TaskState::Done;
                    t.view.model_version = Some(version);
                    t.view.metrics = Some(metrics);
                    merged = t.sessions.clone();
                }
                Err(e) => {
                    t.view.state = TaskState::Failed;
                    t.view.error = Some(e);
                }
            }
        });
        let mut sessions = self.sessions.lock();
        for s in merged {
            if let Some(s) = sessions.get_mut(&s) {
                s.view.state = SessionState::Merged;
            }
        }
    }

    fn run_task(&self, id: &str) {
        self.update(id, |t| {
            t.view.state = TaskState::Running;
            t.view.started_at_ms = Some(now_ms());
        });
        info!(task = id, "retrain started");
        let outcome = self.retrain().map_err(|e| e.to_string());
        match &outcome {
            Ok((v, m)) => info!(task = id, version = v, accuracy = m.accuracy, "retrain finished"),
            Err(e) => warn!(task = id, error = %e, "retrain failed"),
        }
        self.finish(id, outcome);
    }

    /// Retrains from scratch on every stored sample and swaps the snapshot.
    fn retrain(&self) -> Result<(u64, TaskMetrics), ServiceError> {
        let manifest = self.store.apply_split_with(SplitPolicy::proportional, self.config.split_seed)?;
        let k = manifest.classes();
        if k < 2 {
            return Err(ServiceError::Config(format!("need at least two rooms to train, have {k}")));
        }
        let arch = build_named_arch(&self.config.arch, k)?;
        let set = |split| -> Result<LabeledSet<f32>, ServiceError> {
            let records = self.store.load::<f32>(Some(split))?;
            let mut set = LabeledSet::default();
            for (c, r) in records {
                set.push(arch.feature.extract(&r.echo()), c);
            }
            Ok(set)
        };
        let (tr, va, te) = (set(Split::Train)?, set(Split::Val)?, set(Split::Test)?);
        let start = Instant::now();
        let (mut bundle, history) = train(&arch, manifest.labels(), &tr, &va, &self.config.train)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let dir = models_dir(&self.config);
        let previous = self
            .model_version()
            .max(latest_model(&dir).map(|(v, _)| v))
            .unwrap_or(0);
        bundle.version = previous + 1;
        let eval = evaluate(&bundle, &te)?;
        let metrics = MetricsResponse {
            model_version: bundle.version,
            accuracy: eval.accuracy,
            loss: eval.loss,
            labels: bundle.labels.iter().map(|l| l.label_id.clone()).collect(),
            test_counts: eval.confusion.iter().map(|row| row.iter().sum()).collect(),
            confusion: eval.confusion,
        };
        bundle.save(model_path(&dir, bundle.version))?;
        std::fs::write(
            metrics_path(&dir, bundle.version),
            serde_json::to_vec_pretty(&metrics).map_err(roomrec_core::Error::from)?,
        )?;
        let version = bundle.version;
        let summary = TaskMetrics {
            accuracy: metrics.accuracy,
            loss: metrics.loss,
            classes: k,
            steps: history.steps_run,
            train_seconds,
        };
        self.model.store(Some(Arc::new(bundle)));
        self.metrics.store(Some(Arc::new(metrics)));
        Ok((version, summary))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("session is already labeled")]
    AlreadyLabeled,
    #[error("label must be 1 to 64 printable characters")]
    BadLabel,
    #[error(transparent)]
    Store(roomrec_core::Error),
}
