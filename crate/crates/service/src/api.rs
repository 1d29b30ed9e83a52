//! Request and response documents of the HTTP API. Their JSON schemas live in
//! `docs/schemas/`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub class_index: usize,
    /// Dense-K output (averaged over the batch for uploads).
    pub score: f64,
    /// Softmax of the scores.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub label: String,
    pub confidence: f64,
    pub topk: Vec<Candidate>,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesResponse {
    pub session_id: String,
    pub count: usize,
    /// Empty while no model has been trained.
    pub candidates: Vec<Candidate>,
    pub model_version: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingLabel,
    Labeled,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    pub count: usize,
    pub candidates: Vec<Candidate>,
    pub label: Option<String>,
    pub task_id: Option<String>,
    pub created_at_ms: u64,
    pub expires_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub session_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub task_id: String,
    pub label: String,
    pub class_index: usize,
    pub new_label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub classes: usize,
    pub steps: usize,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub state: TaskState,
    /// What queued the task, e.g. `label:kitchen` or `startup`.
    pub reason: String,
    pub created_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    pub model_version: Option<u64>,
    pub metrics: Option<TaskMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasksResponse {
    pub tasks: Vec<TaskView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomView {
    pub label_id: String,
    pub class_index: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomsResponse {
    pub rooms: Vec<RoomView>,
    pub store_version: u64,
    pub model_version: Option<u64>,
    /// Classes of the served model; lags `rooms` until a retrain finishes.
    pub model_classes: Option<usize>,
}

/// Held-out evaluation of the served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub model_version: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub labels: Vec<String>,
    /// `confusion[true][predicted]` on the test split.
    pub confusion: Vec<Vec<usize>>,
    pub test_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: Option<u64>,
}
