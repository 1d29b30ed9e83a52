//! Blocking HTTP client for the recognition service.

use std::time::{Duration, Instant};

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::de::DeserializeOwned;

use roomrec_core::audio::{wav, AudioRecord};
use roomrec_service::api::{LabelRequest, LabelResponse, RecognizeResponse, SamplesResponse, TaskState, TaskView};

use crate::capture::Mode;
use crate::error::{CliError, Result};

/// Server used when neither `--server` nor `ROOMREC_SERVER` is given.
pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";

/// What an upload returns, depending on the mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(untagged)]
pub enum UploadResult {
    Recognition(RecognizeResponse),
    Training(SamplesResponse),
}

pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    pub fn new(server: &str) -> Result<Self> {
        let http = Http::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| CliError::Transport {
                url: server.into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            base: server.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    fn send<R: DeserializeOwned>(&self, req: RequestBuilder) -> Result<R> {
        let resp = req.send().map_err(|e| CliError::Transport {
            url: self.base.clone(),
            message: e.to_string(),
        })?;
        decode(resp, &self.base)
    }

    /// Posts the records as one WAV body to the endpoint matching `mode`.
    pub fn upload_data(&self, mode: Mode, records: &[AudioRecord<f32>]) -> Result<UploadResult> {
        let body = wav::to_bytes(records)?;
        let path = match mode {
            Mode::Recognition => "/recognize",
            Mode::Training => "/samples",
        };
        let req = self
            .http
            .post(self.url(path))
            .header("content-type", "audio/wav")
            .body(body);
        Ok(match mode {
            Mode::Recognition => UploadResult::Recognition(self.send(req)?),
            Mode::Training => UploadResult::Training(self.send(req)?),
        })
    }

    pub fn upload_label(&self, session_id: &str, label: &str) -> Result<LabelResponse> {
        let req = self.http.post(self.url("/labels")).json(&LabelRequest {
            session_id: session_id.into(),
            label: label.into(),
        });
        self.send(req)
    }

    pub fn task(&self, task_id: &str) -> Result<TaskView> {
        self.send(self.http.get(self.url(&format!("/tasks/{task_id}"))))
    }

    /// Polls a task until it is done or failed. `on_change` sees every new state.
    pub fn watch(
        &self,
        task_id: &str,
        poll: Duration,
        timeout: Duration,
        mut on_change: impl FnMut(&TaskView),
    ) -> Result<TaskView> {
        let start = Instant::now();
        let mut last = None;
        loop {
            let t = self.task(task_id)?;
            if last != Some(t.state) {
                last = Some(t.state);
                on_change(&t);
            }
            if matches!(t.state, TaskState::Done | TaskState::Failed) {
                return Ok(t);
            }
            if start.elapsed() > timeout {
                return Err(CliError::Transport {
                    url: self.base.clone(),
                    message: format!("task {task_id} still {:?} after {timeout:?}", t.state),
                });
            }
            std::thread::sleep(poll);
        }
    }
}

fn decode<R: DeserializeOwned>(resp: Response, base: &str) -> Result<R> {
    let status = resp.status();
    let text = resp.text().map_err(|e| CliError::Transport {
        url: base.into(),
        message: e.to_string(),
    })?;
    if !status.is_success() {
        let message = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
            .unwrap_or(text);
        return Err(CliError::Server {
            status: status.as_u16(),
            message,
        });
    }
    serde_json::from_str(&text).map_err(|e| CliError::Server {
        status: status.as_u16(),
        message: format!("unreadable response: {e}"),
    })
}
