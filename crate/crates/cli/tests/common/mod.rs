#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use roomrec_cli::{emit_record, CaptureSource, Client, Mode, SimOptions, UploadResult};
use roomrec_core::audio::AudioRecord;
use roomrec_core::nn::TrainConfig;
use roomrec_service::api::{RecognizeResponse, SamplesResponse, TaskState, TaskView};
use roomrec_service::{spawn_blocking_server, ServiceConfig};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub const PROFILE_SEED: u64 = 21;

pub fn server_config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        data_dir: dir.to_path_buf(),
        train: TrainConfig {
            max_steps: 300,
            eval_every: 50,
            batch_size: 50,
            learning_rate: 0.01,
            ..TrainConfig::default()
        },
        ..ServiceConfig::default()
    }
}

pub fn capture(mode: Mode, room: usize, start: usize) -> Result<Vec<AudioRecord<f32>>, String> {
    let opts = SimOptions {
        profile_seed: PROFILE_SEED,
        seed: 9,
        start,
        ..SimOptions::default()
    };
    let source = CaptureSource::Simulator(format!("room-{room:02}"));
    emit_record(mode, &source, &opts).map_err(|e| e.to_string())
}

fn samples(client: &Client, records: &[AudioRecord<f32>]) -> Result<SamplesResponse, String> {
    match client.upload_data(Mode::Training, records).map_err(|e| e.to_string())? {
        UploadResult::Training(s) => Ok(s),
        other => Err(format!("unexpected upload result {other:?}")),
    }
}

fn recognize(client: &Client, records: &[AudioRecord<f32>]) -> Result<RecognizeResponse, String> {
    match client.upload_data(Mode::Recognition, records).map_err(|e| e.to_string())? {
        UploadResult::Recognition(r) => Ok(r),
        other => Err(format!("unexpected upload result {other:?}")),
    }
}

fn watch(client: &Client, task_id: &str) -> Result<TaskView, String> {
    client
        .watch(task_id, Duration::from_millis(20), Duration::from_secs(600), |_| {})
        .map_err(|e| e.to_string())
}

/// Labels a fresh training capture of `room` and waits for its retrain.
fn teach(client: &Client, room: usize, label: &str) -> Result<(SamplesResponse, TaskView), String> {
    let recs = capture(Mode::Training, room, 0)?;
    ensure!(recs.len() == 500, "training capture gave {} records", recs.len());
    let session = samples(client, &recs)?;
    ensure!(session.count == 500, "session holds {} records", session.count);
    ensure!(session.candidates.len() <= 5, "{} candidates", session.candidates.len());
    let lab = client.upload_label(&session.session_id, label).map_err(|e| e.to_string())?;
    let task = watch(client, &lab.task_id)?;
    Ok((session, task))
}

/// Capture, upload, label, retrain and recognize against a local server,
/// all through the client library with simulator capture.
pub fn client_loop(dir: &Path) -> Check {
    let (base, state) = spawn_blocking_server(server_config(dir)).map_err(|e| e.to_string())?;
    let client = Client::new(&base).map_err(|e| e.to_string())?;

    let one = capture(Mode::Recognition, 0, 900)?;
    ensure!(one.len() == 1 && one[0].samples().len() == 4410, "recognition capture shape");

    let (_, first) = teach(&client, 0, "kitchen")?;
    ensure!(first.state == TaskState::Failed, "one-room retrain should fail, got {:?}", first.state);
    let (_, second) = teach(&client, 1, "office")?;
    ensure!(second.state == TaskState::Done, "retrain failed: {:?}", second.error);

    let mut hits = 0;
    for (room, label) in [(0, "kitchen"), (1, "office")] {
        for i in 0..5 {
            let r = recognize(&client, &capture(Mode::Recognition, room, 700 + i)?)?;
            ensure!(r.topk.len() <= 5 && r.topk[0].label == r.label, "malformed top-k");
            hits += usize::from(r.label == label);
        }
    }
    ensure!(hits >= 9, "only {hits}/10 probes recognized");

    let (session, third) = teach(&client, 2, "hallway")?;
    ensure!(third.state == TaskState::Done, "retrain failed: {:?}", third.error);
    ensure!(session.candidates.len() == 2, "{} candidates from a 2-room model", session.candidates.len());
    let r = recognize(&client, &capture(Mode::Recognition, 2, 800)?)?;
    ensure!(state.model().map(|m| m.classes()) == Some(3), "model does not have 3 classes");
    state.shutdown();
    Ok(format!("3 rooms taught, 9+/10 probes correct, new room recognized as {}", r.label))
}

/// Latency, recognition during retraining, new-label growth and candidate bounds.
pub fn service_contract(dir: &Path) -> Check {
    let (base, state) = spawn_blocking_server(server_config(dir)).map_err(|e| e.to_string())?;
    let client = Client::new(&base).map_err(|e| e.to_string())?;
    let (_, _) = teach(&client, 0, "a")?;
    let (_, t) = teach(&client, 1, "b")?;
    ensure!(t.state == TaskState::Done, "initial retrain failed: {:?}", t.error);

    let probe = capture(Mode::Recognition, 1, 950)?;
    recognize(&client, &probe)?;
    let mut worst = Duration::ZERO;
    for _ in 0..10 {
        let t = Instant::now();
        let r = recognize(&client, &probe)?;
        worst = worst.max(t.elapsed());
        ensure!(r.topk.len() <= 5, "{} candidates", r.topk.len());
    }
    ensure!(worst < Duration::from_millis(200), "recognize took {worst:?}");

    let k_before = state.model().map(|m| m.classes()).unwrap_or(0);
    let v_before = state.model_version().unwrap_or(0);
    let session = samples(&client, &capture(Mode::Training, 2, 0)?)?;
    ensure!(session.candidates.len() <= 5, "{} candidates", session.candidates.len());
    let lab = client.upload_label(&session.session_id, "c").map_err(|e| e.to_string())?;
    ensure!(lab.new_label, "label `c` not reported as new");
    let mut during = 0;
    let done = loop {
        let t = client.task(&lab.task_id).map_err(|e| e.to_string())?;
        if t.state == TaskState::Running {
            let r = recognize(&client, &probe)?;
            ensure!(r.topk.len() <= 5, "{} candidates", r.topk.len());
            during += 1;
        }
        if matches!(t.state, TaskState::Done | TaskState::Failed) {
            break t;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    ensure!(done.state == TaskState::Done, "retrain failed: {:?}", done.error);
    ensure!(during > 0, "no recognition landed while the retrain ran");
    let k_after = state.model().map(|m| m.classes()).unwrap_or(0);
    let v_after = state.model_version().unwrap_or(0);
    ensure!(k_after == k_before + 1, "K went {k_before} -> {k_after}");
    ensure!(v_after > v_before, "version went {v_before} -> {v_after}");
    state.shutdown();
    Ok(format!(
        "worst latency {worst:?}, {during} recognitions during retrain, K {k_before}->{k_after}, v{v_before}->v{v_after}"
    ))
}
