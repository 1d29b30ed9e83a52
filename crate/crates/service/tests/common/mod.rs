#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use roomrec_core::audio::{wav, AudioRecord};
use roomrec_core::dataset::DatasetStore;
use roomrec_core::nn::TrainConfig;
use roomrec_core::sim::{synth_corpus_range, CaptureContext, RoomProfile};
use roomrec_service::api::{TaskState, TaskView};
use roomrec_service::ServiceConfig;
use serde_json::Value;

pub fn rooms() -> Vec<RoomProfile> {
    RoomProfile::defaults(4, 21)
}

/// Records `from..to` of room `room`.
pub fn records(room: usize, from: usize, to: usize) -> Vec<AudioRecord<f32>> {
    let all = rooms();
    synth_corpus_range::<f32>(&all[room..=room], from..to, &CaptureContext::default(), 5)
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .collect()
}

pub fn wav_of(records: &[AudioRecord<f32>]) -> Vec<u8> {
    wav::to_bytes(records).unwrap()
}

pub fn fast_config(dir: &Path) -> ServiceConfig {
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

/// Seeds the store with the first `rooms` profiles, `per_room` records each.
pub fn seed_store(dir: &Path, rooms_n: usize, per_room: usize) {
    let store = DatasetStore::open(dir.join("store")).unwrap();
    let all = rooms();
    for (i, room) in all.iter().take(rooms_n).enumerate() {
        let batch: Vec<(String, AudioRecord<f32>)> =
            records(i, 0, per_room).into_iter().map(|r| (room.room_id.clone(), r)).collect();
        store.ingest(&batch).unwrap();
    }
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(60)).build().unwrap()
}

pub fn wait_task(base: &str, id: &str, seen: &mut Vec<TaskState>) -> TaskView {
    let c = client();
    let deadline = Instant::now() + Duration::from_secs(600);
    loop {
        let t: TaskView = c.get(format!("{base}/api/v1/tasks/{id}")).send().unwrap().json().unwrap();
        if seen.last() != Some(&t.state) {
            seen.push(t.state);
        }
        if matches!(t.state, TaskState::Done | TaskState::Failed) {
            return t;
        }
        assert!(Instant::now() < deadline, "task {id} did not finish");
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(format!("{name}.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

pub fn assert_schema(name: &str, body: &Value) {
    let v = schema(name);
    let errors: Vec<String> = v.iter_errors(body).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{body}");
}
