mod common;

use std::process::Command;

use roomrec_core::audio::wav;
use roomrec_service::spawn_blocking_server;

fn roomrec(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_roomrec"))
        .args(args)
        .env_remove("ROOMREC_SERVER")
        .output()
        .unwrap()
}

#[test]
fn headless_loop_through_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let summary = common::client_loop(dir.path()).unwrap_or_else(|e| panic!("{e}"));
    println!("{summary}");
}

#[test]
fn emit_record_writes_500_deterministic_training_records() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wav");
    let b = dir.path().join("b.wav");
    for out in [&a, &b] {
        let o = roomrec(&[
            "emit-record",
            "--mode",
            "training",
            "--source",
            "sim:room-01",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let records = wav::read::<f32>(&a).unwrap();
    assert_eq!(records.len(), 500);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let one = dir.path().join("one.wav");
    let src = format!("file:{}", a.display());
    let o = roomrec(&["emit-record", "--mode", "recognition", "--source", &src, "--out", one.to_str().unwrap()]);
    assert!(o.status.success());
    let single = wav::read::<f32>(&one).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].samples(), records[0].samples());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.wav");
    let out = out.to_str().unwrap();

    assert_eq!(roomrec(&["emit-record", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(
        roomrec(&["emit-record", "--mode", "training", "--source", "mic", "--out", out]).status.code(),
        Some(2)
    );
    assert_eq!(
        roomrec(&["emit-record", "--mode", "training", "--source", "device", "--out", out]).status.code(),
        Some(3)
    );
    assert_eq!(
        roomrec(&["emit-record", "--mode", "training", "--source", "file:missing.wav", "--out", out]).status.code(),
        Some(3)
    );

    // Nothing listens on port 9 of localhost.
    let o = roomrec(&[
        "upload",
        "--mode",
        "recognition",
        "--source",
        "sim:room-00",
        "--server",
        "http://127.0.0.1:9",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("retry"));

    let (base, _state) = spawn_blocking_server(common::server_config(dir.path())).unwrap();
    let o = roomrec(&["label", "--session", "nope", "--label", "x", "--server", &base]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("404"));

    // No model yet: the server's 409 comes back as a server-reported error.
    let o = Command::new(env!("CARGO_BIN_EXE_roomrec"))
        .args(["upload", "--mode", "recognition", "--source", "sim:room-00"])
        .env("ROOMREC_SERVER", &base)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("409"));
}

#[test]
fn upload_and_label_watch_via_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _state) = spawn_blocking_server(common::server_config(dir.path())).unwrap();
    let mut sessions = Vec::new();
    for room in ["sim:room-00", "sim:room-01"] {
        let o = roomrec(&["upload", "--mode", "training", "--source", room, "--server", &base]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["count"], 500);
        sessions.push(v["session_id"].as_str().unwrap().to_string());
    }
    // The first retrain sees one room and fails; --watch reports that.
    let o = roomrec(&["label", "--session", &sessions[0], "--label", "a", "--watch", "--server", &base]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
    let o = roomrec(&["label", "--session", &sessions[1], "--label", "b", "--watch", "--server", &base]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = roomrec(&["upload", "--mode", "recognition", "--source", "sim:room-01", "--start", "900", "--server", &base]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["label"], "b");
    assert_eq!(v["topk"][0]["label"], "b");
}

#[test]
fn experiments_binary_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"room_count": 3, "per_room": 40, "seed": 2}"#).unwrap();
    let out = dir.path().join("out");
    let run = |name: &str| {
        Command::new(env!("CARGO_BIN_EXE_experiments"))
            .args(["run", name, "--corpus", spec.to_str().unwrap(), "--seed", "3"])
            .args(["--out", out.to_str().unwrap(), "--max-steps", "20", "--volumes", "5,10"])
            .output()
            .unwrap()
    };
    let o = run("volume");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("volume.csv")).unwrap();
    assert!(csv.contains("# seed: 3") && csv.contains("# corpus_sha256: "));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("volume.json")).unwrap()).unwrap();
    let volumes: Vec<u64> = summary["results"].as_array().unwrap().iter().map(|p| p["volume"].as_u64().unwrap()).collect();
    assert_eq!(volumes, vec![5, 10]);

    let first = std::fs::read_to_string(out.join("volume.csv")).unwrap();
    assert!(run("volume").status.success());
    assert_eq!(first, std::fs::read_to_string(out.join("volume.csv")).unwrap());

    assert_eq!(run("nonsense").status.code(), Some(2));
}
