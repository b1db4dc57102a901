use std::path::Path;
use std::process::{Command, Output};

use arlab_core::synthenv::{generate_world, WorldConfig};

fn arlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arlab"))
        .env("ARLAB_OUT_DIR", out)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn gen_world_writes_the_library_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = arlab(dir.path(), &["gen-world", "--seed", "7", "--entities", "20", "--hops", "3", "--top-k", "2"]);
    assert!(o.status.success());
    let (w, _) = generate_world(&WorldConfig {
        num_entities: 20,
        hop_count: 3,
        top_k: 2,
        seed: 7,
        ..WorldConfig::default()
    })
    .unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("world.txt")).unwrap(), w.to_text());
}

#[test]
fn train_then_replay_reproduces_every_byte() {
    let dir = tempfile::tempdir().unwrap();
    let o = arlab(dir.path(), &["train", "--name", "run", "--steps", "8", "--eval-samples", "20", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["config.toml", "seed_4.csv", "seed_4.params", "summary.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let replay = arlab(dir.path(), &["replay", run.to_str().unwrap()]);
    assert!(replay.status.success());

    let csv = run.join("seed_4.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    std::fs::write(&csv, text.replacen("0,", "9,", 1)).unwrap();
    let replay = arlab(dir.path(), &["replay", run.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&replay.stdout).contains("seed_4.csv"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "name = \"fromfile\"\nsteps = 3\nvariant = \"no_refiner\"\neval_samples = 10\n").unwrap();
    let o = arlab(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--steps", "4"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("fromfile/seed_0.csv")).unwrap();
    assert!(csv.contains("# variant = no_refiner"));
    assert!(csv.contains("# steps = 4"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

#[test]
fn verify_passes_and_records_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = arlab(dir.path(), &["verify", "--fixtures", "20"]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["identities_pass"], true);
    assert_eq!(v["fixtures"], 20);
}

#[test]
fn exit_codes_separate_usage_errors_from_failed_invariants() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(arlab(dir.path(), &["train", "--stepz", "3"]).status.code(), Some(2));
    assert_eq!(arlab(dir.path(), &["train", "--group-size", "1"]).status.code(), Some(2));
    let diverged = arlab(dir.path(), &["train", "--steps", "3", "--divergence-limit", "1e-9", "--eval-samples", "5"]);
    assert_eq!(diverged.status.code(), Some(1));
}
