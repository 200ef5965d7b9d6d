//! End-to-end CLI tests against the compiled binary: exit codes, the
//! full-run pipeline, and stage composition.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use svma_harness::attack_prompts::AttackMode;
use svma_harness::gateway::transport::MockBehavior;

fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svma-harness"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

#[test]
fn validate_good_dataset_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = common::write_fixture_dataset(dir.path(), 4);
    let output = run_cli(&["validate", dataset.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stdout).contains("records: 4"));
}

#[test]
fn validate_bad_dataset_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"id\": \"x\", \"label\": 7}\n").unwrap();
    let output = run_cli(&["validate", path.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 1);
    assert!(String::from_utf8_lossy(&output.stderr).contains("invalid dataset"));
}

#[test]
fn missing_manifest_and_unknown_flags_are_usage_errors() {
    let output = run_cli(&["attack"]);
    assert_eq!(exit_code(&output), 64);
    assert!(String::from_utf8_lossy(&output.stderr).contains("--manifest"));

    let output = run_cli(&["attack", "--manifest", "m.json", "--frobnicate"]);
    assert_eq!(exit_code(&output), 64);

    let output = run_cli(&["no-such-subcommand"]);
    assert_eq!(exit_code(&output), 64);
}

#[test]
fn help_exits_zero() {
    let output = run_cli(&["--help"]);
    assert_eq!(exit_code(&output), 0);
    assert!(String::from_utf8_lossy(&output.stdout).contains("full-run"));
}

fn report_files(out_dir: &Path) -> Vec<Vec<u8>> {
    ["report.md", "report.csv", "report.json", "outcomes.jsonl", "verdicts.jsonl"]
        .iter()
        .map(|name| std::fs::read(out_dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}")))
        .collect()
}

#[test]
fn full_run_equals_stage_composition() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = common::write_fixture_dataset(dir.path(), 6);
    let endpoints = vec![
        common::mock_endpoint("mock-flip", MockBehavior::LabelFlip),
        common::mock_endpoint("mock-echo", MockBehavior::TruthEcho),
    ];
    let modes = AttackMode::all_attack_modes().to_vec();

    let mut full = common::manifest(dir.path(), dataset.clone(), endpoints.clone(), modes.clone());
    full.out_dir = dir.path().join("out-full");
    let full_path = dir.path().join("full.json");
    std::fs::write(&full_path, serde_json::to_vec_pretty(&full).unwrap()).unwrap();

    let output = run_cli(&["full-run", "--manifest", full_path.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let full_files = report_files(&full.out_dir);

    // Same dataset and cache, fresh output directory, one stage at a
    // time. Warm cache makes the comparison byte-exact.
    let mut staged = common::manifest(dir.path(), dataset, endpoints, modes);
    staged.out_dir = dir.path().join("out-staged");
    let staged_path = dir.path().join("staged.json");
    std::fs::write(&staged_path, serde_json::to_vec_pretty(&staged).unwrap()).unwrap();
    for stage in ["attack", "judge", "report"] {
        let output = run_cli(&[stage, "--manifest", staged_path.to_str().unwrap()]);
        assert_eq!(
            exit_code(&output),
            0,
            "{stage}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let output = run_cli(&["metrics", "--manifest", staged_path.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    assert!(String::from_utf8_lossy(&output.stdout).contains("Attack success rate"));

    assert_eq!(report_files(&staged.out_dir), full_files, "staged run diverged from full-run");
}

#[test]
fn transport_failures_above_threshold_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Half the records point at frames that do not exist, so half the
    // cells become transport failures, above the 0.25 threshold.
    let mut records = common::fixture_records(dir.path(), 4);
    for record in records.iter_mut().take(2) {
        record.frame_paths = Some(vec![dir.path().join("missing.png").display().to_string()]);
    }
    let dataset = dir.path().join("dataset.jsonl");
    svma_harness::dataset::write_dataset(&records, &dataset).unwrap();
    let manifest = common::manifest(
        dir.path(),
        dataset,
        vec![common::mock_endpoint("mock-flip", MockBehavior::LabelFlip)],
        vec![AttackMode::TriModal],
    );
    let manifest_path = common::write_manifest(dir.path(), &manifest);
    let output = run_cli(&["attack", "--manifest", manifest_path.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2, "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn expect_svma_checks_published_statistics() {
    let dir = tempfile::tempdir().unwrap();

    // Crafted to the published statistics: 549/1000 inappropriate and
    // per-channel mean adversarial lengths 660.64 / 680.75 / 618.14.
    let records: Vec<_> = (0..1000)
        .map(|i| {
            let mut record = common::record(
                &format!("p-{i:04}"),
                u8::from(i >= 549),
                vec![format!("frames/p-{i:04}.png")],
            );
            let video_len = if i < 640 { 661 } else { 660 };
            let audio_len = if i < 750 { 681 } else { 680 };
            let perception_len = if i < 140 { 619 } else { 618 };
            record.adv_video = vec![svma_harness::dataset::SceneSegment {
                scene_index: 0,
                text: "v".repeat(video_len),
            }];
            record.adv_audio = vec![svma_harness::dataset::SceneSegment {
                scene_index: 0,
                text: "a".repeat(audio_len),
            }];
            record.adv_perception = "p".repeat(perception_len);
            record
        })
        .collect();
    let crafted = dir.path().join("crafted.jsonl");
    svma_harness::dataset::write_dataset(&records, &crafted).unwrap();
    let output = run_cli(&["validate", crafted.to_str().unwrap(), "--expect-svma"]);
    assert_eq!(exit_code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stdout).contains("expectations met"));

    // A valid dataset with a different split fails the expectation
    // check but passes plain validation.
    let other = common::write_fixture_dataset(dir.path(), 10);
    let output = run_cli(&["validate", other.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    let output = run_cli(&["validate", other.to_str().unwrap(), "--expect-svma"]);
    assert_eq!(exit_code(&output), 1);
    assert!(String::from_utf8_lossy(&output.stderr).contains("expectation failed"));
}
