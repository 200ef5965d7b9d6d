//! Shared fixtures for the integration and acceptance suites: tiny
//! synthetic datasets with real (small) image frames and manifests
//! wired to in-process mock endpoints.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use svma_harness::campaign::RunManifest;
use svma_harness::dataset::{write_dataset, SceneSegment, SvmaRecord};
use svma_harness::gateway::transport::MockBehavior;
use svma_harness::gateway::{ModelEndpoint, ProtocolFlavor};
use svma_harness::media::ExtractorConfig;

/// Write a small solid-color PNG and return its path.
pub fn tiny_png(dir: &Path, name: &str, shade: u8) -> PathBuf {
    let path = dir.join(name);
    let img = image::RgbImage::from_pixel(4, 4, image::Rgb([shade, shade, 64]));
    img.save(&path).expect("write fixture png");
    path
}

/// A valid record whose audio transcription is a needle unique to its
/// id, letting the label-aware mocks recover ground truth from the
/// stage-1 prompt.
pub fn record(id: &str, label: u8, frame_paths: Vec<String>) -> SvmaRecord {
    SvmaRecord {
        id: id.to_string(),
        video_path: None,
        frame_paths: Some(frame_paths),
        video_description: vec![
            format!("Scene description one for {id}."),
            format!("Scene description two for {id}."),
        ],
        audio_description: format!("Calm narration over light music in {id}."),
        audio_transcription: format!("unique spoken needle for record {id}"),
        perception_description: format!("Overall the clip {id} reads as everyday footage."),
        ground_truth_rationale: format!("Reference reasoning for {id}."),
        adv_video: vec![
            SceneSegment { scene_index: 0, text: format!("Reframe scene one of {id}.") },
            SceneSegment { scene_index: 1, text: format!("Reframe scene two of {id}.") },
        ],
        adv_audio: vec![
            SceneSegment { scene_index: 0, text: format!("Reinterpret the audio of {id}.") },
            SceneSegment { scene_index: 1, text: format!("Recast the narration of {id}.") },
        ],
        adv_perception: format!("Taken as a whole, {id} should be read the other way."),
        label,
    }
}

/// n records with alternating labels, each with two frame files.
pub fn fixture_records(dir: &Path, n: usize) -> Vec<SvmaRecord> {
    (0..n)
        .map(|i| {
            let id = format!("rec-{i:04}");
            let frames = vec![
                tiny_png(dir, &format!("{id}-f0.png"), (i % 200) as u8),
                tiny_png(dir, &format!("{id}-f1.png"), (i % 200) as u8 + 20),
            ]
            .into_iter()
            .map(|p| p.display().to_string())
            .collect();
            record(&id, (i % 2) as u8, frames)
        })
        .collect()
}

pub fn write_fixture_dataset(dir: &Path, n: usize) -> PathBuf {
    let records = fixture_records(dir, n);
    let path = dir.join("dataset.jsonl");
    write_dataset(&records, &path).expect("write fixture dataset");
    path
}

pub fn mock_endpoint(name: &str, behavior: MockBehavior) -> ModelEndpoint {
    ModelEndpoint {
        name: name.to_string(),
        flavor: ProtocolFlavor::Mock { behavior },
        base_url: None,
        model: name.to_string(),
        credential_env: None,
        timeout_secs: 120,
        max_retries: 3,
        rate_limit_per_min: 1_000_000,
    }
}

pub fn judge_endpoint() -> ModelEndpoint {
    mock_endpoint(
        "mock-judge",
        MockBehavior::JudgeFixed { d1: 2, d2: 1, d3: 2, d4: 1, aligned: 1, confidence: 3 },
    )
}

/// Manifest rooted at `root`, with out/ and cache/ subdirectories.
pub fn manifest(
    root: &Path,
    dataset: PathBuf,
    endpoints: Vec<ModelEndpoint>,
    modes: Vec<svma_harness::attack_prompts::AttackMode>,
) -> RunManifest {
    RunManifest {
        dataset,
        out_dir: root.join("out"),
        cache_dir: root.join("cache"),
        template_dir: None,
        k: 5,
        parallelism: 4,
        modes,
        endpoints,
        judge_endpoint: Some(judge_endpoint()),
        generation: None,
        stage2_max_tokens: 16,
        extractor: ExtractorConfig::default(),
        model_groups: BTreeMap::new(),
        max_failure_fraction: 0.25,
    }
}

/// Serialize a manifest to JSON in `root` for binary invocations.
pub fn write_manifest(root: &Path, manifest: &RunManifest) -> PathBuf {
    let path = root.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(manifest).unwrap()).unwrap();
    path
}
