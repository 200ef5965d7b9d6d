//! SVMA dataset loading, validation, and summary statistics.
//!
//! The dataset file is UTF-8 JSON Lines: one record object per line.
//! See `docs/dataset_schema.md` for the field-by-field schema.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One scene-level adversarial narrative block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSegment {
    pub scene_index: usize,
    pub text: String,
}

/// One dataset row: content pointers, modality descriptions, tri-modal
/// adversarial prompts, and the ground-truth appropriateness label
/// (0 = inappropriate, 1 = appropriate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvmaRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_paths: Option<Vec<String>>,
    pub video_description: Vec<String>,
    pub audio_description: String,
    pub audio_transcription: String,
    pub perception_description: String,
    pub ground_truth_rationale: String,
    pub adv_video: Vec<SceneSegment>,
    pub adv_audio: Vec<SceneSegment>,
    pub adv_perception: String,
    pub label: u8,
}

impl SvmaRecord {
    pub fn is_appropriate(&self) -> bool {
        self.label == 1
    }
}

/// Summary statistics over a loaded dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub record_count: usize,
    pub fraction_inappropriate: f64,
    pub fraction_appropriate: f64,
    /// Mean adversarial text length in Unicode scalar values, per
    /// channel: (video, audio, perception). Segments within a channel
    /// are joined with single newlines before counting.
    pub mean_adv_lengths: (f64, f64, f64),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    Missing(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: invalid record `{id}`: {violation}")]
    Invalid {
        line: usize,
        id: String,
        violation: Violation,
    },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("dataset is empty")]
    Empty,
}

/// A specific invariant violation on one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LabelOutOfRange(u8),
    NoContentPointer,
    EmptyField(&'static str),
    EmptySegmentList(&'static str),
    NonContiguousScenes(&'static str),
    EmptySegmentText(&'static str, usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LabelOutOfRange(v) => write!(f, "field `label` must be 0 or 1, got {v}"),
            Violation::NoContentPointer => {
                write!(f, "at least one of `video_path`/`frame_paths` must be present")
            }
            Violation::EmptyField(name) => write!(f, "field `{name}` is empty"),
            Violation::EmptySegmentList(name) => {
                write!(f, "field `{name}` must contain at least one segment")
            }
            Violation::NonContiguousScenes(name) => write!(
                f,
                "field `{name}` scene_index values must be contiguous from 0"
            ),
            Violation::EmptySegmentText(name, idx) => {
                write!(f, "field `{name}` segment {idx} has empty text")
            }
        }
    }
}

/// Check every record invariant, returning the first violation found.
pub fn validate_record(record: &SvmaRecord) -> Result<(), Violation> {
    if record.label > 1 {
        return Err(Violation::LabelOutOfRange(record.label));
    }
    let has_video = record.video_path.as_deref().is_some_and(|p| !p.trim().is_empty());
    let has_frames = record
        .frame_paths
        .as_ref()
        .is_some_and(|paths| !paths.is_empty());
    if !has_video && !has_frames {
        return Err(Violation::NoContentPointer);
    }
    let text_fields: [(&'static str, &str); 5] = [
        ("id", &record.id),
        ("audio_description", &record.audio_description),
        ("audio_transcription", &record.audio_transcription),
        ("perception_description", &record.perception_description),
        ("ground_truth_rationale", &record.ground_truth_rationale),
    ];
    for (name, value) in text_fields {
        if value.trim().is_empty() {
            return Err(Violation::EmptyField(name));
        }
    }
    if record.video_description.is_empty() {
        return Err(Violation::EmptyField("video_description"));
    }
    for scene in &record.video_description {
        if scene.trim().is_empty() {
            return Err(Violation::EmptyField("video_description"));
        }
    }
    if record.adv_perception.trim().is_empty() {
        return Err(Violation::EmptyField("adv_perception"));
    }
    for (name, segments) in [("adv_video", &record.adv_video), ("adv_audio", &record.adv_audio)] {
        if segments.is_empty() {
            return Err(Violation::EmptySegmentList(name));
        }
        for (expected, segment) in segments.iter().enumerate() {
            if segment.scene_index != expected {
                return Err(Violation::NonContiguousScenes(name));
            }
            if segment.text.trim().is_empty() {
                return Err(Violation::EmptySegmentText(name, segment.scene_index));
            }
        }
    }
    Ok(())
}

/// Load and validate a JSON Lines dataset file. Record order is
/// preserved; duplicate ids and invariant violations are errors.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SvmaRecord>, DatasetError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DatasetError::Missing(path.display().to_string()));
    }
    let content = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&content)
}

/// Parse dataset content already in memory. Line numbers are 1-based.
pub fn parse_dataset(content: &str) -> Result<Vec<SvmaRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SvmaRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                detail: e.to_string(),
            })?;
        validate_record(&record).map_err(|violation| DatasetError::Invalid {
            line: line_no,
            id: record.id.clone(),
            violation,
        })?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Collect up to `limit` violations instead of stopping at the first.
/// Used by `validate` to print a digest of a broken file.
pub fn scan_violations(content: &str, limit: usize) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        if violations.len() >= limit {
            break;
        }
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SvmaRecord>(line) {
            Err(e) => violations.push(format!("line {line_no}: malformed record: {e}")),
            Ok(record) => {
                if let Err(v) = validate_record(&record) {
                    violations.push(format!("line {line_no}: record `{}`: {v}", record.id));
                } else if !seen_ids.insert(record.id.clone()) {
                    violations.push(format!("line {line_no}: duplicate record id `{}`", record.id));
                }
            }
        }
    }
    violations
}

/// Serialize records back to the JSON Lines format.
pub fn write_dataset(records: &[SvmaRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)
}

fn channel_length(segments: &[SceneSegment]) -> usize {
    let joined: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
    joined.join("\n").chars().count()
}

/// Compute summary statistics over a non-empty record list.
pub fn dataset_stats(records: &[SvmaRecord]) -> Result<DatasetStats, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = records.len() as f64;
    let inappropriate = records.iter().filter(|r| r.label == 0).count() as f64;
    let video_total: usize = records.iter().map(|r| channel_length(&r.adv_video)).sum();
    let audio_total: usize = records.iter().map(|r| channel_length(&r.adv_audio)).sum();
    let perception_total: usize = records.iter().map(|r| r.adv_perception.chars().count()).sum();
    Ok(DatasetStats {
        record_count: records.len(),
        fraction_inappropriate: inappropriate / n,
        fraction_appropriate: (records.len() as f64 - inappropriate) / n,
        mean_adv_lengths: (
            video_total as f64 / n,
            audio_total as f64 / n,
            perception_total as f64 / n,
        ),
    })
}

/// SHA-256 of the dataset file bytes, for run-manifest provenance.
pub fn dataset_hash(path: impl AsRef<Path>) -> Result<String, DatasetError> {
    use sha2::{Digest, Sha256};
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, label: u8) -> SvmaRecord {
    SvmaRecord {
        id: id.to_string(),
        video_path: None,
        frame_paths: Some(vec![format!("frames/{id}/0.png")]),
        video_description: vec![format!("scene description for {id}")],
        audio_description: format!("audio description for {id}"),
        audio_transcription: format!("unique transcription token {id}"),
        perception_description: format!("perception description for {id}"),
        ground_truth_rationale: format!("ground truth rationale for {id}"),
        adv_video: vec![SceneSegment {
            scene_index: 0,
            text: format!("video attack narrative {id}"),
        }],
        adv_audio: vec![SceneSegment {
            scene_index: 0,
            text: format!("audio attack narrative {id}"),
        }],
        adv_perception: format!("holistic perception attack {id}"),
        label,
    }
}
