//! Versioned prompt templates.
//!
//! Templates ship in the repository `templates/` directory and are also
//! embedded as defaults so the binary works without the directory. Each
//! loaded set carries a SHA-256 content hash that is recorded in every
//! outcome, since attack wording materially affects measured ASR.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

const TEMPLATE_FILES: [&str; 12] = [
    "stage1_framing.txt",
    "stage1_priming.txt",
    "stage1_closing.txt",
    "stage1_audio_blocks.txt",
    "video_scene_heading.txt",
    "audio_scene_heading.txt",
    "perception_heading.txt",
    "stage2.txt",
    "stage2_reask.txt",
    "judge_ethics.txt",
    "judge_consistency.txt",
    "judge_reask.txt",
];

/// A complete, named set of prompt templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub stage1_framing: String,
    pub stage1_priming: String,
    pub stage1_closing: String,
    pub stage1_audio_blocks: String,
    pub video_scene_heading: String,
    pub audio_scene_heading: String,
    pub perception_heading: String,
    pub stage2: String,
    pub stage2_reask: String,
    pub judge_ethics: String,
    pub judge_consistency: String,
    pub judge_reask: String,
    hash: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TemplateSet {
    /// Templates compiled into the binary.
    pub fn embedded() -> Self {
        Self::build([
            include_str!("../../../templates/stage1_framing.txt").to_string(),
            include_str!("../../../templates/stage1_priming.txt").to_string(),
            include_str!("../../../templates/stage1_closing.txt").to_string(),
            include_str!("../../../templates/stage1_audio_blocks.txt").to_string(),
            include_str!("../../../templates/video_scene_heading.txt").to_string(),
            include_str!("../../../templates/audio_scene_heading.txt").to_string(),
            include_str!("../../../templates/perception_heading.txt").to_string(),
            include_str!("../../../templates/stage2.txt").to_string(),
            include_str!("../../../templates/stage2_reask.txt").to_string(),
            include_str!("../../../templates/judge_ethics.txt").to_string(),
            include_str!("../../../templates/judge_consistency.txt").to_string(),
            include_str!("../../../templates/judge_reask.txt").to_string(),
        ])
    }

    /// Load from a template directory. Every file must exist.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut contents = Vec::with_capacity(TEMPLATE_FILES.len());
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            let body = fs::read_to_string(&path).map_err(|source| TemplateError::Read {
                path: path.display().to_string(),
                source,
            })?;
            contents.push(body);
        }
        Ok(Self::build(contents.try_into().expect("twelve templates")))
    }

    /// Load from a directory when given, otherwise use the embedded set.
    pub fn load_or_embedded(dir: Option<&Path>) -> Result<Self, TemplateError> {
        match dir {
            Some(dir) => Self::load(dir),
            None => Ok(Self::embedded()),
        }
    }

    /// SHA-256 over all template names and bodies.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn build(contents: [String; 12]) -> Self {
        let mut hasher = Sha256::new();
        for (name, body) in TEMPLATE_FILES.iter().zip(contents.iter()) {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(body.as_bytes());
            hasher.update([0u8]);
        }
        let hash = hex::encode(hasher.finalize());
        let [stage1_framing, stage1_priming, stage1_closing, stage1_audio_blocks, video_scene_heading, audio_scene_heading, perception_heading, stage2, stage2_reask, judge_ethics, judge_consistency, judge_reask] =
            contents;
        TemplateSet {
            stage1_framing,
            stage1_priming,
            stage1_closing,
            stage1_audio_blocks,
            video_scene_heading,
            audio_scene_heading,
            perception_heading,
            stage2,
            stage2_reask,
            judge_ethics,
            judge_consistency,
            judge_reask,
            hash,
        }
    }
}

/// Replace `{name}` placeholders in a template body.
pub fn render(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in substitutions {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
