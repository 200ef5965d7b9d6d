//! Deterministic keyframe sampling and image payload preparation.
//!
//! Frame extraction from video files is delegated to a configurable
//! external command; pre-extracted frame paths on a record bypass the
//! extractor entirely. All frames are re-encoded with fixed settings so
//! repeated extraction yields byte-identical payloads.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SvmaRecord;

pub const DEFAULT_KEYFRAMES: usize = 5;
pub const DEFAULT_MAX_EDGE: u32 = 768;
pub const DEFAULT_JPEG_QUALITY: u8 = 90;

/// Keyframes prepared for one record, ordered by source frame index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSet {
    pub record_id: String,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub source_index: usize,
    pub mime: String,
    pub image_bytes: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("frame_count and k must both be positive (got frame_count={frame_count}, k={k})")]
    NonPositive { frame_count: usize, k: usize },
    #[error("record `{0}` has no video_path and no frame_paths")]
    NoSource(String),
    #[error("cannot read frame file {path}: {source}")]
    FrameIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to re-encode frame: {0}")]
    Encode(#[source] image::ImageError),
    #[error("extractor failed to start: {0}")]
    ExtractorSpawn(#[source] std::io::Error),
    #[error("extractor exited with code {code:?}: {stderr}")]
    ExtractorFailed { code: Option<i32>, stderr: String },
    #[error("frame probe produced no usable frame count: {0}")]
    Probe(String),
    #[error("no extractor command configured but record `{0}` only has a video_path")]
    NoExtractor(String),
    #[error("cache io error at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Centered-uniform sampling: index i maps to
/// floor((i + 0.5) * frame_count / k), clamped to frame_count - 1.
/// Always returns exactly k non-decreasing indices; when
/// frame_count < k the output carries duplicates.
pub fn plan_keyframe_indices(frame_count: usize, k: usize) -> Result<Vec<usize>, MediaError> {
    if frame_count == 0 || k == 0 {
        return Err(MediaError::NonPositive { frame_count, k });
    }
    Ok((0..k)
        .map(|i| {
            let raw = ((i as f64 + 0.5) * frame_count as f64 / k as f64).floor() as usize;
            raw.min(frame_count - 1)
        })
        .collect())
}

/// Configuration for external frame extraction and re-encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Command template with `{input}`, `{index}`, `{output}`
    /// placeholders, substituted token-wise (no shell).
    #[serde(default)]
    pub extract_command: Option<String>,
    /// Command template with an `{input}` placeholder that prints the
    /// source frame count on stdout.
    #[serde(default)]
    pub probe_command: Option<String>,
    #[serde(default = "default_max_edge")]
    pub max_edge: u32,
    #[serde(default = "default_jpeg_quality")]
    pub jpeg_quality: u8,
}

fn default_max_edge() -> u32 {
    DEFAULT_MAX_EDGE
}
fn default_jpeg_quality() -> u8 {
    DEFAULT_JPEG_QUALITY
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            extract_command: None,
            probe_command: None,
            max_edge: DEFAULT_MAX_EDGE,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
        }
    }
}

pub struct FrameExtractor {
    config: ExtractorConfig,
    cache_dir: PathBuf,
}

impl FrameExtractor {
    pub fn new(config: ExtractorConfig, cache_dir: impl Into<PathBuf>) -> Self {
        FrameExtractor {
            config,
            cache_dir: cache_dir.into(),
        }
    }

    /// Prepare k keyframes for a record. Pre-extracted `frame_paths`
    /// take priority over the external extractor.
    pub fn frames_for_record(
        &self,
        record: &SvmaRecord,
        k: usize,
    ) -> Result<FrameSet, MediaError> {
        if let Some(paths) = record.frame_paths.as_ref().filter(|p| !p.is_empty()) {
            let indices = plan_keyframe_indices(paths.len(), k)?;
            let mut frames = Vec::with_capacity(k);
            for &idx in &indices {
                let bytes = self.reencode_file(Path::new(&paths[idx]))?;
                frames.push(Frame {
                    source_index: idx,
                    mime: "image/jpeg".into(),
                    image_bytes: bytes,
                });
            }
            return Ok(FrameSet {
                record_id: record.id.clone(),
                frames,
            });
        }
        let video_path = record
            .video_path
            .as_deref()
            .ok_or_else(|| MediaError::NoSource(record.id.clone()))?;
        let frame_count = self.probe_frame_count(video_path)?;
        let indices = plan_keyframe_indices(frame_count, k)?;
        self.extract_frames(&record.id, video_path, &indices)
    }

    /// Run the external extractor once per index, re-encoding each
    /// produced image. Results land in
    /// `cache/frames/<record_id>/<source_index>.jpg`.
    pub fn extract_frames(
        &self,
        record_id: &str,
        video_path: &str,
        indices: &[usize],
    ) -> Result<FrameSet, MediaError> {
        let template = self
            .config
            .extract_command
            .as_deref()
            .ok_or_else(|| MediaError::NoExtractor(record_id.to_string()))?;
        let record_dir = self.cache_dir.join("frames").join(record_id);
        fs::create_dir_all(&record_dir).map_err(|source| MediaError::CacheIo {
            path: record_dir.display().to_string(),
            source,
        })?;
        let mut frames = Vec::with_capacity(indices.len());
        for &idx in indices {
            let cached = record_dir.join(format!("{idx}.jpg"));
            let bytes = if cached.exists() {
                fs::read(&cached).map_err(|source| MediaError::CacheIo {
                    path: cached.display().to_string(),
                    source,
                })?
            } else {
                let raw_out = record_dir.join(format!("{idx}.raw.png"));
                run_extractor(template, video_path, idx, &raw_out)?;
                let bytes = self.reencode_file(&raw_out)?;
                let _ = fs::remove_file(&raw_out);
                atomic_write(&cached, &bytes).map_err(|source| MediaError::CacheIo {
                    path: cached.display().to_string(),
                    source,
                })?;
                bytes
            };
            frames.push(Frame {
                source_index: idx,
                mime: "image/jpeg".into(),
                image_bytes: bytes,
            });
        }
        Ok(FrameSet {
            record_id: record_id.to_string(),
            frames,
        })
    }

    fn probe_frame_count(&self, video_path: &str) -> Result<usize, MediaError> {
        let template = self
            .config
            .probe_command
            .as_deref()
            .ok_or_else(|| MediaError::Probe("no probe_command configured".into()))?;
        let tokens = substitute_tokens(template, &[("{input}", video_path)]);
        let output = Command::new(&tokens[0])
            .args(&tokens[1..])
            .output()
            .map_err(MediaError::ExtractorSpawn)?;
        if !output.status.success() {
            return Err(MediaError::ExtractorFailed {
                code: output.status.code(),
                stderr: stderr_excerpt(&output.stderr),
            });
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| MediaError::Probe(stdout.trim().to_string()))
    }

    /// Decode, downscale to the configured max edge, and re-encode as
    /// JPEG with fixed quality.
    pub fn reencode_file(&self, path: &Path) -> Result<Vec<u8>, MediaError> {
        let bytes = fs::read(path).map_err(|source| MediaError::FrameIo {
            path: path.display().to_string(),
            source,
        })?;
        let img = image::load_from_memory(&bytes).map_err(|source| MediaError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let (w, h) = (img.width(), img.height());
        let max_edge = self.config.max_edge;
        let img = if w.max(h) > max_edge {
            img.resize(max_edge, max_edge, FilterType::Triangle)
        } else {
            img
        };
        let mut out = Vec::new();
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(
            Cursor::new(&mut out),
            self.config.jpeg_quality,
        );
        img.to_rgb8()
            .write_with_encoder(encoder)
            .map_err(MediaError::Encode)?;
        Ok(out)
    }
}

fn run_extractor(
    template: &str,
    input: &str,
    index: usize,
    output: &Path,
) -> Result<(), MediaError> {
    let index_str = index.to_string();
    let output_str = output.display().to_string();
    let tokens = substitute_tokens(
        template,
        &[
            ("{input}", input),
            ("{index}", &index_str),
            ("{output}", &output_str),
        ],
    );
    let result = Command::new(&tokens[0])
        .args(&tokens[1..])
        .output()
        .map_err(MediaError::ExtractorSpawn)?;
    if !result.status.success() {
        return Err(MediaError::ExtractorFailed {
            code: result.status.code(),
            stderr: stderr_excerpt(&result.stderr),
        });
    }
    Ok(())
}

fn substitute_tokens(template: &str, pairs: &[(&str, &str)]) -> Vec<String> {
    template
        .split_whitespace()
        .map(|token| {
            let mut token = token.to_string();
            for (placeholder, value) in pairs {
                token = token.replace(placeholder, value);
            }
            token
        })
        .collect()
}

fn stderr_excerpt(stderr: &[u8]) -> String {
    let text = String::from_utf8_lossy(stderr);
    text.chars().take(500).collect()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
