//! Multimodal chat message model shared by prompt assembly and the
//! model gateway.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

/// One block inside a message: plain text or an encoded raster image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { mime: String, data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl Message {
    pub fn user(parts: Vec<ContentPart>) -> Self {
        Message {
            role: Role::User,
            parts,
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Message::user(vec![ContentPart::Text { text: text.into() }])
    }
}

pub fn text_part(text: impl Into<String>) -> ContentPart {
    ContentPart::Text { text: text.into() }
}

/// Number of image parts across a message sequence.
pub fn image_slot_count(messages: &[Message]) -> usize {
    messages
        .iter()
        .flat_map(|m| m.parts.iter())
        .filter(|p| matches!(p, ContentPart::Image { .. }))
        .count()
}

/// All text parts of a message sequence joined with newlines.
pub fn joined_text(messages: &[Message]) -> String {
    let mut out = String::new();
    for message in messages {
        for part in &message.parts {
            if let ContentPart::Text { text } = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
    }
    out
}

/// Canonical compact form of a message sequence with image payloads
/// replaced by their SHA-256 digests. Used for cache keys and for
/// persisting requests without raw image bytes.
pub fn canonical_form(messages: &[Message]) -> String {
    #[derive(Serialize)]
    struct CanonicalPart<'a> {
        kind: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        text: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mime: Option<&'a str>,
        #[serde(skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
    }
    #[derive(Serialize)]
    struct CanonicalMessage<'a> {
        role: Role,
        parts: Vec<CanonicalPart<'a>>,
    }

    let canonical: Vec<CanonicalMessage> = messages
        .iter()
        .map(|m| CanonicalMessage {
            role: m.role,
            parts: m
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text { text } => CanonicalPart {
                        kind: "text",
                        text: Some(text),
                        mime: None,
                        sha256: None,
                    },
                    ContentPart::Image { mime, data } => CanonicalPart {
                        kind: "image",
                        text: None,
                        mime: Some(mime),
                        sha256: Some(hex::encode(Sha256::digest(data))),
                    },
                })
                .collect(),
        })
        .collect();
    serde_json::to_string(&canonical).expect("canonical form serializes")
}
