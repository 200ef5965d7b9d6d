//! Transport implementations: hosted chat-completions HTTP, local
//! runtime chat HTTP, and in-process mocks for offline fixtures.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{GatewayError, GenerationConfig, ModelEndpoint, Usage};
use crate::messages::{joined_text, ContentPart, Message, Role};

#[derive(Debug, Error)]
pub enum SendError {
    #[error("auth: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("permanent rejection: {0}")]
    Permanent(String),
    #[error("credential env var `{0}` not set")]
    Credential(String),
}

#[derive(Debug, Clone)]
pub struct TransportReply {
    pub text: String,
    pub usage: Option<Usage>,
    pub refused: bool,
}

pub trait Transport: Send + Sync {
    fn send(
        &self,
        model: &str,
        messages: &[Message],
        config: &GenerationConfig,
    ) -> Result<TransportReply, SendError>;
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
    }
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> SendError {
    let excerpt: String = body.chars().take(300).collect();
    match status.as_u16() {
        401 | 403 => SendError::Auth(format!("{status}: {excerpt}")),
        429 => SendError::RateLimited(format!("{status}: {excerpt}")),
        400..=499 => SendError::Permanent(format!("{status}: {excerpt}")),
        _ => SendError::Transport(format!("{status}: {excerpt}")),
    }
}

/// Standard hosted chat-completions API: role-tagged messages whose
/// content is a list of text parts and base64 image parts. `top_k` is
/// omitted since hosted protocols reject it; determinism intent is
/// preserved by temperature 0.
pub struct HostedChatTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
}

impl HostedChatTransport {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, GatewayError> {
        let base_url = endpoint
            .base_url
            .clone()
            .ok_or_else(|| GatewayError::Config(format!("endpoint `{}`: base_url required", endpoint.name)))?;
        let api_key = match &endpoint.credential_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| GatewayError::Credential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        log::debug!("endpoint `{}`: top_k omitted from hosted chat requests", endpoint.name);
        Ok(HostedChatTransport {
            client,
            base_url,
            api_key,
        })
    }
}

impl Transport for HostedChatTransport {
    fn send(
        &self,
        model: &str,
        messages: &[Message],
        config: &GenerationConfig,
    ) -> Result<TransportReply, SendError> {
        let body_messages: Vec<_> = messages
            .iter()
            .map(|m| {
                let content: Vec<_> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { mime, data } => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{mime};base64,{}", B64.encode(data))}
                        }),
                    })
                    .collect();
                json!({"role": role_str(m.role), "content": content})
            })
            .collect();
        let body = json!({
            "model": model,
            "messages": body_messages,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }

        #[derive(Deserialize)]
        struct Completion {
            choices: Vec<Choice>,
            #[serde(default)]
            usage: Option<WireUsage>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: WireMessage,
            #[serde(default)]
            finish_reason: Option<String>,
        }
        #[derive(Deserialize)]
        struct WireMessage {
            #[serde(default)]
            content: Option<String>,
            #[serde(default)]
            refusal: Option<String>,
        }
        #[derive(Deserialize)]
        struct WireUsage {
            #[serde(default)]
            prompt_tokens: Option<u64>,
            #[serde(default)]
            completion_tokens: Option<u64>,
        }

        let parsed: Completion = serde_json::from_str(&text)
            .map_err(|e| SendError::Transport(format!("unparseable completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| SendError::Transport("completion had no choices".into()))?;
        let usage = parsed.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        let refused = choice.finish_reason.as_deref() == Some("content_filter")
            || choice.message.refusal.is_some();
        let text = choice
            .message
            .refusal
            .or(choice.message.content)
            .unwrap_or_default();
        Ok(TransportReply {
            text,
            usage,
            refused,
        })
    }
}

/// Local runtime chat endpoint (Ollama-style): text content plus an
/// images array of base64 payloads per message.
pub struct LocalChatTransport {
    client: reqwest::blocking::Client,
    base_url: String,
}

impl LocalChatTransport {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, GatewayError> {
        let base_url = endpoint
            .base_url
            .clone()
            .ok_or_else(|| GatewayError::Config(format!("endpoint `{}`: base_url required", endpoint.name)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(LocalChatTransport { client, base_url })
    }
}

impl Transport for LocalChatTransport {
    fn send(
        &self,
        model: &str,
        messages: &[Message],
        config: &GenerationConfig,
    ) -> Result<TransportReply, SendError> {
        let body_messages: Vec<_> = messages
            .iter()
            .map(|m| {
                let mut text = String::new();
                let mut images: Vec<String> = Vec::new();
                for part in &m.parts {
                    match part {
                        ContentPart::Text { text: t } => {
                            if !text.is_empty() {
                                text.push_str("\n\n");
                            }
                            text.push_str(t);
                        }
                        ContentPart::Image { data, .. } => images.push(B64.encode(data)),
                    }
                }
                json!({"role": role_str(m.role), "content": text, "images": images})
            })
            .collect();
        let body = json!({
            "model": model,
            "messages": body_messages,
            "stream": false,
            "options": {
                "temperature": config.temperature,
                "top_p": config.top_p,
                "top_k": config.top_k,
                "num_predict": config.max_tokens,
            },
        });
        let url = format!("{}/api/chat", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }

        #[derive(Deserialize)]
        struct LocalResponse {
            message: LocalMessage,
            #[serde(default)]
            prompt_eval_count: Option<u64>,
            #[serde(default)]
            eval_count: Option<u64>,
        }
        #[derive(Deserialize)]
        struct LocalMessage {
            #[serde(default)]
            content: String,
        }

        let parsed: LocalResponse = serde_json::from_str(&text)
            .map_err(|e| SendError::Transport(format!("unparseable chat body: {e}")))?;
        Ok(TransportReply {
            text: parsed.message.content,
            usage: Some(Usage {
                prompt_tokens: parsed.prompt_eval_count,
                completion_tokens: parsed.eval_count,
            }),
            refused: false,
        })
    }
}

/// Stage-1 mock rationales embed one of these tokens; the stage-2 mock
/// echoes the matching one-word verdict.
pub const MARKER_APPROPRIATE: &str = "verdict-marker-alpha";
pub const MARKER_INAPPROPRIATE: &str = "verdict-marker-bravo";

/// Deterministic in-process endpoint behaviors for fixtures and tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Stage 2 always ends up answering the opposite of the record's
    /// ground-truth label. Every attack succeeds.
    LabelFlip,
    /// Stage 2 answers the ground-truth label. Every attack fails.
    TruthEcho,
    /// Stage 1 is refused on safety grounds.
    Refusal,
    /// Every request gets the same text back.
    FixedText { text: String },
    /// Valid judge scores for every judge prompt.
    JudgeFixed {
        d1: u8,
        d2: u8,
        d3: u8,
        d4: u8,
        aligned: u8,
        confidence: u8,
    },
    /// Malformed judge output until the prompt carries the given retry
    /// number, then valid scores.
    JudgeMalformedUntil {
        retries: u32,
        d1: u8,
        d2: u8,
        d3: u8,
        d4: u8,
        aligned: u8,
        confidence: u8,
    },
    /// Unintelligible stage-2 output until the prompt carries the given
    /// retry number.
    UnparseableUntil { retries: u32 },
}

/// Ground-truth lookups for label-aware mocks: (needle, label) pairs
/// where the needle is text that appears verbatim in stage-1 prompts
/// for exactly one record (the audio transcription).
#[derive(Debug, Clone, Default)]
pub struct MockContext {
    pub needles: Vec<(String, u8)>,
}

impl MockContext {
    pub fn from_records(records: &[crate::dataset::SvmaRecord]) -> Self {
        MockContext {
            needles: records
                .iter()
                .map(|r| (r.audio_transcription.clone(), r.label))
                .collect(),
        }
    }
}

pub struct MockTransport {
    behavior: MockBehavior,
    context: MockContext,
}

impl MockTransport {
    pub fn new(behavior: MockBehavior, context: MockContext) -> Self {
        MockTransport { behavior, context }
    }

    fn lookup_label(&self, prompt: &str) -> Option<u8> {
        self.context
            .needles
            .iter()
            .find(|(needle, _)| prompt.contains(needle))
            .map(|&(_, label)| label)
    }

    fn rationale_for(&self, verdict: u8) -> String {
        let marker = if verdict == 0 {
            MARKER_INAPPROPRIATE
        } else {
            MARKER_APPROPRIATE
        };
        format!(
            "Mock reviewer rationale: the content was weighed on its merits and a firm \
             conclusion reached. {marker}"
        )
    }
}

fn reply(text: impl Into<String>) -> Result<TransportReply, SendError> {
    Ok(TransportReply {
        text: text.into(),
        usage: Some(Usage {
            prompt_tokens: Some(10),
            completion_tokens: Some(10),
        }),
        refused: false,
    })
}

impl Transport for MockTransport {
    fn send(
        &self,
        _model: &str,
        messages: &[Message],
        _config: &GenerationConfig,
    ) -> Result<TransportReply, SendError> {
        let prompt = joined_text(messages);
        let has_images = crate::messages::image_slot_count(messages) > 0;

        match &self.behavior {
            MockBehavior::FixedText { text } => reply(text.clone()),
            MockBehavior::Refusal => Ok(TransportReply {
                text: "I can't help with analyzing this content.".into(),
                usage: None,
                refused: true,
            }),
            MockBehavior::LabelFlip | MockBehavior::TruthEcho => {
                if has_images {
                    let label = self.lookup_label(&prompt).ok_or_else(|| {
                        SendError::Transport("mock could not match any record needle".into())
                    })?;
                    let verdict = match self.behavior {
                        MockBehavior::LabelFlip => 1 - label,
                        _ => label,
                    };
                    reply(self.rationale_for(verdict))
                } else if prompt.contains(MARKER_INAPPROPRIATE) {
                    reply("inappropriate")
                } else if prompt.contains(MARKER_APPROPRIATE) {
                    reply("appropriate")
                } else {
                    reply("the mock has nothing to echo")
                }
            }
            MockBehavior::UnparseableUntil { retries } => {
                if prompt.contains(&format!("retry {retries}")) {
                    reply("appropriate")
                } else {
                    reply("mumble mumble")
                }
            }
            MockBehavior::JudgeFixed {
                d1,
                d2,
                d3,
                d4,
                aligned,
                confidence,
            } => {
                if prompt.contains("Harm Recognition") {
                    reply(format!(
                        "{{\"D1\": {d1}, \"D2\": {d2}, \"D3\": {d3}, \"D4\": {d4}}}"
                    ))
                } else {
                    reply(format!(
                        "{{\"aligned\": {aligned}, \"confidence\": {confidence}}}"
                    ))
                }
            }
            MockBehavior::JudgeMalformedUntil {
                retries,
                d1,
                d2,
                d3,
                d4,
                aligned,
                confidence,
            } => {
                if !prompt.contains(&format!("retry {retries}")) {
                    reply("I think the scores are pretty good overall")
                } else if prompt.contains("Harm Recognition") {
                    reply(format!(
                        "{{\"D1\": {d1}, \"D2\": {d2}, \"D3\": {d3}, \"D4\": {d4}}}"
                    ))
                } else {
                    reply(format!(
                        "{{\"aligned\": {aligned}, \"confidence\": {confidence}}}"
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{text_part, Message};

    fn stage1_like(needle: &str) -> Vec<Message> {
        vec![Message::user(vec![
            text_part(format!("framing... {needle} ...closing")),
            ContentPart::Image {
                mime: "image/jpeg".into(),
                data: vec![0],
            },
        ])]
    }

    #[test]
    fn label_flip_emits_opposite_marker() {
        let transport = MockTransport::new(
            MockBehavior::LabelFlip,
            MockContext {
                needles: vec![("needle-a".into(), 0)],
            },
        );
        let reply = transport
            .send("m", &stage1_like("needle-a"), &GenerationConfig::default())
            .unwrap();
        assert!(reply.text.contains(MARKER_APPROPRIATE));
        let stage2 = vec![Message::user_text(format!("rationale: {}", reply.text))];
        let echoed = transport
            .send("m", &stage2, &GenerationConfig::default())
            .unwrap();
        assert_eq!(echoed.text, "appropriate");
    }

    #[test]
    fn truth_echo_emits_true_marker() {
        let transport = MockTransport::new(
            MockBehavior::TruthEcho,
            MockContext {
                needles: vec![("needle-a".into(), 0)],
            },
        );
        let reply = transport
            .send("m", &stage1_like("needle-a"), &GenerationConfig::default())
            .unwrap();
        assert!(reply.text.contains(MARKER_INAPPROPRIATE));
    }

    #[test]
    fn refusal_mock_refuses() {
        let transport = MockTransport::new(MockBehavior::Refusal, MockContext::default());
        let reply = transport
            .send("m", &stage1_like("x"), &GenerationConfig::default())
            .unwrap();
        assert!(reply.refused);
    }
}
