//! Uniform client over remote multimodal chat endpoints with
//! deterministic generation settings, retries, per-endpoint rate
//! limiting, and on-disk response caching.

pub mod cache;
pub mod ratelimit;
pub mod transport;

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::messages::{canonical_form, Message};
use cache::ResponseCache;
use ratelimit::RateLimiter;
use transport::{MockBehavior, SendError, Transport};

/// Time source abstraction so retry backoff and rate limiting can be
/// tested against a virtual clock.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock before epoch")
            .as_millis() as u64
    }
    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

/// Virtual clock for tests: `sleep_ms` advances time instantly.
#[derive(Default)]
pub struct ManualClock {
    now: std::sync::Mutex<u64>,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock {
            now: std::sync::Mutex::new(start_ms),
        }
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        *self.now.lock().unwrap()
    }
    fn sleep_ms(&self, ms: u64) {
        *self.now.lock().unwrap() += ms;
    }
}

/// How to talk to an endpoint. `Mock` behaviors run in-process and back
/// the offline test fixtures and the acceptance suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolFlavor {
    /// Standard hosted chat-completions HTTP API.
    HostedChat,
    /// Local runtime chat HTTP endpoint with an images array.
    LocalChat,
    Mock { behavior: MockBehavior },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    /// Report label, e.g. "GPT-4o mini".
    pub name: String,
    pub flavor: ProtocolFlavor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    /// Credentials never appear in the manifest itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_rate_limit")]
    pub rate_limit_per_min: u32,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_rate_limit() -> u32 {
    60
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_secs == 0 {
            return Err(GatewayError::Config(format!(
                "endpoint `{}`: timeout_secs must be > 0",
                self.name
            )));
        }
        if self.rate_limit_per_min == 0 {
            return Err(GatewayError::Config(format!(
                "endpoint `{}`: rate_limit_per_min must be > 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// Generation settings. Defaults pin temperature 0, top-p 1, top-k 1
/// for deterministic output; anything else requires the caller to pass
/// an explicit non-determinism acknowledgment at the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(default = "zero")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default = "one_u32")]
    pub top_k: u32,
    #[serde(default = "default_stage1_tokens")]
    pub max_tokens: u32,
}

fn zero() -> f64 {
    0.0
}
fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn default_stage1_tokens() -> u32 {
    1024
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.0,
            top_p: 1.0,
            top_k: 1,
            max_tokens: 1024,
        }
    }
}

impl GenerationConfig {
    pub fn is_deterministic(&self) -> bool {
        self.temperature == 0.0 && self.top_p == 1.0 && self.top_k == 1
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyStatus {
    Completed,
    /// Response present but blocked or filtered by the provider.
    /// A first-class outcome, not an error: refusals count as failed
    /// attacks and must reach the metrics.
    Refused,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub status: ReplyStatus,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// When the response was produced. Cache hits return the stored
    /// creation time so warm re-runs are byte-identical.
    pub created_unix_ms: u64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request permanently rejected: {0}")]
    Rejected(String),
    #[error("credential environment variable `{0}` is not set")]
    Credential(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("cache error at {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Retry/rate-limited caching client for one endpoint.
pub struct Gateway {
    endpoint: ModelEndpoint,
    transport: Box<dyn Transport>,
    limiter: RateLimiter,
    cache: Option<ResponseCache>,
    clock: Arc<dyn Clock>,
    /// Per-key locks so concurrent identical requests execute once and
    /// all observers see the same cached reply (and timestamp).
    inflight: std::sync::Mutex<std::collections::HashMap<String, Arc<std::sync::Mutex<()>>>>,
}

impl Gateway {
    pub fn new(
        endpoint: ModelEndpoint,
        transport: Box<dyn Transport>,
        cache: Option<ResponseCache>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let limiter = RateLimiter::new(endpoint.rate_limit_per_min, Arc::clone(&clock));
        Ok(Gateway {
            endpoint,
            transport,
            limiter,
            cache,
            clock,
            inflight: std::sync::Mutex::new(std::collections::HashMap::new()),
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// One chat round-trip with rate limiting and exponential backoff
    /// (base 1 s, factor 2, jitter) on transient failures.
    pub fn chat(
        &self,
        messages: &[Message],
        config: &GenerationConfig,
    ) -> Result<ChatReply, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::Config("empty message sequence".into()));
        }
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            match self.transport.send(&self.endpoint.model, messages, config) {
                Ok(reply) => {
                    return Ok(ChatReply {
                        status: if reply.refused {
                            ReplyStatus::Refused
                        } else {
                            ReplyStatus::Completed
                        },
                        text: reply.text,
                        usage: reply.usage,
                        created_unix_ms: self.clock.now_ms(),
                    });
                }
                Err(SendError::Auth(detail)) => return Err(GatewayError::Auth(detail)),
                Err(SendError::Permanent(detail)) => return Err(GatewayError::Rejected(detail)),
                Err(SendError::Credential(var)) => return Err(GatewayError::Credential(var)),
                Err(err @ (SendError::RateLimited(_) | SendError::Transport(_))) => {
                    if attempt >= self.endpoint.max_retries {
                        return Err(GatewayError::ExhaustedRetries {
                            attempts: attempt + 1,
                            last: err.to_string(),
                        });
                    }
                    let backoff = 1000u64 << attempt;
                    let jitter = rand::thread_rng().gen_range(0..250);
                    self.clock.sleep_ms(backoff + jitter);
                    attempt += 1;
                }
            }
        }
    }

    /// Cache-backed chat. The key hashes endpoint name, model id, the
    /// canonical message form (image payloads as digests), and the
    /// generation config; identical keys return the stored reply with
    /// no network call.
    pub fn cached_chat(
        &self,
        messages: &[Message],
        config: &GenerationConfig,
    ) -> Result<(ChatReply, bool), GatewayError> {
        let cache = match &self.cache {
            Some(cache) => cache,
            None => return self.chat(messages, config).map(|r| (r, false)),
        };
        let key = cache_key(&self.endpoint.name, &self.endpoint.model, messages, config);
        if let Some(reply) = cache.get(&key) {
            return Ok((reply, true));
        }
        // Single-flight the miss: concurrent identical requests would
        // otherwise each hit the transport and record distinct reply
        // timestamps, breaking byte-level journal reproducibility.
        let key_lock = {
            let mut inflight = self.inflight.lock().unwrap();
            Arc::clone(inflight.entry(key.clone()).or_default())
        };
        let _guard = key_lock.lock().unwrap();
        if let Some(reply) = cache.get(&key) {
            return Ok((reply, true));
        }
        let reply = self.chat(messages, config)?;
        cache.put(&key, &reply)?;
        Ok((reply, false))
    }
}

/// Cache key over everything that can change a response.
pub fn cache_key(
    endpoint_name: &str,
    model: &str,
    messages: &[Message],
    config: &GenerationConfig,
) -> String {
    #[derive(Serialize)]
    struct KeyInput<'a> {
        endpoint: &'a str,
        model: &'a str,
        messages: String,
        config: &'a GenerationConfig,
    }
    let input = KeyInput {
        endpoint: endpoint_name,
        model,
        messages: canonical_form(messages),
        config,
    };
    let bytes = serde_json::to_vec(&input).expect("key input serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Build a gateway transport for an endpoint. Mock flavors consult the
/// records passed in `mock_context` for ground-truth lookups.
pub fn build_transport(
    endpoint: &ModelEndpoint,
    mock_context: Option<transport::MockContext>,
) -> Result<Box<dyn Transport>, GatewayError> {
    match &endpoint.flavor {
        ProtocolFlavor::HostedChat => Ok(Box::new(transport::HostedChatTransport::new(endpoint)?)),
        ProtocolFlavor::LocalChat => Ok(Box::new(transport::LocalChatTransport::new(endpoint)?)),
        ProtocolFlavor::Mock { behavior } => Ok(Box::new(transport::MockTransport::new(
            behavior.clone(),
            mock_context.unwrap_or_default(),
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{text_part, ContentPart, Message};
    use std::sync::Mutex;
    use transport::TransportReply;

    struct Scripted {
        replies: Mutex<Vec<Result<TransportReply, SendError>>>,
        calls: Mutex<u32>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<TransportReply, SendError>>) -> Self {
            Scripted {
                replies: Mutex::new(replies),
                calls: Mutex::new(0),
            }
        }
    }

    impl Transport for Scripted {
        fn send(
            &self,
            _model: &str,
            _messages: &[Message],
            _config: &GenerationConfig,
        ) -> Result<TransportReply, SendError> {
            *self.calls.lock().unwrap() += 1;
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn endpoint() -> ModelEndpoint {
        ModelEndpoint {
            name: "test".into(),
            flavor: ProtocolFlavor::HostedChat,
            base_url: None,
            model: "m".into(),
            credential_env: None,
            timeout_secs: 10,
            max_retries: 3,
            rate_limit_per_min: 100_000,
        }
    }

    fn ok_reply(text: &str) -> Result<TransportReply, SendError> {
        Ok(TransportReply {
            text: text.into(),
            usage: None,
            refused: false,
        })
    }

    fn gateway(
        replies: Vec<Result<TransportReply, SendError>>,
        cache: Option<ResponseCache>,
    ) -> Gateway {
        Gateway::new(
            endpoint(),
            Box::new(Scripted::new(replies)),
            cache,
            Arc::new(ManualClock::new(0)),
        )
        .unwrap()
    }

    #[test]
    fn extracts_body_verbatim() {
        let gw = gateway(vec![ok_reply("fixed body")], None);
        let reply = gw
            .chat(&[Message::user_text("hi")], &GenerationConfig::default())
            .unwrap();
        assert_eq!(reply.text, "fixed body");
        assert_eq!(reply.status, ReplyStatus::Completed);
    }

    #[test]
    fn retries_once_after_429() {
        let gw = gateway(
            vec![Err(SendError::RateLimited("429".into())), ok_reply("ok")],
            None,
        );
        let reply = gw
            .chat(&[Message::user_text("hi")], &GenerationConfig::default())
            .unwrap();
        assert_eq!(reply.text, "ok");
    }

    #[test]
    fn auth_error_is_not_retried() {
        let gw = gateway(vec![Err(SendError::Auth("401".into()))], None);
        let err = gw
            .chat(&[Message::user_text("hi")], &GenerationConfig::default())
            .unwrap_err();
        assert!(matches!(err, GatewayError::Auth(_)));
    }

    #[test]
    fn exhausts_retries() {
        let gw = gateway(
            (0..4)
                .map(|_| Err(SendError::Transport("down".into())))
                .collect(),
            None,
        );
        let err = gw
            .chat(&[Message::user_text("hi")], &GenerationConfig::default())
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::ExhaustedRetries { attempts: 4, .. }
        ));
    }

    #[test]
    fn refusal_is_a_status_not_an_error() {
        let gw = gateway(
            vec![Ok(TransportReply {
                text: "blocked by safety filter".into(),
                usage: None,
                refused: true,
            })],
            None,
        );
        let reply = gw
            .chat(&[Message::user_text("hi")], &GenerationConfig::default())
            .unwrap();
        assert_eq!(reply.status, ReplyStatus::Refused);
    }

    #[test]
    fn second_identical_call_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().join("responses"));
        let gw = gateway(vec![ok_reply("once")], Some(cache));
        let messages = [Message::user_text("hi")];
        let config = GenerationConfig::default();
        let (first, hit1) = gw.cached_chat(&messages, &config).unwrap();
        let (second, hit2) = gw.cached_chat(&messages, &config).unwrap();
        assert!(!hit1);
        assert!(hit2);
        assert_eq!(first, second);
    }

    #[test]
    fn key_sensitive_to_image_bytes_and_config() {
        let config = GenerationConfig::default();
        let m1 = [Message::user(vec![
            text_part("same"),
            ContentPart::Image {
                mime: "image/jpeg".into(),
                data: vec![1],
            },
        ])];
        let m2 = [Message::user(vec![
            text_part("same"),
            ContentPart::Image {
                mime: "image/jpeg".into(),
                data: vec![2],
            },
        ])];
        assert_ne!(cache_key("e", "m", &m1, &config), cache_key("e", "m", &m2, &config));
        let warm = GenerationConfig {
            temperature: 0.5,
            ..GenerationConfig::default()
        };
        assert_ne!(cache_key("e", "m", &m1, &config), cache_key("e", "m", &m1, &warm));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn key_sensitive_to_every_semantic_field(
                text in "[a-z]{1,16}",
                endpoint_name in "[a-z]{1,8}",
                model in "[a-z]{1,8}",
                max_tokens in 1u32..4096,
            ) {
                let config = GenerationConfig::default().with_max_tokens(max_tokens);
                let messages = [Message::user_text(text.clone())];
                let base = cache_key(&endpoint_name, &model, &messages, &config);

                let other_text = [Message::user_text(format!("{text}!"))];
                prop_assert_ne!(&base, &cache_key(&endpoint_name, &model, &other_text, &config));
                prop_assert_ne!(&base, &cache_key(&format!("{endpoint_name}2"), &model, &messages, &config));
                prop_assert_ne!(&base, &cache_key(&endpoint_name, &format!("{model}2"), &messages, &config));
                let other_config = GenerationConfig::default().with_max_tokens(max_tokens + 1);
                prop_assert_ne!(&base, &cache_key(&endpoint_name, &model, &messages, &other_config));
            }
        }
    }
}
