//! Batch red-teaming harness for short-video content-appropriateness
//! moderation.
//!
//! The harness runs a two-stage tri-modal attack against multimodal chat
//! models: stage 1 elicits a rationale from keyframes, audio text, and
//! adversarial narrative blocks; stage 2 classifies from the rationale
//! alone. Outcomes feed attack-success-rate breakdowns, LLM-as-a-judge
//! scoring, and Fleiss' kappa agreement analysis.

pub mod attack_prompts;
pub mod campaign;
pub mod cli;
pub mod dataset;
pub mod gateway;
pub mod judge;
pub mod media;
pub mod messages;
pub mod metrics;
pub mod report;
pub mod templates;
