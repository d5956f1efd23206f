//! Prompt construction and the model-provider abstraction.
//!
//! Models are proposal generators and nothing more: this layer builds
//! role-specific prompts, sends them through a [`Provider`], and hands the
//! raw response text back to the orchestrator. It never touches the
//! workspace. Two providers exist — a live HTTP backend speaking the
//! chat-completions wire shape, and a scripted backend that replays recorded
//! responses from fixture files, which is what makes whole engine runs
//! deterministic and network-free.

mod http;
mod prompt;
mod scripted;

pub use http::{HttpProvider, HttpProviderConfig, API_KEY_ENV};
pub use prompt::{build_prompt, report_excerpt, PromptContext};
pub use scripted::ScriptedProvider;

use crate::phase::Phase;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// The prompt roles distributed across the workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    System,
    Planner,
    TestGeneration,
    Implementation,
    Repair,
    Review,
    Refactor,
}

impl PromptRole {
    pub fn name(self) -> &'static str {
        match self {
            PromptRole::System => "system",
            PromptRole::Planner => "planner",
            PromptRole::TestGeneration => "test_generation",
            PromptRole::Implementation => "implementation",
            PromptRole::Repair => "repair",
            PromptRole::Review => "review",
            PromptRole::Refactor => "refactor",
        }
    }
}

impl std::fmt::Display for PromptRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully rendered prompt: the fixed system frame plus the role-specific
/// user message, with the ids of the principles that were injected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role: PromptRole,
    pub system_text: String,
    pub user_text: String,
    pub injected_principles: Vec<String>,
}

/// Identifies one model call within a run. The scripted provider uses it as
/// the fixture lookup key, so identical keys must yield identical responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextKey {
    pub step_id: String,
    pub phase: Phase,
    pub attempt: u32,
}

impl ContextKey {
    pub fn new(step_id: &str, phase: Phase, attempt: u32) -> ContextKey {
        ContextKey { step_id: step_id.to_string(), phase, attempt }
    }

    /// Fixture file naming scheme: `{step_id}__{PHASE}__{attempt}.txt`.
    pub fn fixture_file_name(&self) -> String {
        format!("{}__{}__{}.txt", self.step_id, self.phase, self.attempt)
    }
}

impl std::fmt::Display for ContextKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(step={}, phase={}, attempt={})", self.step_id, self.phase, self.attempt)
    }
}

#[derive(Debug, Clone)]
pub struct ProviderRequest {
    pub bundle: PromptBundle,
    pub context_key: ContextKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    pub text: String,
    /// Free-form provenance for the audit trail ("scripted", model name…).
    pub provider_meta: String,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider timed out after {seconds}s")]
    Timeout { seconds: u64 },
    #[error("provider returned HTTP {status}: {body_excerpt}")]
    Http { status: u16, body_excerpt: String },
    #[error("no scripted fixture for {key}: expected file {path}")]
    FixtureMissing { key: String, path: PathBuf },
    #[error("provider transport failed: {detail}")]
    Transport { detail: String },
    #[error("API key environment variable {var} is not set")]
    MissingApiKey { var: String },
    #[error("provider response was unusable: {detail}")]
    MalformedResponse { detail: String },
}

/// One model call. Implementations must be pure with respect to the
/// workspace: no reads, no writes, no side effects beyond their own backend.
pub trait Provider {
    fn request(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;

    /// Short description for logs and audit records. Never includes secrets.
    fn describe(&self) -> String;
}
