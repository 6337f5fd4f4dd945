//! Completion-provider seam used by semantic generation, arbitration and diagnosis.
//!
//! The engine never talks to a network itself; anything implementing
//! [`CompletionProvider`] can be plugged in. Deterministic template
//! providers are the default everywhere.

use serde_json::Value;
use thiserror::Error;

/// Which of the two model roles a request serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Rule-bank summarization; output capped.
    Primary,
    /// Diagnosis and arbitration; no output cap.
    Secondary,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("provider transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider response rejected: {0}")]
    Rejected(String),
}

pub trait CompletionProvider: Send + Sync {
    /// Sends one JSON prompt payload and returns the text answer.
    fn complete(&self, role: Role, payload: &Value) -> Result<String, ProviderError>;
}
