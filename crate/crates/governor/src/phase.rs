//! Workflow phases.
//!
//! The orchestrator is a state machine over these phases; everything else in
//! the engine (prompt selection, gate rules, audit payloads, fixture keys)
//! refers to the phase by its canonical SCREAMING_SNAKE_CASE name.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A phase of the governed workflow.
///
/// Transitions are owned by the orchestrator; no other module changes phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    /// Decomposing the requirement into ordered steps.
    Planning,
    /// Producing a failing test for the current step.
    Red,
    /// Producing the minimal implementation that satisfies the failing test.
    Green,
    /// Bounded, signature-deduplicated fix loop after a failing GREEN.
    Repair,
    /// Optional behavior-preserving cleanup, rolled back on regression.
    Refactor,
    /// Current step finished; the engine advances to the next step.
    StepDone,
    /// All steps finished successfully.
    Done,
    /// The run stopped at an unrecoverable point.
    Failed,
}

impl Phase {
    /// Canonical name, identical to the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            Phase::Planning => "PLANNING",
            Phase::Red => "RED",
            Phase::Green => "GREEN",
            Phase::Repair => "REPAIR",
            Phase::Refactor => "REFACTOR",
            Phase::StepDone => "STEP_DONE",
            Phase::Done => "DONE",
            Phase::Failed => "FAILED",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
