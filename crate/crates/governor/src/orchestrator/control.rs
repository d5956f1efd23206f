//! The repair loop's termination rules, as a pure kernel.
//!
//! The engine owns prompting, gating, applying, and testing; this kernel
//! owns only the decision logic — when an attempt may begin and what its
//! outcome means. Keeping it pure makes the complete rule table checkable by
//! exhaustive enumeration, independent of providers and file systems.
//!
//! The rules, in the order the engine evaluates them each iteration:
//!
//! 1. Before prompting: if the next attempt number exceeds the cap, the loop
//!    is exhausted (`repair_cap_exhausted`).
//! 2. A proposal equivalent to any prior attempt terminates the loop
//!    (`equivalent_proposal`).
//! 3. A proposal that changes nothing terminates the loop
//!    (`no_effective_change`).
//! 4. An applied proposal whose tests pass converges the loop.
//! 5. An applied proposal whose failure signature equals the immediately
//!    preceding one terminates the loop (`repeated_signature`).
//! 6. A new failure signature — or a proposal the gates rejected — consumes
//!    the attempt and the loop continues.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    RepairCapExhausted,
    RepeatedSignature,
    NoEffectiveChange,
    EquivalentProposal,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::RepairCapExhausted => "repair_cap_exhausted",
            TerminationReason::RepeatedSignature => "repeated_signature",
            TerminationReason::NoEffectiveChange => "no_effective_change",
            TerminationReason::EquivalentProposal => "equivalent_proposal",
        }
    }
}

/// What one repair attempt amounted to, as the kernel sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttemptOutcome {
    /// Applied; all tests pass.
    Pass,
    /// Applied; failed with the same signature as the immediately preceding
    /// failure.
    SameSignature,
    /// Applied; failed with a signature not equal to the preceding one.
    NewSignature,
    /// Not applied: the proposal changes nothing.
    Noop,
    /// Not applied: the proposal is equivalent to a prior attempt.
    Equivalent,
    /// Not applied: parse failure or gate rejection. Consumes the attempt.
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopStatus {
    /// More attempts are allowed and needed.
    Pending,
    /// Tests pass; the step proceeds.
    Converged { attempts_used: u32 },
    Terminated { reason: TerminationReason, attempts_used: u32 },
}

/// Attempt accounting for one step's repair loop.
#[derive(Debug, Clone)]
pub struct LoopControl {
    cap: u32,
    next_attempt: u32,
}

impl LoopControl {
    /// `first_attempt` is normally 1; it is 2 when the GREEN proposal was
    /// rejected before application (the rejection consumed attempt 1).
    pub fn new(cap: u32, first_attempt: u32) -> LoopControl {
        LoopControl { cap, next_attempt: first_attempt.max(1) }
    }

    /// Top-of-loop check. `Ok(n)` allows attempt `n` to be prompted;
    /// `Err` means the cap is spent before prompting.
    pub fn begin(&self) -> Result<u32, TerminationReason> {
        if self.next_attempt > self.cap {
            Err(TerminationReason::RepairCapExhausted)
        } else {
            Ok(self.next_attempt)
        }
    }

    /// Attempts that have fully run (begun and resolved).
    pub fn attempts_used(&self) -> u32 {
        self.next_attempt.saturating_sub(1)
    }

    /// Record the outcome of the attempt that just ran.
    pub fn record(&mut self, outcome: AttemptOutcome) -> LoopStatus {
        let this_attempt = self.next_attempt;
        match outcome {
            AttemptOutcome::Pass => LoopStatus::Converged { attempts_used: this_attempt },
            AttemptOutcome::SameSignature => LoopStatus::Terminated {
                reason: TerminationReason::RepeatedSignature,
                attempts_used: this_attempt,
            },
            AttemptOutcome::Noop => LoopStatus::Terminated {
                reason: TerminationReason::NoEffectiveChange,
                attempts_used: this_attempt,
            },
            AttemptOutcome::Equivalent => LoopStatus::Terminated {
                reason: TerminationReason::EquivalentProposal,
                attempts_used: this_attempt,
            },
            AttemptOutcome::NewSignature | AttemptOutcome::Rejected => {
                self.next_attempt += 1;
                LoopStatus::Pending
            }
        }
    }
}

/// Drive a whole loop from a scripted outcome sequence. The simulation
/// mirrors the engine exactly: top-of-loop cap check, then one outcome per
/// allowed attempt; a trailing cap check runs even when the script is
/// exhausted, because cap exhaustion is decided before prompting.
pub fn evaluate_outcomes(cap: u32, first_attempt: u32, outcomes: &[AttemptOutcome]) -> LoopStatus {
    let mut control = LoopControl::new(cap, first_attempt);
    for outcome in outcomes {
        if let Err(reason) = control.begin() {
            return LoopStatus::Terminated { reason, attempts_used: control.attempts_used() };
        }
        match control.record(*outcome) {
            LoopStatus::Pending => continue,
            resolved => return resolved,
        }
    }
    if let Err(reason) = control.begin() {
        return LoopStatus::Terminated { reason, attempts_used: control.attempts_used() };
    }
    LoopStatus::Pending
}
