//! Governed TDD orchestration engine.
//!
//! Large language models act purely as proposal generators here: every change
//! they suggest arrives as a structured patch proposal, and a deterministic
//! engine decides what actually happens. The engine enforces the classical
//! Red→Green→Refactor discipline as a runtime protocol:
//!
//! * a planner decomposes a requirement into ordered steps, each expected to
//!   go FAIL → PASS;
//! * the RED phase only accepts test changes that produce at least one new
//!   failing test;
//! * the GREEN phase applies implementation patches and, on failure, enters a
//!   bounded repair loop deduplicated by failure signatures;
//! * REFACTOR is optional, gated against test edits, and rolled back
//!   automatically if the suite regresses.
//!
//! Proposals pass a fixed gate pipeline (structural → policy → phase →
//! approval) before any file is touched; all mutations are applied atomically
//! by the single workspace writer; every event lands in an append-only JSONL
//! audit log that is byte-reproducible for scripted runs.
//!
//! Module map:
//!
//! * [`manifesto`] — the machine-readable TDD principles that parameterize
//!   prompts and gates
//! * [`plan`] / [`proposal`] — the structured formats models must produce
//! * [`governance`] — the gate pipeline
//! * [`workspace`] — atomic apply, snapshot, rollback, hash tree
//! * [`testrun`] — sandboxed test execution, report parsing, failure
//!   signatures
//! * [`agents`] — prompt construction and the provider abstraction (scripted
//!   replay and HTTP)
//! * [`orchestrator`] — the phase state machine and audit trail
//! * [`config`] / [`cli`] — operator surface

pub mod agents;
pub mod cli;
pub mod config;
pub mod diff;
pub mod fenced;
pub mod glob;
pub mod governance;
pub mod manifesto;
pub mod orchestrator;
pub mod phase;
pub mod plan;
pub mod proposal;
pub mod testrun;
pub mod workspace;

#[cfg(test)]
pub(crate) mod testkit;
