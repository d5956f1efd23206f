//! Run orchestration: the engine state machine, its bounded repair loop,
//! and the append-only audit log every transition is written to.

pub mod audit;
pub mod control;
mod engine;

pub use engine::{Engine, EngineError, RunResult, RunStatus, ASK_BUDGET};
