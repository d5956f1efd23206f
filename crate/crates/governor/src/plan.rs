//! The planner's decomposition of a specification into ordered steps.
//!
//! A plan arrives as free text from the planner role with a fenced JSON
//! block inside; [`parse_plan`] extracts and checks it, and [`validate_plan`]
//! then proves every step's file scopes are usable: inside the workspace,
//! clear of policy-denied paths, and disjoint between tests and production.
//! Parsing failures are recoverable (the orchestrator re-asks the planner a
//! bounded number of times); validation failures are not, because they mean
//! the plan cannot be executed under the configured policy.
//!
//! Plans are immutable once validated: v1 has exactly one step kind (add a
//! behavior, expecting FAIL then PASS) and never revises a plan mid-run.

use crate::fenced;
use crate::glob::GlobSet;
use crate::governance::PolicyConfig;
use crate::workspace::Workspace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// One point on a step's expected test-outcome trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExpectedOutcome {
    Fail,
    Pass,
}

/// One unit of planned work: a behavior to add, the files its tests may
/// live in, and the files its implementation may touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub step_id: String,
    pub description: String,
    /// One sentence of expected behavior, quoted back to prompts.
    pub target_behavior: String,
    /// Always exactly [FAIL, PASS] in v1: the test must fail first, then
    /// pass once implemented.
    pub expected_outcomes: Vec<ExpectedOutcome>,
    /// Path globs the RED phase may create or modify.
    pub test_scope: Vec<String>,
    /// Path globs the GREEN phase may create or modify.
    pub production_scope: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub plan_id: String,
    pub spec_summary: String,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    /// The planner's response could not be turned into a well-formed plan.
    /// Recoverable: costs one re-ask.
    #[error("malformed plan: {detail}")]
    Malformed { detail: String },
    /// A scope glob escapes the workspace or collides with denied paths.
    #[error("scope violation in step {step_id:?}: {detail}")]
    ScopeViolation { step_id: String, detail: String },
    /// A step's test and production scopes can match the same file.
    #[error("scope overlap in step {step_id:?}: {path:?} matches both test_scope and production_scope")]
    ScopeOverlap { step_id: String, path: String },
}

/// Extract and structurally check a plan from a planner response.
///
/// Free text around the fenced block is ignored. Every failure maps to
/// [`PlanError::Malformed`] so the orchestrator can treat them uniformly.
pub fn parse_plan(raw: &str) -> Result<Plan, PlanError> {
    let block = fenced::extract_block(raw)
        .map_err(|e| PlanError::Malformed { detail: e.to_string() })?;
    let plan: Plan = serde_json::from_str(&block)
        .map_err(|e| PlanError::Malformed { detail: e.to_string() })?;

    if plan.plan_id.trim().is_empty() {
        return Err(PlanError::Malformed { detail: "plan_id is empty".to_string() });
    }
    if plan.steps.is_empty() {
        return Err(PlanError::Malformed { detail: "plan has no steps".to_string() });
    }
    let mut seen = BTreeSet::new();
    for step in &plan.steps {
        if step.step_id.trim().is_empty() {
            return Err(PlanError::Malformed { detail: "a step has an empty step_id".to_string() });
        }
        if !seen.insert(step.step_id.as_str()) {
            return Err(PlanError::Malformed {
                detail: format!("duplicate step_id {:?}", step.step_id),
            });
        }
        if step.expected_outcomes != [ExpectedOutcome::Fail, ExpectedOutcome::Pass] {
            return Err(PlanError::Malformed {
                detail: format!(
                    "step {:?}: expected_outcomes must be exactly [FAIL, PASS]",
                    step.step_id
                ),
            });
        }
        if step.test_scope.is_empty() {
            return Err(PlanError::Malformed {
                detail: format!("step {:?}: test_scope is empty", step.step_id),
            });
        }
        if step.production_scope.is_empty() {
            return Err(PlanError::Malformed {
                detail: format!("step {:?}: production_scope is empty", step.step_id),
            });
        }
    }
    Ok(plan)
}

/// Pretty JSON with a trailing newline — the on-disk `plan.json` format.
pub fn serialize_plan(plan: &Plan) -> String {
    let mut text = serde_json::to_string_pretty(plan).expect("plans always serialize");
    text.push('\n');
    text
}

/// Prove the plan's scopes are executable under `policy`.
///
/// Glob disjointness is decided by expansion, not algebra: the candidate set
/// is every currently tracked file plus probe paths derived from each
/// scope's literal prefix (the prefix itself, and one- and two-component
/// extensions of it), which stands in for files the plan will create.
pub fn validate_plan(
    plan: &Plan,
    policy: &PolicyConfig,
    workspace: &Workspace,
) -> Result<(), PlanError> {
    let denied = policy.denied_set().map_err(|e| PlanError::ScopeViolation {
        step_id: "*".to_string(),
        detail: format!("policy denied_globs are unusable: {e}"),
    })?;

    for step in &plan.steps {
        let violation = |detail: String| PlanError::ScopeViolation {
            step_id: step.step_id.clone(),
            detail,
        };

        for pattern in step.test_scope.iter().chain(&step.production_scope) {
            if pattern.starts_with('/') || pattern.contains('\\') {
                return Err(violation(format!(
                    "scope glob {pattern:?} is not a relative path inside the workspace"
                )));
            }
            if pattern.split('/').any(|c| c == "..") {
                return Err(violation(format!("scope glob {pattern:?} escapes the workspace root")));
            }
        }

        let test_scope = GlobSet::new(&step.test_scope)
            .map_err(|e| violation(format!("test_scope glob is unusable: {e}")))?;
        let production_scope = GlobSet::new(&step.production_scope)
            .map_err(|e| violation(format!("production_scope glob is unusable: {e}")))?;

        let candidates = candidate_paths(workspace, &[&test_scope, &production_scope]);

        for path in &candidates {
            if let Some(denied_pattern) = denied.first_match(path) {
                let in_tests = test_scope.is_match(path);
                if in_tests || production_scope.is_match(path) {
                    let which = if in_tests { "test_scope" } else { "production_scope" };
                    return Err(violation(format!(
                        "{which} can reach {path:?}, which policy denies via {denied_pattern:?}"
                    )));
                }
            }
        }

        for path in &candidates {
            if test_scope.is_match(path) && production_scope.is_match(path) {
                return Err(PlanError::ScopeOverlap {
                    step_id: step.step_id.clone(),
                    path: path.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Paths the scope checks are evaluated against: the tracked tree plus
/// probes standing in for yet-to-be-created files under each literal prefix.
fn candidate_paths(workspace: &Workspace, scopes: &[&GlobSet]) -> BTreeSet<String> {
    let mut candidates: BTreeSet<String> = workspace.tracked_paths().into_iter().collect();
    for set in scopes {
        for prefix in set.literal_prefixes() {
            if prefix.is_empty() {
                candidates.insert("__probe__".to_string());
                candidates.insert("__probe__/__probe__".to_string());
            } else {
                candidates.insert(prefix.clone());
                candidates.insert(format!("{prefix}/__probe__"));
                candidates.insert(format!("{prefix}/__probe__/__probe__"));
            }
        }
    }
    candidates
}
