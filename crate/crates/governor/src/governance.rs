//! The gate pipeline every proposal must clear before any file is touched.
//!
//! Four gates run in a fixed order — structural, policy, phase, approval —
//! and the first rejection stops the pipeline. Rejections are verdicts, not
//! errors: the orchestrator records the [`GateReport`] and decides what the
//! rejection costs (a repair attempt, a re-ask), so a hostile or confused
//! proposal can never mutate the workspace and never crashes the run.
//!
//! Every gate is a pure check over the proposal plus read-only context.
//! Interactive approval is the one place a human enters the loop; the
//! terminal prompt is abstracted behind [`ApprovalDecider`] so the pipeline
//! stays testable.

use crate::diff::unified_diff;
use crate::glob::GlobSet;
use crate::phase::Phase;
use crate::plan::PlanStep;
use crate::proposal::{check_change_path, ChangeAction, PatchProposal, ProposalRole};
use crate::workspace::Workspace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;

/// Paths no proposal may ever touch: VCS metadata, CI config, and anything
/// hidden. The engine's run directory is appended on top of these.
pub const DEFAULT_DENIED_GLOBS: &[&str] = &[".git/**", ".github/**", "**/.*", "**/.*/**"];

/// What counts as a test file when the project doesn't say.
pub const DEFAULT_TEST_GLOBS: &[&str] = &["tests/**"];

pub const DEFAULT_REPAIR_CAP: u32 = 3;
pub const DEFAULT_RULES_MAX_CHANGES: usize = 10;
pub const DEFAULT_RULES_MAX_BYTES: usize = 100 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalMode {
    #[default]
    Auto,
    Rules,
    Interactive,
}

/// Everything the gates need to know about what is allowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub workspace_root: PathBuf,
    #[serde(default = "default_denied_globs")]
    pub denied_globs: Vec<String>,
    #[serde(default = "default_test_globs")]
    pub test_globs: Vec<String>,
    #[serde(default)]
    pub approval_mode: ApprovalMode,
    #[serde(default = "default_repair_cap")]
    pub repair_cap: u32,
    #[serde(default = "default_rules_max_changes")]
    pub rules_max_changes: usize,
    #[serde(default = "default_rules_max_bytes")]
    pub rules_max_bytes: usize,
}

fn default_denied_globs() -> Vec<String> {
    DEFAULT_DENIED_GLOBS.iter().map(|s| s.to_string()).collect()
}

fn default_test_globs() -> Vec<String> {
    DEFAULT_TEST_GLOBS.iter().map(|s| s.to_string()).collect()
}

fn default_repair_cap() -> u32 {
    DEFAULT_REPAIR_CAP
}

fn default_rules_max_changes() -> usize {
    DEFAULT_RULES_MAX_CHANGES
}

fn default_rules_max_bytes() -> usize {
    DEFAULT_RULES_MAX_BYTES
}

impl PolicyConfig {
    /// Defaults rooted at `workspace_root`, with the given run directory
    /// already protected.
    pub fn for_root(workspace_root: impl Into<PathBuf>, run_dir: &str) -> PolicyConfig {
        let mut policy = PolicyConfig {
            workspace_root: workspace_root.into(),
            denied_globs: default_denied_globs(),
            test_globs: default_test_globs(),
            approval_mode: ApprovalMode::Auto,
            repair_cap: DEFAULT_REPAIR_CAP,
            rules_max_changes: DEFAULT_RULES_MAX_CHANGES,
            rules_max_bytes: DEFAULT_RULES_MAX_BYTES,
        };
        policy.ensure_run_dir_denied(run_dir);
        policy
    }

    /// The engine must never accept a proposal that edits its own audit
    /// trail; the run directory is force-added to the deny list.
    pub fn ensure_run_dir_denied(&mut self, run_dir: &str) {
        let run_dir = run_dir.trim_end_matches('/');
        if run_dir.is_empty() {
            return;
        }
        for pattern in [run_dir.to_string(), format!("{run_dir}/**")] {
            if !self.denied_globs.iter().any(|g| g == &pattern) {
                self.denied_globs.push(pattern);
            }
        }
    }

    pub fn denied_set(&self) -> Result<GlobSet, crate::glob::GlobError> {
        GlobSet::new(&self.denied_globs)
    }

    pub fn test_set(&self) -> Result<GlobSet, crate::glob::GlobError> {
        GlobSet::new(&self.test_globs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Structural,
    Policy,
    Phase,
    Approval,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Structural => "structural",
            GateKind::Policy => "policy",
            GateKind::Phase => "phase",
            GateKind::Approval => "approval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateResult {
    pub gate: GateKind,
    pub verdict: Verdict,
    pub detail: String,
}

/// The ordered outcome of one trip through the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub proposal_id: String,
    pub results: Vec<GateResult>,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.results.len() == 4 && self.results.iter().all(|r| r.verdict == Verdict::Pass)
    }

    pub fn first_reject(&self) -> Option<&GateResult> {
        self.results.iter().find(|r| r.verdict == Verdict::Reject)
    }

    /// One line suitable for progress output: either "all gates passed" or
    /// which gate rejected and why.
    pub fn summary(&self) -> String {
        match self.first_reject() {
            None => "all gates passed".to_string(),
            Some(r) => format!("rejected at {} gate: {}", r.gate.name(), r.detail),
        }
    }
}

/// Answers the interactive-approval question. The CLI implements this over
/// the terminal; tests inject scripted deciders.
pub trait ApprovalDecider {
    /// `diff` is the rendered unified diff of every change in the proposal.
    fn decide(&mut self, proposal: &PatchProposal, diff: &str) -> bool;
}

/// Gate 1: the proposal's own invariants, re-checked from scratch.
///
/// Parsing already enforces these, but the gate trusts nothing upstream —
/// a proposal constructed in-process gets the same scrutiny as one that
/// arrived over the wire.
pub fn gate_structural(proposal: &PatchProposal) -> Result<(), String> {
    if proposal.proposal_id.trim().is_empty() {
        return Err("proposal_id is empty".to_string());
    }
    if proposal.step_id.trim().is_empty() {
        return Err("step_id is empty".to_string());
    }
    if proposal.changes.is_empty() {
        return Err("proposal contains no changes".to_string());
    }
    let mut seen = BTreeSet::new();
    for change in &proposal.changes {
        check_change_path(&change.path).map_err(|detail| format!("path {:?}: {detail}", change.path))?;
        if !seen.insert(change.path.as_str()) {
            return Err(format!("path {:?} appears in more than one change", change.path));
        }
        match change.action {
            ChangeAction::Create => match change.new_content.as_deref() {
                None => return Err(format!("create change for {:?} has no content", change.path)),
                Some("") => return Err(format!("empty create content for {:?}", change.path)),
                Some(_) => {}
            },
            ChangeAction::Modify => {
                if change.new_content.is_none() {
                    return Err(format!("modify change for {:?} has no content", change.path));
                }
            }
            ChangeAction::Delete => {
                if change.new_content.is_some() {
                    return Err(format!("delete change for {:?} carries content", change.path));
                }
            }
        }
    }
    Ok(())
}

/// Gate 2: policy enforcement — denied paths, root confinement, and deletes
/// that target files which actually exist.
pub fn gate_policy(
    proposal: &PatchProposal,
    policy: &PolicyConfig,
    workspace: &Workspace,
) -> Result<(), String> {
    let denied = policy
        .denied_set()
        .map_err(|e| format!("policy denied_globs are unusable: {e}"))?;
    for change in &proposal.changes {
        // Root confinement: the path grammar forbids absolute paths and
        // traversal, so a syntactically valid path cannot escape.
        check_change_path(&change.path).map_err(|detail| format!("path {:?}: {detail}", change.path))?;
        if let Some(pattern) = denied.first_match(&change.path) {
            return Err(format!("path {:?} is denied by policy glob {pattern:?}", change.path));
        }
        if change.action == ChangeAction::Delete && !workspace.file_exists(&change.path) {
            return Err(format!("delete targets {:?}, which does not exist", change.path));
        }
    }
    Ok(())
}

/// Gate 3: phase consistency — each phase may only touch the file classes
/// its role owns.
///
/// * RED writes tests and only tests: every path must match both the global
///   test globs and the step's declared test scope.
/// * GREEN and REPAIR write production code and never tests: every path must
///   match the step's production scope and must not be a test file.
/// * REFACTOR may reshape production code anywhere policy allows, but test
///   edits stay forbidden — the tests are the contract being preserved.
pub fn gate_phase(
    proposal: &PatchProposal,
    phase: Phase,
    step: &PlanStep,
    policy: &PolicyConfig,
) -> Result<(), String> {
    let expected_role = match phase {
        Phase::Red => ProposalRole::TestGeneration,
        Phase::Green => ProposalRole::Implementation,
        Phase::Repair => ProposalRole::Repair,
        Phase::Refactor => ProposalRole::Refactor,
        other => return Err(format!("phase {other} accepts no proposals")),
    };
    if proposal.role != expected_role {
        return Err(format!("role {} is not allowed in phase {phase}", proposal.role));
    }

    let tests = policy
        .test_set()
        .map_err(|e| format!("policy test_globs are unusable: {e}"))?;
    let test_scope = GlobSet::new(&step.test_scope)
        .map_err(|e| format!("step {:?} test_scope is unusable: {e}", step.step_id))?;
    let production_scope = GlobSet::new(&step.production_scope)
        .map_err(|e| format!("step {:?} production_scope is unusable: {e}", step.step_id))?;

    for change in &proposal.changes {
        let path = change.path.as_str();
        match phase {
            Phase::Red => {
                if !tests.is_match(path) {
                    return Err(format!(
                        "phase RED (role {}): path {path:?} is not a test file",
                        proposal.role
                    ));
                }
                if !test_scope.is_match(path) {
                    return Err(format!(
                        "phase RED (role {}): path {path:?} is outside step {:?} test_scope",
                        proposal.role, step.step_id
                    ));
                }
            }
            Phase::Green | Phase::Repair => {
                if tests.is_match(path) {
                    return Err(format!(
                        "phase {phase} (role {}): path {path:?} is a test file",
                        proposal.role
                    ));
                }
                if !production_scope.is_match(path) {
                    return Err(format!(
                        "phase {phase} (role {}): path {path:?} is outside step {:?} production_scope",
                        proposal.role, step.step_id
                    ));
                }
            }
            Phase::Refactor => {
                if tests.is_match(path) {
                    return Err(format!(
                        "phase REFACTOR (role {}): path {path:?} is a test file",
                        proposal.role
                    ));
                }
            }
            _ => unreachable!("non-proposal phases rejected above"),
        }
    }
    Ok(())
}

/// Gate 4: approval.
///
/// `auto` waves everything through; `rules` applies size limits; and
/// `interactive` renders a diff and asks the injected decider.
pub fn gate_approval(
    proposal: &PatchProposal,
    policy: &PolicyConfig,
    workspace: &Workspace,
    decider: Option<&mut dyn ApprovalDecider>,
) -> Result<(), String> {
    match policy.approval_mode {
        ApprovalMode::Auto => Ok(()),
        ApprovalMode::Rules => {
            if proposal.changes.len() > policy.rules_max_changes {
                return Err(format!(
                    "change count {} exceeds {}",
                    proposal.changes.len(),
                    policy.rules_max_changes
                ));
            }
            let total_bytes: usize = proposal
                .changes
                .iter()
                .map(|c| c.new_content.as_deref().map_or(0, str::len))
                .sum();
            if total_bytes > policy.rules_max_bytes {
                return Err(format!(
                    "changed bytes {total_bytes} exceed {}",
                    policy.rules_max_bytes
                ));
            }
            Ok(())
        }
        ApprovalMode::Interactive => {
            let Some(decider) = decider else {
                return Err("interactive approval requested but no operator channel is attached".to_string());
            };
            let diff = render_proposal_diff(proposal, workspace);
            if decider.decide(proposal, &diff) {
                Ok(())
            } else {
                Err("operator rejected".to_string())
            }
        }
    }
}

/// Unified diff of every change against the current workspace contents.
pub fn render_proposal_diff(proposal: &PatchProposal, workspace: &Workspace) -> String {
    let mut out = String::new();
    for change in &proposal.changes {
        let old = workspace
            .read_file(&change.path)
            .ok()
            .flatten()
            .map(|bytes| String::from_utf8_lossy(&bytes).into_owned())
            .unwrap_or_default();
        let new = change.new_content.clone().unwrap_or_default();
        out.push_str(&unified_diff(&change.path, &old, &new));
    }
    out
}

/// Run the full pipeline in order, stopping at the first rejection.
///
/// The report is pure data — the caller audits it before acting on it.
pub fn run_gates(
    proposal: &PatchProposal,
    phase: Phase,
    step: &PlanStep,
    policy: &PolicyConfig,
    workspace: &Workspace,
    mut decider: Option<&mut dyn ApprovalDecider>,
) -> GateReport {
    let mut report = GateReport { proposal_id: proposal.proposal_id.clone(), results: Vec::new() };
    let gates: [(GateKind, Box<dyn FnOnce() -> Result<(), String>>); 4] = [
        (GateKind::Structural, Box::new(|| gate_structural(proposal))),
        (GateKind::Policy, Box::new(|| gate_policy(proposal, policy, workspace))),
        (GateKind::Phase, Box::new(|| gate_phase(proposal, phase, step, policy))),
        (
            GateKind::Approval,
            Box::new(|| gate_approval(proposal, policy, workspace, decider.take())),
        ),
    ];
    for (gate, check) in gates {
        match check() {
            Ok(()) => report.results.push(GateResult {
                gate,
                verdict: Verdict::Pass,
                detail: "ok".to_string(),
            }),
            Err(detail) => {
                report.results.push(GateResult { gate, verdict: Verdict::Reject, detail });
                break;
            }
        }
    }
    report
}
