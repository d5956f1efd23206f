//! Structured patch proposals — the only channel from a model to the
//! workspace.
//!
//! A proposal is a set of whole-file changes (full replacement content, not
//! diffs: whole files survive nondeterministic model output where patch
//! contexts do not). This module owns the wire format, the normalization used
//! to compare attempts, and the two loop-control predicates:
//!
//! * [`is_equivalent`] — normalized textual equality, comments preserved. A
//!   sound under-approximation of "semantically equivalent": it never merges
//!   two genuinely different repairs.
//! * [`is_noop`] — would applying the proposal leave every targeted file
//!   byte-identical?

use crate::fenced;
use crate::workspace::Workspace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// What a change does to its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeAction {
    Create,
    Modify,
    Delete,
}

impl fmt::Display for ChangeAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeAction::Create => "create",
            ChangeAction::Modify => "modify",
            ChangeAction::Delete => "delete",
        })
    }
}

/// One whole-file change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileChange {
    /// Workspace-relative, `/`-separated, no traversal.
    pub path: String,
    pub action: ChangeAction,
    /// Full replacement text; absent for deletes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_content: Option<String>,
}

/// The proposal-producing roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalRole {
    TestGeneration,
    Implementation,
    Repair,
    Refactor,
}

impl fmt::Display for ProposalRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalRole::TestGeneration => "test_generation",
            ProposalRole::Implementation => "implementation",
            ProposalRole::Repair => "repair",
            ProposalRole::Refactor => "refactor",
        })
    }
}

/// A parsed patch proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchProposal {
    pub proposal_id: String,
    pub role: ProposalRole,
    pub step_id: String,
    pub rationale: String,
    pub changes: Vec<FileChange>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProposalError {
    #[error("malformed proposal: {detail}")]
    Malformed { detail: String },
    #[error("role mismatch: expected {expected}, proposal declares {declared}")]
    RoleMismatch { expected: ProposalRole, declared: ProposalRole },
}

/// Reject `path` unless it is relative, `/`-separated, and traversal-free.
///
/// Shared with the structural gate, which re-validates proposals built by any
/// other route.
pub fn check_change_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("change path is empty".to_string());
    }
    if path.starts_with('/') {
        return Err(format!("change path {path:?} is absolute"));
    }
    if path.contains('\\') {
        return Err(format!("change path {path:?} uses backslash separators"));
    }
    for component in path.split('/') {
        if component.is_empty() {
            return Err(format!("change path {path:?} has an empty component"));
        }
        if component == "." || component == ".." {
            return Err(format!("change path {path:?} contains path traversal"));
        }
    }
    Ok(())
}

/// Extract and validate a proposal from a raw model response.
///
/// The structured block is the first fenced JSON block in the response;
/// surrounding prose is ignored. The declared role must equal the role the
/// engine asked for.
pub fn parse_proposal(raw: &str, expected_role: ProposalRole) -> Result<PatchProposal, ProposalError> {
    let malformed = |detail: String| ProposalError::Malformed { detail };

    let block = fenced::extract_block(raw).map_err(|e| malformed(e.to_string()))?;
    let proposal: PatchProposal =
        serde_json::from_str(&block).map_err(|e| malformed(e.to_string()))?;

    if proposal.role != expected_role {
        return Err(ProposalError::RoleMismatch { expected: expected_role, declared: proposal.role });
    }
    if proposal.changes.is_empty() {
        return Err(malformed("proposal has no changes".to_string()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for change in &proposal.changes {
        check_change_path(&change.path).map_err(malformed)?;
        if !seen.insert(change.path.as_str()) {
            return Err(malformed(format!("two changes target the same path {:?}", change.path)));
        }
    }
    Ok(proposal)
}

/// A change after normalization; deletes become a distinguished tombstone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizedChange {
    Create(String),
    Modify(String),
    Delete,
}

/// Canonical text form used for attempt comparison.
///
/// Line endings unify to LF, trailing whitespace is stripped per line, runs
/// of blank lines collapse to one, trailing blank lines drop so the file ends
/// with exactly one newline. Comments are ordinary text and survive — two
/// proposals differing in a comment's wording are *not* equivalent.
pub fn canonical_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut kept: Vec<&str> = Vec::new();
    let mut previous_blank = false;
    for line in unified.split('\n') {
        let line = line.trim_end();
        let blank = line.is_empty();
        if blank && previous_blank {
            continue;
        }
        kept.push(line);
        previous_blank = blank;
    }
    while kept.last() == Some(&"") {
        kept.pop();
    }
    let mut text = kept.join("\n");
    text.push('\n');
    text
}

/// Normalized change map: path → canonical content (or tombstone).
pub fn normalize_changes(proposal: &PatchProposal) -> BTreeMap<String, NormalizedChange> {
    proposal
        .changes
        .iter()
        .map(|change| {
            let normalized = match change.action {
                ChangeAction::Delete => NormalizedChange::Delete,
                ChangeAction::Create => {
                    NormalizedChange::Create(canonical_text(change.new_content.as_deref().unwrap_or("")))
                }
                ChangeAction::Modify => {
                    NormalizedChange::Modify(canonical_text(change.new_content.as_deref().unwrap_or("")))
                }
            };
            (change.path.clone(), normalized)
        })
        .collect()
}

/// Whether two proposals are equivalent attempts: same path set, same action
/// per path, same canonical text.
pub fn is_equivalent(a: &PatchProposal, b: &PatchProposal) -> bool {
    normalize_changes(a) == normalize_changes(b)
}

/// Whether applying the proposal would change nothing: every create/modify
/// matches the current bytes exactly and every delete targets a missing file.
///
/// Unreadable files count as "would change" — the problem then surfaces at
/// apply time with a real error instead of being masked here.
pub fn is_noop(proposal: &PatchProposal, workspace: &Workspace) -> bool {
    proposal.changes.iter().all(|change| match change.action {
        ChangeAction::Delete => !workspace.file_exists(&change.path),
        ChangeAction::Create | ChangeAction::Modify => {
            match workspace.read_file(&change.path) {
                Ok(Some(current)) => current == change.new_content.as_deref().unwrap_or("").as_bytes(),
                _ => false,
            }
        }
    })
}
