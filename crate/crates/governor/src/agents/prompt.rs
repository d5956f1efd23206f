//! Role-specific prompt templates.
//!
//! Every bundle shares one system frame — who the model is, the governance
//! invariants it operates under, and the structured-output contract — and
//! differs only in the role's phase-purity rule, the injected principles,
//! and the user message. Construction is pure: identical inputs produce a
//! byte-identical [`PromptBundle`], which the scripted provider and the
//! determinism guarantee both rely on.

use super::{PromptBundle, PromptRole};
use crate::manifesto::{render_constraints, select_principles, Manifesto};
use crate::phase::Phase;
use crate::plan::PlanStep;
use crate::testrun::{CaseOutcome, FailureSignature, TestReport};

/// Everything phase-specific a template can draw on. Fields irrelevant to
/// the requested role are simply ignored.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub phase: Phase,
    pub attempt: u32,
    /// The specification text (planner role).
    pub spec_text: Option<&'a str>,
    /// The latest test report (implementation and repair roles).
    pub report: Option<&'a TestReport>,
    /// The current failure signature (repair role).
    pub signature: Option<&'a FailureSignature>,
    /// Rendered proposal diff (review role).
    pub diff: Option<&'a str>,
    /// Maximum number of principles to inject.
    pub principle_budget: usize,
}

impl<'a> PromptContext<'a> {
    pub fn bare(phase: Phase, attempt: u32, principle_budget: usize) -> PromptContext<'a> {
        PromptContext {
            phase,
            attempt,
            spec_text: None,
            report: None,
            signature: None,
            diff: None,
            principle_budget,
        }
    }
}

/// Build the prompt for one role. `step` is required for every role except
/// the planner and the bare system frame.
pub fn build_prompt(
    role: PromptRole,
    step: Option<&PlanStep>,
    manifesto: &Manifesto,
    ctx: &PromptContext,
) -> PromptBundle {
    let selection_phase = match role {
        PromptRole::Planner => Phase::Planning,
        PromptRole::TestGeneration => Phase::Red,
        PromptRole::Implementation => Phase::Green,
        PromptRole::Repair => Phase::Repair,
        PromptRole::Refactor => Phase::Refactor,
        PromptRole::Review | PromptRole::System => ctx.phase,
    };
    let principles = select_principles(manifesto, selection_phase, ctx.principle_budget);
    let injected_principles: Vec<String> = principles.iter().map(|p| p.id.clone()).collect();

    let system_text = system_frame(role, &render_constraints(&principles));
    let user_text = user_message(role, step, ctx);

    PromptBundle { role, system_text, user_text, injected_principles }
}

/// The invariants block and output contract shared by all roles.
fn system_frame(role: PromptRole, rendered_principles: &str) -> String {
    let purity = match role {
        PromptRole::System => "Operate only within the phase the engine announces.",
        PromptRole::Planner => {
            "You produce the plan and nothing else. You never propose file changes."
        }
        PromptRole::TestGeneration => {
            "You write or modify TEST files only. Production code is out of bounds in this phase."
        }
        PromptRole::Implementation => {
            "You modify PRODUCTION files only. Test files are the contract and are read-only."
        }
        PromptRole::Repair => {
            "You modify PRODUCTION files only, with minimal, localized corrections. Test files are read-only."
        }
        PromptRole::Review => {
            "You judge the proposal in front of you. You never produce file changes, and production edits during test review are prohibited."
        }
        PromptRole::Refactor => {
            "You improve internal design without changing observable behavior. Test files are untouchable; they define the behavior you must preserve."
        }
    };

    let output_contract = match role {
        PromptRole::Planner => PLAN_CONTRACT,
        PromptRole::Review => REVIEW_CONTRACT,
        _ => PROPOSAL_CONTRACT,
    };

    let mut text = format!(
        "You are the {role} role inside a governed test-driven development loop.\n\
         \n\
         ## Governance invariants\n\
         - You propose; you never apply. A deterministic engine validates every proposal \
         through structural, policy, phase, and approval gates before any file changes happen.\n\
         - {purity}\n\
         - Stay inside the file scopes declared for the current step; paths outside them are rejected.\n\
         - Proposals that change nothing, or that repeat an earlier equivalent attempt, are rejected.\n\
         \n\
         ## Output contract\n\
         {output_contract}\n"
    );
    if !rendered_principles.is_empty() {
        text.push_str("\n## Principles for this phase\n");
        text.push_str(rendered_principles);
    }
    text
}

const PROPOSAL_CONTRACT: &str = "Respond with exactly one fenced ```json block containing a single patch-proposal object:\n\
{\"proposal_id\": string, \"role\": string, \"step_id\": string, \"rationale\": string, \"changes\": [{\"path\": workspace-relative path, \"action\": \"create\"|\"modify\"|\"delete\", \"new_content\": string or null}]}\n\
new_content is the COMPLETE new file text — never a fragment, never a diff. Delete changes carry no content. Text outside the fenced block is ignored.";

const PLAN_CONTRACT: &str = "Respond with exactly one fenced ```json block containing a single plan object:\n\
{\"plan_id\": string, \"spec_summary\": string, \"steps\": [{\"step_id\": string, \"description\": string, \"target_behavior\": one sentence, \"expected_outcomes\": [\"FAIL\", \"PASS\"], \"test_scope\": [path-glob], \"production_scope\": [path-glob]}]}\n\
Steps are executed in order. Each step adds exactly one behavior whose new tests must FAIL before implementation and PASS after. test_scope and production_scope must not overlap. Text outside the fenced block is ignored.";

const REVIEW_CONTRACT: &str = "Respond with exactly one fenced ```json block containing {\"verdict\": \"approve\"|\"reject\", \"reason\": string}. Text outside the fenced block is ignored.";

fn user_message(role: PromptRole, step: Option<&PlanStep>, ctx: &PromptContext) -> String {
    match role {
        PromptRole::System => String::new(),
        PromptRole::Planner => {
            let spec = ctx.spec_text.unwrap_or("");
            format!(
                "## Specification\n{spec}\n\n\
                 Decompose this specification into ordered steps with expected test outcomes: \
                 every step's new tests must FAIL first and PASS once implemented. \
                 Keep steps small — one behavior each — and declare which files each step's \
                 tests and implementation may touch."
            )
        }
        PromptRole::TestGeneration => {
            let step = step.expect("test_generation needs a step");
            format!(
                "## Step {id}: {desc}\n\
                 Target behavior: {behavior}\n\n\
                 Write failing tests for exactly this behavior. Restrict output to the test \
                 files matching: {scope}.\n\
                 Assertions must be meaningful and aligned with the specification — assert \
                 observable behavior, not tautologies. The tests must fail against the \
                 current implementation, because the behavior does not exist yet.",
                id = step.step_id,
                desc = step.description,
                behavior = step.target_behavior,
                scope = step.test_scope.join(", "),
            )
        }
        PromptRole::Implementation => {
            let step = step.expect("implementation needs a step");
            let excerpt = ctx.report.map(|r| report_excerpt(r, 10)).unwrap_or_default();
            format!(
                "## Step {id}: {desc}\n\
                 Target behavior: {behavior}\n\n\
                 ## Failing tests\n{excerpt}\n\
                 Make the minimal changes necessary to satisfy the failing tests — nothing \
                 more. Unrelated feature additions are forbidden. Restrict output to \
                 production files matching: {scope}.",
                id = step.step_id,
                desc = step.description,
                behavior = step.target_behavior,
                scope = step.production_scope.join(", "),
            )
        }
        PromptRole::Repair => {
            let step = step.expect("repair needs a step");
            let excerpt = ctx.report.map(|r| report_excerpt(r, 10)).unwrap_or_default();
            let failure_block = match ctx.signature {
                Some(sig) => format!(
                    "Failure category: {}\nFailing tests: {}\nError summary: {}\n",
                    sig.exception_type,
                    sig.failing_tests.join(", "),
                    sig.normalized_message,
                ),
                None => String::new(),
            };
            format!(
                "## Repair attempt {attempt} for step {id}\n\
                 The previous implementation did not make the tests pass.\n\n\
                 ## Failure context\n{failure_block}\n\
                 ## Test output\n{excerpt}\n\
                 Apply minimal, localized corrections that address exactly this failure. \
                 Do not restructure unrelated code. Restrict output to production files \
                 matching: {scope}.",
                attempt = ctx.attempt,
                id = step.step_id,
                scope = step.production_scope.join(", "),
            )
        }
        PromptRole::Review => {
            let diff = ctx.diff.unwrap_or("");
            format!(
                "## Proposed changes\n{diff}\n\n\
                 Review this proposal for the current phase ({phase}). Reject anything that \
                 edits files the phase does not own — in particular, production edits during \
                 test review are prohibited.",
                phase = ctx.phase,
            )
        }
        PromptRole::Refactor => {
            let step = step.expect("refactor needs a step");
            format!(
                "## Step {id} is green\n\
                 All tests pass. If the implementation would benefit, improve its internal \
                 design — remove duplication, clarify names, simplify structure — without \
                 changing observable behavior. Do not touch test files. Restrict output to \
                 files the policy allows; the step implemented: {scope}.",
                id = step.step_id,
                scope = step.production_scope.join(", "),
            )
        }
    }
}

/// Compact, deterministic rendering of a report for prompt injection: counts
/// first, then one line per non-passing case (message first line only).
pub fn report_excerpt(report: &TestReport, max_cases: usize) -> String {
    let (passed, failed, errored) = report.counts();
    let mut out = format!("{passed} passed, {failed} failed, {errored} errored\n");
    let mut shown = 0usize;
    let mut suppressed = 0usize;
    for case in &report.cases {
        if case.outcome == CaseOutcome::Pass {
            continue;
        }
        if shown >= max_cases {
            suppressed += 1;
            continue;
        }
        let kind = match case.outcome {
            CaseOutcome::Fail => "FAIL",
            CaseOutcome::Error => "ERROR",
            CaseOutcome::Pass => unreachable!(),
        };
        let first_line = case.message.lines().next().unwrap_or("");
        out.push_str(&format!("{kind} {}: {first_line}\n", case.test_id));
        shown += 1;
    }
    if suppressed > 0 {
        out.push_str(&format!("…and {suppressed} more non-passing cases\n"));
    }
    out
}
