//! The governed workflow engine.
//!
//! `Engine::run` drives one full run: a planning conversation, then for each
//! plan step the RED → GREEN → (REPAIR) → (REFACTOR) → STEP_DONE ladder, and
//! finally DONE or FAILED. The engine owns every state transition; providers
//! only ever contribute text, and nothing reaches the working tree except
//! through the gate pipeline followed by an atomic apply.
//!
//! Failure handling is two-tier. Anything the protocol anticipates — an
//! unparseable response, a rejected proposal, a failing suite, an exhausted
//! repair budget — is recorded in the audit log and ends the run as FAILED
//! with a reason string. `EngineError` is reserved for faults the protocol
//! cannot absorb: the workspace cannot be opened or restored, or the engine
//! cannot write its own artifacts.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::agents::{
    build_prompt, ContextKey, PromptContext, PromptRole, Provider, ProviderRequest,
};
use crate::fenced;
use crate::governance::{run_gates, ApprovalDecider, GateReport, PolicyConfig};
use crate::manifesto::Manifesto;
use crate::orchestrator::audit::{AuditEvent, AuditLog};
use crate::orchestrator::control::{AttemptOutcome, LoopControl, LoopStatus, TerminationReason};
use crate::phase::Phase;
use crate::plan::{parse_plan, serialize_plan, validate_plan, Plan, PlanStep};
use crate::proposal::{
    is_noop, normalize_changes, parse_proposal, NormalizedChange, PatchProposal, ProposalRole,
};
use crate::testrun::{
    compute_signature, run_tests, FailureSignature, RunnerConfig, TestReport,
};
use crate::workspace::{ApplyReceipt, Workspace, WorkspaceError};

pub use crate::orchestrator::audit::AuditError;

/// Re-asks allowed for the planner and for RED test generation: one initial
/// request plus two retries.
pub const ASK_BUDGET: u32 = 3;

/// Faults the protocol cannot absorb; everything else becomes a FAILED run.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("run artifact {path}: {source}")]
    Artifact {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Terminal status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Done,
    Failed,
}

/// Outcome of `Engine::run`, also written to `<run-dir>/result.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub steps_completed: usize,
    /// Machine-readable reason when `status` is `Failed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    /// Audit log location, relative to the run directory.
    pub audit_path: String,
}

/// Protocol memory for the step currently in flight.
///
/// Both histories reset at each step boundary: repair termination rules
/// compare against what this step has already tried, never a previous one.
#[derive(Debug, Default)]
struct StepState {
    /// Signatures observed this step, oldest first (RED's baseline failure,
    /// then one per failing suite run).
    signature_history: Vec<FailureSignature>,
    /// Normalized form of every proposal parsed this step, applied or not.
    proposal_history: Vec<BTreeMap<String, NormalizedChange>>,
}

/// A configured engine; construct once, run as often as needed.
///
/// Each `run` recreates the run directory's artifacts (audit log, plan,
/// proposal archive, result) and replays the whole protocol from planning.
pub struct Engine {
    policy: PolicyConfig,
    runner: RunnerConfig,
    manifesto: Manifesto,
    /// Human specification handed verbatim to the planner.
    spec_text: String,
    /// Run-directory name, relative to the workspace root.
    run_dir_name: String,
    refactor_enabled: bool,
    /// Principles injected per prompt.
    principle_budget: usize,
}

impl Engine {
    /// Build an engine, force-adding the run directory to the deny list so
    /// no proposal can ever touch the audit trail.
    pub fn new(
        mut policy: PolicyConfig,
        runner: RunnerConfig,
        manifesto: Manifesto,
        spec_text: String,
        run_dir_name: String,
        refactor_enabled: bool,
        principle_budget: usize,
    ) -> Engine {
        policy.ensure_run_dir_denied(&run_dir_name);
        Engine {
            policy,
            runner,
            manifesto,
            spec_text,
            run_dir_name,
            refactor_enabled,
            principle_budget,
        }
    }

    /// Absolute path of the run directory.
    pub fn run_dir(&self) -> PathBuf {
        self.policy.workspace_root.join(&self.run_dir_name)
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    /// Execute one full run.
    ///
    /// `decider` is consulted only under interactive approval; `progress`
    /// receives one human-oriented line per notable transition.
    pub fn run<'e>(
        &'e self,
        provider: &'e dyn Provider,
        decider: Option<&'e mut (dyn ApprovalDecider + 'e)>,
        progress: &'e mut (dyn FnMut(&str) + 'e),
    ) -> Result<RunResult, EngineError> {
        let run_dir = self.run_dir();
        reset_run_dir(&run_dir)?;

        let denied = self.policy.denied_set().map_err(|e| EngineError::Artifact {
            path: "denied_globs".to_string(),
            source: io::Error::new(io::ErrorKind::InvalidInput, e),
        })?;
        let workspace = Workspace::open(&self.policy.workspace_root, denied)?;
        let audit = AuditLog::create(&run_dir.join("audit.jsonl"))?;

        let mut run = Run {
            engine: self,
            workspace,
            audit,
            provider,
            decider,
            progress,
            run_dir,
            state: StepState::default(),
            baseline_failing: BTreeSet::new(),
        };
        let verdict = run.execute()?;
        run.finish(verdict)
    }
}

/// Wipe the artifacts a previous run may have left in `run_dir`.
fn reset_run_dir(run_dir: &PathBuf) -> Result<(), EngineError> {
    let artifact = |path: &PathBuf, source: io::Error| EngineError::Artifact {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(run_dir).map_err(|e| artifact(run_dir, e))?;
    let proposals = run_dir.join("proposals");
    if proposals.exists() {
        std::fs::remove_dir_all(&proposals).map_err(|e| artifact(&proposals, e))?;
    }
    for name in ["plan.json", "result.json"] {
        let path = run_dir.join(name);
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| artifact(&path, e))?;
        }
    }
    Ok(())
}

/// How one run ended, before the terminal records are written.
enum Verdict {
    Done {
        steps: usize,
    },
    Failed {
        reason: String,
        step_id: Option<String>,
        steps: usize,
    },
}

/// Per-phase results; `Failed` carries a whole-run failure reason.
enum RedResult {
    Established { report: TestReport },
    Failed { reason: String },
}

enum GreenResult {
    Passed {
        report: TestReport,
    },
    /// The step needs repair, starting at `first_attempt` (1 when a green
    /// patch applied but failed; 2 when the green proposal itself was
    /// rejected, which consumes the first attempt).
    NeedsRepair {
        first_attempt: u32,
        last_report: TestReport,
    },
    Failed {
        reason: String,
    },
}

enum RepairResult {
    Converged { report: TestReport },
    Failed { reason: String },
}

enum StepVerdict {
    Done,
    Failed { reason: String },
}

/// All mutable state for one run in flight.
struct Run<'a> {
    engine: &'a Engine,
    workspace: Workspace,
    audit: AuditLog,
    provider: &'a dyn Provider,
    decider: Option<&'a mut (dyn ApprovalDecider + 'a)>,
    progress: &'a mut (dyn FnMut(&str) + 'a),
    run_dir: PathBuf,
    state: StepState,
    /// Test ids already failing before the current step's RED tests landed.
    baseline_failing: BTreeSet<String>,
}

impl<'a> Run<'a> {
    fn execute(&mut self) -> Result<Verdict, EngineError> {
        self.enter_phase(Phase::Planning, None)?;
        let plan = match self.plan_phase()? {
            Ok(plan) => plan,
            Err(reason) => {
                return Ok(Verdict::Failed { reason, step_id: None, steps: 0 });
            }
        };
        self.write_artifact("plan.json", serialize_plan(&plan).as_bytes())?;
        self.note(&format!(
            "plan accepted: {} ({} steps)",
            plan.plan_id,
            plan.steps.len()
        ));

        // Baseline: the suite as it stands before any step runs. RED later
        // accepts a proposal only if it makes something fail that this run
        // did not already see failing.
        let baseline = match self.run_suite("baseline", Phase::Planning, None, true)? {
            Ok(report) => report,
            Err(reason) => {
                return Ok(Verdict::Failed { reason, step_id: None, steps: 0 });
            }
        };
        self.baseline_failing = baseline.failing_ids().into_iter().collect();

        let mut steps = 0usize;
        for step in &plan.steps {
            match self.run_step(step)? {
                StepVerdict::Done => steps += 1,
                StepVerdict::Failed { reason } => {
                    return Ok(Verdict::Failed {
                        reason,
                        step_id: Some(step.step_id.clone()),
                        steps,
                    });
                }
            }
        }
        Ok(Verdict::Done { steps })
    }

    /// Write the terminal records and the result artifact.
    fn finish(&mut self, verdict: Verdict) -> Result<RunResult, EngineError> {
        let result = match verdict {
            Verdict::Done { steps } => {
                self.enter_phase(Phase::Done, None)?;
                self.audit
                    .append(AuditEvent::RunDone, json!({ "steps_completed": steps }))?;
                self.note(&format!("run done: {steps} step(s) completed"));
                RunResult {
                    status: RunStatus::Done,
                    steps_completed: steps,
                    failure_reason: None,
                    audit_path: "audit.jsonl".to_string(),
                }
            }
            Verdict::Failed { reason, step_id, steps } => {
                self.enter_phase(Phase::Failed, None)?;
                let mut payload = json!({
                    "reason": reason,
                    "steps_completed": steps,
                });
                if let Some(step) = &step_id {
                    payload["step_id"] = json!(step);
                }
                self.audit.append(AuditEvent::RunFailed, payload)?;
                self.note(&format!("run failed: {reason}"));
                RunResult {
                    status: RunStatus::Failed,
                    steps_completed: steps,
                    failure_reason: Some(reason),
                    audit_path: "audit.jsonl".to_string(),
                }
            }
        };
        let body = format!(
            "{}\n",
            serde_json::to_string_pretty(&result).expect("result serializes")
        );
        self.write_artifact("result.json", body.as_bytes())?;
        Ok(result)
    }

    // ------------------------------------------------------------------
    // Planning
    // ------------------------------------------------------------------

    /// Ask the planner for a valid plan, retrying within the ask budget.
    /// Malformed output and plans that fail scope validation both consume a
    /// re-ask.
    fn plan_phase(&mut self) -> Result<Result<Plan, String>, EngineError> {
        for ask in 1..=ASK_BUDGET {
            let mut ctx = PromptContext::bare(Phase::Planning, ask, self.engine.principle_budget);
            ctx.spec_text = Some(&self.engine.spec_text);
            let key = ContextKey::new("plan", Phase::Planning, ask);
            let response = match self.prompt(PromptRole::Planner, None, &ctx, &key)? {
                Ok(r) => r,
                Err(reason) => return Ok(Err(reason)),
            };
            self.archive_response("plan", Phase::Planning, ask, &response.text)?;
            let plan = match parse_plan(&response.text) {
                Ok(plan) => plan,
                Err(e) => {
                    self.audit_response(
                        Phase::Planning,
                        "plan",
                        ask,
                        "planner",
                        &response.provider_meta,
                        "malformed",
                        Some(&e.to_string()),
                        None,
                    )?;
                    self.note(&format!("planner response {ask} malformed: {e}"));
                    continue;
                }
            };
            if let Err(e) = validate_plan(&plan, &self.engine.policy, &self.workspace) {
                self.audit_response(
                    Phase::Planning,
                    "plan",
                    ask,
                    "planner",
                    &response.provider_meta,
                    "invalid",
                    Some(&e.to_string()),
                    None,
                )?;
                self.note(&format!("plan rejected on ask {ask}: {e}"));
                continue;
            }
            self.audit_response(
                Phase::Planning,
                "plan",
                ask,
                "planner",
                &response.provider_meta,
                "parsed",
                None,
                Some(&plan.plan_id),
            )?;
            return Ok(Ok(plan));
        }
        Ok(Err("planner_exhausted".to_string()))
    }

    // ------------------------------------------------------------------
    // One step
    // ------------------------------------------------------------------

    fn run_step(&mut self, step: &PlanStep) -> Result<StepVerdict, EngineError> {
        self.state = StepState::default();

        self.enter_phase(Phase::Red, Some(&step.step_id))?;
        let red_report = match self.red_phase(step)? {
            RedResult::Established { report } => report,
            RedResult::Failed { reason } => return Ok(StepVerdict::Failed { reason }),
        };

        self.enter_phase(Phase::Green, Some(&step.step_id))?;
        let passing = match self.green_phase(step, &red_report)? {
            GreenResult::Passed { report } => report,
            GreenResult::NeedsRepair { first_attempt, last_report } => {
                self.enter_phase(Phase::Repair, Some(&step.step_id))?;
                match self.repair_phase(step, first_attempt, last_report)? {
                    RepairResult::Converged { report } => report,
                    RepairResult::Failed { reason } => {
                        return Ok(StepVerdict::Failed { reason });
                    }
                }
            }
            GreenResult::Failed { reason } => return Ok(StepVerdict::Failed { reason }),
        };

        let final_report = if self.engine.refactor_enabled {
            self.enter_phase(Phase::Refactor, Some(&step.step_id))?;
            self.refactor_phase(step, passing)?
        } else {
            passing
        };

        self.enter_phase(Phase::StepDone, Some(&step.step_id))?;
        // The step's closing suite becomes the next step's baseline.
        self.baseline_failing = final_report.failing_ids().into_iter().collect();
        self.note(&format!("step {} done", step.step_id));
        Ok(StepVerdict::Done)
    }

    /// RED: obtain tests that fail for a new reason.
    ///
    /// Each ask goes prompt → parse → gates → apply → run. A suite where no
    /// new test fails is evidence the tests assert nothing, so the apply is
    /// rolled back and the ask is consumed.
    fn red_phase(&mut self, step: &PlanStep) -> Result<RedResult, EngineError> {
        for ask in 1..=ASK_BUDGET {
            let ctx = PromptContext::bare(Phase::Red, ask, self.engine.principle_budget);
            let key = ContextKey::new(&step.step_id, Phase::Red, ask);
            let response =
                match self.prompt(PromptRole::TestGeneration, Some(step), &ctx, &key)? {
                    Ok(r) => r,
                    Err(reason) => return Ok(RedResult::Failed { reason }),
                };
            self.archive_response(&step.step_id, Phase::Red, ask, &response.text)?;
            let proposal = match self.parse_and_audit(
                &response.text,
                ProposalRole::TestGeneration,
                Phase::Red,
                &step.step_id,
                ask,
                &response.provider_meta,
            )? {
                Some(p) => p,
                None => continue,
            };
            self.state.proposal_history.push(normalize_changes(&proposal));
            if !self.gate_and_audit(&proposal, Phase::Red, step, ask, false)? {
                continue;
            }
            let snapshot_paths: Vec<String> =
                proposal.changes.iter().map(|c| c.path.clone()).collect();
            let snapshot = self
                .workspace
                .snapshot(&snapshot_paths, &format!("red-{}-{ask}", step.step_id))?;
            if !self.apply_and_audit(&proposal, Phase::Red, &step.step_id, ask)? {
                continue;
            }
            let run_id = format!("{}-red-{ask}", step.step_id);
            let report = match self.run_suite(&run_id, Phase::Red, Some(&step.step_id), false)? {
                Ok(report) => report,
                Err(reason) => return Ok(RedResult::Failed { reason }),
            };

            let new_failing: Vec<String> = report
                .failing_ids()
                .into_iter()
                .filter(|id| !self.baseline_failing.contains(id))
                .collect();
            if report.suspicious_empty || new_failing.is_empty() {
                self.workspace.rollback(&snapshot)?;
                self.audit_rollback(Phase::Red, &step.step_id, "red_gate_all_pass")?;
                self.note(&format!(
                    "RED ask {ask} for {}: no new failure, rolled back",
                    step.step_id
                ));
                continue;
            }

            let signature = self.signature_of(&report)?;
            self.audit_signature(Phase::Red, &step.step_id, ask, &signature)?;
            self.state.signature_history.push(signature);
            self.note(&format!(
                "RED established for {}: {} new failing test(s)",
                step.step_id,
                new_failing.len()
            ));
            return Ok(RedResult::Established { report });
        }
        Ok(RedResult::Failed { reason: "red_exhausted".to_string() })
    }

    /// GREEN: one implementation attempt. A rejected proposal consumes the
    /// first repair attempt; an applied-but-failing patch records its
    /// signature and enters repair at attempt 1.
    fn green_phase(
        &mut self,
        step: &PlanStep,
        red_report: &TestReport,
    ) -> Result<GreenResult, EngineError> {
        let mut ctx = PromptContext::bare(Phase::Green, 1, self.engine.principle_budget);
        ctx.report = Some(red_report);
        let key = ContextKey::new(&step.step_id, Phase::Green, 1);
        let response = match self.prompt(PromptRole::Implementation, Some(step), &ctx, &key)? {
            Ok(r) => r,
            Err(reason) => return Ok(GreenResult::Failed { reason }),
        };
        self.archive_response(&step.step_id, Phase::Green, 1, &response.text)?;

        let rejected = GreenResult::NeedsRepair {
            first_attempt: 2,
            last_report: red_report.clone(),
        };
        let proposal = match self.parse_and_audit(
            &response.text,
            ProposalRole::Implementation,
            Phase::Green,
            &step.step_id,
            1,
            &response.provider_meta,
        )? {
            Some(p) => p,
            None => return Ok(rejected),
        };
        self.state.proposal_history.push(normalize_changes(&proposal));
        if !self.gate_and_audit(&proposal, Phase::Green, step, 1, is_noop(&proposal, &self.workspace))? {
            return Ok(rejected);
        }
        if !self.apply_and_audit(&proposal, Phase::Green, &step.step_id, 1)? {
            return Ok(rejected);
        }

        let run_id = format!("{}-green-1", step.step_id);
        let report = match self.run_suite(&run_id, Phase::Green, Some(&step.step_id), false)? {
            Ok(report) => report,
            Err(reason) => return Ok(GreenResult::Failed { reason }),
        };
        if report.effective_pass() {
            self.note(&format!("GREEN for {}: suite passing", step.step_id));
            return Ok(GreenResult::Passed { report });
        }
        let signature = self.signature_of(&report)?;
        self.audit_signature(Phase::Green, &step.step_id, 1, &signature)?;
        self.state.signature_history.push(signature);
        Ok(GreenResult::NeedsRepair { first_attempt: 1, last_report: report })
    }

    /// REPAIR: bounded convergence loop.
    ///
    /// Every iteration consumes exactly one attempt whatever its outcome.
    /// Termination fires on the cap, a signature identical to the previous
    /// one, a proposal that changes nothing, or a proposal equivalent to one
    /// already tried this step.
    fn repair_phase(
        &mut self,
        step: &PlanStep,
        first_attempt: u32,
        mut last_report: TestReport,
    ) -> Result<RepairResult, EngineError> {
        let cap = self.engine.policy.repair_cap;
        let mut control = LoopControl::new(cap, first_attempt);
        loop {
            let attempt = match control.begin() {
                Ok(n) => n,
                Err(reason) => {
                    return self.repair_terminated(step, reason, control.attempts_used());
                }
            };

            let signature = self.state.signature_history.last().cloned();
            let mut ctx = PromptContext::bare(Phase::Repair, attempt, self.engine.principle_budget);
            ctx.report = Some(&last_report);
            ctx.signature = signature.as_ref();
            let key = ContextKey::new(&step.step_id, Phase::Repair, attempt);
            let response = match self.prompt(PromptRole::Repair, Some(step), &ctx, &key)? {
                Ok(r) => r,
                Err(reason) => return Ok(RepairResult::Failed { reason }),
            };
            self.archive_response(&step.step_id, Phase::Repair, attempt, &response.text)?;

            let proposal = match self.parse_and_audit(
                &response.text,
                ProposalRole::Repair,
                Phase::Repair,
                &step.step_id,
                attempt,
                &response.provider_meta,
            )? {
                Some(p) => p,
                None => {
                    control.record(AttemptOutcome::Rejected);
                    continue;
                }
            };

            // Equivalence is judged before this proposal joins the history,
            // against everything the step has already tried.
            let normalized = normalize_changes(&proposal);
            if self.state.proposal_history.contains(&normalized) {
                let status = control.record(AttemptOutcome::Equivalent);
                return self.repair_status(step, status);
            }
            self.state.proposal_history.push(normalized);

            if !self.gate_and_audit(&proposal, Phase::Repair, step, attempt, false)? {
                control.record(AttemptOutcome::Rejected);
                continue;
            }
            if is_noop(&proposal, &self.workspace) {
                let status = control.record(AttemptOutcome::Noop);
                return self.repair_status(step, status);
            }
            if !self.apply_and_audit(&proposal, Phase::Repair, &step.step_id, attempt)? {
                control.record(AttemptOutcome::Rejected);
                continue;
            }

            let run_id = format!("{}-repair-{attempt}", step.step_id);
            let report =
                match self.run_suite(&run_id, Phase::Repair, Some(&step.step_id), false)? {
                    Ok(report) => report,
                    Err(reason) => return Ok(RepairResult::Failed { reason }),
                };
            if report.effective_pass() {
                self.note(&format!(
                    "REPAIR for {} converged on attempt {attempt}",
                    step.step_id
                ));
                return Ok(RepairResult::Converged { report });
            }

            let signature = self.signature_of(&report)?;
            self.audit_signature(Phase::Repair, &step.step_id, attempt, &signature)?;
            let repeated = self.state.signature_history.last() == Some(&signature);
            self.state.signature_history.push(signature);
            last_report = report;
            if repeated {
                let status = control.record(AttemptOutcome::SameSignature);
                return self.repair_status(step, status);
            }
            control.record(AttemptOutcome::NewSignature);
        }
    }

    /// Map a terminated loop status onto the audit log and a failed step.
    fn repair_status(
        &mut self,
        step: &PlanStep,
        status: LoopStatus,
    ) -> Result<RepairResult, EngineError> {
        match status {
            LoopStatus::Terminated { reason, attempts_used } => {
                self.repair_terminated(step, reason, attempts_used)
            }
            // record() only returns Converged for Pass, handled inline.
            LoopStatus::Converged { .. } | LoopStatus::Pending => {
                unreachable!("repair_status called on a non-terminal loop status")
            }
        }
    }

    fn repair_terminated(
        &mut self,
        step: &PlanStep,
        reason: TerminationReason,
        attempts_used: u32,
    ) -> Result<RepairResult, EngineError> {
        self.audit.append(
            AuditEvent::RepairTerminated,
            json!({
                "step_id": step.step_id,
                "reason": reason.as_str(),
                "attempts_used": attempts_used,
            }),
        )?;
        self.note(&format!(
            "REPAIR for {} terminated: {} after {attempts_used} attempt(s)",
            step.step_id,
            reason.as_str()
        ));
        Ok(RepairResult::Failed { reason: reason.as_str().to_string() })
    }

    /// REFACTOR: one advisory attempt. Whatever goes wrong — no usable
    /// proposal, a gate rejection, or a suite that stops passing — the step
    /// still completes; a failing refactor is rolled back to the green state.
    fn refactor_phase(
        &mut self,
        step: &PlanStep,
        passing: TestReport,
    ) -> Result<TestReport, EngineError> {
        let mut ctx = PromptContext::bare(Phase::Refactor, 1, self.engine.principle_budget);
        ctx.report = Some(&passing);
        let key = ContextKey::new(&step.step_id, Phase::Refactor, 1);
        let response = match self.prompt(PromptRole::Refactor, Some(step), &ctx, &key)? {
            Ok(r) => r,
            Err(reason) => {
                self.note(&format!(
                    "REFACTOR for {} skipped ({reason})",
                    step.step_id
                ));
                return Ok(passing);
            }
        };
        self.archive_response(&step.step_id, Phase::Refactor, 1, &response.text)?;

        let proposal = match self.parse_and_audit(
            &response.text,
            ProposalRole::Refactor,
            Phase::Refactor,
            &step.step_id,
            1,
            &response.provider_meta,
        )? {
            Some(p) => p,
            None => return Ok(passing),
        };
        self.state.proposal_history.push(normalize_changes(&proposal));
        let noop = is_noop(&proposal, &self.workspace);
        if !self.gate_and_audit(&proposal, Phase::Refactor, step, 1, noop)? {
            return Ok(passing);
        }

        let snapshot_paths: Vec<String> =
            proposal.changes.iter().map(|c| c.path.clone()).collect();
        let snapshot = self
            .workspace
            .snapshot(&snapshot_paths, &format!("refactor-{}", step.step_id))?;
        if !self.apply_and_audit(&proposal, Phase::Refactor, &step.step_id, 1)? {
            return Ok(passing);
        }

        let run_id = format!("{}-refactor-1", step.step_id);
        let report = match self.run_suite(&run_id, Phase::Refactor, Some(&step.step_id), false)? {
            Ok(report) => report,
            Err(reason) => {
                // A runner that breaks mid-refactor cannot prove the
                // refactor safe; restore green and move on.
                self.workspace.rollback(&snapshot)?;
                self.audit_rollback(Phase::Refactor, &step.step_id, "refactor_failed")?;
                self.note(&format!(
                    "REFACTOR for {} rolled back (suite did not run: {reason})",
                    step.step_id
                ));
                return Ok(passing);
            }
        };
        if report.effective_pass() {
            self.note(&format!("REFACTOR for {} kept", step.step_id));
            return Ok(report);
        }
        self.workspace.rollback(&snapshot)?;
        self.audit_rollback(Phase::Refactor, &step.step_id, "refactor_failed")?;
        self.note(&format!("REFACTOR for {} rolled back", step.step_id));
        Ok(passing)
    }

    // ------------------------------------------------------------------
    // Shared mechanics
    // ------------------------------------------------------------------

    fn enter_phase(&mut self, phase: Phase, step_id: Option<&str>) -> Result<(), EngineError> {
        let mut payload = json!({ "phase": phase.name() });
        if let Some(step) = step_id {
            payload["step_id"] = json!(step);
        }
        self.audit.append(AuditEvent::PhaseEnter, payload)?;
        match step_id {
            Some(step) => self.note(&format!("phase {} (step {step})", phase.name())),
            None => self.note(&format!("phase {}", phase.name())),
        }
        Ok(())
    }

    /// Build the prompt for `role` and send it. The inner error is a
    /// run-failure reason; provider faults are never engine faults.
    fn prompt(
        &mut self,
        role: PromptRole,
        step: Option<&PlanStep>,
        ctx: &PromptContext,
        key: &ContextKey,
    ) -> Result<Result<crate::agents::ProviderResponse, String>, EngineError> {
        let bundle = build_prompt(role, step, &self.engine.manifesto, ctx);
        let request = ProviderRequest { bundle, context_key: key.clone() };
        match self.provider.request(&request) {
            Ok(response) => Ok(Ok(response)),
            Err(e) => Ok(Err(format!("provider_error: {e}"))),
        }
    }

    /// Parse a proposal response; on failure audit the malformed outcome and
    /// return None (the caller decides what the consumed attempt means).
    #[allow(clippy::too_many_arguments)]
    fn parse_and_audit(
        &mut self,
        raw: &str,
        expected: ProposalRole,
        phase: Phase,
        step_id: &str,
        attempt: u32,
        provider_meta: &str,
    ) -> Result<Option<PatchProposal>, EngineError> {
        match parse_proposal(raw, expected) {
            Ok(p) => {
                self.audit_response(
                    phase,
                    step_id,
                    attempt,
                    &expected.to_string(),
                    provider_meta,
                    "parsed",
                    None,
                    Some(&p.proposal_id),
                )?;
                Ok(Some(p))
            }
            Err(e) => {
                self.audit_response(
                    phase,
                    step_id,
                    attempt,
                    &expected.to_string(),
                    provider_meta,
                    "malformed",
                    Some(&e.to_string()),
                    None,
                )?;
                self.note(&format!(
                    "{} proposal (attempt {attempt}) malformed: {e}",
                    phase.name()
                ));
                Ok(None)
            }
        }
    }

    /// Run the gate pipeline, audit the report, and return whether the
    /// proposal may be applied. `noop` folds the engine's no-effect check
    /// into the same record: gates may all pass and the proposal still be
    /// rejected for changing nothing.
    fn gate_and_audit(
        &mut self,
        proposal: &PatchProposal,
        phase: Phase,
        step: &PlanStep,
        attempt: u32,
        noop: bool,
    ) -> Result<bool, EngineError> {
        let report = {
            // Reborrow with a fresh lifetime so the gate call does not pin
            // `self.decider` for the rest of the method.
            let decider: Option<&mut dyn ApprovalDecider> = match self.decider.as_mut() {
                Some(d) => Some(&mut **d),
                None => None,
            };
            run_gates(
                proposal,
                phase,
                step,
                &self.engine.policy,
                &self.workspace,
                decider,
            )
        };
        let gates_passed = report.passed();
        // The no-effect check only applies to proposals the gates let
        // through; a rejection record never also claims noop.
        let noop = gates_passed && noop;
        let accepted = gates_passed && !noop;
        self.audit_gates(phase, &step.step_id, attempt, &report, noop, accepted)?;
        if !gates_passed {
            self.note(&format!(
                "{} proposal {} rejected: {}",
                phase.name(),
                proposal.proposal_id,
                report.summary()
            ));
        } else if noop {
            self.note(&format!(
                "{} proposal {} rejected: no effective change",
                phase.name(),
                proposal.proposal_id
            ));
        }
        Ok(accepted)
    }

    /// Apply atomically and audit the receipt. A failed-but-restored apply
    /// is audited as a rollback and reported as a consumable rejection;
    /// an unrestorable workspace is fatal.
    fn apply_and_audit(
        &mut self,
        proposal: &PatchProposal,
        phase: Phase,
        step_id: &str,
        attempt: u32,
    ) -> Result<bool, EngineError> {
        match self.workspace.apply_atomic(proposal) {
            Ok(receipt) => {
                self.audit_apply(phase, step_id, attempt, &receipt)?;
                Ok(true)
            }
            Err(WorkspaceError::Apply { detail }) => {
                self.audit_rollback(phase, step_id, "apply_failed")?;
                self.note(&format!(
                    "{} apply failed and was restored: {detail}",
                    phase.name()
                ));
                Ok(false)
            }
            Err(e) => Err(EngineError::Workspace(e)),
        }
    }

    /// Run the whole suite and audit the report. The inner error is a
    /// run-failure reason (the runner itself broke, not the tests).
    fn run_suite(
        &mut self,
        run_id: &str,
        phase: Phase,
        step_id: Option<&str>,
        baseline: bool,
    ) -> Result<Result<TestReport, String>, EngineError> {
        let report = match run_tests(self.workspace.root(), &self.engine.runner, run_id) {
            Ok(report) => report,
            Err(e) => return Ok(Err(format!("test_runner_error: {e}"))),
        };
        let (passed, failed, errored) = report.counts();
        let mut payload = json!({
            "phase": phase.name(),
            "run_id": report.run_id,
            "command": report.command,
            "exit_status": report.exit_status,
            "passed": passed,
            "failed": failed,
            "errored": errored,
            "failing_tests": report.failing_ids(),
            "suspicious_empty": report.suspicious_empty,
            "overall_pass": report.overall_pass(),
            "effective_pass": report.effective_pass(),
        });
        if let Some(step) = step_id {
            payload["step_id"] = json!(step);
        }
        if baseline {
            payload["baseline"] = json!(true);
        }
        self.audit.append(AuditEvent::TestReport, payload)?;
        self.note(&format!(
            "suite {run_id}: {passed} passed, {failed} failed, {errored} errored"
        ));
        Ok(Ok(report))
    }

    fn signature_of(&self, report: &TestReport) -> Result<FailureSignature, EngineError> {
        Ok(signature_of(report, self.workspace.root()))
    }

    // ------------------------------------------------------------------
    // Audit helpers (payload shapes live here and in replay, nowhere else)
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn audit_response(
        &mut self,
        phase: Phase,
        step_id: &str,
        attempt: u32,
        role: &str,
        provider_meta: &str,
        outcome: &str,
        detail: Option<&str>,
        proposal_id: Option<&str>,
    ) -> Result<(), EngineError> {
        let mut payload = json!({
            "phase": phase.name(),
            "step_id": step_id,
            "attempt": attempt,
            "role": role,
            "provider_meta": provider_meta,
            "outcome": outcome,
        });
        if let Some(detail) = detail {
            payload["detail"] = json!(detail);
        }
        if let Some(id) = proposal_id {
            payload["proposal_id"] = json!(id);
        }
        self.audit.append(AuditEvent::ProposalReceived, payload)?;
        Ok(())
    }

    fn audit_gates(
        &mut self,
        phase: Phase,
        step_id: &str,
        attempt: u32,
        report: &GateReport,
        noop: bool,
        accepted: bool,
    ) -> Result<(), EngineError> {
        let mut payload = json!({
            "phase": phase.name(),
            "step_id": step_id,
            "attempt": attempt,
            "proposal_id": report.proposal_id,
            "results": serde_json::to_value(&report.results).expect("gate results serialize"),
            "passed": accepted,
        });
        if noop {
            payload["noop_rejected"] = json!(true);
        }
        self.audit.append(AuditEvent::GateReport, payload)?;
        Ok(())
    }

    fn audit_apply(
        &mut self,
        phase: Phase,
        step_id: &str,
        attempt: u32,
        receipt: &ApplyReceipt,
    ) -> Result<(), EngineError> {
        let payload = json!({
            "phase": phase.name(),
            "step_id": step_id,
            "attempt": attempt,
            "proposal_id": receipt.proposal_id,
            "applied_paths": receipt.applied_paths,
            "pre_root": receipt.pre_root,
            "post_root": receipt.post_root,
        });
        self.audit.append(AuditEvent::ApplyReceipt, payload)?;
        Ok(())
    }

    fn audit_signature(
        &mut self,
        phase: Phase,
        step_id: &str,
        attempt: u32,
        signature: &FailureSignature,
    ) -> Result<(), EngineError> {
        let payload = json!({
            "phase": phase.name(),
            "step_id": step_id,
            "attempt": attempt,
            "exception_type": signature.exception_type,
            "failing_tests": signature.failing_tests,
            "normalized_message": signature.normalized_message,
        });
        self.audit.append(AuditEvent::Signature, payload)?;
        Ok(())
    }

    fn audit_rollback(
        &mut self,
        phase: Phase,
        step_id: &str,
        cause: &str,
    ) -> Result<(), EngineError> {
        let payload = json!({
            "phase": phase.name(),
            "step_id": step_id,
            "cause": cause,
            "restored_root": self.workspace.root_digest(),
        });
        self.audit.append(AuditEvent::Rollback, payload)?;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Artifacts
    // ------------------------------------------------------------------

    /// Archive a provider response under `proposals/<step>/`. Responses with
    /// an extractable fenced block are stored as `<phase>_<attempt>.json`
    /// (block verbatim); anything else keeps its raw text with a `.raw.txt`
    /// suffix so a malformed response can still be inspected later.
    fn archive_response(
        &self,
        step_id: &str,
        phase: Phase,
        attempt: u32,
        text: &str,
    ) -> Result<(), EngineError> {
        let dir = self.run_dir.join("proposals").join(step_id);
        std::fs::create_dir_all(&dir).map_err(|e| EngineError::Artifact {
            path: dir.display().to_string(),
            source: e,
        })?;
        let stem = format!("{}_{attempt}", phase.name().to_lowercase());
        let (name, body) = match fenced::extract_block(text) {
            Ok(block) => (format!("{stem}.json"), block),
            Err(_) => (format!("{stem}.raw.txt"), text.to_string()),
        };
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| EngineError::Artifact {
            path: path.display().to_string(),
            source: e,
        })
    }

    fn write_artifact(&self, name: &str, body: &[u8]) -> Result<(), EngineError> {
        let path = self.run_dir.join(name);
        std::fs::write(&path, body).map_err(|e| EngineError::Artifact {
            path: path.display().to_string(),
            source: e,
        })
    }

    fn note(&mut self, line: &str) {
        (self.progress)(line);
    }
}

/// Signature of a failing report. A suspicious-empty report has no failing
/// case to name, so it gets a fixed synthetic signature; repair terminates
/// on repetition if the suite stays empty.
fn signature_of(report: &TestReport, workspace_root: &std::path::Path) -> FailureSignature {
    if report.failing_ids().is_empty() {
        return FailureSignature {
            exception_type: "SuspiciousEmptyReport".to_string(),
            failing_tests: Vec::new(),
            normalized_message: "report contained no test cases".to_string(),
        };
    }
    compute_signature(report, Some(workspace_root)).expect("non-empty failing set has a signature")
}
