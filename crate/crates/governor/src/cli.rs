//! Command-line interface.
//!
//! Three subcommands: `run` executes a governed run end to end, `validate`
//! checks a configuration (and its manifesto) without touching the
//! workspace, and `replay` renders an audit log as a readable timeline.
//!
//! Exit codes are part of the contract: 0 for a run that reached DONE, 1
//! for a run that ended FAILED (the audit log says why), 2 for anything
//! that prevented a verdict — bad configuration, unusable manifesto, a
//! missing API key, or an engine fault.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agents::{HttpProvider, Provider, ScriptedProvider};
use crate::config::{load_config, LoadedConfig, Overrides, ProviderSpec};
use crate::governance::{ApprovalDecider, ApprovalMode};
use crate::manifesto::load_manifesto;
use crate::orchestrator::audit::{read_audit, AuditRecord};
use crate::orchestrator::{Engine, RunStatus};
use crate::proposal::PatchProposal;

/// Exit code for a run that completed every step.
pub const EXIT_DONE: i32 = 0;
/// Exit code for a run that ended in FAILED.
pub const EXIT_RUN_FAILED: i32 = 1;
/// Exit code for configuration or engine faults — no verdict was reached.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tdd-governor",
    version,
    about = "Governed test-driven development: models propose patches, the engine decides."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a governed run from a configuration file.
    Run(RunArgs),
    /// Check a configuration and its manifesto; change nothing.
    Validate(ValidateArgs),
    /// Render an audit log as a human-readable timeline.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long, default_value = "governor.json")]
    config: PathBuf,
    /// Manifesto file, overriding the configuration.
    #[arg(long)]
    manifesto: Option<PathBuf>,
    /// Force the scripted provider with this fixture directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Approval mode, overriding the configuration.
    #[arg(long, value_enum)]
    approval: Option<ApprovalArg>,
    /// Repair attempts allowed per step, overriding the configuration.
    #[arg(long)]
    repair_cap: Option<u32>,
    /// Skip the refactor phase after each green step.
    #[arg(long)]
    no_refactor: bool,
    /// Run directory relative to the workspace root, overriding the
    /// configuration.
    #[arg(long)]
    run_dir: Option<String>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Run configuration file.
    #[arg(long, default_value = "governor.json")]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Audit log to render (a file, or a run directory containing
    /// audit.jsonl).
    #[arg(default_value = ".governor/audit.jsonl")]
    audit: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApprovalArg {
    Auto,
    Rules,
    Interactive,
}

impl From<ApprovalArg> for ApprovalMode {
    fn from(arg: ApprovalArg) -> ApprovalMode {
        match arg {
            ApprovalArg::Auto => ApprovalMode::Auto,
            ApprovalArg::Rules => ApprovalMode::Rules,
            ApprovalArg::Interactive => ApprovalMode::Interactive,
        }
    }
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Replay(args) => cmd_replay(args),
    }
}

fn fail(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_ERROR
}

/// Stream lines to stdout without `println!`'s abort-on-EPIPE behavior.
///
/// When the reader of a pipe goes away (`replay … | head`), the write
/// fails with `BrokenPipe`; that means the consumer has seen enough, so
/// the command still exits successfully. Any other write error is real.
fn emit_lines(lines: impl IntoIterator<Item = String>) -> i32 {
    let mut out = std::io::stdout().lock();
    for line in lines {
        if let Err(e) = writeln!(out, "{line}") {
            return if e.kind() == std::io::ErrorKind::BrokenPipe {
                EXIT_DONE
            } else {
                fail(format_args!("stdout: {e}"))
            };
        }
    }
    EXIT_DONE
}

fn load_with_overrides(config: &PathBuf, overrides: Overrides) -> Result<LoadedConfig, i32> {
    let mut cfg = load_config(config).map_err(|e| fail(e))?;
    cfg.apply_overrides(overrides).map_err(|e| fail(e))?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> i32 {
    let overrides = Overrides {
        manifesto_path: args.manifesto,
        fixtures_dir: args.fixtures,
        approval_mode: args.approval.map(ApprovalMode::from),
        repair_cap: args.repair_cap,
        no_refactor: args.no_refactor,
        run_dir: args.run_dir,
    };
    let cfg = match load_with_overrides(&args.config, overrides) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };

    let spec_text = match std::fs::read_to_string(&cfg.spec_path) {
        Ok(text) => text,
        Err(e) => return fail(format_args!("spec {}: {e}", cfg.spec_path.display())),
    };
    let manifesto = match load_manifesto(&cfg.manifesto_path) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let provider: Box<dyn Provider> = match &cfg.provider {
        ProviderSpec::Scripted { fixtures_dir } => {
            Box::new(ScriptedProvider::new(fixtures_dir.clone()))
        }
        ProviderSpec::Http(http_cfg) => match HttpProvider::new(http_cfg.clone()) {
            Ok(p) => Box::new(p),
            Err(e) => return fail(e),
        },
    };

    let engine = Engine::new(
        cfg.policy.clone(),
        cfg.runner.clone(),
        manifesto,
        spec_text,
        cfg.run_dir.clone(),
        cfg.refactor_enabled,
        cfg.principle_budget,
    );

    let mut terminal;
    let decider: Option<&mut dyn ApprovalDecider> =
        if cfg.policy.approval_mode == ApprovalMode::Interactive {
            terminal = TerminalDecider::from_stdio();
            Some(&mut terminal)
        } else {
            None
        };

    // A vanished stdout must not abort a run in flight or change its exit
    // code: the audit log is the durable record, so failed progress and
    // summary writes are dropped rather than propagated.
    let mut progress = |line: &str| {
        let _ = writeln!(std::io::stdout().lock(), "[governor] {line}");
    };
    match engine.run(provider.as_ref(), decider, &mut progress) {
        Ok(result) => {
            let run_dir = engine.run_dir();
            let mut out = std::io::stdout().lock();
            let _ = writeln!(
                out,
                "run {}: {} step(s) completed; audit at {}",
                match result.status {
                    RunStatus::Done => "done",
                    RunStatus::Failed => "FAILED",
                },
                result.steps_completed,
                run_dir.join(&result.audit_path).display()
            );
            if let Some(reason) = &result.failure_reason {
                let _ = writeln!(out, "failure reason: {reason}");
            }
            match result.status {
                RunStatus::Done => EXIT_DONE,
                RunStatus::Failed => EXIT_RUN_FAILED,
            }
        }
        Err(e) => fail(e),
    }
}

fn cmd_validate(args: ValidateArgs) -> i32 {
    let cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(e),
    };
    // The manifesto is part of the run contract; validate surfaces its
    // schema problems with the same exit discipline as config problems.
    let manifesto = match load_manifesto(&cfg.manifesto_path) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    emit_lines([
        "configuration OK".to_string(),
        format!("  workspace_root: {}", cfg.workspace_root.display()),
        format!("  run_dir:        {}", cfg.run_dir),
        format!("  provider:       {}", cfg.provider),
        format!("  approval_mode:  {:?}", cfg.policy.approval_mode),
        format!("  repair_cap:     {}", cfg.policy.repair_cap),
        format!(
            "  manifesto:      {} ({} principles)",
            cfg.manifesto_path.display(),
            manifesto.principles.len()
        ),
    ])
}

fn cmd_replay(args: ReplayArgs) -> i32 {
    let path = if args.audit.is_dir() {
        args.audit.join("audit.jsonl")
    } else {
        args.audit
    };
    let records = match read_audit(&path) {
        Ok(records) => records,
        Err(e) => return fail(e),
    };
    emit_lines(render_timeline(&records))
}

// ---------------------------------------------------------------------
// Interactive approval
// ---------------------------------------------------------------------

/// Approval prompt over arbitrary streams; production wires it to stdio.
///
/// Anything other than an explicit yes — including EOF or an unreadable
/// line — is a rejection: silence must never approve a patch.
pub struct TerminalDecider {
    input: Box<dyn BufRead + Send>,
    output: Box<dyn Write + Send>,
}

impl TerminalDecider {
    pub fn new(input: Box<dyn BufRead + Send>, output: Box<dyn Write + Send>) -> TerminalDecider {
        TerminalDecider { input, output }
    }

    pub fn from_stdio() -> TerminalDecider {
        TerminalDecider::new(
            Box::new(std::io::BufReader::new(std::io::stdin())),
            Box::new(std::io::stderr()),
        )
    }
}

impl ApprovalDecider for TerminalDecider {
    fn decide(&mut self, proposal: &PatchProposal, diff: &str) -> bool {
        let header = format!(
            "proposal {} ({}, step {}): {} change(s)\n",
            proposal.proposal_id,
            proposal.role,
            proposal.step_id,
            proposal.changes.len()
        );
        if self.output.write_all(header.as_bytes()).is_err() {
            return false;
        }
        let _ = self.output.write_all(diff.as_bytes());
        if !diff.ends_with('\n') {
            let _ = self.output.write_all(b"\n");
        }
        if self.output.write_all(b"approve? [y/N] ").is_err() {
            return false;
        }
        let _ = self.output.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => false,
            Ok(_) => {
                let answer = line.trim();
                answer.eq_ignore_ascii_case("y") || answer.eq_ignore_ascii_case("yes")
            }
        }
    }
}

// ---------------------------------------------------------------------
// Replay rendering
// ---------------------------------------------------------------------

/// Render audit records as one timeline line each.
///
/// The renderer is deliberately tolerant: a field missing from a payload
/// renders as `?` rather than aborting, so a partially corrupted log can
/// still be inspected.
pub fn render_timeline(records: &[AuditRecord]) -> Vec<String> {
    records.iter().map(render_record).collect()
}

fn render_record(record: &AuditRecord) -> String {
    let p = &record.payload;
    let s = |key: &str| p[key].as_str().unwrap_or("?").to_string();
    let n = |key: &str| p[key].as_u64().map_or("?".to_string(), |v| v.to_string());
    let step_suffix = match p["step_id"].as_str() {
        Some(step) => format!(" (step {step})"),
        None => String::new(),
    };
    let body = match record.event.name() {
        "phase_enter" => format!("→ {}{step_suffix}", s("phase")),
        "proposal_received" => {
            let outcome = s("outcome");
            let tail = match outcome.as_str() {
                "parsed" => format!("parsed as {}", s("proposal_id")),
                _ => format!("{outcome}: {}", s("detail")),
            };
            format!("{} {} attempt {}: {tail}", s("phase"), s("role"), n("attempt"))
        }
        "gate_report" => {
            let verdict = if p["passed"].as_bool() == Some(true) {
                "accepted".to_string()
            } else if p["noop_rejected"].as_bool() == Some(true) {
                "rejected (no effective change)".to_string()
            } else {
                // Name the first rejecting gate.
                let detail = p["results"]
                    .as_array()
                    .and_then(|rows| {
                        rows.iter()
                            .find(|r| r["verdict"].as_str() == Some("reject"))
                            .map(|r| {
                                format!(
                                    "rejected at {} gate: {}",
                                    r["gate"].as_str().unwrap_or("?"),
                                    r["detail"].as_str().unwrap_or("?")
                                )
                            })
                    })
                    .unwrap_or_else(|| "rejected".to_string());
                detail
            };
            format!("gates on {}: {verdict}", s("proposal_id"))
        }
        "apply_receipt" => {
            let count = p["applied_paths"].as_array().map_or(0, |a| a.len());
            let short = |key: &str| s(key).chars().take(12).collect::<String>();
            format!(
                "applied {} ({count} file(s)) root {} → {}",
                s("proposal_id"),
                short("pre_root"),
                short("post_root")
            )
        }
        "test_report" => {
            let flag = if p["suspicious_empty"].as_bool() == Some(true) {
                " [suspicious-empty]"
            } else {
                ""
            };
            let verdict = if p["effective_pass"].as_bool() == Some(true) {
                "PASS"
            } else {
                "FAIL"
            };
            format!(
                "suite {}: {verdict} ({} passed, {} failed, {} errored){flag}",
                s("run_id"),
                n("passed"),
                n("failed"),
                n("errored")
            )
        }
        "signature" => {
            let count = p["failing_tests"].as_array().map_or(0, |a| a.len());
            format!(
                "signature [{}] over {count} failing test(s){step_suffix}",
                s("exception_type")
            )
        }
        "repair_terminated" => format!(
            "repair terminated: {} after {} attempt(s){step_suffix}",
            s("reason"),
            n("attempts_used")
        ),
        "rollback" => {
            let label = match s("cause").as_str() {
                "refactor_failed" => "ROLLBACK (refactor failed)".to_string(),
                "red_gate_all_pass" => {
                    "ROLLBACK (tests passed without implementation)".to_string()
                }
                "apply_failed" => "ROLLBACK (apply failed)".to_string(),
                other => format!("ROLLBACK ({other})"),
            };
            format!("{label}{step_suffix}")
        }
        "run_done" => format!("RUN DONE: {} step(s) completed", n("steps_completed")),
        "run_failed" => format!(
            "RUN FAILED: {} after {} step(s){step_suffix}",
            s("reason"),
            n("steps_completed")
        ),
        other => format!("{other}"),
    };
    format!("[{:>4}] {body}", record.seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::audit::AuditEvent;
    use crate::proposal::{ChangeAction, FileChange};
    use serde_json::json;
    use std::io::Cursor;

    #[test]
    fn clap_definition_is_internally_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn run_flags_parse() {
        let cli = Cli::try_parse_from([
            "tdd-governor",
            "run",
            "--config",
            "x.json",
            "--no-refactor",
            "--repair-cap",
            "5",
            "--approval",
            "interactive",
        ])
        .unwrap();
        match cli.command {
            Command::Run(args) => {
                assert_eq!(args.config, PathBuf::from("x.json"));
                assert!(args.no_refactor);
                assert_eq!(args.repair_cap, Some(5));
                assert!(matches!(args.approval, Some(ApprovalArg::Interactive)));
            }
            other => panic!("expected run, got {other:?}"),
        }
    }

    fn sample_proposal() -> PatchProposal {
        PatchProposal {
            proposal_id: "p-1".to_string(),
            role: crate::proposal::ProposalRole::Implementation,
            step_id: "s1".to_string(),
            rationale: "fix".to_string(),
            changes: vec![FileChange {
                path: "src/x.py".to_string(),
                action: ChangeAction::Modify,
                new_content: Some("pass\n".to_string()),
            }],
        }
    }

    /// A Write sink the test can read back after the decider owns a copy.
    #[derive(Clone, Default)]
    struct SharedSink(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

    impl Write for SharedSink {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn terminal_decider_accepts_only_an_explicit_yes() {
        for (answer, expected) in
            [("y\n", true), ("YES\n", true), ("n\n", false), ("\n", false), ("", false)]
        {
            let sink = SharedSink::default();
            let mut decider = TerminalDecider::new(
                Box::new(Cursor::new(answer.as_bytes().to_vec())),
                Box::new(sink.clone()),
            );
            let approved = decider.decide(&sample_proposal(), "--- a/src/x.py\n+++ b/src/x.py\n");
            assert_eq!(approved, expected, "answer {answer:?}");
            let shown = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
            assert!(shown.contains("proposal p-1"), "prompt must name the proposal");
            assert!(shown.contains("approve? [y/N]"));
        }
    }

    fn record(seq: u64, event: AuditEvent, payload: serde_json::Value) -> AuditRecord {
        AuditRecord { seq, wall_time: 0, event, payload }
    }

    #[test]
    fn timeline_renders_the_rollback_causes_distinctly() {
        let records = vec![
            record(
                0,
                AuditEvent::Rollback,
                json!({"phase": "REFACTOR", "step_id": "s1", "cause": "refactor_failed", "restored_root": "aa"}),
            ),
            record(
                1,
                AuditEvent::Rollback,
                json!({"phase": "RED", "step_id": "s1", "cause": "red_gate_all_pass", "restored_root": "aa"}),
            ),
            record(
                2,
                AuditEvent::Rollback,
                json!({"phase": "GREEN", "step_id": "s1", "cause": "something_else", "restored_root": "aa"}),
            ),
        ];
        let lines = render_timeline(&records);
        assert!(lines[0].contains("ROLLBACK (refactor failed)"), "{}", lines[0]);
        assert!(
            lines[1].contains("ROLLBACK (tests passed without implementation)"),
            "{}",
            lines[1]
        );
        assert!(lines[2].contains("ROLLBACK (something_else)"), "{}", lines[2]);
    }

    #[test]
    fn timeline_names_the_rejecting_gate() {
        let records = vec![record(
            7,
            AuditEvent::GateReport,
            json!({
                "phase": "GREEN", "step_id": "s1", "attempt": 1,
                "proposal_id": "p-9",
                "results": [
                    {"gate": "structural", "verdict": "pass", "detail": "ok"},
                    {"gate": "policy", "verdict": "reject", "detail": "path .git/config matches denied pattern .git/**"}
                ],
                "passed": false
            }),
        )];
        let lines = render_timeline(&records);
        assert!(lines[0].contains("rejected at policy gate"), "{}", lines[0]);
        assert!(lines[0].contains(".git/**"), "{}", lines[0]);
    }

    #[test]
    fn timeline_tolerates_missing_fields() {
        let records = vec![
            record(0, AuditEvent::PhaseEnter, json!({})),
            record(1, AuditEvent::TestReport, json!({})),
            record(2, AuditEvent::ApplyReceipt, json!({})),
        ];
        let lines = render_timeline(&records);
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains('?'));
    }

    #[test]
    fn timeline_marks_suspicious_empty_suites() {
        let records = vec![record(
            3,
            AuditEvent::TestReport,
            json!({
                "phase": "GREEN", "run_id": "s1-green-1", "passed": 0, "failed": 0,
                "errored": 0, "suspicious_empty": true, "effective_pass": false
            }),
        )];
        let lines = render_timeline(&records);
        assert!(lines[0].contains("[suspicious-empty]"), "{}", lines[0]);
        assert!(lines[0].contains("FAIL"), "{}", lines[0]);
    }
}
