//! End-to-end engine runs over the scenario corpus.
//!
//! Each test stages one scenario into a temp directory, runs the engine with
//! its scripted provider, and then asserts on three surfaces at once: the
//! returned [`RunResult`], the audit log, and the final workspace state.

mod common;

use common::{run_scenario, stage};
use tdd_governor::orchestrator::audit::AuditEvent;
use tdd_governor::orchestrator::RunStatus;

#[test]
fn happy_path_calculator_completes_both_steps() {
    let run = run_scenario("happy-path-calculator");

    assert_eq!(run.result.status, RunStatus::Done, "reason: {:?}", run.result.failure_reason);
    assert_eq!(run.result.steps_completed, 2);
    assert_eq!(run.result.failure_reason, None);

    // The full phase trajectory, in order: planning, two complete steps,
    // terminal DONE.
    assert_eq!(
        run.phases(),
        [
            "PLANNING", "RED", "GREEN", "REFACTOR", "STEP_DONE", "RED", "GREEN", "REFACTOR",
            "STEP_DONE", "DONE"
        ]
    );
    assert_eq!(run.phases_for_step("s1"), ["RED", "GREEN", "REFACTOR", "STEP_DONE"]);
    assert_eq!(run.phases_for_step("s2"), ["RED", "GREEN", "REFACTOR", "STEP_DONE"]);

    // The baseline suite ran before any step and collected nothing: pytest
    // finds no tests in the pristine project, which must be recorded as
    // suspicious-empty rather than as a pass.
    let baseline: Vec<_> = run
        .payloads(AuditEvent::TestReport)
        .into_iter()
        .filter(|p| p["baseline"].as_bool() == Some(true))
        .collect();
    assert_eq!(baseline.len(), 1);
    assert_eq!(baseline[0]["suspicious_empty"], serde_json::json!(true));
    assert_eq!(baseline[0]["effective_pass"], serde_json::json!(false));

    // s1's refactor fixture exists and was kept; s2 has none, so its
    // REFACTOR phase must apply nothing.
    let refactor_applies = run.applies_in_phase("REFACTOR");
    assert_eq!(refactor_applies.len(), 1);
    assert_eq!(refactor_applies[0]["step_id"], serde_json::json!("s1"));

    // Final workspace: both behaviors implemented, both test files present.
    let calculator = run.workspace_file("src/calculator.py").expect("calculator exists");
    assert!(calculator.contains("cannot divide by zero"));
    assert!(calculator.contains("Return the sum of two numbers"), "refactor docstring kept");
    assert!(run.workspace_file("tests/test_addition.py").is_some());
    assert!(run.workspace_file("tests/test_division.py").is_some());

    // Run artifacts: the accepted plan, a result echoing the outcome, and
    // one archived response per provider ask.
    assert!(run.run_dir.join("plan.json").is_file());
    let result_text = std::fs::read_to_string(run.run_dir.join("result.json")).unwrap();
    let result: serde_json::Value = serde_json::from_str(&result_text).unwrap();
    assert_eq!(result["status"], serde_json::json!("done"));
    assert_eq!(result["steps_completed"], serde_json::json!(2));
    for archived in [
        "proposals/plan/planning_1.json",
        "proposals/s1/red_1.json",
        "proposals/s1/green_1.json",
        "proposals/s1/refactor_1.json",
        "proposals/s2/red_1.json",
        "proposals/s2/green_1.json",
    ] {
        assert!(run.run_dir.join(archived).is_file(), "missing archive {archived}");
    }
}

#[test]
fn red_proposal_that_passes_immediately_is_rolled_back_and_retried() {
    let run = run_scenario("red-gate-all-pass");

    assert_eq!(run.result.status, RunStatus::Done);
    assert_eq!(run.result.steps_completed, 1);

    // Ask 1 produced a test that passed without any implementation. It was
    // applied, observed green, rolled back, and the ask was consumed.
    let rollbacks = run.payloads(AuditEvent::Rollback);
    assert_eq!(rollbacks.len(), 1);
    assert_eq!(rollbacks[0]["phase"], serde_json::json!("RED"));
    assert_eq!(rollbacks[0]["cause"], serde_json::json!("red_gate_all_pass"));

    let red_asks: Vec<_> = run
        .payloads(AuditEvent::ProposalReceived)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("RED"))
        .collect();
    assert_eq!(red_asks.len(), 2);
    assert!(red_asks.iter().all(|p| p["outcome"].as_str() == Some("parsed")));
    assert_eq!(run.applies_in_phase("RED").len(), 2, "both asks reached apply");

    // The evidence for the rollback is on the log: the first RED suite run
    // passed outright.
    let red_suites: Vec<_> = run
        .payloads(AuditEvent::TestReport)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("RED"))
        .collect();
    assert_eq!(red_suites.len(), 2);
    assert_eq!(red_suites[0]["effective_pass"], serde_json::json!(true));
    assert_eq!(red_suites[1]["effective_pass"], serde_json::json!(false));

    // The surviving check is the demanding one, and GREEN satisfied it.
    let spec = run.workspace_file("tests/feature_spec.txt").expect("feature spec");
    assert_eq!(spec, "REQUIRE marker.txt ok feature_behavior\n");
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("ok\n"));
}

#[test]
fn repair_converges_within_the_cap() {
    let run = run_scenario("repair-converges");

    assert_eq!(run.result.status, RunStatus::Done);
    assert_eq!(run.phases_for_step("s1"), ["RED", "GREEN", "REPAIR", "REFACTOR", "STEP_DONE"]);
    assert_eq!(run.applies_in_phase("REPAIR").len(), 2);
    assert!(run.payloads(AuditEvent::RepairTerminated).is_empty());

    // Signatures: RED's establishing failure, GREEN's miss, repair 1's miss.
    // The converging attempt leaves none.
    assert_eq!(run.payloads(AuditEvent::Signature).len(), 3);
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("ok\n"));
}

#[test]
fn repeated_failure_signature_terminates_the_repair_loop() {
    let run = run_scenario("repair-same-signature");

    assert_eq!(run.result.status, RunStatus::Failed);
    assert_eq!(run.result.failure_reason.as_deref(), Some("repeated_signature"));
    assert_eq!(run.result.steps_completed, 0);

    let terminated = run.payloads(AuditEvent::RepairTerminated);
    assert_eq!(terminated.len(), 1);
    assert_eq!(terminated[0]["reason"], serde_json::json!("repeated_signature"));
    assert_eq!(terminated[0]["attempts_used"], serde_json::json!(2));
    assert_eq!(terminated[0]["step_id"], serde_json::json!("s1"));

    // Exactly two repair attempts touched the workspace; the second produced
    // the same normalized failure as the first despite different bytes.
    assert_eq!(run.applies_in_phase("REPAIR").len(), 2);
    let repair_signatures: Vec<_> = run
        .payloads(AuditEvent::Signature)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("REPAIR"))
        .collect();
    assert_eq!(repair_signatures.len(), 2);
    assert_eq!(
        repair_signatures[0]["normalized_message"],
        repair_signatures[1]["normalized_message"]
    );
    assert_eq!(repair_signatures[0]["exception_type"], serde_json::json!("MarkerError"));

    let failed = run.payloads(AuditEvent::RunFailed);
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["reason"], serde_json::json!("repeated_signature"));
    assert_eq!(failed[0]["step_id"], serde_json::json!("s1"));
    assert_eq!(run.phases().last().map(String::as_str), Some("FAILED"));
}

#[test]
fn repair_cap_stops_the_loop_after_three_attempts() {
    let run = run_scenario("repair-cap-exhaustion");

    assert_eq!(run.result.status, RunStatus::Failed);
    assert_eq!(run.result.failure_reason.as_deref(), Some("repair_cap_exhausted"));

    let terminated = run.payloads(AuditEvent::RepairTerminated);
    assert_eq!(terminated.len(), 1);
    assert_eq!(terminated[0]["reason"], serde_json::json!("repair_cap_exhausted"));
    assert_eq!(terminated[0]["attempts_used"], serde_json::json!(3));

    // The cap is checked before the prompt: exactly three repair proposals
    // were ever requested, and all three were applied.
    let repair_attempts: Vec<u64> = run
        .payloads(AuditEvent::ProposalReceived)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("REPAIR"))
        .map(|p| p["attempt"].as_u64().unwrap())
        .collect();
    assert_eq!(repair_attempts, [1, 2, 3]);
    assert_eq!(run.applies_in_phase("REPAIR").len(), 3);
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("wrong-d\n"));
}

#[test]
fn failed_refactor_is_rolled_back_and_the_step_still_completes() {
    let run = run_scenario("refactor-rollback");

    // The refactor broke the suite, but refactoring is advisory: the run
    // completes and the green state survives.
    assert_eq!(run.result.status, RunStatus::Done);
    assert_eq!(run.result.steps_completed, 1);
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("ok\n"));

    let refactor_applies = run.applies_in_phase("REFACTOR");
    assert_eq!(refactor_applies.len(), 1);

    let refactor_suites: Vec<_> = run
        .payloads(AuditEvent::TestReport)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("REFACTOR"))
        .collect();
    assert_eq!(refactor_suites.len(), 1);
    assert_eq!(refactor_suites[0]["effective_pass"], serde_json::json!(false));

    // The rollback restored exactly the tree the refactor started from.
    let rollbacks = run.payloads(AuditEvent::Rollback);
    assert_eq!(rollbacks.len(), 1);
    assert_eq!(rollbacks[0]["cause"], serde_json::json!("refactor_failed"));
    assert_eq!(rollbacks[0]["restored_root"], refactor_applies[0]["pre_root"]);
}

#[test]
fn noop_repair_proposal_terminates_without_touching_the_workspace() {
    let run = run_scenario("noop-termination");

    assert_eq!(run.result.status, RunStatus::Failed);
    assert_eq!(run.result.failure_reason.as_deref(), Some("no_effective_change"));

    let terminated = run.payloads(AuditEvent::RepairTerminated);
    assert_eq!(terminated.len(), 1);
    assert_eq!(terminated[0]["reason"], serde_json::json!("no_effective_change"));
    assert_eq!(terminated[0]["attempts_used"], serde_json::json!(1));

    // The proposal cleared the gates but wrote nothing new, so it was never
    // applied and the marker still holds GREEN's content.
    assert!(run.applies_in_phase("REPAIR").is_empty());
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("broken\n"));
}

#[test]
fn proposal_equivalent_to_an_earlier_attempt_terminates_the_loop() {
    let run = run_scenario("equivalent-termination");

    assert_eq!(run.result.status, RunStatus::Failed);
    assert_eq!(run.result.failure_reason.as_deref(), Some("equivalent_proposal"));

    let terminated = run.payloads(AuditEvent::RepairTerminated);
    assert_eq!(terminated.len(), 1);
    assert_eq!(terminated[0]["reason"], serde_json::json!("equivalent_proposal"));
    assert_eq!(terminated[0]["attempts_used"], serde_json::json!(2));

    // Attempt 2 was parsed, recognized as a repeat of attempt 1, and never
    // reached the gates: one repair gate report, one repair apply.
    let repair_gates: Vec<_> = run
        .payloads(AuditEvent::GateReport)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("REPAIR"))
        .collect();
    assert_eq!(repair_gates.len(), 1);
    assert_eq!(run.applies_in_phase("REPAIR").len(), 1);
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("wrong-b\n"));
}

#[test]
fn green_noop_is_rejected_and_repair_starts_at_attempt_two() {
    let run = run_scenario("green-noop-rejected");

    assert_eq!(run.result.status, RunStatus::Done, "reason: {:?}", run.result.failure_reason);
    assert_eq!(run.phases_for_step("s1"), ["RED", "GREEN", "REPAIR", "REFACTOR", "STEP_DONE"]);

    // GREEN re-proposed the file's existing bytes: gates passed but the
    // no-op rejection is recorded on the gate report, and no GREEN apply
    // ever happened.
    let green_gates: Vec<_> = run
        .payloads(AuditEvent::GateReport)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("GREEN"))
        .collect();
    assert_eq!(green_gates.len(), 1);
    assert_eq!(green_gates[0]["noop_rejected"], serde_json::json!(true));
    assert_eq!(green_gates[0]["passed"], serde_json::json!(false));
    assert!(run.applies_in_phase("GREEN").is_empty());

    // The rejection cost the first repair attempt: the loop began at 2.
    let repair_attempts: Vec<u64> = run
        .payloads(AuditEvent::ProposalReceived)
        .into_iter()
        .filter(|p| p["phase"].as_str() == Some("REPAIR"))
        .map(|p| p["attempt"].as_u64().unwrap())
        .collect();
    assert_eq!(repair_attempts, [2]);
    assert_eq!(run.workspace_file("src/marker.txt").as_deref(), Some("ok\n"));
}

#[test]
fn missing_fixture_fails_the_run_without_a_crash() {
    // Sabotage a healthy scenario: GREEN's scripted response is absent, so
    // the provider errors and the engine must fold that into a FAILED run.
    let scenario = stage("repair-converges");
    let fixtures = match &scenario.config.provider {
        tdd_governor::config::ProviderSpec::Scripted { fixtures_dir } => fixtures_dir.clone(),
        other => panic!("unexpected provider {other}"),
    };
    std::fs::remove_file(fixtures.join("s1__GREEN__1.txt")).unwrap();

    let (engine, provider) = common::build_engine(&scenario.config);
    let mut sink = |_: &str| {};
    let result = engine.run(&provider, None, &mut sink).expect("fault is absorbed, not fatal");

    assert_eq!(result.status, RunStatus::Failed);
    let reason = result.failure_reason.expect("failed runs carry a reason");
    assert!(reason.starts_with("provider_error:"), "unexpected reason {reason:?}");
    assert!(reason.contains("s1__GREEN__1.txt"), "reason names the missing fixture: {reason:?}");
}

#[test]
fn audit_seq_is_contiguous_from_zero_for_every_scenario() {
    for name in ["repair-converges", "repair-same-signature", "noop-termination"] {
        let run = run_scenario(name);
        for (i, record) in run.records.iter().enumerate() {
            assert_eq!(record.seq, i as u64, "scenario {name}: gap at record {i}");
        }
        assert!(!run.records.is_empty(), "scenario {name} produced an empty log");
    }
}
