//! Shared staging for the scenario-driven integration tests.
//!
//! A scenario is a directory under `tests/data/scenarios/<name>/` holding a
//! `config.json`, a `spec.md`, a `fixtures/` directory of scripted provider
//! responses, and optionally a `project/` tree. Scenarios without their own
//! project run against a copy of `tests/data/sim_template/`, a shell-script
//! suite that derives deterministic JUnit XML from marker files.
//!
//! Everything is staged into a fresh temp directory per run, so tests never
//! mutate the checked-in data and can run in parallel.

// Each integration test binary compiles its own copy of this module and
// none of them uses every helper.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tdd_governor::agents::ScriptedProvider;
use tdd_governor::config::{load_config, LoadedConfig, ProviderSpec};
use tdd_governor::manifesto::load_manifesto;
use tdd_governor::orchestrator::audit::{read_audit, AuditEvent, AuditRecord};
use tdd_governor::orchestrator::{Engine, RunResult};
use tempfile::TempDir;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

/// Recursively copy `src` into `dst`, creating `dst` if needed.
pub fn copy_tree(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap_or_else(|e| panic!("create {}: {e}", dst.display()));
    for entry in std::fs::read_dir(src).unwrap_or_else(|e| panic!("read {}: {e}", src.display())) {
        let entry = entry.expect("directory entry");
        let from = entry.path();
        let to = dst.join(entry.file_name());
        if entry.file_type().expect("file type").is_dir() {
            copy_tree(&from, &to);
        } else {
            std::fs::copy(&from, &to)
                .unwrap_or_else(|e| panic!("copy {} -> {}: {e}", from.display(), to.display()));
        }
    }
}

/// A scenario staged into its own temp directory, config already resolved.
pub struct Scenario {
    /// Owns the staged tree; dropping it deletes everything.
    pub dir: TempDir,
    pub config: LoadedConfig,
}

pub fn stage(name: &str) -> Scenario {
    let src = data_dir().join("scenarios").join(name);
    assert!(src.is_dir(), "unknown scenario {name:?} (no {})", src.display());
    let dir = tempfile::tempdir().expect("scenario temp dir");
    copy_tree(&src, dir.path());
    if !dir.path().join("project").is_dir() {
        copy_tree(&data_dir().join("sim_template"), &dir.path().join("project"));
    }
    std::fs::copy(data_dir().join("manifesto.json"), dir.path().join("manifesto.json"))
        .expect("stage shared manifesto");
    let config = load_config(&dir.path().join("config.json"))
        .unwrap_or_else(|e| panic!("scenario {name} config: {e}"));
    Scenario { dir, config }
}

/// Build the engine and scripted provider a staged scenario describes.
pub fn build_engine(config: &LoadedConfig) -> (Engine, ScriptedProvider) {
    let spec_text = std::fs::read_to_string(&config.spec_path)
        .unwrap_or_else(|e| panic!("spec {}: {e}", config.spec_path.display()));
    let manifesto = load_manifesto(&config.manifesto_path)
        .unwrap_or_else(|e| panic!("manifesto: {e}"));
    let fixtures_dir = match &config.provider {
        ProviderSpec::Scripted { fixtures_dir } => fixtures_dir.clone(),
        other => panic!("scenario providers are scripted, got {other}"),
    };
    let engine = Engine::new(
        config.policy.clone(),
        config.runner.clone(),
        manifesto,
        spec_text,
        config.run_dir.clone(),
        config.refactor_enabled,
        config.principle_budget,
    );
    (engine, ScriptedProvider::new(fixtures_dir))
}

/// A completed scenario run with everything the assertions need.
pub struct Run {
    pub scenario: Scenario,
    pub result: RunResult,
    pub records: Vec<AuditRecord>,
    pub progress: Vec<String>,
    /// Absolute run-directory path inside the staged workspace.
    pub run_dir: PathBuf,
}

pub fn run_scenario(name: &str) -> Run {
    let scenario = stage(name);
    let (engine, provider) = build_engine(&scenario.config);
    let mut progress = Vec::new();
    let mut sink = |line: &str| progress.push(line.to_string());
    let result = engine
        .run(&provider, None, &mut sink)
        .unwrap_or_else(|e| panic!("scenario {name} hit a fatal engine error: {e}"));
    let run_dir = engine.run_dir();
    let records = read_audit(&run_dir.join(&result.audit_path))
        .unwrap_or_else(|e| panic!("scenario {name} audit: {e}"));
    Run { scenario, result, records, progress, run_dir }
}

impl Run {
    /// Payloads of every record of one event type, in log order.
    pub fn payloads(&self, event: AuditEvent) -> Vec<&serde_json::Value> {
        self.records.iter().filter(|r| r.event == event).map(|r| &r.payload).collect()
    }

    /// The `phase_enter` phases in log order, e.g. `["PLANNING", "RED", …]`.
    pub fn phases(&self) -> Vec<String> {
        self.payloads(AuditEvent::PhaseEnter)
            .iter()
            .map(|p| p["phase"].as_str().expect("phase_enter carries a phase").to_string())
            .collect()
    }

    /// Phases entered for one step only (planning and run-level phases have
    /// no step_id and never match).
    pub fn phases_for_step(&self, step_id: &str) -> Vec<String> {
        self.payloads(AuditEvent::PhaseEnter)
            .iter()
            .filter(|p| p["step_id"].as_str() == Some(step_id))
            .map(|p| p["phase"].as_str().expect("phase").to_string())
            .collect()
    }

    /// `apply_receipt` payloads recorded while in the given phase.
    pub fn applies_in_phase(&self, phase: &str) -> Vec<&serde_json::Value> {
        self.payloads(AuditEvent::ApplyReceipt)
            .into_iter()
            .filter(|p| p["phase"].as_str() == Some(phase))
            .collect()
    }

    /// Text of the staged workspace file at `rel`, if it exists.
    pub fn workspace_file(&self, rel: &str) -> Option<String> {
        std::fs::read_to_string(self.scenario.config.workspace_root.join(rel)).ok()
    }
}
