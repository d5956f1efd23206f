//! Run configuration: one JSON document wiring the workspace, policy,
//! runner, and provider together.
//!
//! Relative paths in the document resolve against the directory containing
//! the config file, so a project can carry its own `governor.json` and be
//! run from anywhere. The run directory is the one exception: it is a
//! relative name resolved against the workspace root, because the audit
//! trail belongs to the workspace it describes.
//!
//! Loading is two-stage. Shape errors (unknown fields, wrong types) surface
//! as `ConfigError::Parse` with serde's own field/line diagnostics;
//! everything that parses is then validated semantically, and *all*
//! problems are collected before reporting so an operator fixes a config in
//! one round trip, not five.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::agents::HttpProviderConfig;
use crate::governance::{ApprovalMode, PolicyConfig};
use crate::testrun::RunnerConfig;

/// Run-directory name used when the config does not choose one.
pub const DEFAULT_RUN_DIR: &str = ".governor";

/// Manifesto filename used when the config does not choose one.
pub const DEFAULT_MANIFESTO: &str = "tdd_manifesto.json";

/// Principles injected per prompt when the config does not choose.
pub const DEFAULT_PRINCIPLE_BUDGET: usize = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    /// The document does not match the schema; `detail` is serde's own
    /// diagnostic and names the offending field and position.
    #[error("config {path}: {detail}")]
    Parse { path: String, detail: String },
    /// The document parsed but cannot drive a run. Every problem is listed.
    #[error("{}", format_problems(.problems))]
    Invalid { problems: Vec<String> },
}

fn format_problems(problems: &[String]) -> String {
    let mut out = String::from("invalid configuration:");
    for p in problems {
        out.push_str("\n  - ");
        out.push_str(p);
    }
    out
}

/// Which provider backs the run.
#[derive(Debug, Clone)]
pub enum ProviderSpec {
    /// Replay canned responses from a fixture directory.
    Scripted { fixtures_dir: PathBuf },
    /// POST to a chat-completions endpoint. The API key is **never** part
    /// of the configuration; it comes from the environment at run time.
    Http(HttpProviderConfig),
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub workspace_root: PathBuf,
    pub spec_path: PathBuf,
    pub manifesto_path: PathBuf,
    /// Relative to `workspace_root`.
    pub run_dir: String,
    pub policy: PolicyConfig,
    pub runner: RunnerConfig,
    pub provider: ProviderSpec,
    pub refactor_enabled: bool,
    pub principle_budget: usize,
}

// ---------------------------------------------------------------------
// Raw document shape
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    workspace_root: PathBuf,
    /// Specification text handed to the planner.
    spec_path: PathBuf,
    manifesto_path: Option<PathBuf>,
    run_dir: Option<String>,
    refactor_enabled: Option<bool>,
    principle_budget: Option<usize>,
    #[serde(default)]
    policy: PolicySection,
    runner: RunnerConfig,
    provider: ProviderSection,
}

/// Tunable policy knobs; anything omitted keeps the engine default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    denied_globs: Option<Vec<String>>,
    test_globs: Option<Vec<String>>,
    approval_mode: Option<ApprovalMode>,
    repair_cap: Option<u32>,
    rules_max_changes: Option<usize>,
    rules_max_bytes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProviderKind {
    Scripted,
    Http,
}

/// Provider settings, kept flat so validation can name exact fields.
/// Which fields are required (and which are forbidden) depends on `kind`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderSection {
    kind: ProviderKind,
    fixtures_dir: Option<PathBuf>,
    base_url: Option<String>,
    model: Option<String>,
    temperature: Option<f64>,
    timeout_seconds: Option<u64>,
}

// ---------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------

/// Load and validate the config at `path`.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let raw: RawConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(raw, base)
}

/// Resolve paths against `base` and check everything the schema cannot.
fn resolve(raw: RawConfig, base: &Path) -> Result<LoadedConfig, ConfigError> {
    let mut problems = Vec::new();

    let workspace_root = absolutize(base, &raw.workspace_root);
    if !workspace_root.is_dir() {
        problems.push(format!(
            "workspace_root: {} is not a directory",
            workspace_root.display()
        ));
    }

    let spec_path = absolutize(base, &raw.spec_path);
    if !spec_path.is_file() {
        problems.push(format!("spec_path: {} is not a file", spec_path.display()));
    }

    let manifesto_path = absolutize(
        base,
        raw.manifesto_path
            .as_deref()
            .unwrap_or_else(|| Path::new(DEFAULT_MANIFESTO)),
    );
    if !manifesto_path.is_file() {
        problems.push(format!(
            "manifesto_path: {} is not a file",
            manifesto_path.display()
        ));
    }

    let run_dir = raw.run_dir.unwrap_or_else(|| DEFAULT_RUN_DIR.to_string());
    check_run_dir(&run_dir, &mut problems);

    // Policy: engine defaults overlaid with whatever the section sets.
    let mut policy = PolicyConfig::for_root(workspace_root.clone(), &run_dir);
    let section = raw.policy;
    if let Some(globs) = section.denied_globs {
        policy.denied_globs = globs;
        policy.ensure_run_dir_denied(&run_dir);
    }
    if let Some(globs) = section.test_globs {
        policy.test_globs = globs;
    }
    if let Some(mode) = section.approval_mode {
        policy.approval_mode = mode;
    }
    if let Some(cap) = section.repair_cap {
        policy.repair_cap = cap;
    }
    if let Some(n) = section.rules_max_changes {
        policy.rules_max_changes = n;
    }
    if let Some(n) = section.rules_max_bytes {
        policy.rules_max_bytes = n;
    }
    if let Err(e) = policy.denied_set() {
        problems.push(format!("policy.denied_globs: {e}"));
    }
    if let Err(e) = policy.test_set() {
        problems.push(format!("policy.test_globs: {e}"));
    }

    let runner = raw.runner;
    check_runner(&runner, &mut problems);

    let provider = check_provider(raw.provider, base, &mut problems);

    if !problems.is_empty() {
        return Err(ConfigError::Invalid { problems });
    }
    Ok(LoadedConfig {
        workspace_root,
        spec_path,
        manifesto_path,
        run_dir,
        policy,
        runner,
        // Validation failed above unless the provider resolved.
        provider: provider.expect("provider resolved"),
        refactor_enabled: raw.refactor_enabled.unwrap_or(true),
        principle_budget: raw.principle_budget.unwrap_or(DEFAULT_PRINCIPLE_BUDGET),
    })
}

fn absolutize(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The run directory must stay inside the workspace: a plain relative name,
/// no traversal, no absolute escape.
fn check_run_dir(run_dir: &str, problems: &mut Vec<String>) {
    if run_dir.is_empty() {
        problems.push("run_dir: must not be empty".to_string());
        return;
    }
    let path = Path::new(run_dir);
    if path.is_absolute() {
        problems.push(format!("run_dir: {run_dir} must be relative to the workspace root"));
        return;
    }
    if run_dir.contains('\\') {
        problems.push(format!("run_dir: {run_dir} must use forward slashes"));
        return;
    }
    if path
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        problems.push(format!("run_dir: {run_dir} must not traverse outside the workspace"));
    }
}

fn check_runner(runner: &RunnerConfig, problems: &mut Vec<String>) {
    if runner.command.trim().is_empty() {
        problems.push("runner.command: must not be empty".to_string());
    }
    if runner.report_path.trim().is_empty() {
        problems.push("runner.report_path: must not be empty".to_string());
    } else if Path::new(&runner.report_path).is_absolute() {
        problems.push(format!(
            "runner.report_path: {} must be relative to the workspace root",
            runner.report_path
        ));
    }
    if runner.timeout_seconds == 0 {
        problems.push("runner.timeout_seconds: must be at least 1".to_string());
    }
}

/// Enforce the per-kind field contract and build the provider spec.
fn check_provider(
    section: ProviderSection,
    base: &Path,
    problems: &mut Vec<String>,
) -> Option<ProviderSpec> {
    match section.kind {
        ProviderKind::Scripted => {
            for (name, present) in [
                ("base_url", section.base_url.is_some()),
                ("model", section.model.is_some()),
                ("temperature", section.temperature.is_some()),
                ("timeout_seconds", section.timeout_seconds.is_some()),
            ] {
                if present {
                    problems.push(format!(
                        "provider.{name}: not applicable when kind is \"scripted\""
                    ));
                }
            }
            match section.fixtures_dir {
                Some(dir) => {
                    let dir = absolutize(base, &dir);
                    if !dir.is_dir() {
                        problems.push(format!(
                            "provider.fixtures_dir: {} is not a directory",
                            dir.display()
                        ));
                        None
                    } else {
                        Some(ProviderSpec::Scripted { fixtures_dir: dir })
                    }
                }
                None => {
                    problems.push(
                        "provider.fixtures_dir: required when kind is \"scripted\"".to_string(),
                    );
                    None
                }
            }
        }
        ProviderKind::Http => {
            if section.fixtures_dir.is_some() {
                problems.push(
                    "provider.fixtures_dir: not applicable when kind is \"http\"".to_string(),
                );
            }
            let mut missing = Vec::new();
            if section.base_url.as_deref().map_or(true, |s| s.trim().is_empty()) {
                missing.push("provider.base_url");
            }
            if section.model.as_deref().map_or(true, |s| s.trim().is_empty()) {
                missing.push("provider.model");
            }
            if !missing.is_empty() {
                for field in missing {
                    problems.push(format!("{field}: required when kind is \"http\""));
                }
                return None;
            }
            let mut cfg = HttpProviderConfig::new(
                section.base_url.expect("checked above"),
                section.model.expect("checked above"),
            );
            if let Some(t) = section.temperature {
                cfg.temperature = t;
            }
            if let Some(t) = section.timeout_seconds {
                cfg.timeout_seconds = t;
            }
            Some(ProviderSpec::Http(cfg))
        }
    }
}

// ---------------------------------------------------------------------
// CLI overrides
// ---------------------------------------------------------------------

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Default)]
pub struct Overrides {
    pub manifesto_path: Option<PathBuf>,
    /// Forces the scripted provider with this fixture directory, whatever
    /// the config says — the offline escape hatch.
    pub fixtures_dir: Option<PathBuf>,
    pub approval_mode: Option<ApprovalMode>,
    pub repair_cap: Option<u32>,
    pub no_refactor: bool,
    pub run_dir: Option<String>,
}

impl LoadedConfig {
    /// Apply CLI overrides; flag values win over the document.
    pub fn apply_overrides(&mut self, overrides: Overrides) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Some(path) = overrides.manifesto_path {
            if !path.is_file() {
                problems.push(format!("--manifesto: {} is not a file", path.display()));
            } else {
                self.manifesto_path = path;
            }
        }
        if let Some(dir) = overrides.fixtures_dir {
            if !dir.is_dir() {
                problems.push(format!("--fixtures: {} is not a directory", dir.display()));
            } else {
                self.provider = ProviderSpec::Scripted { fixtures_dir: dir };
            }
        }
        if let Some(mode) = overrides.approval_mode {
            self.policy.approval_mode = mode;
        }
        if let Some(cap) = overrides.repair_cap {
            self.policy.repair_cap = cap;
        }
        if overrides.no_refactor {
            self.refactor_enabled = false;
        }
        if let Some(run_dir) = overrides.run_dir {
            check_run_dir(&run_dir, &mut problems);
            if problems.is_empty() {
                self.policy.ensure_run_dir_denied(&run_dir);
                self.run_dir = run_dir;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { problems })
        }
    }

    /// Environment for the runner, exposed for display/debugging.
    pub fn runner_env(&self) -> &BTreeMap<String, String> {
        &self.runner.env
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::Scripted { fixtures_dir } => {
                write!(f, "scripted ({})", fixtures_dir.display())
            }
            ProviderSpec::Http(cfg) => write!(f, "http ({} model={})", cfg.base_url, cfg.model),
        }
    }
}
