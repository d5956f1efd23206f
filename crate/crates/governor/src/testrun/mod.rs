//! Deterministic test execution and failure signatures.
//!
//! The engine never interprets test output by reading stdout prose: the
//! runner must produce a machine-readable report (JUnit-style XML or
//! line-delimited JSON cases), which this module converts into a
//! [`TestReport`] and, when something failed, a [`FailureSignature`] — the
//! repair loop's deduplication key.
//!
//! Execution is sandboxed for reproducibility: the child process gets a
//! scrubbed environment (fixed locale and timezone, pinned seed variables, a
//! HOME inside the workspace) and a hard timeout. Timeouts and missing
//! reports are recorded as ERROR-class reports rather than raised — a hung
//! suite is evidence about the code under test, not an engine crash.

pub mod junit;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;
use thiserror::Error;

/// Supported report formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    JunitXml,
    JsonlCases,
}

/// How to run the project's tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    /// Shell command executed with `sh -c` in the workspace root.
    pub command: String,
    /// Workspace-relative path of the report the command writes.
    pub report_path: String,
    pub report_format: ReportFormat,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
    /// Extra environment variables, applied after the sanitized base set.
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOutcome {
    Pass,
    Fail,
    Error,
}

/// One test case result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub test_id: String,
    pub outcome: CaseOutcome,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub duration_ms: u64,
}

/// A full test run.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub run_id: String,
    pub command: String,
    pub exit_status: i64,
    pub cases: Vec<TestCase>,
    pub raw_output: String,
    /// True when the suite parsed cleanly but contained zero cases — a
    /// vacuously green run the engine refuses to treat as passing.
    pub suspicious_empty: bool,
}

impl TestReport {
    /// The raw report verdict: every case passed and the exit status is 0.
    /// Vacuously true for an empty suite; see [`TestReport::effective_pass`].
    pub fn overall_pass(&self) -> bool {
        self.exit_status == 0 && self.cases.iter().all(|c| c.outcome == CaseOutcome::Pass)
    }

    /// What the engine actually treats as green: a real, non-empty pass.
    pub fn effective_pass(&self) -> bool {
        self.overall_pass() && !self.suspicious_empty
    }

    /// Sorted, deduplicated ids of non-pass cases.
    pub fn failing_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .cases
            .iter()
            .filter(|c| c.outcome != CaseOutcome::Pass)
            .map(|c| c.test_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut passed = 0;
        let mut failed = 0;
        let mut errored = 0;
        for case in &self.cases {
            match case.outcome {
                CaseOutcome::Pass => passed += 1,
                CaseOutcome::Fail => failed += 1,
                CaseOutcome::Error => errored += 1,
            }
        }
        (passed, failed, errored)
    }
}

/// The repair loop's deduplication key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSignature {
    pub exception_type: String,
    /// Sorted lexicographically, deduplicated.
    pub failing_tests: Vec<String>,
    pub normalized_message: String,
}

#[derive(Debug, Error)]
pub enum TestRunError {
    #[error("could not start test command {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report at byte {byte_offset}: {detail}")]
    MalformedReport { byte_offset: usize, detail: String },
    #[error("signature requested for an all-pass report")]
    NoFailure,
}

/// Synthetic test id for a run that exceeded its timeout.
pub const TIMEOUT_CASE_ID: &str = "governor::runner_timeout";
/// Synthetic test id for a run that produced no report file.
pub const MISSING_REPORT_CASE_ID: &str = "governor::report_missing";

/// Execute the configured test command in `root` and parse its report.
///
/// The child environment is rebuilt from scratch: PATH is inherited (tools
/// must be findable), HOME points into the workspace, locale/timezone are
/// pinned, and seed variables are fixed so seeded suites repeat. Timeouts
/// kill the process tree's leader and produce an ERROR-class report; so does
/// a command that exits without writing its report file.
pub fn run_tests(root: &Path, cfg: &RunnerConfig, run_id: &str) -> Result<TestReport, TestRunError> {
    let report_path = root.join(&cfg.report_path);
    let _ = std::fs::remove_file(&report_path);

    let mut command = std::process::Command::new("sh");
    command
        .arg("-c")
        .arg(&cfg.command)
        .current_dir(root)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", root)
        .env("LC_ALL", "C")
        .env("LANG", "C")
        .env("TZ", "UTC")
        .env("PYTHONHASHSEED", "0")
        .env("TDD_GOVERNOR_SEED", "0")
        .stdin(std::process::Stdio::null())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped());
    for (key, value) in &cfg.env {
        command.env(key, value);
    }

    let mut child = command
        .spawn()
        .map_err(|source| TestRunError::Spawn { command: cfg.command.clone(), source })?;

    // Drain both pipes on threads so a chatty suite can't deadlock the wait.
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = std::thread::spawn(move || read_all(stdout));
    let err_reader = std::thread::spawn(move || read_all(stderr));

    use wait_timeout::ChildExt;
    let timeout = Duration::from_secs(cfg.timeout_seconds);
    let status = child.wait_timeout(timeout).map_err(|source| TestRunError::Spawn {
        command: cfg.command.clone(),
        source,
    })?;

    let timed_out = status.is_none();
    if timed_out {
        let _ = child.kill();
        let _ = child.wait();
    }
    let exit_status: i64 = match status {
        Some(s) => s.code().map(i64::from).unwrap_or(-1),
        None => -1,
    };

    let mut raw_output = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let err_text = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    if !err_text.is_empty() {
        raw_output.push_str(&err_text);
    }

    if timed_out {
        return Ok(TestReport {
            run_id: run_id.to_string(),
            command: cfg.command.clone(),
            exit_status,
            cases: vec![TestCase {
                test_id: TIMEOUT_CASE_ID.to_string(),
                outcome: CaseOutcome::Error,
                message: format!(
                    "RunnerTimeout: test command exceeded the {}s limit",
                    cfg.timeout_seconds
                ),
                duration_ms: cfg.timeout_seconds * 1000,
            }],
            raw_output,
            suspicious_empty: false,
        });
    }

    let bytes = match std::fs::read(&report_path) {
        Ok(bytes) => bytes,
        Err(_) => {
            return Ok(TestReport {
                run_id: run_id.to_string(),
                command: cfg.command.clone(),
                exit_status,
                cases: vec![TestCase {
                    test_id: MISSING_REPORT_CASE_ID.to_string(),
                    outcome: CaseOutcome::Error,
                    message: format!(
                        "ReportMissing: test command exited with status {exit_status} but wrote no report at {}",
                        cfg.report_path
                    ),
                    duration_ms: 0,
                }],
                raw_output,
                suspicious_empty: false,
            });
        }
    };

    let (cases, suspicious_empty) = parse_report(&bytes, cfg.report_format)?;
    Ok(TestReport {
        run_id: run_id.to_string(),
        command: cfg.command.clone(),
        exit_status,
        cases,
        raw_output,
        suspicious_empty,
    })
}

fn read_all(mut source: impl Read) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = source.read_to_end(&mut buf);
    buf
}

/// Parse report bytes into cases plus the suspicious-empty flag.
pub fn parse_report(
    bytes: &[u8],
    format: ReportFormat,
) -> Result<(Vec<TestCase>, bool), TestRunError> {
    match format {
        ReportFormat::JunitXml => parse_junit(bytes),
        ReportFormat::JsonlCases => parse_jsonl(bytes),
    }
}

/// Map JUnit XML to cases.
///
/// * `<failure>` → fail, `<error>` → error (collection/import problems),
///   `<skipped>` → pass (a skip is not evidence of failure and must not block
///   a green verdict).
/// * test_id is `classname::name`, or just `name` when classname is empty; a
///   case with neither gets a synthetic `collection::<ordinal>` id.
/// * messages compose `type: message` plus the element text, so the first
///   token of a failure message is its failure class when the runner
///   provides one.
fn parse_junit(bytes: &[u8]) -> Result<(Vec<TestCase>, bool), TestRunError> {
    let root = junit::parse_document(bytes).map_err(|e| TestRunError::MalformedReport {
        byte_offset: e.byte_offset,
        detail: e.detail,
    })?;
    if !matches!(root.name.as_str(), "testsuites" | "testsuite") {
        return Err(TestRunError::MalformedReport {
            byte_offset: 0,
            detail: format!("root element <{}> is not <testsuites> or <testsuite>", root.name),
        });
    }
    let mut elements = Vec::new();
    root.find_all("testcase", &mut elements);

    let mut cases = Vec::new();
    for (ordinal, el) in elements.iter().enumerate() {
        let classname = el.attr("classname").unwrap_or("");
        let name = el.attr("name").unwrap_or("");
        let test_id = match (classname.is_empty(), name.is_empty()) {
            (false, false) => format!("{classname}::{name}"),
            (true, false) => name.to_string(),
            (false, true) => classname.to_string(),
            (true, true) => format!("collection::{ordinal}"),
        };
        let duration_ms = el
            .attr("time")
            .and_then(|t| t.parse::<f64>().ok())
            .map(|secs| (secs * 1000.0).round().max(0.0) as u64)
            .unwrap_or(0);

        let verdict_child = el
            .children
            .iter()
            .find(|c| matches!(c.name.as_str(), "failure" | "error" | "skipped"));
        let (outcome, message) = match verdict_child {
            None => (CaseOutcome::Pass, String::new()),
            Some(child) => {
                let outcome = match child.name.as_str() {
                    "failure" => CaseOutcome::Fail,
                    "error" => CaseOutcome::Error,
                    _ => CaseOutcome::Pass,
                };
                let mut parts: Vec<&str> = Vec::new();
                let type_attr = child.attr("type").unwrap_or("");
                let msg_attr = child.attr("message").unwrap_or("");
                let composed = match (type_attr.is_empty(), msg_attr.is_empty()) {
                    (false, false) => format!("{type_attr}: {msg_attr}"),
                    (false, true) => type_attr.to_string(),
                    (true, false) => msg_attr.to_string(),
                    (true, true) => String::new(),
                };
                if !composed.is_empty() {
                    parts.push(&composed);
                }
                let body = child.text.trim();
                if !body.is_empty() {
                    parts.push(body);
                }
                (outcome, parts.join("\n"))
            }
        };
        cases.push(TestCase { test_id, outcome, message, duration_ms });
    }

    let suspicious_empty = cases.is_empty();
    Ok((cases, suspicious_empty))
}

/// Parse the line-delimited alternative: one JSON case object per line.
fn parse_jsonl(bytes: &[u8]) -> Result<(Vec<TestCase>, bool), TestRunError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TestRunError::MalformedReport {
        byte_offset: e.valid_up_to(),
        detail: "report is not valid UTF-8".to_string(),
    })?;
    let mut cases = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let case: TestCase =
                serde_json::from_str(trimmed).map_err(|e| TestRunError::MalformedReport {
                    byte_offset: offset,
                    detail: e.to_string(),
                })?;
            cases.push(case);
        }
        offset += line.len();
    }
    let suspicious_empty = cases.is_empty();
    Ok((cases, suspicious_empty))
}

/// Scrub a failure message down to its stable core.
///
/// Applied in order: hex addresses → `<ADDR>`; absolute paths under the
/// workspace root → `<WS>`; other multi-segment absolute paths → `<PATH>`;
/// `:<line>` / `:<line>:<col>` suffixes stripped (only after a non-digit, so
/// clock times survive for the next rule); ISO timestamps and duration
/// tokens stripped; whitespace collapsed and trimmed. The pipeline is
/// repeated until the text stops changing — stripping one pattern can expose
/// another (a removed timestamp may leave a path flush against a word
/// boundary) — so the result is a fixed point and the function is idempotent:
/// `normalize_message(normalize_message(x)) == normalize_message(x)`.
pub fn normalize_message(msg: &str, workspace_root: Option<&Path>) -> String {
    static ADDR: OnceLock<regex::Regex> = OnceLock::new();
    static PATH: OnceLock<regex::Regex> = OnceLock::new();
    static LINECOL: OnceLock<regex::Regex> = OnceLock::new();
    static TIMESTAMP: OnceLock<regex::Regex> = OnceLock::new();
    static DURATION: OnceLock<regex::Regex> = OnceLock::new();
    static SPACES: OnceLock<regex::Regex> = OnceLock::new();

    let addr = ADDR.get_or_init(|| regex::Regex::new(r"0[xX][0-9a-fA-F]+").unwrap());
    // No lookbehind in the regex crate: capture the preceding character and
    // reinsert it. `[^>\w]` keeps already-rewritten `<WS>`/`<PATH>` prefixes
    // from being re-matched, which is what makes the pass idempotent.
    let path = PATH
        .get_or_init(|| regex::Regex::new(r"(^|[^>\w])((?:/[\w.\-]+){2,})").unwrap());
    let linecol = LINECOL.get_or_init(|| regex::Regex::new(r"([^\s:\d]):\d+(:\d+)*").unwrap());
    let timestamp = TIMESTAMP.get_or_init(|| {
        regex::Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})?")
            .unwrap()
    });
    let duration = DURATION.get_or_init(|| {
        regex::Regex::new(
            r"\b\d+(\.\d+)?\s?(milliseconds?|microseconds?|nanoseconds?|seconds?|minutes?|msecs?|usecs?|secs?|mins?|ms|us|µs|ns|s)\b",
        )
        .unwrap()
    });
    let spaces = SPACES.get_or_init(|| regex::Regex::new(r"\s+").unwrap());

    let scrub = |input: &str| -> String {
        let mut out = addr.replace_all(input, "<ADDR>").into_owned();
        if let Some(root) = workspace_root {
            out = replace_root(&out, &root.display().to_string());
        }
        out = path.replace_all(&out, "$1<PATH>").into_owned();
        out = linecol.replace_all(&out, "$1").into_owned();
        out = timestamp.replace_all(&out, "").into_owned();
        out = duration.replace_all(&out, "").into_owned();
        out = spaces.replace_all(&out, " ").into_owned();
        out.trim().to_string()
    };

    // Every pass either deletes text or rewrites it into `<…>` tokens that
    // no later pass matches, so iteration reaches a fixed point; the bound
    // only guards against a pathological regression.
    let mut out = scrub(msg);
    for _ in 0..8 {
        let next = scrub(&out);
        if next == out {
            break;
        }
        out = next;
    }
    out
}

/// Replace occurrences of the workspace root with `<WS>`, but only at path
/// boundaries — `/tmp/ws` must not rewrite the front of `/tmp/wsx`.
fn replace_root(text: &str, root: &str) -> String {
    let root = root.trim_end_matches('/');
    if root.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find(root) {
        let after = &rest[i + root.len()..];
        let boundary = after
            .chars()
            .next()
            .map(|c| c == '/' || !(c.is_alphanumeric() || c == '_' || c == '.' || c == '-'))
            .unwrap_or(true);
        out.push_str(&rest[..i]);
        if boundary {
            out.push_str("<WS>");
        } else {
            out.push_str(root);
        }
        rest = after;
    }
    out.push_str(rest);
    out
}

/// Compute the failure signature of a report with ≥1 non-pass case.
///
/// The primary failure is the lexicographically-first failing test;
/// exception_type is the first whitespace token of its message with any
/// trailing `:` stripped ("UnknownFailure" when the message is empty).
pub fn compute_signature(
    report: &TestReport,
    workspace_root: Option<&Path>,
) -> Result<FailureSignature, TestRunError> {
    let failing_tests = report.failing_ids();
    if failing_tests.is_empty() {
        return Err(TestRunError::NoFailure);
    }
    let primary = report
        .cases
        .iter()
        .filter(|c| c.outcome != CaseOutcome::Pass)
        .min_by(|a, b| a.test_id.cmp(&b.test_id))
        .expect("non-pass case exists");
    let exception_type = primary
        .message
        .split_whitespace()
        .next()
        .map(|token| token.trim_end_matches(':').to_string())
        .filter(|token| !token.is_empty())
        .unwrap_or_else(|| "UnknownFailure".to_string());
    Ok(FailureSignature {
        exception_type,
        failing_tests,
        normalized_message: normalize_message(&primary.message, workspace_root),
    })
}
