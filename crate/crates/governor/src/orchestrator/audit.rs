//! The append-only audit trail.
//!
//! Every engine event becomes one JSON line in `<run-dir>/audit.jsonl`,
//! flushed as it is written so a crash leaves a valid prefix. Records carry
//! a strictly increasing `seq` (the ordering authority) and a `wall_time`
//! (epoch milliseconds, for humans only): determinism comparisons delete
//! `wall_time` and expect everything else to be byte-identical.
//!
//! Payloads must therefore stay reproducible — workspace-relative paths,
//! content hashes, and normalized messages only; never absolute paths,
//! durations, or raw test output.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    PhaseEnter,
    ProposalReceived,
    GateReport,
    ApplyReceipt,
    TestReport,
    Signature,
    RepairTerminated,
    Rollback,
    RunDone,
    RunFailed,
}

impl AuditEvent {
    pub fn name(self) -> &'static str {
        match self {
            AuditEvent::PhaseEnter => "phase_enter",
            AuditEvent::ProposalReceived => "proposal_received",
            AuditEvent::GateReport => "gate_report",
            AuditEvent::ApplyReceipt => "apply_receipt",
            AuditEvent::TestReport => "test_report",
            AuditEvent::Signature => "signature",
            AuditEvent::RepairTerminated => "repair_terminated",
            AuditEvent::Rollback => "rollback",
            AuditEvent::RunDone => "run_done",
            AuditEvent::RunFailed => "run_failed",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch. Excluded from determinism
    /// comparison; `seq` is the ordering authority.
    pub wall_time: u64,
    pub event: AuditEvent,
    pub payload: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("audit log {path} line {line}: {detail}")]
    MalformedLine { path: PathBuf, line: usize, detail: String },
}

/// Append-only writer over the run's audit file.
#[derive(Debug)]
pub struct AuditLog {
    file: std::fs::File,
    path: PathBuf,
    next_seq: u64,
}

impl AuditLog {
    /// Start a fresh log, truncating any previous run's file.
    pub fn create(path: &Path) -> Result<AuditLog, AuditError> {
        let file = std::fs::File::create(path)
            .map_err(|source| AuditError::Io { path: path.to_path_buf(), source })?;
        Ok(AuditLog { file, path: path.to_path_buf(), next_seq: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Write one record and flush it. Returns the record's seq.
    pub fn append(
        &mut self,
        event: AuditEvent,
        payload: serde_json::Value,
    ) -> Result<u64, AuditError> {
        let record = AuditRecord { seq: self.next_seq, wall_time: epoch_millis(), event, payload };
        let mut line = serde_json::to_string(&record).expect("audit records always serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|source| AuditError::Io { path: self.path.clone(), source })?;
        self.next_seq += 1;
        Ok(record.seq)
    }
}

fn epoch_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Read a complete audit log back, checking the seq invariant.
pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| AuditError::Io { path: path.to_path_buf(), source })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AuditRecord =
            serde_json::from_str(line).map_err(|e| AuditError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        if record.seq != records.len() as u64 {
            return Err(AuditError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("seq {} breaks the monotone sequence (expected {})", record.seq, records.len()),
            });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_append_with_strictly_increasing_seq() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let mut log = AuditLog::create(&path).unwrap();
        for i in 0..5u64 {
            let seq = log
                .append(AuditEvent::PhaseEnter, serde_json::json!({"phase": "RED", "i": i}))
                .unwrap();
            assert_eq!(seq, i);
        }
        let records = read_audit(&path).unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.windows(2).all(|w| w[1].seq == w[0].seq + 1));
        assert_eq!(records[3].payload["i"], 3);
    }

    #[test]
    fn create_truncates_the_previous_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let mut log = AuditLog::create(&path).unwrap();
        log.append(AuditEvent::RunDone, serde_json::json!({})).unwrap();
        drop(log);
        let mut log = AuditLog::create(&path).unwrap();
        log.append(AuditEvent::PhaseEnter, serde_json::json!({"phase": "PLANNING"})).unwrap();
        let records = read_audit(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].event, AuditEvent::PhaseEnter);
        assert_eq!(records[0].seq, 0);
    }

    #[test]
    fn event_names_use_the_wire_spelling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let mut log = AuditLog::create(&path).unwrap();
        log.append(AuditEvent::ProposalReceived, serde_json::json!({})).unwrap();
        log.append(AuditEvent::RepairTerminated, serde_json::json!({})).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"event\":\"proposal_received\""));
        assert!(text.contains("\"event\":\"repair_terminated\""));
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":0,\"wall_time\":1,\"event\":\"run_done\",\"payload\":{}}\nnot json\n",
        )
        .unwrap();
        match read_audit(&path).unwrap_err() {
            AuditError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn seq_gaps_are_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        std::fs::write(
            &path,
            "{\"seq\":0,\"wall_time\":1,\"event\":\"run_done\",\"payload\":{}}\n\
             {\"seq\":2,\"wall_time\":2,\"event\":\"run_done\",\"payload\":{}}\n",
        )
        .unwrap();
        let err = read_audit(&path).unwrap_err();
        assert!(err.to_string().contains("monotone"), "{err}");
    }
}
