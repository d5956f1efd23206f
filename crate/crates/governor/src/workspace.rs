//! Engine-exclusive workspace mutation: hashing, snapshot, atomic apply,
//! rollback.
//!
//! This module is the only writer under the workspace root. Everything else
//! reads at most. The tracked hash tree (path → SHA-256) covers every
//! non-denied regular file and is kept equal to a fresh re-hash at every
//! quiescent point; its root digest is what audit receipts and the
//! rejection-atomicity checks compare.
//!
//! Atomicity is per proposal: content is staged inside the root, renamed into
//! place in sorted path order, and any mid-apply failure restores the
//! implicit pre-apply snapshot, so observable states are exactly {pre, post}.
//! True multi-file filesystem transactions don't exist portably; the snapshot
//! is the recovery mechanism that makes stage-then-rename all-or-nothing.
//!
//! Single-writer contract: one orchestration thread holds the workspace
//! mutably; concurrent runs need disjoint roots. Symlinks are neither tracked
//! nor followed — governed workspaces are plain file trees.

use crate::glob::GlobSet;
use crate::proposal::{ChangeAction, PatchProposal};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Name of the transient staging directory (dot-prefixed: never tracked).
const STAGE_DIR: &str = ".governor-stage";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("workspace root {path} is not a directory")]
    NotADirectory { path: String },
    #[error("path {path:?} escapes the workspace root")]
    PathEscapesRoot { path: String },
    #[error("apply failed ({detail}); workspace restored to pre-apply state")]
    Apply { detail: String },
    #[error("workspace could not be restored: {detail}; manual recovery required")]
    Unrestorable { detail: String },
}

/// Receipt for one atomic apply, serialized into the audit log.
#[derive(Debug, Clone, Serialize)]
pub struct ApplyReceipt {
    pub proposal_id: String,
    /// Workspace-relative paths in the order they were applied (sorted).
    pub applied_paths: Vec<String>,
    pub pre_root: String,
    pub post_root: String,
}

/// Captured content (or absence) of a set of paths at one instant.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub snapshot_id: String,
    /// path → Some(bytes) for existing files, None for absent paths.
    captured: BTreeMap<String, Option<Vec<u8>>>,
}

impl Snapshot {
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.captured.keys().map(String::as_str)
    }
}

/// The governed file tree.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    denied: GlobSet,
    hash_tree: BTreeMap<String, String>,
}

impl Workspace {
    /// Open a workspace rooted at `root`, excluding `denied` paths from
    /// tracking, and hash every tracked file.
    pub fn open(root: &Path, denied: GlobSet) -> Result<Workspace, WorkspaceError> {
        let root = root.canonicalize().map_err(|source| WorkspaceError::Io {
            path: root.display().to_string(),
            source,
        })?;
        if !root.is_dir() {
            return Err(WorkspaceError::NotADirectory { path: root.display().to_string() });
        }
        let mut workspace = Workspace { root, denied, hash_tree: BTreeMap::new() };
        workspace.rescan()?;
        Ok(workspace)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Tracked files and their content hashes, sorted by path.
    pub fn hash_tree(&self) -> &BTreeMap<String, String> {
        &self.hash_tree
    }

    /// Sorted tracked paths.
    pub fn tracked_paths(&self) -> Vec<String> {
        self.hash_tree.keys().cloned().collect()
    }

    /// Digest of the whole tracked tree: SHA-256 over `path NUL hash LF`
    /// entries in sorted order. Identical trees hash identically on any
    /// machine — paths are relative, content hashes are content-only.
    pub fn root_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (path, digest) in &self.hash_tree {
            hasher.update(path.as_bytes());
            hasher.update([0u8]);
            hasher.update(digest.as_bytes());
            hasher.update([b'\n']);
        }
        hex::encode(hasher.finalize())
    }

    /// Re-hash the tree from disk. Called at quiescent points (open, after
    /// external test runs) so the tracked tree never drifts from reality.
    pub fn rescan(&mut self) -> Result<(), WorkspaceError> {
        let mut tree = BTreeMap::new();
        let denied = &self.denied;
        let root = self.root.clone();
        let walker = walkdir::WalkDir::new(&root)
            .follow_links(false)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|entry| {
                let rel = match relative_str(&root, entry.path()) {
                    Some(rel) => rel,
                    None => return true, // the root itself
                };
                !(entry.file_type().is_dir() && denied.is_match(&rel))
                    && entry.file_name() != STAGE_DIR
            });
        for entry in walker {
            let entry = entry.map_err(|e| WorkspaceError::Io {
                path: e.path().map(|p| p.display().to_string()).unwrap_or_default(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = match relative_str(&root, entry.path()) {
                Some(rel) => rel,
                None => continue,
            };
            if denied.is_match(&rel) {
                continue;
            }
            let digest = hash_file(entry.path())?;
            tree.insert(rel, digest);
        }
        self.hash_tree = tree;
        Ok(())
    }

    /// Resolve a workspace-relative path, rejecting escapes.
    fn resolve(&self, rel: &str) -> Result<PathBuf, WorkspaceError> {
        crate::proposal::check_change_path(rel)
            .map_err(|_| WorkspaceError::PathEscapesRoot { path: rel.to_string() })?;
        Ok(self.root.join(rel))
    }

    pub fn file_exists(&self, rel: &str) -> bool {
        match self.resolve(rel) {
            Ok(path) => path.is_file(),
            Err(_) => false,
        }
    }

    /// Read a tracked-or-untracked file; `Ok(None)` means it does not exist.
    pub fn read_file(&self, rel: &str) -> Result<Option<Vec<u8>>, WorkspaceError> {
        let path = self.resolve(rel)?;
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(WorkspaceError::Io { path: path.display().to_string(), source }),
        }
    }

    /// Capture the current content (or absence) of each path.
    pub fn snapshot(&self, paths: &[String], snapshot_id: &str) -> Result<Snapshot, WorkspaceError> {
        let mut captured = BTreeMap::new();
        for rel in paths {
            captured.insert(rel.clone(), self.read_file(rel)?);
        }
        Ok(Snapshot { snapshot_id: snapshot_id.to_string(), captured })
    }

    /// Apply every change or none: stage, rename in sorted path order,
    /// restore the implicit pre-apply snapshot on any failure.
    pub fn apply_atomic(&mut self, proposal: &PatchProposal) -> Result<ApplyReceipt, WorkspaceError> {
        self.apply_atomic_inner(proposal, None)
    }

    /// Apply with an optional injected fault before the i-th rename/delete —
    /// the hook the atomicity tests use. `fault == Some(i)` fails just before
    /// the i-th change lands.
    fn apply_atomic_inner(
        &mut self,
        proposal: &PatchProposal,
        fault: Option<usize>,
    ) -> Result<ApplyReceipt, WorkspaceError> {
        let pre_root = self.root_digest();

        let mut changes: Vec<_> = proposal.changes.iter().collect();
        changes.sort_by(|a, b| a.path.cmp(&b.path));

        let change_paths: Vec<String> = changes.iter().map(|c| c.path.clone()).collect();
        let recovery = self.snapshot(&change_paths, "pre-apply")?;

        let stage_root = self.root.join(STAGE_DIR);
        let result = self.stage_and_rename(&changes, &stage_root, fault);
        let _ = std::fs::remove_dir_all(&stage_root);

        match result {
            Ok(()) => {
                for change in &changes {
                    self.refresh_entry(&change.path)?;
                }
                Ok(ApplyReceipt {
                    proposal_id: proposal.proposal_id.clone(),
                    applied_paths: change_paths,
                    pre_root,
                    post_root: self.root_digest(),
                })
            }
            Err(detail) => {
                self.restore(&recovery)
                    .map_err(|e| WorkspaceError::Unrestorable { detail: e.to_string() })?;
                for change in &changes {
                    self.refresh_entry(&change.path)?;
                }
                debug_assert_eq!(self.root_digest(), pre_root);
                Err(WorkspaceError::Apply { detail })
            }
        }
    }

    /// Stage all new content, then land changes in sorted path order.
    /// Returns a human-readable failure description on any error.
    fn stage_and_rename(
        &self,
        changes: &[&crate::proposal::FileChange],
        stage_root: &Path,
        fault: Option<usize>,
    ) -> Result<(), String> {
        std::fs::create_dir_all(stage_root).map_err(|e| format!("creating stage dir: {e}"))?;

        let mut staged: Vec<Option<PathBuf>> = Vec::with_capacity(changes.len());
        for (i, change) in changes.iter().enumerate() {
            match change.action {
                ChangeAction::Create | ChangeAction::Modify => {
                    let staged_path = stage_root.join(format!("{i}.staged"));
                    let content = change.new_content.as_deref().unwrap_or("");
                    std::fs::write(&staged_path, content)
                        .map_err(|e| format!("staging {}: {e}", change.path))?;
                    staged.push(Some(staged_path));
                }
                ChangeAction::Delete => staged.push(None),
            }
        }

        for (i, change) in changes.iter().enumerate() {
            if fault == Some(i) {
                return Err(format!("injected fault before landing {}", change.path));
            }
            let target =
                self.resolve(&change.path).map_err(|e| format!("resolving {}: {e}", change.path))?;
            match change.action {
                ChangeAction::Create | ChangeAction::Modify => {
                    if let Some(parent) = target.parent() {
                        std::fs::create_dir_all(parent)
                            .map_err(|e| format!("creating parent of {}: {e}", change.path))?;
                    }
                    let from = staged[i].as_ref().expect("create/modify was staged");
                    std::fs::rename(from, &target)
                        .map_err(|e| format!("landing {}: {e}", change.path))?;
                }
                ChangeAction::Delete => {
                    std::fs::remove_file(&target)
                        .map_err(|e| format!("deleting {}: {e}", change.path))?;
                }
            }
        }
        Ok(())
    }

    /// Restore every captured path to its captured state.
    pub fn rollback(&mut self, snapshot: &Snapshot) -> Result<(), WorkspaceError> {
        self.restore(snapshot)?;
        for path in snapshot.captured.keys() {
            self.refresh_entry(path)?;
        }
        Ok(())
    }

    fn restore(&self, snapshot: &Snapshot) -> Result<(), WorkspaceError> {
        for (rel, content) in &snapshot.captured {
            let path = self.resolve(rel)?;
            match content {
                Some(bytes) => {
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(|source| WorkspaceError::Io {
                            path: parent.display().to_string(),
                            source,
                        })?;
                    }
                    std::fs::write(&path, bytes).map_err(|source| WorkspaceError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                }
                None => match std::fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(source) => {
                        return Err(WorkspaceError::Io { path: path.display().to_string(), source })
                    }
                },
            }
        }
        Ok(())
    }

    /// Bring one path's hash-tree entry in line with the filesystem.
    fn refresh_entry(&mut self, rel: &str) -> Result<(), WorkspaceError> {
        let path = self.resolve(rel)?;
        if self.denied.is_match(rel) {
            return Ok(());
        }
        if path.is_file() {
            let digest = hash_file(&path)?;
            self.hash_tree.insert(rel.to_string(), digest);
        } else {
            self.hash_tree.remove(rel);
        }
        Ok(())
    }
}

fn hash_file(path: &Path) -> Result<String, WorkspaceError> {
    let bytes = std::fs::read(path)
        .map_err(|source| WorkspaceError::Io { path: path.display().to_string(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Workspace-relative `/`-separated form of `path`, or None for the root.
fn relative_str(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<&str> = rel.components().filter_map(|c| c.as_os_str().to_str()).collect();
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("/"))
    }
}
