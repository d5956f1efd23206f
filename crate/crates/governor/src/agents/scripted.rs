//! The deterministic provider: replay recorded responses from disk.
//!
//! Each response lives in its own file named by the context key
//! (`{step_id}__{PHASE}__{attempt}.txt`), so a directory of fixtures plus an
//! initial workspace fully determines an engine run. A missing fixture is a
//! hard error naming the exact file the scenario needs — that is the
//! scenario author's contract, not a runtime fallback.

use super::{Provider, ProviderError, ProviderRequest, ProviderResponse};
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    dir: PathBuf,
}

impl ScriptedProvider {
    pub fn new(dir: impl Into<PathBuf>) -> ScriptedProvider {
        ScriptedProvider { dir: dir.into() }
    }

    pub fn dir(&self) -> &std::path::Path {
        &self.dir
    }
}

impl Provider for ScriptedProvider {
    fn request(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let path = self.dir.join(req.context_key.fixture_file_name());
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(ProviderResponse { text, provider_meta: "scripted".to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(ProviderError::FixtureMissing {
                    key: req.context_key.to_string(),
                    path,
                })
            }
            Err(e) => Err(ProviderError::Transport { detail: format!("{}: {e}", path.display()) }),
        }
    }

    fn describe(&self) -> String {
        format!("scripted:{}", self.dir.display())
    }
}
