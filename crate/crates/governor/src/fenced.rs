//! Extraction of the machine-readable block from a model response.
//!
//! Model responses are free text that must contain exactly one fenced code
//! block carrying a JSON document (the plan or the proposal). We take the
//! first fence, accept an optional `json` info string (any case), and ignore
//! everything outside the fence. The block's verbatim text is preserved so it
//! can be archived byte-for-byte.

/// Why no usable block could be extracted.
#[derive(Debug, PartialEq, Eq)]
pub enum FencedError {
    /// No ``` fence found anywhere in the response.
    NoBlock,
    /// An opening fence without a closing fence.
    Unterminated,
    /// The first fence has an info string other than (case-insensitive) `json`.
    NotJson { info: String },
}

impl std::fmt::Display for FencedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FencedError::NoBlock => write!(f, "response contains no fenced code block"),
            FencedError::Unterminated => write!(f, "fenced code block is never closed"),
            FencedError::NotJson { info } => {
                write!(f, "first fenced block is tagged {info:?}, expected json or no tag")
            }
        }
    }
}

impl std::error::Error for FencedError {}

/// Return the verbatim interior of the first fenced block in `raw`.
///
/// Fences are lines whose trimmed content starts with ```` ``` ````; the
/// interior excludes both fence lines and keeps the block's own line endings.
pub fn extract_block(raw: &str) -> Result<String, FencedError> {
    let mut lines = raw.split_inclusive('\n');
    let mut info: Option<String> = None;
    for line in lines.by_ref() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("```") {
            info = Some(rest.trim().to_string());
            break;
        }
    }
    let info = info.ok_or(FencedError::NoBlock)?;
    if !info.is_empty() && !info.eq_ignore_ascii_case("json") {
        return Err(FencedError::NotJson { info });
    }
    let mut body = String::new();
    for line in lines {
        if line.trim().starts_with("```") {
            return Ok(body);
        }
        body.push_str(line);
    }
    Err(FencedError::Unterminated)
}
