//! Path-glob matching for scopes and policy rules.
//!
//! The dialect is deliberately small and fully specified here:
//!
//! * patterns and paths are `/`-separated, workspace-relative, case-sensitive;
//! * `**` must stand alone as a component and matches **zero or more** whole
//!   components (so `tests/**` matches `tests/a.py`, `tests/sub/b.py`, and a
//!   file literally named `tests`);
//! * within a component, `*` matches any run of non-separator characters and
//!   `?` matches exactly one;
//! * there are no character classes, no brace expansion, no escapes.
//!
//! "Zero or more" for `**` keeps the algebra uniform: a single pattern like
//! `.governor/**` denies both the run directory itself and everything inside
//! it. Matching is anchored: a pattern must cover the whole path.

use thiserror::Error;

/// A parse error for a single glob pattern.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GlobError {
    #[error("glob pattern is empty")]
    Empty,
    #[error("glob pattern {pattern:?} has an empty component (leading, trailing, or doubled '/')")]
    EmptyComponent { pattern: String },
    #[error("glob pattern {pattern:?} uses '**' inside a component; '**' must stand alone")]
    RecursiveNotAlone { pattern: String },
}

/// One component of a parsed pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Component {
    /// `**`: zero or more whole path components.
    Recursive,
    /// A literal or wildcard component, matched char-by-char.
    Plain(Vec<Token>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Literal(char),
    AnyRun,  // '*'
    AnyOne,  // '?'
}

/// A compiled glob pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glob {
    pattern: String,
    components: Vec<Component>,
}

impl Glob {
    /// Compile a pattern, rejecting anything outside the documented dialect.
    pub fn new(pattern: &str) -> Result<Glob, GlobError> {
        if pattern.is_empty() {
            return Err(GlobError::Empty);
        }
        let mut components = Vec::new();
        for raw in pattern.split('/') {
            if raw.is_empty() {
                return Err(GlobError::EmptyComponent { pattern: pattern.to_string() });
            }
            if raw.contains("**") {
                if raw != "**" {
                    return Err(GlobError::RecursiveNotAlone { pattern: pattern.to_string() });
                }
                components.push(Component::Recursive);
                continue;
            }
            let tokens = raw
                .chars()
                .map(|c| match c {
                    '*' => Token::AnyRun,
                    '?' => Token::AnyOne,
                    other => Token::Literal(other),
                })
                .collect();
            components.push(Component::Plain(tokens));
        }
        Ok(Glob { pattern: pattern.to_string(), components })
    }

    /// The original pattern text.
    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Whether `path` (a `/`-separated relative path) matches the whole pattern.
    pub fn is_match(&self, path: &str) -> bool {
        if path.is_empty() {
            return false;
        }
        let parts: Vec<&str> = path.split('/').collect();
        match_components(&self.components, &parts)
    }
}

/// Recursive match over whole components; `Recursive` tries zero or more.
fn match_components(pattern: &[Component], path: &[&str]) -> bool {
    match pattern.first() {
        None => path.is_empty(),
        Some(Component::Recursive) => {
            // Zero components...
            if match_components(&pattern[1..], path) {
                return true;
            }
            // ...or swallow one and stay on the `**`.
            !path.is_empty() && match_components(pattern, &path[1..])
        }
        Some(Component::Plain(tokens)) => match path.first() {
            None => false,
            Some(part) => {
                match_tokens(tokens, &part.chars().collect::<Vec<_>>())
                    && match_components(&pattern[1..], &path[1..])
            }
        },
    }
}

/// Classic wildcard match within one component (`*` = any run, `?` = one char).
fn match_tokens(tokens: &[Token], chars: &[char]) -> bool {
    match tokens.first() {
        None => chars.is_empty(),
        Some(Token::Literal(c)) => chars.first() == Some(c) && match_tokens(&tokens[1..], &chars[1..]),
        Some(Token::AnyOne) => !chars.is_empty() && match_tokens(&tokens[1..], &chars[1..]),
        Some(Token::AnyRun) => {
            // Zero chars, or swallow one and stay on the `*`.
            match_tokens(&tokens[1..], chars)
                || (!chars.is_empty() && match_tokens(tokens, &chars[1..]))
        }
    }
}

/// A set of compiled globs; a path matches the set when any member matches.
#[derive(Debug, Clone, Default)]
pub struct GlobSet {
    globs: Vec<Glob>,
}

impl GlobSet {
    /// Compile every pattern; the first bad pattern aborts the set.
    pub fn new<I, S>(patterns: I) -> Result<GlobSet, GlobError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let globs = patterns
            .into_iter()
            .map(|p| Glob::new(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GlobSet { globs })
    }

    pub fn is_empty(&self) -> bool {
        self.globs.is_empty()
    }

    pub fn is_match(&self, path: &str) -> bool {
        self.globs.iter().any(|g| g.is_match(path))
    }

    /// The first member pattern that matches, for rejection details.
    pub fn first_match(&self, path: &str) -> Option<&str> {
        self.globs.iter().find(|g| g.is_match(path)).map(|g| g.pattern())
    }

    /// Original pattern texts, in insertion order.
    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.globs.iter().map(|g| g.pattern())
    }

    /// Longest literal prefix (whole components only) of each pattern.
    ///
    /// Used by plan validation to build probe paths for overlap detection.
    pub fn literal_prefixes(&self) -> Vec<String> {
        self.globs
            .iter()
            .map(|g| {
                let mut parts = Vec::new();
                for comp in &g.components {
                    match comp {
                        Component::Plain(tokens)
                            if tokens.iter().all(|t| matches!(t, Token::Literal(_))) =>
                        {
                            let text: String = tokens
                                .iter()
                                .map(|t| match t {
                                    Token::Literal(c) => *c,
                                    _ => unreachable!(),
                                })
                                .collect();
                            parts.push(text);
                        }
                        _ => break,
                    }
                }
                parts.join("/")
            })
            .collect()
    }
}
