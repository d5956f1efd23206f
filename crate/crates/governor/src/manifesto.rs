//! The machine-readable TDD manifesto.
//!
//! A manifesto is a versioned, ordered list of principles. Each principle is
//! a governance record — category, intent, an AI-native interpretation,
//! imperative constraints, and anti-patterns — that parameterizes prompt
//! construction and gate behavior. Parsing is strict: unknown fields are
//! rejected, because silently extended governance documents cannot be
//! audited. Loaded manifestos are immutable and safe to share read-only.

use crate::phase::Phase;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// The four principle categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Order,
    Granularity,
    FeedbackQuality,
    DesignHygiene,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::Order, Category::Granularity, Category::FeedbackQuality, Category::DesignHygiene];

    pub fn name(self) -> &'static str {
        match self {
            Category::Order => "order",
            Category::Granularity => "granularity",
            Category::FeedbackQuality => "feedback_quality",
            Category::DesignHygiene => "design_hygiene",
        }
    }
}

/// Provenance of a principle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub authors: String,
    pub work: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
}

/// One governance principle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Principle {
    pub id: String,
    pub title: String,
    pub category: Category,
    pub original_intent: String,
    pub ai_native_interpretation: String,
    pub constraints: Vec<String>,
    pub anti_patterns: Vec<String>,
    pub source: Source,
}

/// A validated manifesto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifesto {
    pub version: String,
    pub principles: Vec<Principle>,
}

/// Schema-level rejection; every variant names the offending field and, where
/// one exists, the principle it belongs to.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("manifesto document: {detail}")]
    Document { detail: String },
    #[error("principle {principle}: {detail}")]
    Principle { principle: String, detail: String },
    #[error("duplicate principle id `{id}` (field `id`)")]
    DuplicateId { id: String },
}

#[derive(Debug, Error)]
pub enum ManifestoError {
    #[error("cannot read manifesto at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Load and fully validate a manifesto file.
pub fn load_manifesto(path: &Path) -> Result<Manifesto, ManifestoError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifesto(&text).map_err(ManifestoError::from)
}

/// Parse and validate manifesto text (strict mode).
pub fn parse_manifesto(text: &str) -> Result<Manifesto, SchemaError> {
    // Stage 1: document shape, with principles kept raw so that stage 2 can
    // attach the principle id to every field-level error.
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RawManifesto {
        version: String,
        principles: Vec<serde_json::Value>,
    }

    let raw: RawManifesto = serde_json::from_str(text)
        .map_err(|e| SchemaError::Document { detail: e.to_string() })?;

    if raw.principles.is_empty() {
        return Err(SchemaError::Document {
            detail: "field `principles` must contain at least one principle".to_string(),
        });
    }

    let mut principles = Vec::with_capacity(raw.principles.len());
    for (index, value) in raw.principles.into_iter().enumerate() {
        let label = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(|id| format!("`{id}`"))
            .unwrap_or_else(|| format!("#{index}"));
        let principle: Principle = serde_json::from_value(value)
            .map_err(|e| SchemaError::Principle { principle: label.clone(), detail: e.to_string() })?;
        validate_principle(&principle, &label)?;
        principles.push(principle);
    }

    let mut seen = std::collections::BTreeSet::new();
    for p in &principles {
        if !seen.insert(p.id.as_str()) {
            return Err(SchemaError::DuplicateId { id: p.id.clone() });
        }
    }

    Ok(Manifesto { version: raw.version, principles })
}

fn validate_principle(p: &Principle, label: &str) -> Result<(), SchemaError> {
    let fail = |detail: String| SchemaError::Principle { principle: label.to_string(), detail };
    if p.id.is_empty() {
        return Err(fail("field `id` must be non-empty".to_string()));
    }
    let kebab = p.id.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        && !p.id.starts_with('-')
        && !p.id.ends_with('-');
    if !kebab {
        return Err(fail(format!("field `id` must be kebab-case, got `{}`", p.id)));
    }
    if p.constraints.is_empty() {
        return Err(fail("field `constraints` must be non-empty".to_string()));
    }
    Ok(())
}

/// Serialize a manifesto back to its on-disk form.
///
/// Round-trip guarantee: `parse_manifesto(serialize_manifesto(m)) == m`.
pub fn serialize_manifesto(manifesto: &Manifesto) -> String {
    let mut out = serde_json::to_string_pretty(manifesto).expect("manifesto serializes");
    out.push('\n');
    out
}

/// Relevance rank of a category for a phase: lower is more relevant.
///
/// The table is static by design — prompt composition must be reproducible.
/// RED favors feedback quality (the failing test is the product), GREEN and
/// REPAIR favor granularity (minimal code), REFACTOR favors design hygiene.
/// Phases outside the proposal cycle keep manifesto order.
fn category_rank(phase: Phase, category: Category) -> usize {
    let table: [Category; 4] = match phase {
        Phase::Planning => {
            [Category::Order, Category::Granularity, Category::FeedbackQuality, Category::DesignHygiene]
        }
        Phase::Red => {
            [Category::FeedbackQuality, Category::Granularity, Category::Order, Category::DesignHygiene]
        }
        Phase::Green | Phase::Repair => {
            [Category::Granularity, Category::Order, Category::FeedbackQuality, Category::DesignHygiene]
        }
        Phase::Refactor => {
            [Category::DesignHygiene, Category::Granularity, Category::FeedbackQuality, Category::Order]
        }
        Phase::StepDone | Phase::Done | Phase::Failed => {
            return 0; // no proposal prompts in these phases; keep manifesto order
        }
    };
    table.iter().position(|c| *c == category).expect("every category is ranked")
}

/// Pick up to `budget` principles for a phase.
///
/// Principles are ordered by (phase-relevance rank, manifesto index) — a
/// stable ordering with ties broken by manifesto position — then truncated.
/// Over-budget manifestos are truncated, never rejected; a zero budget yields
/// an empty selection.
pub fn select_principles(manifesto: &Manifesto, phase: Phase, budget: usize) -> Vec<&Principle> {
    let mut selected: Vec<&Principle> = Vec::new();
    for rank in 0..Category::ALL.len() {
        for p in &manifesto.principles {
            if category_rank(phase, p.category) == rank {
                selected.push(p);
            }
        }
        if rank == 0 && matches!(phase, Phase::StepDone | Phase::Done | Phase::Failed) {
            break; // rank is uniformly 0: one pass collected everything
        }
    }
    selected.truncate(budget);
    selected
}

/// Render principles into the deterministic prompt fragment.
///
/// For each principle: title, AI-native interpretation, one `-` bullet per
/// constraint, one `FORBIDDEN:` line per anti-pattern. Byte-identical output
/// for identical input; an empty list renders to an empty fragment.
pub fn render_constraints(principles: &[&Principle]) -> String {
    let mut out = String::new();
    for (i, p) in principles.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("## {}\n", p.title));
        out.push_str(&format!("{}\n", p.ai_native_interpretation));
        for c in &p.constraints {
            out.push_str(&format!("- {c}\n"));
        }
        for a in &p.anti_patterns {
            out.push_str(&format!("FORBIDDEN: {a}\n"));
        }
    }
    out
}
