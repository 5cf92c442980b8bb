//! Entity references and the pattern extractors that pull them out of free
//! text (error messages, plan bodies, directives).

use std::collections::BTreeSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    FilePath,
    ToolName,
    AgentId,
    Url,
    Identifier,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("entity value is empty after normalization")]
pub struct EmptyEntity;

/// A named thing that events can share: a file, a tool, an agent, a URL.
/// Values are trimmed; case is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawEntity")]
pub struct EntityRef {
    kind: EntityKind,
    value: String,
}

#[derive(Deserialize)]
struct RawEntity {
    kind: EntityKind,
    value: String,
}

impl TryFrom<RawEntity> for EntityRef {
    type Error = EmptyEntity;

    fn try_from(raw: RawEntity) -> Result<Self, Self::Error> {
        EntityRef::new(raw.kind, raw.value)
    }
}

impl EntityRef {
    pub fn new(kind: EntityKind, value: impl AsRef<str>) -> Result<Self, EmptyEntity> {
        let value = value.as_ref().trim();
        if value.is_empty() {
            return Err(EmptyEntity);
        }
        Ok(Self {
            kind,
            value: value.to_string(),
        })
    }

    pub fn file(path: &str) -> Self {
        Self::new(EntityKind::FilePath, path).expect("non-empty path")
    }

    pub fn tool(name: &str) -> Self {
        Self::new(EntityKind::ToolName, name).expect("non-empty tool name")
    }

    pub fn agent(id: &str) -> Self {
        Self::new(EntityKind::AgentId, id).expect("non-empty agent id")
    }

    pub fn ident(value: &str) -> Self {
        Self::new(EntityKind::Identifier, value).expect("non-empty identifier")
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}", self.kind, self.value)
    }
}

/// One configured extractor: a regex whose capture group `group` yields an
/// entity of kind `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: EntityKind,
    pub pattern: String,
    #[serde(default = "default_group")]
    pub group: usize,
}

fn default_group() -> usize {
    1
}

#[derive(Debug, Error)]
#[error("invalid extractor pattern `{pattern}`: {source}")]
pub struct ExtractorError {
    pattern: String,
    #[source]
    source: regex::Error,
}

#[derive(Debug, Clone)]
struct Extractor {
    kind: EntityKind,
    regex: Regex,
    group: usize,
}

/// Ordered set of extractors. URLs are pulled first and blanked out of the
/// text so path extractors do not pick up URL fragments.
#[derive(Debug, Clone)]
pub struct ExtractorSet {
    extractors: Vec<Extractor>,
}

const URL_PATTERN: &str = r#"(https?://[^\s`'"<>()]+)"#;

impl ExtractorSet {
    pub fn from_specs(specs: &[ExtractorSpec]) -> Result<Self, ExtractorError> {
        let extractors = specs
            .iter()
            .map(|s| {
                Regex::new(&s.pattern)
                    .map(|regex| Extractor {
                        kind: s.kind,
                        regex,
                        group: s.group,
                    })
                    .map_err(|source| ExtractorError {
                        pattern: s.pattern.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { extractors })
    }

    /// The shipped extractor set: URLs, file paths, tool-name markers and
    /// agent handles.
    pub fn shipped() -> Self {
        Self::from_specs(&Self::shipped_specs()).expect("shipped extractor patterns compile")
    }

    pub fn shipped_specs() -> Vec<ExtractorSpec> {
        let spec = |kind, pattern: &str| ExtractorSpec {
            kind,
            pattern: pattern.to_string(),
            group: 1,
        };
        vec![
            spec(EntityKind::Url, URL_PATTERN),
            // relative or absolute paths with at least one separator, ending in
            // an extension (`.github/workflows/autopr.yml`) or rooted (`/etc/passwd`)
            spec(
                EntityKind::FilePath,
                r"(?:^|[\s`'(\[])((?:\.?[A-Za-z0-9_\-]+/)+[A-Za-z0-9_\-]*\.[A-Za-z][A-Za-z0-9]{0,7}|/(?:[A-Za-z0-9_.\-]+/)*[A-Za-z0-9_.\-]+)",
            ),
            // bare file names with a short alphabetic extension (`README.md`)
            spec(
                EntityKind::FilePath,
                r"(?:^|[\s`'(\[])([A-Za-z0-9_\-]+\.(?:md|yml|yaml|json|toml|txt|rs|py|js|ts|cfg|ini|lock|sh))(?:$|[\s`'),.:;\]])",
            ),
            spec(EntityKind::ToolName, r"(?i)\btool\s+`([A-Za-z0-9_.\-]+)`"),
            spec(EntityKind::AgentId, r"(?:^|[\s`'(])(@[A-Za-z0-9][A-Za-z0-9_\-]*)"),
        ]
    }

    pub fn extract(&self, text: &str) -> BTreeSet<EntityRef> {
        let mut found = BTreeSet::new();
        if text.is_empty() {
            return found;
        }
        let mut scrubbed = text.to_string();
        for ex in &self.extractors {
            let haystack = if ex.kind == EntityKind::Url { text } else { scrubbed.as_str() };
            for caps in ex.regex.captures_iter(haystack) {
                if let Some(m) = caps.get(ex.group) {
                    let value = normalize(ex.kind, m.as_str());
                    if let Ok(entity) = EntityRef::new(ex.kind, value) {
                        found.insert(entity);
                    }
                }
            }
            if ex.kind == EntityKind::Url {
                scrubbed = ex.regex.replace_all(&scrubbed, " ").into_owned();
            }
        }
        found
    }
}

impl Default for ExtractorSet {
    fn default() -> Self {
        Self::shipped()
    }
}

fn normalize(kind: EntityKind, raw: &str) -> &str {
    let trimmed = raw.trim();
    match kind {
        EntityKind::FilePath | EntityKind::Url => {
            trimmed.trim_end_matches(['.', ',', ';', ':', ')', '`'])
        }
        _ => trimmed,
    }
}

/// Convenience wrapper over the shipped set.
pub fn extract_entities(message: &str, extractors: &ExtractorSet) -> BTreeSet<EntityRef> {
    extractors.extract(message)
}
