//! Exception taxonomy: 36 exception types across 12 agent artifacts, each
//! labelled with the workflow phase where it typically arises.
//!
//! The taxonomy is plain data loaded from a JSON document. The canonical
//! document ships with the crate (see [`crate::data`]); non-canonical
//! documents skip the 36/12 count check so tests and extensions can use
//! partial or enlarged taxonomies.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of entries the canonical taxonomy must contain.
pub const CANONICAL_ENTRY_COUNT: usize = 36;
/// Number of distinct artifacts the canonical taxonomy must cover.
pub const CANONICAL_ARTIFACT_COUNT: usize = 12;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("taxonomy integrity violation: {0}")]
    Integrity(String),
}

/// Workflow phase. `Both` is the single `RP/E` label, not a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    ReasoningPlanning,
    Execution,
    Both,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::ReasoningPlanning, Phase::Execution, Phase::Both];

    pub fn label(self) -> &'static str {
        match self {
            Phase::ReasoningPlanning => "RP",
            Phase::Execution => "E",
            Phase::Both => "RP/E",
        }
    }

    /// True when an entry labelled `self` should be returned for a filter on `filter`.
    pub fn matches_filter(self, filter: Phase) -> bool {
        self == filter || self == Phase::Both
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "RP" => Ok(Phase::ReasoningPlanning),
            "E" => Ok(Phase::Execution),
            "RP/E" => Ok(Phase::Both),
            other => Err(format!("unknown phase `{other}` (expected RP, E or RP/E)")),
        }
    }
}

impl Serialize for Phase {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Phase {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// The agent component an exception originates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArtifactKind {
    Goal,
    Context,
    Reasoning,
    Planning,
    Memory,
    KnowledgeBase,
    Model,
    Tool,
    Interface,
    TaskFlow,
    OtherAgent,
    ExternalSystem,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 12] = [
        ArtifactKind::Goal,
        ArtifactKind::Context,
        ArtifactKind::Reasoning,
        ArtifactKind::Planning,
        ArtifactKind::Memory,
        ArtifactKind::KnowledgeBase,
        ArtifactKind::Model,
        ArtifactKind::Tool,
        ArtifactKind::Interface,
        ArtifactKind::TaskFlow,
        ArtifactKind::OtherAgent,
        ArtifactKind::ExternalSystem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Goal => "Goal",
            ArtifactKind::Context => "Context",
            ArtifactKind::Reasoning => "Reasoning",
            ArtifactKind::Planning => "Planning",
            ArtifactKind::Memory => "Memory",
            ArtifactKind::KnowledgeBase => "KnowledgeBase",
            ArtifactKind::Model => "Model",
            ArtifactKind::Tool => "Tool",
            ArtifactKind::Interface => "Interface",
            ArtifactKind::TaskFlow => "TaskFlow",
            ArtifactKind::OtherAgent => "OtherAgent",
            ArtifactKind::ExternalSystem => "ExternalSystem",
        }
    }

    /// Human-readable label as printed in tables ("Knowledge Base").
    pub fn display_name(self) -> &'static str {
        match self {
            ArtifactKind::KnowledgeBase => "Knowledge Base",
            ArtifactKind::TaskFlow => "Task Flow",
            ArtifactKind::OtherAgent => "Other Agent",
            ArtifactKind::ExternalSystem => "External System",
            other => other.name(),
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = String;

    /// Accepts the enum name or the spaced display label, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        ArtifactKind::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase() == wanted)
            .ok_or_else(|| format!("unknown artifact `{s}`"))
    }
}

/// One taxonomy row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionTypeEntry {
    pub id: String,
    pub display_name: String,
    pub artifact: ArtifactKind,
    pub phase: Phase,
    pub description: String,
    #[serde(default)]
    pub match_hints: Vec<String>,
}

/// Wire form. Artifact and phase stay strings here so unknown values surface
/// as integrity errors rather than parse errors.
#[derive(Debug, Deserialize)]
struct RawDocument {
    canonical: bool,
    entries: Vec<RawEntry>,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    id: String,
    display_name: String,
    artifact: String,
    phase: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    match_hints: Vec<String>,
}

#[derive(Debug, Serialize)]
struct DocumentRef<'a> {
    canonical: bool,
    entries: &'a [ExceptionTypeEntry],
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    canonical: bool,
    entries: Vec<ExceptionTypeEntry>,
    by_id: HashMap<String, usize>,
    by_artifact: BTreeMap<ArtifactKind, Vec<usize>>,
    by_phase: BTreeMap<Phase, Vec<usize>>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.canonical == other.canonical && self.entries == other.entries
    }
}

/// Reads and validates a taxonomy document.
pub fn load_taxonomy<R: Read>(source: R) -> Result<Taxonomy, TaxonomyError> {
    let raw: RawDocument = serde_json::from_reader(source)?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    for e in raw.entries {
        let artifact = e
            .artifact
            .parse::<ArtifactKind>()
            .map_err(|msg| TaxonomyError::Integrity(format!("entry `{}`: {msg}", e.id)))?;
        let phase = e
            .phase
            .parse::<Phase>()
            .map_err(|msg| TaxonomyError::Integrity(format!("entry `{}`: {msg}", e.id)))?;
        entries.push(ExceptionTypeEntry {
            id: e.id,
            display_name: e.display_name,
            artifact,
            phase,
            description: e.description,
            match_hints: e.match_hints,
        });
    }
    Taxonomy::new(raw.canonical, entries)
}

impl Taxonomy {
    pub fn new(canonical: bool, entries: Vec<ExceptionTypeEntry>) -> Result<Self, TaxonomyError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut by_artifact: BTreeMap<ArtifactKind, Vec<usize>> = BTreeMap::new();
        let mut by_phase: BTreeMap<Phase, Vec<usize>> = BTreeMap::new();
        for (idx, entry) in entries.iter().enumerate() {
            if entry.id.trim().is_empty() {
                return Err(TaxonomyError::Integrity(format!("entry #{idx} has an empty id")));
            }
            if by_id.insert(entry.id.clone(), idx).is_some() {
                return Err(TaxonomyError::Integrity(format!("duplicate id `{}`", entry.id)));
            }
            by_artifact.entry(entry.artifact).or_default().push(idx);
            by_phase.entry(entry.phase).or_default().push(idx);
        }
        if canonical {
            if entries.len() != CANONICAL_ENTRY_COUNT {
                return Err(TaxonomyError::Integrity(format!(
                    "canonical taxonomy must have {CANONICAL_ENTRY_COUNT} entries, found {}",
                    entries.len()
                )));
            }
            if by_artifact.len() != CANONICAL_ARTIFACT_COUNT {
                return Err(TaxonomyError::Integrity(format!(
                    "canonical taxonomy must span {CANONICAL_ARTIFACT_COUNT} artifacts, found {}",
                    by_artifact.len()
                )));
            }
        }
        Ok(Self {
            canonical,
            entries,
            by_id,
            by_artifact,
            by_phase,
        })
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn entries(&self) -> &[ExceptionTypeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn artifact_count(&self) -> usize {
        self.by_artifact.len()
    }

    pub fn lookup(&self, id: &str) -> Option<&ExceptionTypeEntry> {
        self.by_id.get(id).map(|&idx| &self.entries[idx])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Entries matching every supplied filter, in document order. A `Both`
    /// entry satisfies either phase filter.
    pub fn query(
        &self,
        phase: Option<Phase>,
        artifact: Option<ArtifactKind>,
    ) -> Vec<&ExceptionTypeEntry> {
        let mut hits: Vec<usize> = match artifact {
            Some(a) => self.by_artifact.get(&a).cloned().unwrap_or_default(),
            None => (0..self.entries.len()).collect(),
        };
        if let Some(p) = phase {
            let mut allowed: Vec<usize> = self.by_phase.get(&p).cloned().unwrap_or_default();
            if p != Phase::Both {
                allowed.extend(self.by_phase.get(&Phase::Both).into_iter().flatten());
            }
            hits.retain(|idx| allowed.contains(idx));
        }
        hits.sort_unstable();
        hits.into_iter().map(|idx| &self.entries[idx]).collect()
    }

    pub fn to_json(&self) -> String {
        let doc = DocumentRef {
            canonical: self.canonical,
            entries: &self.entries,
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }
}
