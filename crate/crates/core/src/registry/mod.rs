//! Handler pattern registry: the three mechanism dimensions, the numbered
//! triadic patterns built from them, and the exception → pattern mapping.
//!
//! The registry is static data. Scenario-level overrides are layered on at
//! resolution time via [`PatternRegistry::resolve_with_overrides`] and never
//! mutate the registry itself.

pub mod mechanism;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mechanism::{FlowControlDecision, LocalHandlingMechanism, StateRecoveryAction};

use crate::classifier::ExceptionId;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriadDimension {
    Local,
    Flow,
    Recovery,
}

impl fmt::Display for TriadDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriadDimension::Local => "local",
            TriadDimension::Flow => "flow",
            TriadDimension::Recovery => "recovery",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid triad: `{value}` is not a {dimension} mechanism")]
pub struct InvalidTriadError {
    pub dimension: TriadDimension,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triad {
    pub local: LocalHandlingMechanism,
    pub flow: FlowControlDecision,
    pub recovery: StateRecoveryAction,
}

/// Accepts a triad iff each name belongs to its dimension. Local names may be
/// canonical mechanism names or the pattern-table spellings.
pub fn validate_pattern(local: &str, flow: &str, recovery: &str) -> Result<Triad, InvalidTriadError> {
    let local_m = LocalHandlingMechanism::from_name(local).ok_or_else(|| InvalidTriadError {
        dimension: TriadDimension::Local,
        value: local.to_string(),
    })?;
    let flow_d = FlowControlDecision::from_name(flow).ok_or_else(|| InvalidTriadError {
        dimension: TriadDimension::Flow,
        value: flow.to_string(),
    })?;
    let recovery_a = StateRecoveryAction::from_name(recovery).ok_or_else(|| InvalidTriadError {
        dimension: TriadDimension::Recovery,
        value: recovery.to_string(),
    })?;
    Ok(Triad {
        local: local_m,
        flow: flow_d,
        recovery: recovery_a,
    })
}

/// Size of the full design space: 40 × 3 × 3.
pub fn cross_product_size() -> usize {
    LocalHandlingMechanism::ALL.len() * FlowControlDecision::ALL.len() * StateRecoveryAction::ALL.len()
}

pub fn is_pattern_id(id: &str) -> bool {
    id.len() == 4 && id.starts_with('P') && id[1..].bytes().all(|b| b.is_ascii_digit())
}

/// A numbered triad. `local_label` keeps the name as written in the source
/// table so output reproduces it verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerPattern {
    pub pattern_id: String,
    pub local: LocalHandlingMechanism,
    pub local_label: String,
    pub flow: FlowControlDecision,
    pub recovery: StateRecoveryAction,
}

impl HandlerPattern {
    pub fn new(id: &str, local: &str, flow: &str, recovery: &str) -> Result<Self, RegistryError> {
        if !is_pattern_id(id) {
            return Err(RegistryError::Integrity(format!("pattern id `{id}` does not match P###")));
        }
        let triad = validate_pattern(local, flow, recovery)
            .map_err(|e| RegistryError::Integrity(format!("pattern {id}: {e}")))?;
        Ok(Self {
            pattern_id: id.to_string(),
            local: triad.local,
            local_label: local.trim().to_string(),
            flow: triad.flow,
            recovery: triad.recovery,
        })
    }

    pub fn triad(&self) -> Triad {
        Triad {
            local: self.local,
            flow: self.flow,
            recovery: self.recovery,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PatternWire {
    id: String,
    local: String,
    flow: String,
    recovery: String,
}

impl Serialize for HandlerPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PatternWire {
            id: self.pattern_id.clone(),
            local: self.local_label.clone(),
            flow: self.flow.name().to_string(),
            recovery: self.recovery.name().to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HandlerPattern {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = PatternWire::deserialize(deserializer)?;
        HandlerPattern::new(&w.id, &w.local, &w.flow, &w.recovery).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("malformed registry document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("registry integrity violation: {0}")]
    Integrity(String),
}

#[derive(Deserialize, Serialize)]
struct RegistryWire {
    patterns: Vec<PatternWire>,
    mapping: BTreeMap<String, String>,
    default: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    notes: BTreeMap<String, String>,
}

/// Where a resolved pattern came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternSource {
    Mapping,
    Default,
    Override,
}

impl PatternSource {
    pub fn name(self) -> &'static str {
        match self {
            PatternSource::Mapping => "mapping",
            PatternSource::Default => "default",
            PatternSource::Override => "override",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternRegistry {
    patterns: Vec<HandlerPattern>,
    mapping: BTreeMap<String, String>,
    default_pattern: String,
    notes: BTreeMap<String, String>,
}

pub fn load_registry<R: Read>(source: R, taxonomy: &Taxonomy) -> Result<PatternRegistry, RegistryError> {
    let wire: RegistryWire = serde_json::from_reader(source)?;
    let mut patterns: Vec<HandlerPattern> = Vec::with_capacity(wire.patterns.len());
    for p in wire.patterns {
        let pattern = HandlerPattern::new(&p.id, &p.local, &p.flow, &p.recovery)?;
        if patterns.iter().any(|q| q.pattern_id == pattern.pattern_id) {
            return Err(RegistryError::Integrity(format!("duplicate pattern id `{}`", p.id)));
        }
        patterns.push(pattern);
    }
    let registry = PatternRegistry {
        patterns,
        mapping: wire.mapping,
        default_pattern: wire.default,
        notes: wire.notes,
    };
    registry.check(taxonomy)?;
    Ok(registry)
}

impl PatternRegistry {
    fn check(&self, taxonomy: &Taxonomy) -> Result<(), RegistryError> {
        if self.get(&self.default_pattern).is_none() {
            return Err(RegistryError::Integrity(format!(
                "default pattern `{}` is not defined",
                self.default_pattern
            )));
        }
        for (exception, pattern) in &self.mapping {
            if !taxonomy.contains(exception) {
                return Err(RegistryError::Integrity(format!(
                    "mapping key `{exception}` is not a taxonomy id"
                )));
            }
            if self.get(pattern).is_none() {
                return Err(RegistryError::Integrity(format!(
                    "mapping `{exception}` → `{pattern}` points at an undefined pattern"
                )));
            }
        }
        Ok(())
    }

    pub fn patterns(&self) -> &[HandlerPattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn get(&self, pattern_id: &str) -> Option<&HandlerPattern> {
        self.patterns.iter().find(|p| p.pattern_id == pattern_id)
    }

    pub fn mapping(&self) -> &BTreeMap<String, String> {
        &self.mapping
    }

    pub fn default_pattern(&self) -> &HandlerPattern {
        self.get(&self.default_pattern).expect("default checked at load")
    }

    pub fn note(&self, exception_id: &str) -> Option<&str> {
        self.notes.get(exception_id).map(String::as_str)
    }

    /// Mapped pattern for `exception_id`, or the default. Total.
    pub fn resolve(&self, exception_id: &ExceptionId) -> &HandlerPattern {
        self.resolve_with_source(exception_id).0
    }

    pub fn resolve_with_source(&self, exception_id: &ExceptionId) -> (&HandlerPattern, PatternSource) {
        match exception_id {
            ExceptionId::Known(id) => match self.mapping.get(id).and_then(|p| self.get(p)) {
                Some(p) => (p, PatternSource::Mapping),
                None => (self.default_pattern(), PatternSource::Default),
            },
            ExceptionId::Unclassified => (self.default_pattern(), PatternSource::Default),
        }
    }

    /// Like [`resolve_with_source`](Self::resolve_with_source) but consults
    /// `overrides` first. Overrides naming unknown patterns are ignored.
    pub fn resolve_with_overrides(
        &self,
        exception_id: &ExceptionId,
        overrides: &BTreeMap<String, String>,
    ) -> (&HandlerPattern, PatternSource) {
        if let Some(p) = overrides.get(exception_id.as_str()).and_then(|p| self.get(p)) {
            return (p, PatternSource::Override);
        }
        self.resolve_with_source(exception_id)
    }

    pub fn to_json(&self) -> String {
        let wire = RegistryWire {
            patterns: self
                .patterns
                .iter()
                .map(|p| PatternWire {
                    id: p.pattern_id.clone(),
                    local: p.local_label.clone(),
                    flow: p.flow.name().to_string(),
                    recovery: p.recovery.name().to_string(),
                })
                .collect(),
            mapping: self.mapping.clone(),
            default: self.default_pattern.clone(),
            notes: self.notes.clone(),
        };
        serde_json::to_string_pretty(&wire).expect("registry serializes")
    }
}

pub fn resolve<'r>(registry: &'r PatternRegistry, exception_id: &ExceptionId) -> &'r HandlerPattern {
    registry.resolve(exception_id)
}
