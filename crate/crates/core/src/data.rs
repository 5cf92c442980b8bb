//! Canonical data files and their resolution.
//!
//! The shipped taxonomy, registry and rule files are compiled in. A data
//! directory (from `--data-dir` or `SHIELDA_DATA_DIR`) replaces any of them
//! that it contains.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::classifier::{load_rules, RuleError, RuleSet};
use crate::registry::{load_registry, PatternRegistry, RegistryError};
use crate::taxonomy::{load_taxonomy, Taxonomy, TaxonomyError};

pub const TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");
pub const REGISTRY_JSON: &str = include_str!("../data/registry.json");
pub const RULES_JSON: &str = include_str!("../data/rules.json");
pub const AUTOPR_GOLDEN_JSON: &str = include_str!("../data/golden/autopr.trace.json");

pub const DATA_DIR_ENV: &str = "SHIELDA_DATA_DIR";

pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const RULES_FILE: &str = "rules.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("registry: {0}")]
    Registry(#[from] RegistryError),
    #[error("rules: {0}")]
    Rules(#[from] RuleError),
}

/// The three validated data sets every decision depends on.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub taxonomy: Arc<Taxonomy>,
    pub registry: PatternRegistry,
    pub rules: RuleSet,
}

impl Catalog {
    pub fn canonical() -> Self {
        Self::from_sources(TAXONOMY_JSON, REGISTRY_JSON, RULES_JSON).expect("shipped data files are valid")
    }

    pub fn from_sources(taxonomy: &str, registry: &str, rules: &str) -> Result<Self, DataError> {
        let taxonomy = Arc::new(load_taxonomy(Cursor::new(taxonomy))?);
        let registry = load_registry(Cursor::new(registry), &taxonomy)?;
        let rules = load_rules(Cursor::new(rules), Arc::clone(&taxonomy))?;
        Ok(Self {
            taxonomy,
            registry,
            rules,
        })
    }

    /// Loads from `dir`, falling back to the compiled-in copy for any file
    /// the directory lacks.
    pub fn from_dir(dir: &Path) -> Result<Self, DataError> {
        let read = |name: &str, fallback: &str| -> Result<String, DataError> {
            let path = dir.join(name);
            if path.exists() {
                fs::read_to_string(&path).map_err(|source| DataError::Io { path, source })
            } else {
                Ok(fallback.to_string())
            }
        };
        Self::from_sources(
            &read(TAXONOMY_FILE, TAXONOMY_JSON)?,
            &read(REGISTRY_FILE, REGISTRY_JSON)?,
            &read(RULES_FILE, RULES_JSON)?,
        )
    }

    /// `explicit` wins over the environment variable; neither means the
    /// compiled-in files.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, DataError> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)) {
            Some(dir) => Self::from_dir(&dir),
            None => Ok(Self::canonical()),
        }
    }

    pub fn with_rules(mut self, rules: RuleSet) -> Self {
        self.rules = rules;
        self
    }
}
