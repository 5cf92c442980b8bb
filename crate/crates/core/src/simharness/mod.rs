//! Deterministic scripted agent and environment for exercising the engine
//! end to end, with fault injection.

pub mod builtins;
pub mod env;
pub mod random;
pub mod run;
pub mod scenario;

use std::path::Path;

pub use builtins::{adversarial_scenario, autopr_scenario, builtin, happy_scenario, memory_poisoning_scenario, BUILTIN_NAMES};
pub use env::{EnvironmentState, LedgerEntry, SimWorld};
pub use random::{random_single_fault_scenario, SIGNAL_CORPUS};
pub use run::{run_scenario, FinalStatus, RunConfig, RunError, RunReport};
pub use scenario::{
    inject_fault, inject_faults, EnvRule, Fault, InitialEnvironment, PlanStep, RuleOutcome, Scenario,
    ScenarioConfigError, SignalTemplate, StepAction, StepPredicate, UnknownStep,
};

/// A built-in by name, otherwise a scenario JSON file at that path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, ScenarioConfigError> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(ScenarioConfigError::UnknownScenario(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
