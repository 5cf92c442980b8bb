use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentops::event::EventKind;
use crate::classifier::{RawExceptionSignal, SignalError, SignalOrigin};
use crate::data::Catalog;
use crate::escalation::{EntityKind, EntityRef};
use crate::registry::LocalHandlingMechanism;
use crate::taxonomy::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepAction {
    ModifyFile,
    PushCommits,
    InvokeTool,
    PostComment,
    WriteMemory,
    RequestReview,
}

impl StepAction {
    pub const ALL: [StepAction; 6] = [
        StepAction::ModifyFile,
        StepAction::PushCommits,
        StepAction::InvokeTool,
        StepAction::PostComment,
        StepAction::WriteMemory,
        StepAction::RequestReview,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StepAction::ModifyFile => "ModifyFile",
            StepAction::PushCommits => "PushCommits",
            StepAction::InvokeTool => "InvokeTool",
            StepAction::PostComment => "PostComment",
            StepAction::WriteMemory => "WriteMemory",
            StepAction::RequestReview => "RequestReview",
        }
    }
}

impl fmt::Display for StepAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_id: String,
    pub action: StepAction,
    pub target: EntityRef,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
    /// When set, skipping any step in `depends_on` is a violation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hard_dependency: bool,
    /// Content written by ModifyFile / WriteMemory / PostComment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl PlanStep {
    pub fn new(step_id: &str, action: StepAction, target: EntityRef) -> Self {
        Self {
            step_id: step_id.to_string(),
            action,
            target,
            depends_on: Vec::new(),
            hard_dependency: false,
            content: None,
        }
    }

    pub fn after(mut self, dep: &str, hard: bool) -> Self {
        self.depends_on.push(dep.to_string());
        self.hard_dependency |= hard;
        self
    }

    pub fn with_content(mut self, content: &str) -> Self {
        self.content = Some(content.to_string());
        self
    }

    /// One line of the rendered plan. Tool targets use the `tool \`x\``
    /// marker so the name is recoverable from the text.
    pub fn render(&self, index: usize) -> String {
        let target = match self.target.kind() {
            EntityKind::ToolName => format!("tool `{}`", self.target.value()),
            _ => self.target.value().to_string(),
        };
        let mut line = format!("{}. {} {} [{}]", index + 1, self.action, target, self.step_id);
        if !self.depends_on.is_empty() {
            let kind = if self.hard_dependency { "requires" } else { "after" };
            line.push_str(&format!(" ({kind} {})", self.depends_on.join(", ")));
        }
        line
    }
}

pub fn render_plan(steps: &[PlanStep]) -> String {
    steps.iter().enumerate().map(|(i, s)| s.render(i)).collect::<Vec<_>>().join("\n")
}

/// A signal with placeholders: `{step_id}`, `{target}` and `{protected}`
/// (the first protected path the step would touch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTemplate {
    pub message: String,
    pub origin: SignalOrigin,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_hint: Option<Phase>,
}

impl SignalTemplate {
    pub fn new(message: &str, origin: SignalOrigin) -> Self {
        Self {
            message: message.to_string(),
            origin,
            fields: BTreeMap::new(),
            phase_hint: None,
        }
    }

    pub fn with_field(mut self, k: &str, v: &str) -> Self {
        self.fields.insert(k.to_string(), v.to_string());
        self
    }

    pub fn instantiate(
        &self,
        thread_id: &str,
        step: &PlanStep,
        protected: Option<&str>,
    ) -> Result<RawExceptionSignal, SignalError> {
        let message = self
            .message
            .replace("{step_id}", &step.step_id)
            .replace("{target}", step.target.value())
            .replace("{protected}", protected.unwrap_or(""));
        let mut sig = RawExceptionSignal::new(message, self.origin, thread_id)?.with_step(&step.step_id);
        sig.structured_fields = self.fields.clone();
        sig.source_phase_hint = self.phase_hint;
        Ok(sig)
    }
}

/// Conjunctive predicate over a step and the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<StepAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub touches_protected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_contains: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum RuleOutcome {
    Succeed {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        memory_writes: BTreeMap<String, String>,
    },
    FailWith {
        signal: SignalTemplate,
        /// Mechanism names that remove this fault when applied.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        cured_by: Vec<String>,
        /// Whether the fault also hits the alternate tool.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        applies_to_alternate: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvRule {
    pub when: StepPredicate,
    pub outcome: RuleOutcome,
    /// Fires at most this many times, then is skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialEnvironment {
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub memory: BTreeMap<String, String>,
    #[serde(default)]
    pub knowledge_base: BTreeMap<String, String>,
    #[serde(default)]
    pub protected_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub goal_prompt: String,
    /// Plan variants in the order the reasoning module produces them: the
    /// initial plan, then one per accepted corrective directive.
    pub scripted_plans: Vec<Vec<PlanStep>>,
    #[serde(default)]
    pub environment_rules: Vec<EnvRule>,
    #[serde(default)]
    pub pattern_overrides: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_trace: Option<Vec<EventKind>>,
    #[serde(default)]
    pub environment: InitialEnvironment,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub expects_plan_repair: bool,
}

#[derive(Debug, Error)]
pub enum ScenarioConfigError {
    #[error("scenario `{0}` is not a built-in and not a readable file")]
    UnknownScenario(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario has an empty goal prompt")]
    EmptyGoal,
    #[error("scenario has no plan")]
    NoPlan,
    #[error("plan {plan} repeats step id `{step}`")]
    DuplicateStep { plan: usize, step: String },
    #[error("step `{step}` depends on `{dep}`, which is not an earlier step of plan {plan}")]
    BadDependency { plan: usize, step: String, dep: String },
    #[error("rule {rule}: unknown mechanism `{name}` in cured_by")]
    UnknownMechanism { rule: usize, name: String },
    #[error("rule {rule}: signal message is empty")]
    EmptySignal { rule: usize },
    #[error("override `{exception}` → `{pattern}` names an unknown exception or pattern")]
    BadOverride { exception: String, pattern: String },
    #[error("scenario expects plan repair but has no post-directive plan")]
    MissingRepairPlan,
    #[error("{0}")]
    Policy(#[from] crate::executor::PolicyError),
}

impl Scenario {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), ScenarioConfigError> {
        if self.goal_prompt.trim().is_empty() {
            return Err(ScenarioConfigError::EmptyGoal);
        }
        if self.scripted_plans.is_empty() || self.scripted_plans[0].is_empty() {
            return Err(ScenarioConfigError::NoPlan);
        }
        if self.expects_plan_repair && self.scripted_plans.len() < 2 {
            return Err(ScenarioConfigError::MissingRepairPlan);
        }
        for (p, plan) in self.scripted_plans.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for step in plan {
                for dep in &step.depends_on {
                    if !seen.contains(dep.as_str()) {
                        return Err(ScenarioConfigError::BadDependency {
                            plan: p,
                            step: step.step_id.clone(),
                            dep: dep.clone(),
                        });
                    }
                }
                if !seen.insert(step.step_id.as_str()) {
                    return Err(ScenarioConfigError::DuplicateStep {
                        plan: p,
                        step: step.step_id.clone(),
                    });
                }
            }
        }
        for (i, rule) in self.environment_rules.iter().enumerate() {
            if let RuleOutcome::FailWith { signal, cured_by, .. } = &rule.outcome {
                if signal.message.trim().is_empty() {
                    return Err(ScenarioConfigError::EmptySignal { rule: i });
                }
                if let Some(bad) = cured_by.iter().find(|n| LocalHandlingMechanism::from_name(n).is_none()) {
                    return Err(ScenarioConfigError::UnknownMechanism {
                        rule: i,
                        name: bad.clone(),
                    });
                }
            }
        }
        for (exception, pattern) in &self.pattern_overrides {
            if !catalog.taxonomy.contains(exception) || catalog.registry.get(pattern).is_none() {
                return Err(ScenarioConfigError::BadOverride {
                    exception: exception.clone(),
                    pattern: pattern.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn has_step(&self, step_id: &str) -> bool {
        self.scripted_plans.iter().flatten().any(|s| s.step_id == step_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A fault to plant on one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub signal: SignalTemplate,
    /// `None` = permanent; `Some(n)` = the first n executions fail.
    pub times: Option<u32>,
    pub cured_by: Vec<String>,
    pub applies_to_alternate: bool,
}

impl From<SignalTemplate> for Fault {
    fn from(signal: SignalTemplate) -> Self {
        Self {
            signal,
            times: None,
            cured_by: Vec::new(),
            applies_to_alternate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no step `{0}` in any plan of the scenario")]
pub struct UnknownStep(pub String);

/// Copy of `scenario` whose environment fails `step_id` with `fault`. The
/// new rule goes first so it takes precedence over existing rules.
pub fn inject_fault(scenario: &Scenario, step_id: &str, fault: impl Into<Fault>) -> Result<Scenario, UnknownStep> {
    if !scenario.has_step(step_id) {
        return Err(UnknownStep(step_id.to_string()));
    }
    let fault = fault.into();
    let mut out = scenario.clone();
    out.environment_rules.insert(
        0,
        EnvRule {
            when: StepPredicate {
                step_id: Some(step_id.to_string()),
                ..StepPredicate::default()
            },
            outcome: RuleOutcome::FailWith {
                signal: fault.signal,
                cured_by: fault.cured_by,
                applies_to_alternate: fault.applies_to_alternate,
            },
            times: fault.times,
        },
    );
    Ok(out)
}

/// Applies faults in order; an empty list returns an identical copy.
pub fn inject_faults(scenario: &Scenario, faults: &[(String, Fault)]) -> Result<Scenario, UnknownStep> {
    faults
        .iter()
        .try_fold(scenario.clone(), |s, (step, fault)| inject_fault(&s, step, fault.clone()))
}
