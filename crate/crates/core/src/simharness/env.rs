//! Simulated environment: a workspace with a remote, a side-effect ledger,
//! agent memory and a knowledge base, driven by scenario rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::scenario::{EnvRule, InitialEnvironment, PlanStep, RuleOutcome, StepAction};
use crate::agentops::checkpoint::state_digest;
use crate::classifier::{RawExceptionSignal, SignalOrigin};
use crate::escalation::{CorrectiveDirective, EscalationRecord, EscalationSink};
use crate::executor::{ExecutionEnv, InvokeMode, StateRecoveryError};
use crate::registry::LocalHandlingMechanism;
use crate::taxonomy::ArtifactKind;

pub const POISON_MARKER: &str = "[POISONED]";

/// One externally visible side effect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u64,
    pub op: String,
    pub target: String,
    pub step_ref: String,
    /// Remote content each pushed path had before the push (`null` if new).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub previous: BTreeMap<String, Option<String>>,
}

impl LedgerEntry {
    pub fn inverse_op(&self) -> String {
        match self.op.as_str() {
            "push" => "revert-push".into(),
            "post-comment" => "delete-comment".into(),
            "request-review" => "cancel-review-request".into(),
            other => format!("undo-{other}"),
        }
    }

    /// Paths a push wrote.
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.previous.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentState {
    /// Local working copy.
    pub workspace: BTreeMap<String, String>,
    /// Last pushed content.
    pub remote: BTreeMap<String, String>,
    /// Net external side effects. Only compensation removes entries.
    pub ledger: Vec<LedgerEntry>,
    /// Inverse actions applied by compensation, in order.
    pub compensations: Vec<LedgerEntry>,
    pub memory: BTreeMap<String, String>,
    pub knowledge_base: BTreeMap<String, String>,
    pub protected_paths: Vec<String>,
    /// Ledger ids per started step, keyed `thread/step`.
    pub side_effects: BTreeMap<String, Vec<u64>>,
    next_id: u64,
}

fn effect_key(thread_id: &str, step_ref: &str) -> String {
    format!("{thread_id}/{step_ref}")
}

impl EnvironmentState {
    pub fn from_initial(init: &InitialEnvironment) -> Self {
        Self {
            workspace: init.files.clone(),
            remote: init.files.clone(),
            memory: init.memory.clone(),
            knowledge_base: init.knowledge_base.clone(),
            protected_paths: init.protected_paths.clone(),
            ..Self::default()
        }
    }

    pub fn is_protected(&self, path: &str) -> bool {
        self.protected_paths.iter().any(|p| path.starts_with(p.as_str()))
    }

    /// Paths changed locally but not yet pushed.
    pub fn unpushed(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .workspace
            .iter()
            .filter(|(k, v)| self.remote.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        out.extend(self.remote.keys().filter(|k| !self.workspace.contains_key(*k)).cloned());
        out
    }

    /// First protected path `step` would write to the remote or workspace.
    pub fn protected_touch(&self, step: &PlanStep) -> Option<String> {
        match step.action {
            StepAction::ModifyFile => Some(step.target.value().to_string()).filter(|p| self.is_protected(p)),
            StepAction::PushCommits => self.unpushed().into_iter().find(|p| self.is_protected(p)),
            _ => None,
        }
    }

    pub fn begin_step(&mut self, thread_id: &str, step_ref: &str) {
        self.side_effects.entry(effect_key(thread_id, step_ref)).or_default();
    }

    pub fn record(&mut self, thread_id: &str, step_ref: &str, op: &str, target: &str, previous: BTreeMap<String, Option<String>>) -> LedgerEntry {
        self.next_id += 1;
        let entry = LedgerEntry {
            id: self.next_id,
            op: op.to_string(),
            target: target.to_string(),
            step_ref: step_ref.to_string(),
            previous,
        };
        self.ledger.push(entry.clone());
        self.side_effects.entry(effect_key(thread_id, step_ref)).or_default().push(entry.id);
        entry
    }

    /// Removes the step's ledger entries (newest first), restores anything a
    /// push overwrote, and logs the inverses.
    pub fn compensate_step(&mut self, thread_id: &str, step_ref: &str) -> Result<Vec<LedgerEntry>, StateRecoveryError> {
        let ids = self
            .side_effects
            .get_mut(&effect_key(thread_id, step_ref))
            .ok_or_else(|| StateRecoveryError::MissingSideEffectRecord(step_ref.to_string()))?;
        let ids = std::mem::take(ids);
        let mut inverses = Vec::new();
        for id in ids.into_iter().rev() {
            let Some(pos) = self.ledger.iter().position(|e| e.id == id) else {
                continue;
            };
            let entry = self.ledger.remove(pos);
            for (path, prev) in &entry.previous {
                match prev {
                    Some(content) => self.remote.insert(path.clone(), content.clone()),
                    None => self.remote.remove(path),
                };
            }
            self.next_id += 1;
            let inverse = LedgerEntry {
                id: self.next_id,
                op: entry.inverse_op(),
                target: entry.target.clone(),
                step_ref: entry.step_ref.clone(),
                previous: BTreeMap::new(),
            };
            self.compensations.push(inverse.clone());
            inverses.push(inverse);
        }
        Ok(inverses)
    }

    pub fn snapshot(&self, scope: ArtifactKind) -> Value {
        match scope {
            ArtifactKind::Memory => json!(self.memory),
            ArtifactKind::KnowledgeBase => json!(self.knowledge_base),
            _ => json!(self.workspace),
        }
    }

    pub fn restore(&mut self, scope: ArtifactKind, state: Value) {
        let map: BTreeMap<String, String> = serde_json::from_value(state).unwrap_or_default();
        match scope {
            ArtifactKind::Memory => self.memory = map,
            ArtifactKind::KnowledgeBase => self.knowledge_base = map,
            _ => self.workspace = map,
        }
    }

    pub fn digest(&self) -> String {
        state_digest(&serde_json::to_value(self).expect("state serializes"))
    }

    pub fn ledger_digest(&self) -> String {
        state_digest(&serde_json::to_value(&self.ledger).expect("ledger serializes"))
    }

    /// Throws away unpushed local edits.
    pub fn discard_unpushed(&mut self) {
        self.workspace = self.remote.clone();
    }

    /// Ledger entries that wrote a protected path.
    pub fn protected_ledger_entries(&self) -> Vec<&LedgerEntry> {
        self.ledger.iter().filter(|e| e.paths().any(|p| self.is_protected(p))).collect()
    }
}

/// A side effect observed during a step, for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    pub step_ref: String,
    pub record: Value,
    pub text: String,
}

/// Scenario rules plus mutable state, acting as the executor's environment.
pub struct SimWorld {
    pub state: EnvironmentState,
    rules: Vec<EnvRule>,
    fired: Vec<u32>,
    cured: BTreeSet<usize>,
    plans: Vec<Vec<PlanStep>>,
    plan_index: usize,
    next_plan: Option<usize>,
    sink: Box<dyn EscalationSink>,
    effects: Vec<Effect>,
    completed_by_handler: BTreeSet<String>,
}

impl SimWorld {
    pub fn new(
        init: &InitialEnvironment,
        rules: Vec<EnvRule>,
        plans: Vec<Vec<PlanStep>>,
        sink: Box<dyn EscalationSink>,
    ) -> Self {
        let n = rules.len();
        Self {
            state: EnvironmentState::from_initial(init),
            rules,
            fired: vec![0; n],
            cured: BTreeSet::new(),
            plans,
            plan_index: 0,
            next_plan: None,
            sink,
            effects: Vec::new(),
            completed_by_handler: BTreeSet::new(),
        }
    }

    pub fn plan_index(&self) -> usize {
        self.plan_index
    }

    pub fn current_plan(&self) -> &[PlanStep] {
        &self.plans[self.plan_index]
    }

    /// Switches to the plan chosen by the last successful replan, if any.
    pub fn adopt_next_plan(&mut self) -> bool {
        match self.next_plan.take() {
            Some(i) => {
                self.plan_index = i;
                true
            }
            None => false,
        }
    }

    pub fn sink(&self) -> &dyn EscalationSink {
        self.sink.as_ref()
    }

    pub fn deliver(&mut self, record: EscalationRecord) -> std::io::Result<()> {
        self.sink.deliver(record)
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    /// True once when a handler already completed `step_ref`.
    pub fn take_completed(&mut self, step_ref: &str) -> bool {
        self.completed_by_handler.remove(step_ref)
    }

    fn matches(&self, rule: &EnvRule, step: &PlanStep) -> bool {
        let w = &rule.when;
        w.step_id.as_ref().is_none_or(|s| *s == step.step_id)
            && w.action.is_none_or(|a| a == step.action)
            && w.target_contains.as_ref().is_none_or(|t| step.target.value().contains(t.as_str()))
            && w.touches_protected.is_none_or(|p| self.state.protected_touch(step).is_some() == p)
            && w.memory_contains.as_ref().is_none_or(|m| self.state.memory.values().any(|v| v.contains(m.as_str())))
    }

    fn active_rule(&self, step: &PlanStep, mode: InvokeMode) -> Option<usize> {
        self.rules.iter().enumerate().position(|(i, r)| {
            let exhausted = r.times.is_some_and(|n| self.fired[i] >= n);
            let skipped_alt = mode == InvokeMode::Alternate
                && matches!(r.outcome, RuleOutcome::FailWith { applies_to_alternate: false, .. });
            !exhausted && !self.cured.contains(&i) && !skipped_alt && self.matches(r, step)
        })
    }

    /// Runs one step. Successful steps return the side effects they caused.
    pub fn execute(&mut self, thread_id: &str, step: &PlanStep, mode: InvokeMode) -> Result<Vec<Effect>, RawExceptionSignal> {
        self.state.begin_step(thread_id, &step.step_id);
        let mut memory_writes = BTreeMap::new();
        if let Some(i) = self.active_rule(step, mode) {
            self.fired[i] += 1;
            match &self.rules[i].outcome {
                RuleOutcome::FailWith { signal, .. } => {
                    let protected = self.state.protected_touch(step);
                    return Err(signal
                        .instantiate(thread_id, step, protected.as_deref())
                        .expect("scenario validation rejects empty signals"));
                }
                RuleOutcome::Succeed { memory_writes: w } => memory_writes = w.clone(),
            }
        } else if step.action == StepAction::PushCommits {
            if let Some(path) = self.state.protected_touch(step) {
                let msg = format!("remote rejected push: `{path}` is protected");
                return Err(RawExceptionSignal::new(msg, SignalOrigin::ExternalSystem, thread_id)
                    .expect("non-empty")
                    .with_step(&step.step_id));
            }
        }
        let mut effects = self.default_action(thread_id, step);
        for (k, v) in memory_writes {
            self.state.memory.insert(k.clone(), v.clone());
            effects.push(Effect {
                step_ref: step.step_id.clone(),
                record: json!({"op": "memory-write", "key": k}),
                text: v,
            });
        }
        Ok(effects)
    }

    fn default_action(&mut self, thread_id: &str, step: &PlanStep) -> Vec<Effect> {
        let target = step.target.value().to_string();
        let content = step.content.clone().unwrap_or_else(|| format!("updated by {}", step.step_id));
        let sid = step.step_id.as_str();
        let effect = |entry: LedgerEntry, text: String| Effect {
            step_ref: sid.to_string(),
            record: serde_json::to_value(&entry).expect("entry serializes"),
            text,
        };
        match step.action {
            StepAction::ModifyFile => {
                self.state.workspace.insert(target, content);
                Vec::new()
            }
            StepAction::PushCommits => {
                let paths = self.state.unpushed();
                if paths.is_empty() {
                    return Vec::new();
                }
                let previous: BTreeMap<String, Option<String>> =
                    paths.iter().map(|p| (p.clone(), self.state.remote.get(p).cloned())).collect();
                self.state.remote = self.state.workspace.clone();
                let text = format!("pushed {}", paths.iter().cloned().collect::<Vec<_>>().join(", "));
                let entry = self.state.record(thread_id, sid, "push", &target, previous);
                vec![effect(entry, text)]
            }
            StepAction::PostComment => {
                let entry = self.state.record(thread_id, sid, "post-comment", &target, BTreeMap::new());
                vec![effect(entry, format!("commented on {target}"))]
            }
            StepAction::RequestReview => {
                let entry = self.state.record(thread_id, sid, "request-review", &target, BTreeMap::new());
                vec![effect(entry, format!("requested review from {target}"))]
            }
            StepAction::WriteMemory => {
                self.state.memory.insert(target.clone(), content.clone());
                vec![Effect {
                    step_ref: sid.to_string(),
                    record: json!({"op": "memory-write", "key": target}),
                    text: content,
                }]
            }
            StepAction::InvokeTool => Vec::new(),
        }
    }

    fn find_step(&self, step_ref: &str) -> Option<PlanStep> {
        self.current_plan().iter().find(|s| s.step_id == step_ref).cloned()
    }
}

impl ExecutionEnv for SimWorld {
    fn reinvoke(&mut self, thread_id: &str, step_ref: &str, mode: InvokeMode) -> Result<(), RawExceptionSignal> {
        let Some(step) = self.find_step(step_ref) else {
            return Err(RawExceptionSignal::new(format!("unknown step {step_ref}"), SignalOrigin::Internal, thread_id)
                .expect("non-empty"));
        };
        let effects = self.execute(thread_id, &step, mode)?;
        self.effects.extend(effects);
        self.completed_by_handler.insert(step_ref.to_string());
        Ok(())
    }

    fn apply_mechanism(&mut self, step_ref: Option<&str>, mechanism: LocalHandlingMechanism) -> bool {
        let Some(step) = step_ref.and_then(|s| self.find_step(s)) else {
            return false;
        };
        let mut cured_any = false;
        for i in 0..self.rules.len() {
            let cures = match &self.rules[i].outcome {
                RuleOutcome::FailWith { cured_by, .. } => cured_by
                    .iter()
                    .any(|n| LocalHandlingMechanism::from_name(n) == Some(mechanism)),
                RuleOutcome::Succeed { .. } => false,
            };
            if cures && self.matches(&self.rules[i], &step) && self.cured.insert(i) {
                cured_any = true;
            }
        }
        cured_any
    }

    fn reset_poisoned_memory(&mut self) -> usize {
        let before = self.state.memory.len();
        self.state.memory.retain(|_, v| !v.contains(POISON_MARKER));
        before - self.state.memory.len()
    }

    fn replan(&mut self, directive: &CorrectiveDirective) -> bool {
        let next = self.plan_index + 1;
        if directive.injected_constraints.is_empty() || next >= self.plans.len() {
            return false;
        }
        self.next_plan = Some(next);
        true
    }

    fn deliver_escalation(&mut self, record: EscalationRecord) -> bool {
        self.sink.deliver(record).is_ok()
    }

    fn hard_dependents(&self, step_ref: &str) -> Vec<String> {
        self.current_plan()
            .iter()
            .filter(|s| s.hard_dependency && s.depends_on.iter().any(|d| d == step_ref))
            .map(|s| s.step_id.clone())
            .collect()
    }

    fn snapshot(&self, scope: ArtifactKind) -> Value {
        self.state.snapshot(scope)
    }

    fn restore(&mut self, scope: ArtifactKind, state: Value) {
        self.state.restore(scope, state);
    }

    fn digest(&self) -> String {
        self.state.digest()
    }

    fn compensate(&mut self, thread_id: &str, step_ref: &str) -> Result<Vec<Value>, StateRecoveryError> {
        Ok(self
            .state
            .compensate_step(thread_id, step_ref)?
            .into_iter()
            .map(|e| serde_json::to_value(e).expect("entry serializes"))
            .collect())
    }
}
