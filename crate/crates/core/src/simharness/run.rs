//! The mission loop: ingest the goal, plan, execute steps, and on each
//! exception classify, select a pattern, handle, and escalate.

use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::env::{Effect, EnvironmentState, SimWorld};
use super::scenario::{render_plan, PlanStep, Scenario, ScenarioConfigError};
use crate::agentops::checkpoint::CheckpointStore;
use crate::agentops::event::{EventKind, LogPhase, NewEvent, WorkflowEvent};
use crate::agentops::log::{EventLog, LogError};
use crate::classifier::{Classification, RawExceptionSignal};
use crate::data::Catalog;
use crate::escalation::{
    escalate, make_sink, seeds_for, DecisionKind, EscalationPolicy, EscalationRecord, EscalationRequest, SinkError,
    TraceError, DEFAULT_MAX_ESCALATION_DEPTH,
};
use crate::executor::{
    handle, ExecutorError, FlowResult, HandlerBindings, HandlingContext, HandlingOutcome, HandlingStatus, InvokeMode,
    RetryPolicy, CHECKPOINT_SCOPES,
};
use crate::registry::{FlowControlDecision, HandlerPattern};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Replaces the scenario's own seed.
    pub seed: Option<u64>,
    pub log_path: Option<PathBuf>,
    pub sink: String,
    pub queue_path: Option<PathBuf>,
    pub max_escalation_depth: u32,
    pub retry: RetryPolicy,
    pub max_threads: u32,
    pub max_exceptions: u32,
    /// Loop guard on the log length.
    pub max_events: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            log_path: None,
            sink: "human".to_string(),
            queue_path: None,
            max_escalation_depth: DEFAULT_MAX_ESCALATION_DEPTH,
            retry: RetryPolicy::default(),
            max_threads: 8,
            max_exceptions: 32,
            max_events: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinalStatus {
    MissionCompleted,
    MissionTerminated,
    /// Handed to a sink that has not answered yet.
    EscalationPending,
}

impl FinalStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            FinalStatus::MissionCompleted => 0,
            FinalStatus::MissionTerminated => 2,
            FinalStatus::EscalationPending => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FinalStatus::MissionCompleted => "MissionCompleted",
            FinalStatus::MissionTerminated => "MissionTerminated",
            FinalStatus::EscalationPending => "EscalationPending",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mission_id: String,
    pub final_status: FinalStatus,
    pub log_path: Option<PathBuf>,
    pub outcomes: Vec<HandlingOutcome>,
    #[serde(skip)]
    pub events: Vec<WorkflowEvent>,
    /// Escalations started in this mission.
    pub escalation_depth: u32,
    /// Escalation decisions in order.
    pub decisions: Vec<String>,
    pub threads: u32,
    #[serde(skip)]
    pub state: EnvironmentState,
    pub termination_reason: Option<String>,
}

impl RunReport {
    pub fn kinds(&self) -> Vec<EventKind> {
        self.events.iter().map(|e| e.kind).collect()
    }

    pub fn to_jsonl(&self) -> String {
        crate::agentops::log::to_jsonl(&self.events)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ScenarioConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("escalation sink failed: {0}")]
    Delivery(#[source] std::io::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Where the step loop goes after an exception has been dealt with.
enum Next {
    Step(usize),
    EndThread,
    Stop(FinalStatus, String),
}

struct Run<'a> {
    scenario: &'a Scenario,
    catalog: &'a Catalog,
    config: &'a RunConfig,
    seed: u64,
    mission_id: String,
    log: EventLog,
    world: SimWorld,
    checkpoints: CheckpointStore,
    bindings: HandlerBindings,
    policy: EscalationPolicy,
    depth: u32,
    exceptions: u32,
    outcomes: Vec<HandlingOutcome>,
    decisions: Vec<String>,
}

pub fn run_scenario(scenario: &Scenario, catalog: &Catalog, config: &RunConfig) -> Result<RunReport, RunError> {
    scenario.validate(catalog)?;
    config.retry.validate().map_err(ScenarioConfigError::from)?;
    let seed = config.seed.unwrap_or(scenario.seed);
    let log = match &config.log_path {
        Some(p) => EventLog::create_file(p)?,
        None => EventLog::in_memory(),
    };
    let sink = make_sink(&config.sink, config.queue_path.as_deref())?;
    let mut run = Run {
        scenario,
        catalog,
        config,
        seed,
        mission_id: format!("{}-{seed}", scenario.name),
        log,
        world: SimWorld::new(
            &scenario.environment,
            scenario.environment_rules.clone(),
            scenario.scripted_plans.clone(),
            sink,
        ),
        checkpoints: CheckpointStore::new(),
        bindings: HandlerBindings::standard(),
        policy: EscalationPolicy {
            max_depth: config.max_escalation_depth,
            sink: config.sink.clone(),
        },
        depth: 0,
        exceptions: 0,
        outcomes: Vec::new(),
        decisions: Vec::new(),
    };
    let (status, reason, threads) = run.mission()?;
    Ok(RunReport {
        mission_id: run.mission_id,
        final_status: status,
        log_path: config.log_path.clone(),
        outcomes: run.outcomes,
        events: run.log.events().to_vec(),
        escalation_depth: run.depth,
        decisions: run.decisions,
        threads,
        state: run.world.state,
        termination_reason: reason,
    })
}

impl Run<'_> {
    fn emit(&mut self, kind: EventKind, phase: LogPhase, thread: &str, fill: impl FnOnce(NewEvent) -> NewEvent) -> Result<u64, LogError> {
        self.log.append(fill(NewEvent::new(kind, phase, &self.mission_id, thread)))
    }

    fn mission(&mut self) -> Result<(FinalStatus, Option<String>, u32), RunError> {
        let scenario = self.scenario;
        let seed = self.seed;
        self.emit(EventKind::GoalIngested, LogPhase::RP, "t0", |e| {
            e.with("goal", scenario.goal_prompt.as_str())
                .with("scenario", scenario.name.as_str())
                .with("seed", seed)
                .with("pattern_overrides", json!(scenario.pattern_overrides))
        })?;

        let mut thread_n = 0;
        let outcome = loop {
            if thread_n >= self.config.max_threads {
                break Next::Stop(FinalStatus::MissionTerminated, format!("thread budget of {} exhausted", self.config.max_threads));
            }
            thread_n += 1;
            let thread = format!("t{thread_n}");
            match self.run_thread(&thread)? {
                Next::EndThread => continue,
                Next::Step(_) => break Next::Step(0),
                stop => break stop,
            }
        };
        let depth = self.depth;
        match outcome {
            Next::Stop(status, reason) => {
                let pending = (status == FinalStatus::EscalationPending).then(|| self.policy.sink.clone());
                self.emit(EventKind::MissionTerminated, LogPhase::E, "t0", |e| {
                    let e = e.with("reason", reason.as_str()).with("escalation_depth", depth);
                    match pending {
                        Some(s) => e.with("pending_sink", s),
                        None => e,
                    }
                })?;
                Ok((status, Some(reason), thread_n))
            }
            _ => {
                self.emit(EventKind::MissionCompleted, LogPhase::E, "t0", |e| {
                    e.with("threads", thread_n).with("escalation_depth", depth)
                })?;
                Ok((FinalStatus::MissionCompleted, None, thread_n))
            }
        }
    }

    /// Runs the current plan in a fresh thread. `Step` means the plan ran to
    /// the end.
    fn run_thread(&mut self, thread: &str) -> Result<Next, RunError> {
        if thread != "t1" {
            self.world.state.discard_unpushed();
        }
        let plan: Vec<PlanStep> = self.world.current_plan().to_vec();
        let plan_index = self.world.plan_index();
        self.emit(EventKind::PlanGenerated, LogPhase::RP, thread, |e| {
            e.with("plan", render_plan(&plan))
                .with("plan_index", plan_index as u64)
                .with("steps", json!(plan))
        })?;
        for scope in CHECKPOINT_SCOPES {
            let cp = self.checkpoints.checkpoint(thread, scope, self.world.state.snapshot(scope)).clone();
            self.emit(EventKind::CheckpointTaken, LogPhase::E, thread, |e| {
                e.with("checkpoint_id", cp.checkpoint_id)
                    .with("scope", scope.name())
                    .with("digest", cp.state_digest)
            })?;
        }

        let mut i = 0;
        while i < plan.len() {
            if self.log.len() >= self.config.max_events {
                return Ok(Next::Stop(
                    FinalStatus::MissionTerminated,
                    format!("event budget of {} exhausted", self.config.max_events),
                ));
            }
            let step = &plan[i];
            self.emit(EventKind::PlanStepStarted, LogPhase::E, thread, |e| {
                e.with("step_id", step.step_id.as_str())
                    .with("action", step.action.name())
                    .with("target", step.target.value())
                    .with_entity(step.target.clone())
            })?;
            self.emit(EventKind::ToolInvoked, LogPhase::E, thread, |e| {
                e.with("step_id", step.step_id.as_str()).with("tool", step.action.name())
            })?;
            match self.world.execute(thread, step, InvokeMode::Primary) {
                Ok(effects) => {
                    self.record_effects(thread, effects)?;
                    i += 1;
                }
                Err(signal) => match self.on_exception(thread, i, signal)? {
                    Next::Step(n) => i = n,
                    other => return Ok(other),
                },
            }
        }
        Ok(Next::Step(plan.len()))
    }

    fn record_effects(&mut self, thread: &str, effects: Vec<Effect>) -> Result<(), LogError> {
        for fx in effects {
            self.emit(EventKind::SideEffectRecorded, LogPhase::E, thread, |e| {
                e.with("step_id", fx.step_ref.as_str()).with("effect", fx.record).with("text", fx.text)
            })?;
        }
        Ok(())
    }

    fn select(&mut self, thread: &str, classification: &Classification, decision_seq: u64) -> Result<HandlerPattern, LogError> {
        let (pattern, source) = self
            .catalog
            .registry
            .resolve_with_overrides(&classification.exception_id, &self.scenario.pattern_overrides);
        let pattern = pattern.clone();
        self.emit(EventKind::PatternSelected, classification.phase.into(), thread, |e| {
            e.with("pattern_id", pattern.pattern_id.as_str())
                .with("decision_seq", decision_seq)
                .with("source", source.name())
                .with("local", pattern.local.name())
                .with("flow", pattern.flow.name())
                .with("recovery", pattern.recovery.name())
        })?;
        Ok(pattern)
    }

    fn on_exception(&mut self, thread: &str, index: usize, signal: RawExceptionSignal) -> Result<Next, RunError> {
        self.exceptions += 1;
        if self.exceptions > self.config.max_exceptions {
            return Ok(Next::Stop(
                FinalStatus::MissionTerminated,
                format!("exception budget of {} exhausted", self.config.max_exceptions),
            ));
        }
        let step_id = signal.step_ref.clone().unwrap_or_default();
        let phase = signal.source_phase_hint.map(LogPhase::from).unwrap_or(LogPhase::E);
        let symptom_seq = self.emit(EventKind::ExceptionRaised, phase, thread, |e| {
            e.with("signal", json!(signal))
                .with("step_id", step_id.as_str())
                .with("message", signal.message.as_str())
        })?;

        let mut classification = self.catalog.rules.classify(&signal);
        let c = &classification;
        let classified_seq = self.emit(EventKind::Classified, c.phase.into(), thread, |e| {
            e.with("exception_id", c.exception_id.as_str())
                .with("phase", c.phase.label())
                .with("artifact", c.artifact.map(|a| a.name()))
                .with("matched_rule", c.matched_rule.clone())
                .with("evidence", json!(c.evidence))
                .with("cause_seq", symptom_seq)
        })?;
        let mut pattern = self.select(thread, &classification, classified_seq)?;
        let mut evidence = None;
        let mut constraint = None;

        loop {
            let jitter_seed = self.seed.wrapping_mul(1_000_003).wrapping_add(u64::from(self.exceptions));
            let result = {
                let mut ctx = HandlingContext::new(
                    classification.clone(),
                    signal.clone(),
                    pattern.clone(),
                    &mut self.log,
                    &mut self.world,
                    &self.checkpoints,
                )
                .with_policy(self.config.retry.clone());
                ctx.mission_id = self.mission_id.clone();
                ctx.goal = self.scenario.goal_prompt.clone();
                ctx.jitter_seed = jitter_seed;
                ctx.evidence = evidence.clone();
                ctx.constraint = constraint.clone();
                handle(&mut ctx, &self.bindings)
            };
            let effects = self.world.take_effects();
            self.record_effects(thread, effects)?;
            let completed = self.world.take_completed(&step_id);

            let failure = match result {
                Err(ExecutorError::Log(e)) => return Err(e.into()),
                Err(ExecutorError::Recovery(e)) => e.to_string(),
                Ok(o) if o.status == HandlingStatus::FailedLocal => {
                    let reason = o.failure.clone().unwrap_or_default();
                    self.outcomes.push(o);
                    reason
                }
                Ok(o) => {
                    let next = self.after_success(&o, index, completed);
                    self.outcomes.push(o);
                    return Ok(next);
                }
            };

            self.depth += 1;
            let symptom = self.log.get(symptom_seq).expect("symptom was just logged").clone();
            let seeds = seeds_for(&signal.message, &symptom, self.log.extractors());
            let depth = self.depth;
            let prior = classification.clone();
            let escalation_seq = self.emit(EventKind::EscalationStarted, prior.phase.into(), thread, |e| {
                e.with("symptom_seq", symptom_seq)
                    .with("depth", depth)
                    .with("prior", json!(prior))
                    .with("seeds", json!(seeds))
                    .with("reason", failure.as_str())
            })?;
            let decision = escalate(
                EscalationRequest {
                    prior: &classification,
                    symptom_seq,
                    seeds: &seeds,
                    depth,
                },
                self.log.events(),
                &self.catalog.rules,
                &self.catalog.registry,
                &self.scenario.pattern_overrides,
                &self.policy,
            )?;
            self.decisions.push(decision.name().to_string());
            let chain = decision.chain;
            match decision.kind {
                DecisionKind::Reclassified { classification: revised, .. } => {
                    let r = &revised;
                    let seqs = chain.seqs();
                    let root_seq = chain.root_seq();
                    let reclassified_seq = self.emit(EventKind::Reclassified, r.phase.into(), thread, |e| {
                        e.with("exception_id", r.exception_id.as_str())
                            .with("phase", r.phase.label())
                            .with("artifact", r.artifact.map(|a| a.name()))
                            .with("matched_rule", r.matched_rule.clone())
                            .with("escalation_seq", escalation_seq)
                            .with("chain", json!(seqs))
                            .with("root_seq", root_seq)
                    })?;
                    pattern = self.select(thread, &revised, reclassified_seq)?;
                    constraint = revised
                        .matched_rule
                        .as_deref()
                        .and_then(|id| self.catalog.rules.rule(id))
                        .and_then(|rule| rule.constraint.clone());
                    evidence = Some(chain);
                    classification = revised;
                }
                DecisionKind::ExternalSink { sink_id, payload } => {
                    let record = EscalationRecord {
                        timestamp: self.log.now(),
                        thread_id: thread.to_string(),
                        classification: classification.clone(),
                        chain: chain.seqs(),
                        payload,
                    };
                    self.world.deliver(record).map_err(RunError::Delivery)?;
                    return Ok(if self.world.sink().terminates() {
                        Next::Stop(FinalStatus::MissionTerminated, format!("escalation dropped by sink `{sink_id}`"))
                    } else {
                        Next::Stop(FinalStatus::EscalationPending, format!("escalated to sink `{sink_id}`"))
                    });
                }
                DecisionKind::TerminateMission { reason } => {
                    return Ok(Next::Stop(FinalStatus::MissionTerminated, reason));
                }
            }
        }
    }

    fn after_success(&mut self, outcome: &HandlingOutcome, index: usize, completed: bool) -> Next {
        if outcome.status == HandlingStatus::Escalated {
            let sink = self.world.sink();
            if sink.terminates() {
                return Next::Stop(FinalStatus::MissionTerminated, format!("escalation dropped by sink `{}`", sink.id()));
            }
            if outcome.flow == Some(FlowControlDecision::Abort) {
                return Next::Stop(FinalStatus::EscalationPending, format!("escalated to sink `{}`", sink.id()));
            }
        }
        match outcome.flow_result {
            Some(FlowResult::Redispatch { .. }) if completed => Next::Step(index + 1),
            Some(FlowResult::Redispatch { .. }) => Next::Step(index),
            Some(FlowResult::Skipped { .. }) => Next::Step(index + 1),
            Some(FlowResult::ThreadAborted) | None => {
                self.world.adopt_next_plan();
                Next::EndThread
            }
        }
    }
}
