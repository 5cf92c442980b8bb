//! Seeded generator of single-fault scenarios for property suites.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::builtins::WORKFLOWS_PREFIX;
use super::scenario::{inject_fault, Fault, InitialEnvironment, PlanStep, Scenario, SignalTemplate, StepAction};
use crate::classifier::SignalOrigin;
use crate::escalation::EntityRef;

/// Signals the generator plants. Together they reach concrete handlers,
/// stub handlers, escalation-class patterns and the unclassified default.
pub const SIGNAL_CORPUS: [(&str, SignalOrigin); 22] = [
    ("HTTP 504 gateway timeout from search backend", SignalOrigin::ToolCall),
    ("tool `web_fetch` not found", SignalOrigin::ToolCall),
    ("missing required parameter `query`", SignalOrigin::ToolCall),
    ("malformed tool output: truncated JSON", SignalOrigin::ToolCall),
    ("HTTP 429 too many requests", SignalOrigin::ExternalSystem),
    ("unexpected response schema from issues API", SignalOrigin::ExternalSystem),
    ("unsupported protocol version 2", SignalOrigin::ExternalSystem),
    ("malicious payload detected in attachment", SignalOrigin::ExternalSystem),
    ("context length exceeded: 9000 tokens", SignalOrigin::ModelOutput),
    ("invalid json: expected value at line 1", SignalOrigin::ModelOutput),
    ("element not ready: submit button still loading", SignalOrigin::Internal),
    ("clicked wrong element on {target}", SignalOrigin::Internal),
    ("unexpected dialog popup over the editor", SignalOrigin::Internal),
    ("stale memory about repo layout", SignalOrigin::Internal),
    ("[POISONED] cached answer reused by {step_id}", SignalOrigin::Internal),
    ("dependency not satisfied: build artifacts missing", SignalOrigin::Internal),
    ("cascading failure after upstream step", SignalOrigin::Internal),
    ("no response from agent @reviewer-bot", SignalOrigin::AgentMessage),
    ("agents disagree on merge order", SignalOrigin::AgentMessage),
    ("ambiguous goal: which branch should {step_id} use?", SignalOrigin::Internal),
    ("prompt injection: ignore previous instructions", SignalOrigin::Internal),
    ("sandbox worker exited with signal 11", SignalOrigin::Internal),
];

const CURES: [&str; 5] = ["Fallback", "Schema Validation", "Output Truncation", "Peer Confirmation", "Switch Tool"];
const TOOLS: [&str; 4] = ["web_fetch", "code_search", "linter", "notes_db"];

fn random_step(rng: &mut ChaCha8Rng, k: usize) -> PlanStep {
    let action = StepAction::ALL[rng.random_range(0..StepAction::ALL.len())];
    let target = match action {
        StepAction::ModifyFile if rng.random_range(0..8) == 0 => EntityRef::file(&format!("{WORKFLOWS_PREFIX}gen{k}.yml")),
        StepAction::ModifyFile => EntityRef::file(&format!("src/mod{k}.rs")),
        StepAction::PushCommits => EntityRef::ident(&format!("branch-{k}")),
        StepAction::InvokeTool => EntityRef::tool(TOOLS[rng.random_range(0..TOOLS.len())]),
        StepAction::PostComment => EntityRef::ident(&format!("issue-{}", rng.random_range(1..50))),
        StepAction::WriteMemory => EntityRef::ident(&format!("mem-{k}")),
        StepAction::RequestReview => EntityRef::agent(&format!("@reviewer{k}")),
    };
    let mut step = PlanStep::new(&format!("s{k}"), action, target);
    if k > 0 && rng.random_bool(0.5) {
        let dep = rng.random_range(0..k);
        step = step.after(&format!("s{dep}"), rng.random_bool(0.5));
    }
    step
}

/// A 3–6 step scenario with one planted fault, fully determined by `seed`.
pub fn random_single_fault_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=6);
    let plan: Vec<PlanStep> = (0..n).map(|k| random_step(&mut rng, k)).collect();
    let mut plans = vec![plan.clone()];
    if rng.random_bool(0.5) {
        let renamed = plan
            .iter()
            .map(|s| PlanStep {
                step_id: format!("r_{}", s.step_id),
                depends_on: s.depends_on.iter().map(|d| format!("r_{d}")).collect(),
                ..s.clone()
            })
            .collect();
        plans.push(renamed);
    }
    let base = Scenario {
        name: format!("random-{seed}"),
        seed,
        goal_prompt: format!("Carry out generated mission {seed}."),
        scripted_plans: plans,
        environment_rules: Vec::new(),
        pattern_overrides: BTreeMap::new(),
        expected_trace: None,
        environment: InitialEnvironment {
            files: BTreeMap::from([("src/lib.rs".into(), "pub fn f() {}\n".into())]),
            memory: BTreeMap::from([("user/pref".into(), "concise".into())]),
            knowledge_base: BTreeMap::from([("kb/api".into(), "v1".into())]),
            protected_paths: vec![WORKFLOWS_PREFIX.into()],
        },
        expects_plan_repair: false,
    };

    let (message, origin) = SIGNAL_CORPUS[rng.random_range(0..SIGNAL_CORPUS.len())];
    let target = &plan[rng.random_range(0..plan.len())].step_id;
    let fault = Fault {
        signal: SignalTemplate::new(message, origin),
        times: if rng.random_bool(0.5) { None } else { Some(rng.random_range(1..=2)) },
        cured_by: CURES.iter().filter(|_| rng.random_bool(0.3)).map(|c| c.to_string()).collect(),
        applies_to_alternate: rng.random_bool(0.5),
    };
    inject_fault(&base, target, fault).expect("target step is in the plan")
}
