mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use shielda_core::agentops::{read_log, read_log_file, replay, state_digest, CheckpointStore, EventKind, EventLog};
use shielda_core::classifier::{Classification, ExceptionId, RawExceptionSignal, SignalOrigin};
use shielda_core::data::Catalog;
use shielda_core::escalation::{root_cause_trace, EntityKind, EntityRef};
use shielda_core::executor::{apply_recovery, retry_with_backoff, seeded_rng, HandlingContext, InvokeMode, RetryPolicy};
use shielda_core::registry::{validate_pattern, StateRecoveryAction};
use shielda_core::simharness::{
    adversarial_scenario, random_single_fault_scenario, run_scenario, FinalStatus, InitialEnvironment, PlanStep,
    RunConfig, SimWorld, StepAction,
};
use shielda_core::taxonomy::{ArtifactKind, Phase};

const AUTOPR_WORKFLOW: &str = ".github/workflows/autopr.yml";

fn kinds_in_order(events: &[shielda_core::agentops::WorkflowEvent], wanted: &[EventKind]) -> bool {
    let mut it = events.iter().map(|e| e.kind);
    wanted.iter().all(|w| it.any(|k| k == *w))
}

#[test]
fn criterion_1_autopr_golden_trace() {
    let log_path = temp_path("autopr.jsonl");
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_shielda"))
        .args(["run", "--scenario", "autopr", "--seed", "1", "--log"])
        .arg(&log_path)
        .output()
        .expect("binary runs");
    let elapsed = started.elapsed();

    let events = read_log_file(&log_path).expect("log parses");
    let _ = std::fs::remove_file(&log_path);
    let kinds: Vec<EventKind> = events.iter().map(|e| e.kind).collect();
    let golden: Vec<EventKind> =
        serde_json::from_str(include_str!("../data/golden/autopr.trace.json")).expect("golden parses");

    let raised = events.iter().find(|e| e.kind == EventKind::ExceptionRaised).expect("exception raised");
    let first_class = events.iter().find(|e| e.kind == EventKind::Classified).expect("classified");
    let first_pattern = events.iter().find(|e| e.kind == EventKind::PatternSelected).expect("pattern");
    let attempts: Vec<_> = events
        .iter()
        .filter(|e| e.kind == EventKind::LocalAttempt && e.payload_str("pattern_id") == Some("P018"))
        .collect();
    let reclass = events.iter().find(|e| e.kind == EventKind::Reclassified).expect("reclassified");
    let root_seq = reclass.payload_u64("root_seq").expect("root_seq");
    let root = events.iter().find(|e| e.seq == root_seq).expect("root event");
    let second_pattern = events
        .iter()
        .filter(|e| e.kind == EventKind::PatternSelected)
        .nth(1)
        .expect("second pattern");
    let directive = events.iter().find(|e| e.kind == EventKind::DirectiveIssued).expect("directive");

    let checks = [
        ("exit code 0", out.status.code() == Some(0)),
        ("under one second", elapsed < Duration::from_secs(1)),
        ("kinds equal the golden trace", kinds == golden),
        (
            "ordered milestones",
            kinds_in_order(
                &events,
                &[
                    EventKind::ExceptionRaised,
                    EventKind::Classified,
                    EventKind::PatternSelected,
                    EventKind::LocalAttempt,
                    EventKind::EscalationStarted,
                    EventKind::Reclassified,
                    EventKind::PatternSelected,
                    EventKind::DirectiveIssued,
                    EventKind::ThreadAborted,
                    EventKind::PlanGenerated,
                    EventKind::MissionCompleted,
                ],
            ),
        ),
        (
            "push rejected for missing workflows permission",
            raised.payload_str("message").is_some_and(|m| m.contains("without `workflows` permission")),
        ),
        (
            "first classification is an execution-phase protocol mismatch",
            first_class.payload_str("exception_id") == Some("external.protocol_mismatch")
                && first_class.payload_str("phase") == Some("E"),
        ),
        ("override selects P018", first_pattern.payload_str("pattern_id") == Some("P018")),
        (
            "three failed retries",
            attempts.len() == 3 && attempts.iter().all(|a| a.payload_str("result") == Some("failure")),
        ),
        (
            "chain root is the plan that targets the workflow file",
            root.kind == EventKind::PlanGenerated
                && root.entities.iter().any(|e| e.kind() == EntityKind::FilePath && e.value() == AUTOPR_WORKFLOW),
        ),
        (
            "reclassified as faulty task structuring",
            reclass.payload_str("exception_id") == Some("planning.faulty_task_structuring")
                && reclass.payload_str("phase") == Some("RP"),
        ),
        ("plan repair pattern P012", second_pattern.payload_str("pattern_id") == Some("P012")),
        (
            "directive forbids modifying workflow files",
            directive
                .payload_str("directive")
                .is_some_and(|d| d.contains("explicitly forbidden from modifying workflow files")),
        ),
        ("mission completes", kinds.last() == Some(&EventKind::MissionCompleted)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        1,
        &format!("autopr run matches the golden trace in {elapsed:?}"),
        failed.is_empty(),
        &failed.join("; "),
    );
    assert!(failed.is_empty(), "failed checks: {failed:?}");
}

#[test]
fn criterion_2_data_fidelity() {
    let catalog = Catalog::canonical();
    let taxonomy = &catalog.taxonomy;
    let registry = &catalog.registry;
    let mut problems = Vec::new();

    let artifacts: BTreeSet<ArtifactKind> = taxonomy.entries().iter().map(|e| e.artifact).collect();
    if taxonomy.len() != 36 || artifacts.len() != 12 {
        problems.push(format!("taxonomy has {} entries over {} artifacts", taxonomy.len(), artifacts.len()));
    }

    let loaded: Vec<(String, String, String, String)> = registry
        .patterns()
        .iter()
        .map(|p| {
            (
                p.pattern_id.clone(),
                p.local_label.clone(),
                p.flow.name().to_string(),
                p.recovery.name().to_string(),
            )
        })
        .collect();
    let expected: Vec<(String, String, String, String)> = PATTERN_TABLE
        .iter()
        .map(|(a, b, c, d)| (a.to_string(), b.to_string(), c.to_string(), d.to_string()))
        .collect();
    if loaded != expected {
        problems.push("pattern registry differs from the 48-row pattern table".into());
    }

    for (name, artifact, pid, local, flow, recovery) in REPRESENTATIVE_ROWS {
        let Some(entry) = taxonomy.entries().iter().find(|e| e.display_name == name) else {
            problems.push(format!("no taxonomy entry named {name}"));
            continue;
        };
        if entry.artifact.display_name() != artifact {
            problems.push(format!("{name}: artifact {} != {artifact}", entry.artifact.display_name()));
        }
        let p = registry.resolve(&ExceptionId::Known(entry.id.clone()));
        let got = (p.pattern_id.as_str(), p.local_label.as_str(), p.flow.name(), p.recovery.name());
        if got != (pid, local, flow, recovery) {
            problems.push(format!("{name}: resolved {got:?}"));
        }
    }

    report(
        2,
        "36 types over 12 artifacts, 48 patterns and 12 representative mappings",
        problems.is_empty(),
        &problems.join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn criterion_3_triad_validity() {
    let catalog = Catalog::canonical();
    let mut problems = Vec::new();
    for p in catalog.registry.patterns() {
        if validate_pattern(&p.local_label, p.flow.name(), p.recovery.name()).is_err() {
            problems.push(format!("{} rejected", p.pattern_id));
        }
    }

    let oracle_accepts = |l: &str, f: &str, r: &str| {
        let (l, f, r) = (l.trim(), f.trim(), r.trim());
        (LOCAL_MECHANISMS.contains(&l) || PATTERN_TABLE_SPELLINGS.contains(&l))
            && FLOWS.contains(&f)
            && RECOVERIES.contains(&r)
    };
    let mangle = |rng: &mut ChaCha8Rng, s: &str| -> String {
        match rng.random_range(0..6) {
            0 => s.to_lowercase(),
            1 => format!("{s}x"),
            2 => s.chars().skip(1).collect(),
            3 => format!(" {s} "),
            4 => s.replace(' ', "_"),
            _ => "Undo Everything".to_string(),
        }
    };
    let pick = |rng: &mut ChaCha8Rng, names: &[&str]| -> String {
        let s = names[rng.random_range(0..names.len())];
        if rng.random_bool(0.25) {
            mangle(rng, s)
        } else {
            s.to_string()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x7121);
    let mut accepted = 0;
    let all_locals: Vec<&str> = LOCAL_MECHANISMS.iter().chain(PATTERN_TABLE_SPELLINGS.iter()).copied().collect();
    for _ in 0..1000 {
        let l = pick(&mut rng, &all_locals);
        let f = pick(&mut rng, &FLOWS);
        let r = pick(&mut rng, &RECOVERIES);
        let got = validate_pattern(&l, &f, &r).is_ok();
        if got != oracle_accepts(&l, &f, &r) {
            problems.push(format!("({l:?}, {f:?}, {r:?}) accepted={got}"));
        }
        accepted += usize::from(got);
    }
    if shielda_core::registry::cross_product_size() != 40 * 3 * 3 {
        problems.push("design space is not 40 x 3 x 3".into());
    }

    report(
        3,
        &format!("48 shipped triads valid; 1000 fuzzed triples agree with the oracle ({accepted} accepted)"),
        problems.is_empty(),
        &problems.iter().take(5).cloned().collect::<Vec<_>>().join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn criterion_4_root_cause_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4004);
    let mut problems = Vec::new();
    for i in 0..50 {
        let chain_len = 1 + i % 5;
        let noisy = i >= 25;
        let planted = planted_log(&mut rng, chain_len, 200, noisy);
        let events = planted.log.events();
        assert!(events.len() <= 200);
        let seeds = BTreeSet::new();
        let chain = root_cause_trace(events, planted.symptom_seq, &seeds).expect("symptom exists");
        let (oracle, cross) = oracle_chain(events, planted.symptom_seq, &seeds);
        if chain.seqs() != oracle {
            problems.push(format!("log {i}: trace {:?} oracle {oracle:?}", chain.seqs()));
        }
        if chain.cross_mission_refs != cross {
            problems.push(format!("log {i}: cross refs {:?} oracle {cross:?}", chain.cross_mission_refs));
        }
        if !noisy && chain.seqs() != planted.planted {
            problems.push(format!("log {i}: trace {:?} planted {:?}", chain.seqs(), planted.planted));
        }
        if chain.root_seq() != *chain.seqs().last().unwrap() {
            problems.push(format!("log {i}: root is not the earliest link"));
        }
    }
    report(
        4,
        "50 generated logs: backward chain equals the planted chain and the fixpoint oracle",
        problems.is_empty(),
        &problems.join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[derive(Debug, Clone)]
enum Op {
    Memory(u8, u8),
    Kb(u8, u8),
    File(u8, u8),
    Checkpoint(u8),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..4, any::<u8>()).prop_map(|(k, v)| Op::Memory(k, v)),
        (0u8..4, any::<u8>()).prop_map(|(k, v)| Op::Kb(k, v)),
        (0u8..4, any::<u8>()).prop_map(|(k, v)| Op::File(k, v)),
        (0u8..3).prop_map(Op::Checkpoint),
    ]
}

fn classification(artifact: ArtifactKind) -> Classification {
    Classification {
        exception_id: ExceptionId::Known("task_flow.error_propagation".into()),
        phase: Phase::Execution,
        artifact: Some(artifact),
        matched_rule: None,
        evidence: Vec::new(),
    }
}

const SCOPES: [ArtifactKind; 3] = [ArtifactKind::Memory, ArtifactKind::KnowledgeBase, ArtifactKind::TaskFlow];

/// Checks all three recovery laws on one generated history.
fn recovery_laws(ops: &[Op], rollback_scope: usize, final_action: u8) -> Result<(), TestCaseError> {
    let catalog = Catalog::canonical();
    let pattern = catalog.registry.get("P017").expect("P017").clone();
    let init = InitialEnvironment {
        files: BTreeMap::from([("README.md".into(), "v0".into())]),
        memory: BTreeMap::from([("m0".into(), "seed".into())]),
        knowledge_base: BTreeMap::from([("kb0".into(), "seed".into())]),
        protected_paths: Vec::new(),
    };
    let mut world = SimWorld::new(&init, Vec::new(), Vec::new(), Box::new(shielda_core::escalation::DropSink::default()));
    let mut checkpoints = CheckpointStore::new();
    for scope in SCOPES {
        checkpoints.checkpoint("t1", scope, world.state.snapshot(scope));
    }
    for op in ops {
        match *op {
            Op::Memory(k, v) => {
                world.state.memory.insert(format!("m{k}"), v.to_string());
            }
            Op::Kb(k, v) => {
                world.state.knowledge_base.insert(format!("kb{k}"), v.to_string());
            }
            Op::File(k, v) => {
                world.state.workspace.insert(format!("src/f{k}.rs"), v.to_string());
            }
            Op::Checkpoint(s) => {
                let scope = SCOPES[s as usize];
                checkpoints.checkpoint("t1", scope, world.state.snapshot(scope));
            }
        }
    }
    let signal = RawExceptionSignal::new("cascading failure", SignalOrigin::Internal, "t1")
        .expect("non-empty")
        .with_step("s_final");
    let mut log = EventLog::in_memory();

    // No-op leaves every byte of state alone.
    let before = world.state.clone();
    {
        let mut ctx = HandlingContext::new(
            classification(ArtifactKind::TaskFlow),
            signal.clone(),
            pattern.clone(),
            &mut log,
            &mut world,
            &checkpoints,
        );
        let r = apply_recovery(StateRecoveryAction::NoOp, &mut ctx).expect("no-op");
        prop_assert_eq!(&r.digest_before, &r.digest_after);
    }
    prop_assert_eq!(&before, &world.state);

    // Rollback restores the scope's latest checkpoint digest.
    let scope = SCOPES[rollback_scope];
    let expected = checkpoints.latest("t1", scope).expect("checkpoint").state_digest.clone();
    {
        let mut ctx =
            HandlingContext::new(classification(scope), signal.clone(), pattern.clone(), &mut log, &mut world, &checkpoints);
        apply_recovery(StateRecoveryAction::Rollback, &mut ctx).expect("rollback");
    }
    prop_assert_eq!(state_digest(&world.state.snapshot(scope)), expected);

    // Compensate returns the ledger and the remote to their pre-step values.
    let ledger_before = world.state.ledger.clone();
    let remote_before = world.state.remote.clone();
    let (action, target) = match final_action % 3 {
        0 => (StepAction::PostComment, EntityRef::ident("issue-1")),
        1 => (StepAction::RequestReview, EntityRef::agent("@reviewer")),
        _ => (StepAction::PushCommits, EntityRef::ident("main")),
    };
    world.state.workspace.insert("README.md".into(), "changed".into());
    let step = PlanStep::new("s_final", action, target);
    world.execute("t1", &step, InvokeMode::Primary).expect("step succeeds");
    prop_assert!(!world.state.ledger.is_empty());
    {
        let mut ctx = HandlingContext::new(
            classification(ArtifactKind::TaskFlow),
            signal,
            pattern,
            &mut log,
            &mut world,
            &checkpoints,
        );
        apply_recovery(StateRecoveryAction::Compensate, &mut ctx).expect("compensate");
    }
    prop_assert_eq!(&world.state.ledger, &ledger_before);
    prop_assert_eq!(&world.state.remote, &remote_before);
    Ok(())
}

#[test]
fn criterion_5_state_recovery() {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 200,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (proptest::collection::vec(op_strategy(), 0..40), 0usize..3, any::<u8>());
    let result = runner.run(&strategy, |(ops, scope, action)| recovery_laws(&ops, scope, action));
    report(
        5,
        "200 randomized histories: No-op, Rollback and Compensate laws hold",
        result.is_ok(),
        &format!("{result:?}"),
    );
    result.expect("recovery laws");
}

#[test]
fn criterion_6_determinism_and_replay() {
    let catalog = Catalog::canonical();
    let mut problems = Vec::new();

    let mut bytes = Vec::new();
    for _ in 0..2 {
        let path = temp_path("det.jsonl");
        let config = RunConfig {
            log_path: Some(path.clone()),
            ..RunConfig::default()
        };
        run_scenario(&shielda_core::simharness::autopr_scenario(), &catalog, &config).expect("autopr runs");
        bytes.push(std::fs::read(&path).expect("log written"));
        let _ = std::fs::remove_file(&path);
    }
    if bytes[0] != bytes[1] {
        problems.push("autopr logs differ between runs".into());
    }
    let autopr_events = read_log(bytes[0].as_slice()).expect("log parses");
    let trace = replay(&autopr_events, &catalog.registry, &catalog.rules).expect("replay");
    if !trace.is_clean() || trace.decisions.is_empty() {
        problems.push(format!("autopr replay divergences: {:?}", trace.divergences()));
    }

    let mut decisions = trace.decisions.len();
    for seed in 0..100 {
        let scenario = random_single_fault_scenario(seed);
        let a = run_scenario(&scenario, &catalog, &RunConfig::default()).expect("random scenario runs");
        let b = run_scenario(&scenario, &catalog, &RunConfig::default()).expect("random scenario runs");
        if a.to_jsonl() != b.to_jsonl() {
            problems.push(format!("seed {seed}: logs differ"));
            continue;
        }
        let events = read_log(a.to_jsonl().as_bytes()).expect("log parses");
        match replay(&events, &catalog.registry, &catalog.rules) {
            Ok(t) if t.is_clean() => decisions += t.decisions.len(),
            Ok(t) => problems.push(format!("seed {seed}: {} divergences", t.divergences().len())),
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
    }
    report(
        6,
        &format!("autopr and 100 random scenarios are byte-identical across runs; {decisions} decisions replay clean"),
        problems.is_empty(),
        &problems.join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn criterion_7_backoff_law() {
    let policies = [(100u64, 2.0f64, 3u32), (50, 3.0, 5), (1, 1.0, 4), (256, 1.5, 8), (10, 2.0, 10), (7, 1.0, 1)];
    let mut problems = Vec::new();
    for (base, mult, max) in policies {
        let policy = RetryPolicy::new(base, mult, max, 0.0).expect("valid policy");
        let mut rng = seeded_rng(0);
        let mut calls = 0;
        let report_ = retry_with_backoff(&policy, &mut rng, |_| {
            calls += 1;
            Err::<(), _>("boom")
        });
        let mut expected = Vec::new();
        let mut d = base as f64;
        for _ in 0..max {
            expected.push(d as u64);
            d *= mult;
        }
        if report_.delays != expected || report_.attempts != max || calls != max || report_.outcome.is_ok() {
            problems.push(format!("({base}, {mult}, {max}): delays {:?} want {expected:?}", report_.delays));
        }

        // Succeeds on attempt k: k-1 delays, k calls.
        for k in 1..=max {
            let r = retry_with_backoff(&policy, &mut rng, |n| if n == k { Ok(n) } else { Err("no") });
            if r.outcome != Ok(k) || r.attempts != k || r.delays[..] != expected[..(k - 1) as usize] {
                problems.push(format!("({base}, {mult}, {max}) success at {k}: {:?}", r.delays));
            }
        }
    }
    if RetryPolicy::new(1, 2.0, 0, 0.0).is_ok() || RetryPolicy::new(1, 0.5, 3, 0.0).is_ok() {
        problems.push("invalid policy accepted".into());
    }
    report(
        7,
        "delays follow base * multiplier^(k-1) exactly and attempts never exceed the budget",
        problems.is_empty(),
        &problems.join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn criterion_8_bounded_escalation() {
    let catalog = Catalog::canonical();
    let mut problems = Vec::new();
    let report_ = run_scenario(&adversarial_scenario(), &catalog, &RunConfig::default()).expect("adversarial runs");
    let escalations = report_.events.iter().filter(|e| e.kind == EventKind::EscalationStarted).count();
    if report_.final_status != FinalStatus::MissionTerminated {
        problems.push(format!("status {:?}", report_.final_status));
    }
    if report_.escalation_depth > 3 || escalations > 3 {
        problems.push(format!("depth {} with {escalations} escalations", report_.escalation_depth));
    }
    if report_.decisions.last().map(String::as_str) != Some("TerminateMission") {
        problems.push(format!("decisions {:?}", report_.decisions));
    }
    if report_.events.len() > 10_000 || report_.events.last().map(|e| e.kind) != Some(EventKind::MissionTerminated) {
        problems.push(format!("{} events", report_.events.len()));
    }

    let mut longest = report_.events.len();
    for seed in 0..100 {
        let r = run_scenario(&random_single_fault_scenario(seed), &catalog, &RunConfig::default()).expect("runs");
        longest = longest.max(r.events.len());
        let terminal = r.events.last().map(|e| e.kind);
        if r.escalation_depth > 3
            || r.events.len() > 10_000
            || !matches!(terminal, Some(EventKind::MissionCompleted | EventKind::MissionTerminated))
        {
            problems.push(format!("seed {seed}: depth {} len {} end {terminal:?}", r.escalation_depth, r.events.len()));
        }
    }
    report(
        8,
        &format!("adversarial run terminates at depth <= 3; longest log {longest} events"),
        problems.is_empty(),
        &problems.join("; "),
    );
    assert!(problems.is_empty(), "{problems:?}");
}
