mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::exceptions_are_classified;
use shielda_core::agentops::{read_log, replay, EventKind};
use shielda_core::classifier::{classify, ExceptionId, RawExceptionSignal, SignalOrigin};
use shielda_core::data::Catalog;
use shielda_core::escalation::root_cause_trace;
use shielda_core::simharness::{
    autopr_scenario, inject_fault, memory_poisoning_scenario, random_single_fault_scenario, run_scenario, Fault,
    FinalStatus, RunConfig, SignalTemplate, UnknownStep,
};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_runs_keep_their_invariants(seed in any::<u64>()) {
        let catalog = Catalog::canonical();
        let report = run_scenario(&random_single_fault_scenario(seed), &catalog, &RunConfig::default()).unwrap();
        let events = &report.events;

        for (i, e) in events.iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64 + 1);
            if i > 0 {
                prop_assert!(events[i - 1].logical_time < e.logical_time);
            }
        }
        prop_assert!(exceptions_are_classified(events));
        prop_assert!(report.outcomes.iter().all(|o| o.coupling_holds()));
        prop_assert!(report.state.protected_ledger_entries().is_empty());
        prop_assert!(report.escalation_depth <= 3);
        let last = events.last().unwrap().kind;
        prop_assert!(matches!(last, EventKind::MissionCompleted | EventKind::MissionTerminated));
        prop_assert_eq!(report.final_status == FinalStatus::MissionCompleted, last == EventKind::MissionCompleted);

        let parsed = read_log(report.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(&parsed, events);
    }

    #[test]
    fn recorded_chains_match_a_fresh_trace(seed in 0u64..400) {
        let catalog = Catalog::canonical();
        let report = run_scenario(&random_single_fault_scenario(seed), &catalog, &RunConfig::default()).unwrap();
        for e in report.events.iter().filter(|e| e.kind == EventKind::EscalationStarted) {
            let symptom = e.payload_u64("symptom_seq").unwrap();
            let seeds: BTreeSet<_> = serde_json::from_value(e.payload["seeds"].clone()).unwrap();
            let chain = root_cause_trace(&report.events, symptom, &seeds).unwrap();
            prop_assert_eq!(chain.symptom_seq(), symptom);
            if let Some(r) = report.events.iter().find(|r| r.kind == EventKind::Reclassified && r.payload_u64("escalation_seq") == Some(e.seq)) {
                let recorded: Vec<u64> = serde_json::from_value(r.payload["chain"].clone()).unwrap();
                prop_assert_eq!(recorded, chain.seqs());
            }
        }
    }

    #[test]
    fn classification_ignores_surrounding_whitespace(idx in 0usize..22, pad in "[ \t]{0,3}") {
        let catalog = Catalog::canonical();
        let (msg, origin) = shielda_core::simharness::SIGNAL_CORPUS[idx];
        let plain = RawExceptionSignal::new(msg, origin, "t").unwrap();
        let padded = RawExceptionSignal::new(format!("{pad}{msg}{pad}"), origin, "t").unwrap();
        prop_assert_eq!(
            classify(&catalog.rules, &plain).exception_id,
            classify(&catalog.rules, &padded).exception_id
        );
    }
}

#[test]
fn autopr_never_pushes_the_protected_workflow() {
    let catalog = Catalog::canonical();
    let report = run_scenario(&autopr_scenario(), &catalog, &RunConfig::default()).unwrap();
    assert!(report.state.protected_ledger_entries().is_empty());
    assert_eq!(
        report.state.remote.get(".github/workflows/autopr.yml").map(String::as_str),
        Some("on: issues\n")
    );
    assert!(report.state.remote["README.md"].contains("review has been requested"));
    assert!(exceptions_are_classified(&report.events));
}

#[test]
fn memory_poisoning_rolls_memory_back_to_its_checkpoint() {
    let catalog = Catalog::canonical();
    let scenario = memory_poisoning_scenario();
    let report = run_scenario(&scenario, &catalog, &RunConfig::default()).unwrap();
    assert_eq!(report.final_status, FinalStatus::MissionCompleted);

    let recovery = report
        .events
        .iter()
        .find(|e| e.kind == EventKind::RecoveryApplied && e.payload_str("action") == Some("Rollback"))
        .expect("rollback applied");
    assert_eq!(recovery.payload_str("scope"), Some("Memory"));
    let cp_id = recovery.payload_str("checkpoint_id").unwrap();
    let checkpoint = report
        .events
        .iter()
        .find(|e| e.kind == EventKind::CheckpointTaken && e.payload_str("checkpoint_id") == Some(cp_id))
        .expect("checkpoint logged");
    let restored = shielda_core::agentops::state_digest(&serde_json::json!(scenario.environment.memory));
    assert_eq!(checkpoint.payload_str("digest"), Some(restored.as_str()));
    assert!(report.state.memory.values().all(|v| !v.contains("[POISONED]")));
}

#[test]
fn injecting_into_a_missing_step_is_rejected() {
    let fault = Fault::from(SignalTemplate::new("boom", SignalOrigin::Internal));
    assert_eq!(
        inject_fault(&autopr_scenario(), "no_such_step", fault).unwrap_err(),
        UnknownStep("no_such_step".into())
    );
}

#[test]
fn injected_fault_takes_precedence() {
    let catalog = Catalog::canonical();
    let fault = Fault {
        signal: SignalTemplate::new("HTTP 504 gateway timeout from search backend", SignalOrigin::ToolCall),
        times: Some(1),
        cured_by: Vec::new(),
        applies_to_alternate: false,
    };
    let scenario = inject_fault(&autopr_scenario(), "edit_readme", fault).unwrap();
    let report = run_scenario(&scenario, &catalog, &RunConfig::default()).unwrap();
    let first = report.events.iter().find(|e| e.kind == EventKind::Classified).unwrap();
    assert_eq!(first.payload_str("exception_id"), Some("tool.unavailable"));
    let trace = replay(&report.events, &catalog.registry, &catalog.rules).unwrap();
    assert!(trace.is_clean());
}

#[test]
fn unclassified_signals_fall_back_to_the_default_pattern() {
    let catalog = Catalog::canonical();
    let signal = RawExceptionSignal::new("zzz qqq", SignalOrigin::Internal, "t").unwrap();
    let c = classify(&catalog.rules, &signal);
    assert_eq!(c.exception_id, ExceptionId::Unclassified);
    assert_eq!(catalog.registry.resolve(&c.exception_id).pattern_id, "P040");
}

#[test]
fn shipped_scenario_files_match_the_builtins() {
    let catalog = Catalog::canonical();
    for name in shielda_core::simharness::BUILTIN_NAMES {
        let path = format!("{}/data/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let from_file = shielda_core::simharness::load_scenario(&path).unwrap();
        let builtin = shielda_core::simharness::builtin(name).unwrap();
        assert_eq!(from_file.to_json(), builtin.to_json(), "{name}");
        let a = run_scenario(&from_file, &catalog, &RunConfig::default()).unwrap();
        let b = run_scenario(&builtin, &catalog, &RunConfig::default()).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl(), "{name}");
    }
}
