//! Backward-chaining root-cause analysis over an event log.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use super::entities::EntityRef;
use crate::agentops::event::{LogPhase, WorkflowEvent};
use crate::agentops::log;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("symptom event {0} is not in the log")]
    UnknownSymptom(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainLink {
    pub event_seq: u64,
    /// Entities this event shared with the chain at the moment it joined.
    pub shared_entities: BTreeSet<EntityRef>,
}

/// Links ordered from the symptom (latest) to the root (earliest).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalChain {
    pub links: Vec<ChainLink>,
    /// Events in other missions that mention a chain entity. They never join.
    pub cross_mission_refs: Vec<u64>,
    #[serde(skip)]
    root_event: WorkflowEvent,
}

impl CausalChain {
    /// The earliest event in the chain (the symptom itself for a length-1 chain).
    pub fn root(&self) -> &WorkflowEvent {
        &self.root_event
    }

    pub fn root_seq(&self) -> u64 {
        self.root_event.seq
    }

    pub fn symptom_seq(&self) -> u64 {
        self.links[0].event_seq
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn seqs(&self) -> Vec<u64> {
        self.links.iter().map(|l| l.event_seq).collect()
    }

    /// Entities the root shares with the rest of the chain; for a length-1
    /// chain, everything the symptom carries.
    pub fn root_entities(&self) -> BTreeSet<EntityRef> {
        let last = self.links.last().expect("chain has a symptom link");
        if self.links.len() == 1 && last.shared_entities.is_empty() {
            self.root_event.entities.clone()
        } else {
            last.shared_entities.clone()
        }
    }
}

/// Scans strictly backwards from `symptom_seq`. An event joins when its
/// entities intersect the accumulated set (seeds, symptom entities, and the
/// entities of every event joined so far). The scan stops at the first
/// joined reasoning/planning event or at the start of the log, and stays
/// within the symptom's mission.
pub fn root_cause_trace(
    events: &[WorkflowEvent],
    symptom_seq: u64,
    seeds: &BTreeSet<EntityRef>,
) -> Result<CausalChain, TraceError> {
    let symptom = log::get(events, symptom_seq).ok_or(TraceError::UnknownSymptom(symptom_seq))?;
    let mut accumulated: BTreeSet<EntityRef> = seeds.union(&symptom.entities).cloned().collect();
    let mut links = vec![ChainLink {
        event_seq: symptom.seq,
        shared_entities: seeds.intersection(&symptom.entities).cloned().collect(),
    }];
    let mut root = symptom;
    let mut cross_mission_refs = Vec::new();

    for event in events[..(symptom_seq - 1) as usize].iter().rev() {
        let shared: BTreeSet<EntityRef> = event.entities.intersection(&accumulated).cloned().collect();
        if shared.is_empty() {
            continue;
        }
        if event.mission_id != symptom.mission_id {
            cross_mission_refs.push(event.seq);
            continue;
        }
        accumulated.extend(event.entities.iter().cloned());
        links.push(ChainLink {
            event_seq: event.seq,
            shared_entities: shared,
        });
        root = event;
        if event.phase == LogPhase::RP {
            break;
        }
    }

    Ok(CausalChain {
        links,
        cross_mission_refs,
        root_event: root.clone(),
    })
}
