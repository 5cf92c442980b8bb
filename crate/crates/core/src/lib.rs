//! Exception classification, triadic handling, and log-driven escalation for
//! agentic workflows, with a deterministic simulator to exercise them.

pub mod agentops;
pub mod cli;
pub mod classifier;
pub mod data;
pub mod escalation;
pub mod executor;
pub mod registry;
pub mod simharness;
pub mod taxonomy;
