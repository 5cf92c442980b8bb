use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! local_mechanisms {
    ($( $num:literal $variant:ident $name:literal $desc:literal; )*) => {
        /// Local handling mechanisms, numbered 1 to 40.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum LocalHandlingMechanism {
            $( $variant, )*
        }

        impl LocalHandlingMechanism {
            pub const ALL: [LocalHandlingMechanism; 40] = [ $( LocalHandlingMechanism::$variant, )* ];

            pub fn number(self) -> u8 {
                match self { $( LocalHandlingMechanism::$variant => $num, )* }
            }

            pub fn name(self) -> &'static str {
                match self { $( LocalHandlingMechanism::$variant => $name, )* }
            }

            pub fn description(self) -> &'static str {
                match self { $( LocalHandlingMechanism::$variant => $desc, )* }
            }
        }
    };
}

local_mechanisms! {
    1 ClarifyPrompt "Clarify Prompt" "Ask the user to clarify ambiguous or underspecified goals.";
    2 EchoValidation "Echo Validation" "Paraphrase and reflect the goal to verify understanding.";
    3 ContextTagging "Context Tagging" "Label context content to separate user/system input sources.";
    4 DefaultInterpretation "Default Interpretation" "Apply default meaning when input is unclear.";
    5 DisentangledPrompting "Disentangled Prompting" "Separate memory/context/KB input paths explicitly.";
    6 PromptRewriting "Prompt Rewriting" "Rewrite or optimize the original prompt.";
    7 PromptSanitization "Prompt Sanitization" "Clean injections, redundancy, or special characters from prompt.";
    8 GraphValidation "Graph Validation" "Check the logical structure of the reasoning chain.";
    9 KbTrustScoring "KB Trust Scoring" "Score knowledge by trust level, filter untrusted entries.";
    10 LogicReranking "Logic Re-ranking" "Rerank multiple reasoning paths.";
    11 RecursiveCheckpointing "Recursive Checkpointing" "Insert intermediate checks to avoid infinite loops.";
    12 AbortTaskChain "Abort Task Chain" "Abort when the plan is unrecoverable.";
    13 ConflictResolution "Conflict Resolution" "Resolve agent conflicts via rule or confirmation.";
    14 ConstraintPruning "Constraint Pruning" "Remove conflicting or unfulfillable planning constraints.";
    15 ForwardChaining "Forward Chaining" "Predict if a task is feasible before continuing.";
    16 PeerConfirmation "Peer Confirmation" "Confirm cross-agent collaboration.";
    17 PlanRepair "Plan Repair" "Repair broken or incomplete plan structures.";
    18 PlanShortening "Plan Shortening" "Shorten long plan sequences.";
    19 RoleBasedCheck "Role-based Check" "Ensure the agent is capable of the assigned role.";
    20 SubgoalReordering "Subgoal Reordering" "Reorder subtasks to improve execution logic.";
    21 AttributeFiltering "Attribute Filtering" "Remove incorrect features during memory matching.";
    22 EscalateUiFailure "Escalate UI Failure" "Escalate UI failure, uncertainty to humans.";
    23 ExternalCallTimeout "External Call Timeout" "Fallback handler when the external system/API times out.";
    24 Fallback "Fallback" "Output default template if structure is broken.";
    25 FallbackToAlternateApi "Fallback to Alternate API" "Try another API endpoint if the primary fails.";
    26 LowConfidenceFilter "Low-confidence Filter" "Skip or downgrade model outputs with low confidence.";
    27 MemorySlotIsolation "Memory Slot Isolation" "Isolate faulty memory slots to prevent propagation.";
    28 OracleVerification "Oracle Verification" "Use rules/verifiers to judge model/tool correctness.";
    29 OutputSanitization "Output Sanitization" "Clean unsafe or injected segments in generated output.";
    30 OutputTruncation "Output Truncation" "Truncate model outputs that exceed token limits.";
    31 ProtocolDowngrade "Protocol Downgrade" "Use a more compatible older protocol if needed.";
    32 ResetMemory "Reset Memory" "Clear or rollback corrupted memory.";
    33 ResponseNormalization "Response Normalization" "Normalize API output to standard format.";
    34 RetryWithBackoff "Retry with Backoff" "Retry tool/API call with exponential delay.";
    35 SamplingAdjustment "Sampling Adjustment" "Adjust decoding parameters like temperature/top-p.";
    36 SchemaValidation "Schema Validation" "Check if output matches the required schema.";
    37 SemanticConstraintChecking "Semantic Constraint Checking" "Check output against semantic constraints or rules.";
    38 SwitchTool "Switch Tool" "Replace failed tool/API with a backup.";
    39 TimeoutEscalation "Timeout Escalation" "Trigger escalation on tool/API timeout.";
    40 EscalateToHuman "Escalate to Human" "General fallback strategy, escalate to human when needed.";
}

/// Longer names the pattern table uses for four mechanisms.
const PATTERN_TABLE_ALIASES: [(&str, LocalHandlingMechanism); 4] = [
    ("Forward Checking", LocalHandlingMechanism::ForwardChaining),
    ("Fallback Template", LocalHandlingMechanism::Fallback),
    ("External Call Timeout Fallback", LocalHandlingMechanism::ExternalCallTimeout),
    ("Conflict Resolution Prompt", LocalHandlingMechanism::ConflictResolution),
];

impl LocalHandlingMechanism {
    /// Resolves a mechanism by its canonical name or a pattern-table alias.
    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .or_else(|| PATTERN_TABLE_ALIASES.iter().find(|(a, _)| *a == name).map(|(_, m)| *m))
    }

    pub fn aliases() -> impl Iterator<Item = (&'static str, LocalHandlingMechanism)> {
        PATTERN_TABLE_ALIASES.into_iter()
    }

    /// Retry-class mechanisms get `max_attempts` local attempts; every other
    /// mechanism gets one.
    pub fn is_retry_class(self) -> bool {
        self == LocalHandlingMechanism::RetryWithBackoff
    }

    /// Mechanisms whose local action is handing the case to an external handler.
    pub fn is_escalation_class(self) -> bool {
        matches!(
            self,
            LocalHandlingMechanism::EscalateToHuman
                | LocalHandlingMechanism::TimeoutEscalation
                | LocalHandlingMechanism::EscalateUiFailure
        )
    }
}

impl fmt::Display for LocalHandlingMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowControlDecision {
    Continue,
    Skip,
    Abort,
}

impl FlowControlDecision {
    pub const ALL: [FlowControlDecision; 3] =
        [FlowControlDecision::Continue, FlowControlDecision::Skip, FlowControlDecision::Abort];

    pub fn name(self) -> &'static str {
        match self {
            FlowControlDecision::Continue => "Continue",
            FlowControlDecision::Skip => "Skip",
            FlowControlDecision::Abort => "Abort",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name.trim())
    }
}

impl fmt::Display for FlowControlDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateRecoveryAction {
    #[serde(rename = "No-op")]
    NoOp,
    Rollback,
    Compensate,
}

impl StateRecoveryAction {
    pub const ALL: [StateRecoveryAction; 3] =
        [StateRecoveryAction::NoOp, StateRecoveryAction::Rollback, StateRecoveryAction::Compensate];

    pub fn name(self) -> &'static str {
        match self {
            StateRecoveryAction::NoOp => "No-op",
            StateRecoveryAction::Rollback => "Rollback",
            StateRecoveryAction::Compensate => "Compensate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name.trim())
    }
}

impl fmt::Display for StateRecoveryAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbering_is_one_to_forty_in_order() {
        let nums: Vec<u8> = LocalHandlingMechanism::ALL.iter().map(|m| m.number()).collect();
        assert_eq!(nums, (1..=40).collect::<Vec<u8>>());
        assert_eq!(LocalHandlingMechanism::RetryWithBackoff.number(), 34);
        assert_eq!(LocalHandlingMechanism::RetryWithBackoff.description(), "Retry tool/API call with exponential delay.");
    }

    #[test]
    fn names_round_trip_and_are_unique() {
        for m in LocalHandlingMechanism::ALL {
            assert_eq!(LocalHandlingMechanism::from_name(m.name()), Some(m));
        }
        let mut names: Vec<_> = LocalHandlingMechanism::ALL.iter().map(|m| m.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 40);
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(
            LocalHandlingMechanism::from_name("Conflict Resolution Prompt"),
            Some(LocalHandlingMechanism::ConflictResolution)
        );
        assert_eq!(LocalHandlingMechanism::from_name("Undo Everything"), None);
    }

    #[test]
    fn recovery_wire_names() {
        assert_eq!(serde_json::to_string(&StateRecoveryAction::NoOp).unwrap(), "\"No-op\"");
        assert_eq!(StateRecoveryAction::from_name("Undo-All"), None);
    }
}
