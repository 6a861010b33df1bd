//! Gated overrides of council predictions.
//!
//! The pipeline has four deterministic stages:
//!
//! 1. **build** scans every `(sample, target class)` pair through the gate
//!    that applies to it and logs each evaluation;
//! 2. **verify** recomputes every claim of every proposal from an
//!    independently loaded [`EvidenceStore`];
//! 3. **guard** accepts the whole verified set or rejects it outright;
//! 4. **apply** rewrites exactly the accepted predictions.
//!
//! Type A moves a majority-class (L7) prediction to a minority class when a
//! credible fine-tuned source is self-consistent on that class and a council
//! rerun or pairwise resolver agrees. Type B moves between minority classes
//! when at least three credible sources agree and outnumber the rest, with
//! the council's own label counted against.

mod critic;
mod gates;
mod guard;
mod store;

pub use critic::{critic_verify, verify_all};
pub use gates::{
    build_proposals, credibility_gate, evaluate_sample, type_a_gate, type_b_gate, volume_discount, BuildOutput,
    CandidateEvaluation,
};
pub use guard::{apply, outcome_counts, regression_guard, DiffEntry, DiffReport, GuardRejection, GuardViolation, OutcomeCounts};
pub use store::{expected_counts, EvidenceBundle, EvidenceManifest, EvidenceStore, RecallSpec, SourceSpec, SourceVote, VoteRecall};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consistency::{ConsistencyError, SourceKind};
use crate::data::DataError;
use crate::label::DmrsLabel;

#[derive(Debug, thiserror::Error)]
pub enum OverrideError {
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("evidence manifest: {0}")]
    Manifest(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("sample {sample_id}: proposal expects {expected} but base prediction is {found}")]
    Stale {
        sample_id: usize,
        expected: DmrsLabel,
        found: DmrsLabel,
    },
    #[error("sample {0} not present in base predictions")]
    UnknownSample(usize),
    #[error("proposal for sample {0} has not passed the regression guard")]
    NotGuarded(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    TypeA,
    TypeB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalStatus {
    Proposed,
    Verified,
    Rejected,
    /// Accepted by the regression guard.
    Guarded,
}

/// One source's vote as recorded in a proposal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub source: String,
    pub kind: SourceKind,
    pub label: DmrsLabel,
    pub agreement: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corroboration {
    pub source: String,
    pub label: DmrsLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideProposal {
    pub sample_id: usize,
    pub from: DmrsLabel,
    pub to: DmrsLabel,
    pub gate: Gate,
    pub for_count: usize,
    pub against_count: usize,
    pub weighted_for: f64,
    pub evidence: Vec<EvidenceItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corroboration: Option<Corroboration>,
    pub status: ProposalStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

/// Thresholds for gating and the guard. All comparisons are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardPolicy {
    pub max_overrides: usize,
    pub min_sources_type_b: usize,
    pub min_agreement_type_a: f64,
    pub credibility_min_recall: f64,
    pub require_zero_opposition_type_a: bool,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        GuardPolicy {
            max_overrides: 25,
            min_sources_type_b: 3,
            min_agreement_type_a: 0.80,
            credibility_min_recall: 0.15,
            require_zero_opposition_type_a: false,
        }
    }
}

impl GuardPolicy {
    pub fn validate(&self) -> Result<(), OverrideError> {
        if !(0.0..=1.0).contains(&self.min_agreement_type_a) {
            return Err(OverrideError::Policy(format!(
                "min_agreement_type_a {} outside [0, 1]",
                self.min_agreement_type_a
            )));
        }
        if !(0.0..=1.0).contains(&self.credibility_min_recall) {
            return Err(OverrideError::Policy(format!(
                "credibility_min_recall {} outside [0, 1]",
                self.credibility_min_recall
            )));
        }
        if self.min_sources_type_b == 0 {
            return Err(OverrideError::Policy("min_sources_type_b must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, OverrideError> {
        let policy: GuardPolicy = toml::from_str(text).map_err(|e| OverrideError::Policy(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self, OverrideError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_toml() {
        let p = GuardPolicy::from_toml_str("max_overrides = 16\nrequire_zero_opposition_type_a = true\n").unwrap();
        assert_eq!(p.max_overrides, 16);
        assert!(p.require_zero_opposition_type_a);
        assert_eq!(p.min_sources_type_b, 3);
        assert!(GuardPolicy::from_toml_str("min_agreement_type_a = 1.5").is_err());
        assert!(GuardPolicy::from_toml_str("unknown = 1").is_err());
    }
}
