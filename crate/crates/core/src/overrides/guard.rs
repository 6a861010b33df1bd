//! Whole-set regression guard and application of accepted overrides.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Gate, GuardPolicy, OverrideError, OverrideProposal, ProposalStatus};
use crate::data::Prediction;
use crate::label::DmrsLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum GuardViolation {
    TooMany { count: usize, max: usize },
    NotVerified { sample_id: usize, status: ProposalStatus },
    Duplicate { sample_id: usize },
    MissingCorroboration { sample_id: usize },
    BelowThreshold { sample_id: usize },
    UnknownSample { sample_id: usize },
    Stale { sample_id: usize, expected: DmrsLabel, found: DmrsLabel },
}

/// A rejected set. Nothing from it may be applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("regression guard rejected {proposals} proposals: {} violations", violations.len())]
pub struct GuardRejection {
    pub proposals: usize,
    pub violations: Vec<GuardViolation>,
}

/// Accepts the full set (marked `Guarded`) or rejects all of it.
/// `base` is the current label per sample id.
pub fn regression_guard(
    verified: &[OverrideProposal],
    policy: &GuardPolicy,
    base: &[DmrsLabel],
) -> Result<Vec<OverrideProposal>, GuardRejection> {
    let mut violations = Vec::new();
    if verified.len() > policy.max_overrides {
        violations.push(GuardViolation::TooMany {
            count: verified.len(),
            max: policy.max_overrides,
        });
    }
    let mut seen = BTreeSet::new();
    for p in verified {
        let sample_id = p.sample_id;
        if p.status != ProposalStatus::Verified {
            violations.push(GuardViolation::NotVerified {
                sample_id,
                status: p.status,
            });
        }
        if !seen.insert(sample_id) {
            violations.push(GuardViolation::Duplicate { sample_id });
        }
        let below = match p.gate {
            Gate::TypeA => {
                if p.corroboration.is_none() {
                    violations.push(GuardViolation::MissingCorroboration { sample_id });
                }
                p.for_count == 0
            }
            Gate::TypeB => p.for_count < policy.min_sources_type_b || p.for_count <= p.against_count,
        };
        if below {
            violations.push(GuardViolation::BelowThreshold { sample_id });
        }
        match base.get(sample_id) {
            None => violations.push(GuardViolation::UnknownSample { sample_id }),
            Some(&found) if found != p.from => violations.push(GuardViolation::Stale {
                sample_id,
                expected: p.from,
                found,
            }),
            _ => {}
        }
    }
    if !violations.is_empty() {
        return Err(GuardRejection {
            proposals: verified.len(),
            violations,
        });
    }
    Ok(verified
        .iter()
        .map(|p| OverrideProposal {
            status: ProposalStatus::Guarded,
            ..p.clone()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub sample_id: usize,
    pub from: DmrsLabel,
    pub to: DmrsLabel,
    pub gate: Gate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub total: usize,
    pub changed: usize,
    pub fraction_changed: f64,
    pub changes: Vec<DiffEntry>,
}

/// Rewrites exactly the accepted samples. Changed rows get source
/// `"override"` and no confidence; every other row is returned untouched.
pub fn apply(base: &[Prediction], accepted: &[OverrideProposal]) -> Result<(Vec<Prediction>, DiffReport), OverrideError> {
    let mut out = base.to_vec();
    let mut changes = Vec::with_capacity(accepted.len());
    for p in accepted {
        if p.status != ProposalStatus::Guarded {
            return Err(OverrideError::NotGuarded(p.sample_id));
        }
        let row = out
            .iter_mut()
            .find(|r| r.sample_id == p.sample_id)
            .ok_or(OverrideError::UnknownSample(p.sample_id))?;
        if row.label != p.from {
            return Err(OverrideError::Stale {
                sample_id: p.sample_id,
                expected: p.from,
                found: row.label,
            });
        }
        row.label = p.to;
        row.confidence = None;
        row.source = "override".into();
        changes.push(DiffEntry {
            sample_id: p.sample_id,
            from: p.from,
            to: p.to,
            gate: p.gate,
        });
    }
    changes.sort_by_key(|c| c.sample_id);
    let report = DiffReport {
        total: base.len(),
        changed: changes.len(),
        fraction_changed: if base.is_empty() {
            0.0
        } else {
            changes.len() as f64 / base.len() as f64
        },
        changes,
    };
    Ok((out, report))
}

/// How a set of changes fares against gold labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    /// Wrong before, right after.
    pub corrected: usize,
    /// Right before, wrong after.
    pub regressed: usize,
    /// Wrong before and after.
    pub lateral: usize,
}

impl OutcomeCounts {
    pub fn net(&self) -> i64 {
        self.corrected as i64 - self.regressed as i64
    }
}

pub fn outcome_counts(changes: &[DiffEntry], golds: &[DmrsLabel]) -> OutcomeCounts {
    let mut c = OutcomeCounts::default();
    for d in changes {
        let gold = golds[d.sample_id];
        if d.to == gold {
            c.corrected += 1;
        } else if d.from == gold {
            c.regressed += 1;
        } else {
            c.lateral += 1;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(v: u8) -> DmrsLabel {
        DmrsLabel::of(v)
    }

    fn proposal(sample_id: usize, from: u8, to: u8, status: ProposalStatus) -> OverrideProposal {
        OverrideProposal {
            sample_id,
            from: l(from),
            to: l(to),
            gate: Gate::TypeB,
            for_count: 3,
            against_count: 1,
            weighted_for: 3.0,
            evidence: Vec::new(),
            corroboration: None,
            status,
            reasons: Vec::new(),
        }
    }

    fn base(labels: &[u8]) -> Vec<Prediction> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &v)| Prediction {
                sample_id: i,
                label: l(v),
                confidence: None,
                source: "council".into(),
            })
            .collect()
    }

    #[test]
    fn guard_rejects_whole_set() {
        let labels = vec![l(3); 100];
        let policy = GuardPolicy::default();
        let many: Vec<_> = (0..75).map(|i| proposal(i, 3, 2, ProposalStatus::Verified)).collect();
        let err = regression_guard(&many, &policy, &labels).unwrap_err();
        assert!(matches!(err.violations[0], GuardViolation::TooMany { count: 75, max: 25 }));

        let mut set: Vec<_> = (0..16).map(|i| proposal(i, 3, 2, ProposalStatus::Verified)).collect();
        assert_eq!(regression_guard(&set, &policy, &labels).unwrap().len(), 16);
        set[4].status = ProposalStatus::Proposed;
        assert!(regression_guard(&set, &policy, &labels).is_err());
        set[4].status = ProposalStatus::Verified;
        set[5].sample_id = 6;
        assert!(matches!(
            regression_guard(&set, &policy, &labels).unwrap_err().violations[0],
            GuardViolation::Duplicate { sample_id: 6 }
        ));
    }

    #[test]
    fn type_a_needs_corroboration_field() {
        let mut p = proposal(0, 7, 6, ProposalStatus::Verified);
        p.gate = Gate::TypeA;
        let err = regression_guard(&[p], &GuardPolicy::default(), &[l(7)]).unwrap_err();
        assert_eq!(err.violations, vec![GuardViolation::MissingCorroboration { sample_id: 0 }]);
    }

    #[test]
    fn apply_changes_exactly_the_accepted_rows() {
        let b = base(&[7, 3, 7, 5]);
        let (same, report) = apply(&b, &[]).unwrap();
        assert_eq!(same, b);
        assert_eq!(report.changed, 0);

        let accepted = vec![proposal(1, 3, 2, ProposalStatus::Guarded)];
        let (out, report) = apply(&b, &accepted).unwrap();
        assert_eq!(out[1].label, l(2));
        assert_eq!(report.changes.len(), 1);
        for i in [0, 2, 3] {
            assert_eq!(out[i], b[i]);
        }

        let stale = vec![proposal(3, 7, 6, ProposalStatus::Guarded)];
        assert!(matches!(apply(&b, &stale), Err(OverrideError::Stale { sample_id: 3, .. })));
        let unguarded = vec![proposal(1, 3, 2, ProposalStatus::Verified)];
        assert!(matches!(apply(&b, &unguarded), Err(OverrideError::NotGuarded(1))));
    }

    #[test]
    fn outcomes() {
        let changes = vec![
            DiffEntry { sample_id: 0, from: l(7), to: l(6), gate: Gate::TypeA },
            DiffEntry { sample_id: 1, from: l(7), to: l(6), gate: Gate::TypeA },
            DiffEntry { sample_id: 2, from: l(3), to: l(2), gate: Gate::TypeB },
        ];
        let c = outcome_counts(&changes, &[l(6), l(7), l(4)]);
        assert_eq!((c.corrected, c.regressed, c.lateral, c.net()), (1, 1, 1, 0));
    }
}
