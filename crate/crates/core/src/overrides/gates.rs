//! Type A and Type B gates and the exhaustive builder scan.

use rayon::prelude::*;
use serde::Serialize;

use super::store::{EvidenceBundle, EvidenceStore, SourceVote};
use super::{Corroboration, EvidenceItem, Gate, GuardPolicy, OverrideError, OverrideProposal, ProposalStatus};
use crate::consistency::{ConsistencyError, EvidenceSource, SourceKind};
use crate::label::DmrsLabel;

/// Whether `source` may vote for `class`. Sources without a recall table
/// (resolver, reruns, alternates) are never gated; a fine-tuned table
/// without an entry for `class` is an error.
pub fn credibility_gate(source: &EvidenceSource, class: DmrsLabel, min_recall: f64) -> Result<bool, ConsistencyError> {
    match &source.recall {
        Some(t) => Ok(t.recall(class)? >= min_recall),
        None if source.kind == SourceKind::FineTuned => Err(ConsistencyError::MissingRecall(class)),
        None => Ok(true),
    }
}

/// `min(1, expected / predicted)`, and 1 for a source that never predicts the
/// class. An expected count of zero is treated as one.
pub fn volume_discount(expected_count: usize, predicted_count: usize) -> f64 {
    if predicted_count == 0 {
        return 1.0;
    }
    (expected_count.max(1) as f64 / predicted_count as f64).min(1.0)
}

/// Outcome of one `(sample, target)` evaluation, as written to the audit log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateEvaluation {
    pub sample_id: usize,
    pub from: DmrsLabel,
    pub to: DmrsLabel,
    pub gate: Gate,
    pub passed: bool,
    /// Passed and chosen as the sample's proposal.
    pub selected: bool,
    pub for_count: usize,
    pub against_count: usize,
    pub weighted_for: f64,
    pub reasons: Vec<&'static str>,
}

fn item(v: &SourceVote) -> EvidenceItem {
    EvidenceItem {
        source: v.source.clone(),
        kind: v.kind,
        label: v.label,
        agreement: v.agreement,
        weight: v.weight,
    }
}

struct Outcome {
    eval: CandidateEvaluation,
    proposal: Option<OverrideProposal>,
}

/// Type A terms for moving an L7 prediction to `to`: qualifying fine-tuned
/// votes, corroborating votes and opposing fine-tuned votes.
pub(crate) fn type_a_terms<'b>(
    bundle: &'b EvidenceBundle,
    to: DmrsLabel,
    policy: &GuardPolicy,
) -> (Vec<&'b SourceVote>, Vec<&'b SourceVote>, Vec<&'b SourceVote>) {
    let ft = || bundle.votes.iter().filter(|v| v.kind == SourceKind::FineTuned);
    let qualifiers = ft()
        .filter(|v| v.label == to && v.agreement >= policy.min_agreement_type_a && v.credible(policy.credibility_min_recall))
        .collect();
    let corroborators = bundle.votes.iter().filter(|v| v.kind.corroborates() && v.label == to).collect();
    let opposition = ft()
        .filter(|v| v.label != to && !v.label.is_majority() && v.agreement >= policy.min_agreement_type_a)
        .collect();
    (qualifiers, corroborators, opposition)
}

/// Type B terms for moving a minority prediction to `to`: credible votes
/// for `to`, and every vote for a different label plus the council's own.
pub(crate) fn type_b_terms<'b>(bundle: &'b EvidenceBundle, to: DmrsLabel, policy: &GuardPolicy) -> (Vec<&'b SourceVote>, usize) {
    let for_votes: Vec<_> = bundle
        .votes
        .iter()
        .filter(|v| v.label == to && v.credible(policy.credibility_min_recall))
        .collect();
    let against = bundle.votes.iter().filter(|v| v.label != to).count() + 1;
    (for_votes, against)
}

fn evaluate_type_a(bundle: &EvidenceBundle, to: DmrsLabel, policy: &GuardPolicy) -> Outcome {
    let (qualifiers, corroborators, opposition) = type_a_terms(bundle, to, policy);
    let mut reasons = Vec::new();
    if to.is_majority() {
        reasons.push("majority_target");
    }
    if qualifiers.is_empty() {
        let named: Vec<_> = bundle
            .votes
            .iter()
            .filter(|v| v.kind == SourceKind::FineTuned && v.label == to)
            .collect();
        reasons.push(if named.is_empty() {
            "no_source"
        } else if !named.iter().any(|v| v.credible(policy.credibility_min_recall)) {
            "credibility"
        } else {
            "agreement"
        });
    }
    if corroborators.is_empty() {
        reasons.push("corroboration");
    }
    if policy.require_zero_opposition_type_a && !opposition.is_empty() {
        reasons.push("opposition");
    }
    let weighted_for: f64 = qualifiers.iter().map(|v| v.weight * v.agreement).sum();
    let passed = reasons.is_empty();
    let proposal = passed.then(|| OverrideProposal {
        sample_id: bundle.sample_id,
        from: bundle.council_label,
        to,
        gate: Gate::TypeA,
        for_count: qualifiers.len(),
        against_count: opposition.len(),
        weighted_for,
        evidence: qualifiers.iter().chain(&corroborators).map(|v| item(v)).collect(),
        corroboration: corroborators.first().map(|v| Corroboration {
            source: v.source.clone(),
            label: v.label,
        }),
        status: ProposalStatus::Proposed,
        reasons: Vec::new(),
    });
    Outcome {
        eval: CandidateEvaluation {
            sample_id: bundle.sample_id,
            from: bundle.council_label,
            to,
            gate: Gate::TypeA,
            passed,
            selected: false,
            for_count: qualifiers.len(),
            against_count: opposition.len(),
            weighted_for,
            reasons,
        },
        proposal,
    }
}

fn evaluate_type_b(bundle: &EvidenceBundle, to: DmrsLabel, policy: &GuardPolicy) -> Outcome {
    let (for_votes, against) = type_b_terms(bundle, to, policy);
    let mut reasons = Vec::new();
    if to.is_majority() {
        reasons.push("majority_target");
    }
    if for_votes.len() < policy.min_sources_type_b {
        reasons.push("sources");
    }
    if for_votes.len() <= against {
        reasons.push("margin");
    }
    let weighted_for: f64 = for_votes.iter().map(|v| v.weight).sum();
    let passed = reasons.is_empty();
    let proposal = passed.then(|| OverrideProposal {
        sample_id: bundle.sample_id,
        from: bundle.council_label,
        to,
        gate: Gate::TypeB,
        for_count: for_votes.len(),
        against_count: against,
        weighted_for,
        evidence: for_votes.iter().map(|v| item(v)).collect(),
        corroboration: None,
        status: ProposalStatus::Proposed,
        reasons: Vec::new(),
    });
    Outcome {
        eval: CandidateEvaluation {
            sample_id: bundle.sample_id,
            from: bundle.council_label,
            to,
            gate: Gate::TypeB,
            passed,
            selected: false,
            for_count: for_votes.len(),
            against_count: against,
            weighted_for,
            reasons,
        },
        proposal,
    }
}

/// Evaluates all eight alternative targets for one sample and selects at
/// most one proposal: the highest weighted FOR. Type B ties yield nothing;
/// Type A ties go to the lower level.
pub fn evaluate_sample(bundle: &EvidenceBundle, policy: &GuardPolicy) -> (Vec<CandidateEvaluation>, Option<OverrideProposal>) {
    let gate = if bundle.council_label.is_majority() { Gate::TypeA } else { Gate::TypeB };
    let mut outcomes: Vec<Outcome> = DmrsLabel::all()
        .filter(|&c| c != bundle.council_label)
        .map(|c| match gate {
            Gate::TypeA => evaluate_type_a(bundle, c, policy),
            Gate::TypeB => evaluate_type_b(bundle, c, policy),
        })
        .collect();
    let mut best: Option<usize> = None;
    let mut tied = false;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.eval.passed {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let (w, wb) = (o.eval.weighted_for, outcomes[b].eval.weighted_for);
                if (w - wb).abs() <= 1e-12 {
                    tied = true;
                } else if w > wb {
                    best = Some(i);
                    tied = false;
                }
            }
        }
    }
    if tied && gate == Gate::TypeB {
        best = None;
    }
    let proposal = best.and_then(|b| {
        outcomes[b].eval.selected = true;
        outcomes[b].proposal.take()
    });
    (outcomes.into_iter().map(|o| o.eval).collect(), proposal)
}

/// The Type A proposal for an L7 sample, if any.
pub fn type_a_gate(bundle: &EvidenceBundle, policy: &GuardPolicy) -> Option<OverrideProposal> {
    if !bundle.council_label.is_majority() {
        return None;
    }
    evaluate_sample(bundle, policy).1
}

/// The Type B proposal for a minority-class sample, if any.
pub fn type_b_gate(bundle: &EvidenceBundle, policy: &GuardPolicy) -> Option<OverrideProposal> {
    if bundle.council_label.is_majority() {
        return None;
    }
    evaluate_sample(bundle, policy).1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildOutput {
    /// Sorted by `(sample_id, to)`.
    pub proposals: Vec<OverrideProposal>,
    /// Every evaluation, sample-major and ascending by target.
    pub audit: Vec<CandidateEvaluation>,
}

/// Scans every sample against every alternative class.
pub fn build_proposals(store: &EvidenceStore, policy: &GuardPolicy) -> Result<BuildOutput, OverrideError> {
    policy.validate()?;
    let per_sample: Vec<(Vec<CandidateEvaluation>, Option<OverrideProposal>)> = (0..store.len())
        .into_par_iter()
        .map(|i| store.bundle(i).map(|b| evaluate_sample(&b, policy)))
        .collect::<Result<_, _>>()?;
    let mut out = BuildOutput {
        proposals: Vec::new(),
        audit: Vec::with_capacity(per_sample.len() * 8),
    };
    for (evals, proposal) in per_sample {
        out.audit.extend(evals);
        out.proposals.extend(proposal);
    }
    Ok(out)
}
