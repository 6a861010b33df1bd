//! Independent re-verification of builder proposals.
//!
//! The critic trusts nothing recorded in a proposal. It needs a store loaded
//! separately from the raw files and recomputes every vote, weight,
//! credibility check, count and threshold from it.

use std::collections::BTreeSet;

use super::gates::{type_a_terms, type_b_terms};
use super::store::EvidenceStore;
use super::{Gate, GuardPolicy, OverrideProposal, ProposalStatus};
use crate::consistency::SourceKind;

const TOLERANCE: f64 = 1e-9;

fn push(reasons: &mut Vec<String>, reason: &str) {
    if !reasons.iter().any(|r| r == reason) {
        reasons.push(reason.to_string());
    }
}

/// Returns the proposal marked `Verified`, or `Rejected` with one reason per
/// failed check class.
pub fn critic_verify(proposal: &OverrideProposal, store: &EvidenceStore, policy: &GuardPolicy) -> OverrideProposal {
    let mut out = proposal.clone();
    out.reasons = check(proposal, store, policy);
    out.status = if out.reasons.is_empty() {
        ProposalStatus::Verified
    } else {
        ProposalStatus::Rejected
    };
    out
}

/// Verifies a whole proposal list in order.
pub fn verify_all(proposals: &[OverrideProposal], store: &EvidenceStore, policy: &GuardPolicy) -> Vec<OverrideProposal> {
    proposals.iter().map(|p| critic_verify(p, store, policy)).collect()
}

fn check(p: &OverrideProposal, store: &EvidenceStore, policy: &GuardPolicy) -> Vec<String> {
    let mut reasons = Vec::new();
    let Some(&council) = store.council.get(p.sample_id) else {
        return vec!["unverifiable".into()];
    };
    if council != p.from {
        push(&mut reasons, "council_label");
    }
    if p.from == p.to {
        push(&mut reasons, "gate");
    }
    match p.gate {
        Gate::TypeA if !p.from.is_majority() || p.to.is_majority() => push(&mut reasons, "gate"),
        Gate::TypeB if p.from.is_majority() || p.to.is_majority() => push(&mut reasons, "gate"),
        _ => {}
    }
    if p.evidence.is_empty() {
        push(&mut reasons, "evidence");
    }

    for item in &p.evidence {
        let Some(src) = store.source(&item.source) else {
            push(&mut reasons, "unverifiable");
            continue;
        };
        let Some(raw) = src.prediction(p.sample_id) else {
            push(&mut reasons, "unverifiable");
            continue;
        };
        if src.kind != item.kind {
            push(&mut reasons, "kind");
        }
        if raw.label != item.label || item.label != p.to {
            push(&mut reasons, "label");
        }
        if (raw.agreement - item.agreement).abs() > TOLERANCE {
            push(&mut reasons, "agreement");
        }
        let weight = super::volume_discount(store.expected[raw.label.index()], src.predicted_count(raw.label));
        if (weight - item.weight).abs() > TOLERANCE {
            push(&mut reasons, "volume");
        }
        match super::credibility_gate(src, raw.label, policy.credibility_min_recall) {
            Ok(true) => {}
            Ok(false) => push(&mut reasons, "credibility"),
            Err(_) => push(&mut reasons, "unverifiable"),
        }
    }

    let bundle = match store.bundle(p.sample_id) {
        Ok(b) => b,
        Err(_) => {
            push(&mut reasons, "unverifiable");
            return reasons;
        }
    };
    let recorded: BTreeSet<&str> = p.evidence.iter().map(|e| e.source.as_str()).collect();
    match p.gate {
        Gate::TypeA => {
            let (qualifiers, corroborators, opposition) = type_a_terms(&bundle, p.to, policy);
            if qualifiers.is_empty() {
                push(&mut reasons, "threshold");
            }
            if qualifiers.len() != p.for_count || opposition.len() != p.against_count {
                push(&mut reasons, "count");
            }
            match &p.corroboration {
                None => push(&mut reasons, "corroboration"),
                Some(c) => match store.source(&c.source).map(|s| (s.kind, s.prediction(p.sample_id))) {
                    Some((kind, Some(raw))) if kind.corroborates() => {
                        if raw.label != c.label || c.label != p.to {
                            push(&mut reasons, "corroboration");
                        }
                    }
                    Some((kind, _)) if !kind.corroborates() => push(&mut reasons, "corroboration"),
                    _ => push(&mut reasons, "unverifiable"),
                },
            }
            if corroborators.is_empty() {
                push(&mut reasons, "corroboration");
            }
            if policy.require_zero_opposition_type_a && !opposition.is_empty() {
                push(&mut reasons, "opposition");
            }
            let expected: BTreeSet<&str> = qualifiers.iter().chain(&corroborators).map(|v| v.source.as_str()).collect();
            if expected != recorded {
                push(&mut reasons, "evidence");
            }
            if p.evidence.iter().any(|e| e.kind == SourceKind::FineTuned && e.agreement < policy.min_agreement_type_a) {
                push(&mut reasons, "threshold");
            }
            let weighted: f64 = qualifiers.iter().map(|v| v.weight * v.agreement).sum();
            if (weighted - p.weighted_for).abs() > TOLERANCE {
                push(&mut reasons, "volume");
            }
        }
        Gate::TypeB => {
            let (for_votes, against) = type_b_terms(&bundle, p.to, policy);
            if for_votes.len() != p.for_count || against != p.against_count {
                push(&mut reasons, "count");
            }
            if for_votes.len() < policy.min_sources_type_b || for_votes.len() <= against {
                push(&mut reasons, "threshold");
            }
            if p.for_count < policy.min_sources_type_b || p.for_count <= p.against_count {
                push(&mut reasons, "threshold");
            }
            let expected: BTreeSet<&str> = for_votes.iter().map(|v| v.source.as_str()).collect();
            if expected != recorded {
                push(&mut reasons, "evidence");
            }
            let weighted: f64 = for_votes.iter().map(|v| v.weight).sum();
            if (weighted - p.weighted_for).abs() > TOLERANCE {
                push(&mut reasons, "volume");
            }
        }
    }
    reasons
}
