//! Phase-3 priority resolution over advocate ratings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{AdvocateRating, Strength};
use crate::label::DmrsLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResolutionPath {
    EarlyConsensus,
    UniqueStrong,
    PairwiseStrong,
    PairwiseModerate,
    SingleModerate,
    ModeratorSynthesis,
}

/// What Phase 3 has to do for a given set of ratings.
#[derive(Clone, Debug, PartialEq)]
pub enum ResolutionPlan {
    /// Decided without a call.
    Pick { label: DmrsLabel, path: ResolutionPath },
    /// One head-to-head call; the pair is in ascending order.
    Pairwise {
        pair: (DmrsLabel, DmrsLabel),
        path: ResolutionPath,
    },
    /// One moderator call over every rated class (ascending).
    Moderator { pool: Vec<DmrsLabel> },
}

impl ResolutionPlan {
    pub fn path(&self) -> ResolutionPath {
        match self {
            ResolutionPlan::Pick { path, .. } | ResolutionPlan::Pairwise { path, .. } => *path,
            ResolutionPlan::Moderator { .. } => ResolutionPath::ModeratorSynthesis,
        }
    }

    pub fn extra_calls(&self) -> u32 {
        match self {
            ResolutionPlan::Pick { .. } => 0,
            _ => 1,
        }
    }
}

/// The two classes that go head to head: highest Phase-1 sourcing
/// confidence first, lower level on ties.
fn top_two(classes: &[DmrsLabel], sourcing: &dyn Fn(DmrsLabel) -> f64) -> (DmrsLabel, DmrsLabel) {
    let mut ranked = classes.to_vec();
    ranked.sort_by(|a, b| sourcing(*b).total_cmp(&sourcing(*a)).then(a.cmp(b)));
    let (x, y) = (ranked[0], ranked[1]);
    (x.min(y), x.max(y))
}

/// Priority order: one STRONG wins outright; several STRONG go pairwise;
/// with no STRONG, several MODERATE go pairwise and a single MODERATE wins;
/// all WEAK goes to the moderator.
pub fn plan_resolution(
    ratings: &BTreeMap<DmrsLabel, AdvocateRating>,
    sourcing: &dyn Fn(DmrsLabel) -> f64,
) -> ResolutionPlan {
    let with = |s: Strength| -> Vec<DmrsLabel> {
        ratings.iter().filter(|(_, r)| r.strength == s).map(|(c, _)| *c).collect()
    };
    let strong = with(Strength::Strong);
    match strong.len() {
        1 => {
            return ResolutionPlan::Pick {
                label: strong[0],
                path: ResolutionPath::UniqueStrong,
            }
        }
        n if n >= 2 => {
            return ResolutionPlan::Pairwise {
                pair: top_two(&strong, sourcing),
                path: ResolutionPath::PairwiseStrong,
            }
        }
        _ => {}
    }
    let moderate = with(Strength::Moderate);
    match moderate.len() {
        0 => ResolutionPlan::Moderator {
            pool: ratings.keys().copied().collect(),
        },
        1 => ResolutionPlan::Pick {
            label: moderate[0],
            path: ResolutionPath::SingleModerate,
        },
        _ => ResolutionPlan::Pairwise {
            pair: top_two(&moderate, sourcing),
            path: ResolutionPath::PairwiseModerate,
        },
    }
}
