//! The three-phase deliberation protocol.
//!
//! Phase 1 asks three specialists for `(primary, alternative, confidence)`.
//! Unanimous primaries with at least two confidences at or above `tau` end
//! the run after three calls. Otherwise every pooled candidate (plus one
//! injected minority class when the pool has none) gets a class advocate
//! rating STRONG, MODERATE or WEAK, and Phase 3 resolves by the priority
//! hierarchy in [`plan_resolution`].
//!
//! Candidates are kept in ascending level order and every reduction folds in
//! that order, so the outcome does not depend on which call finishes first.

mod resolve;

pub use resolve::{plan_resolution, ResolutionPath, ResolutionPlan};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    assemble_prompt, invoke, AdvocateRating, AgentBackend, AgentError, AgentRequest, AgentResponse, AgentRole,
    AgentVerdict, Invocation, PromptContext, RetryPolicy, TemplateStore,
};
use crate::data::{Dataset, Prediction, Sample};
use crate::label::DmrsLabel;
use crate::retrieval::{
    class_conditioned_retrieve, mmr_select, nearest_centroid, ExemplarSet, RetrievalConfig, RetrievalError,
    SimilarityBackend, TfIdfIndex,
};
use crate::rng;

/// Hard ceiling on calls per sample.
pub const CALL_CEILING: u32 = 10;
/// Phase 1 plus one advocate plus one resolution call.
pub const MIN_CALL_BUDGET: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CouncilError {
    #[error("invalid council config: {0}")]
    Config(String),
    #[error("sample {sample_id}: retrieval failed: {source}")]
    Retrieval {
        sample_id: usize,
        #[source]
        source: RetrievalError,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouncilConfig {
    /// Consensus confidence threshold.
    pub tau: f64,
    pub minority_classes: BTreeSet<DmrsLabel>,
    pub max_calls: u32,
    /// Advocates per sample, further limited by `max_calls - 4`.
    pub max_advocates: usize,
    pub seed: u64,
    pub retrieval: RetrievalConfig,
    pub retry: RetryPolicy,
}

impl Default for CouncilConfig {
    fn default() -> Self {
        CouncilConfig {
            tau: 0.7,
            minority_classes: [1, 2, 3, 4, 5, 8].into_iter().map(DmrsLabel::of).collect(),
            max_calls: CALL_CEILING,
            max_advocates: 5,
            seed: 0,
            retrieval: RetrievalConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

impl CouncilConfig {
    pub fn validate(&self) -> Result<(), CouncilError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CouncilError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(MIN_CALL_BUDGET..=CALL_CEILING).contains(&self.max_calls) {
            return Err(CouncilError::Config(format!(
                "max_calls {} outside [{MIN_CALL_BUDGET}, {CALL_CEILING}]",
                self.max_calls
            )));
        }
        if self.max_advocates == 0 {
            return Err(CouncilError::Config("max_advocates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.retrieval.lambda) {
            return Err(CouncilError::Config(format!("lambda {} outside [0, 1]", self.retrieval.lambda)));
        }
        if self.retrieval.k_phase1 == 0 || self.retrieval.k_phase2 == 0 {
            return Err(CouncilError::Config("retrieval k must be positive".into()));
        }
        Ok(())
    }

    pub fn advocate_slots(&self) -> usize {
        self.max_advocates.min((self.max_calls.saturating_sub(4)) as usize)
    }
}

/// Phase-1 verdicts and the candidate pool derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    /// Clinical analyst, mechanism specialist, pattern analyst.
    pub verdicts: Vec<AgentVerdict>,
    /// Ascending, deduplicated.
    pub candidates: Vec<DmrsLabel>,
    pub injected: Option<DmrsLabel>,
    /// Candidates removed to respect the advocate budget.
    pub dropped: Vec<DmrsLabel>,
}

impl CandidatePool {
    pub fn from_verdicts(verdicts: Vec<AgentVerdict>) -> Self {
        let candidates: BTreeSet<DmrsLabel> = verdicts.iter().flat_map(|v| [v.primary, v.alternative]).collect();
        CandidatePool {
            verdicts,
            candidates: candidates.into_iter().collect(),
            injected: None,
            dropped: Vec::new(),
        }
    }

    /// Highest confidence of any verdict naming `label`; 0 if none does.
    pub fn sourcing_confidence(&self, label: DmrsLabel) -> f64 {
        self.verdicts
            .iter()
            .filter(|v| v.primary == label || v.alternative == label)
            .map(|v| v.confidence)
            .fold(0.0, f64::max)
    }

    pub fn is_primary(&self, label: DmrsLabel) -> bool {
        self.verdicts.iter().any(|v| v.primary == label)
    }

    /// Keeps at most `slots` candidates: the injected class first, then
    /// primaries, then alternatives, each by descending sourcing confidence
    /// and ascending level.
    pub fn cap(&mut self, slots: usize) {
        if self.candidates.len() <= slots {
            return;
        }
        let tier = |c: DmrsLabel| {
            if Some(c) == self.injected {
                0
            } else if self.is_primary(c) {
                1
            } else {
                2
            }
        };
        let mut ranked = self.candidates.clone();
        ranked.sort_by(|a, b| {
            tier(*a)
                .cmp(&tier(*b))
                .then(self.sourcing_confidence(*b).total_cmp(&self.sourcing_confidence(*a)))
                .then(a.cmp(b))
        });
        let dropped = ranked.split_off(slots);
        ranked.sort();
        self.candidates = ranked;
        self.dropped.extend(dropped);
        self.dropped.sort();
    }
}

/// `y*` when all three primaries agree and at least two confidences reach `tau`.
pub fn check_consensus(pool: &CandidatePool, tau: f64) -> Option<DmrsLabel> {
    let first = pool.verdicts.first()?.primary;
    let unanimous = pool.verdicts.iter().all(|v| v.primary == first);
    let confident = pool.verdicts.iter().filter(|v| v.confidence >= tau).count();
    (unanimous && confident >= 2).then_some(first)
}

/// Adds the minority class nearest to the query when the pool has none.
pub fn inject_minority(mut pool: CandidatePool, config: &CouncilConfig, index: &TfIdfIndex, query: &Sample) -> CandidatePool {
    if pool.candidates.iter().any(|c| config.minority_classes.contains(c)) {
        return pool;
    }
    let minority: Vec<DmrsLabel> = config.minority_classes.iter().copied().collect();
    if let Some(c) = nearest_centroid(index, query, &minority) {
        pool.candidates.push(c);
        pool.candidates.sort();
        pool.injected = Some(c);
    }
    pool
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Phase1,
    Phase2,
    Phase3,
}

/// One logical agent call in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub phase: Phase,
    pub role: AgentRole,
    pub payload_hash: String,
    pub exemplar_rows: Vec<usize>,
    pub raw: String,
    pub response: AgentResponse,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouncilResult {
    pub sample_id: usize,
    pub label: DmrsLabel,
    pub path: ResolutionPath,
    pub consensus: bool,
    pub pool: CandidatePool,
    pub ratings: BTreeMap<DmrsLabel, AdvocateRating>,
    pub call_count: u32,
    pub trace: Vec<CallRecord>,
}

/// How independent calls within a phase (and samples within a batch) run.
/// Results are always folded in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dispatch {
    Sequential,
    /// Scoped threads per phase; rayon with `threads` workers per batch
    /// (0 means one per logical core).
    Threaded { threads: usize },
    /// Sequential, but in a permutation drawn from the seed.
    Shuffled(u64),
}

pub struct Council<'a> {
    backend: &'a dyn AgentBackend,
    index: &'a TfIdfIndex,
    similarity: &'a dyn SimilarityBackend,
    templates: &'a TemplateStore,
    config: CouncilConfig,
    dispatch: Dispatch,
}

struct PendingCall<'s> {
    phase: Phase,
    request: AgentRequest,
    exemplars: Vec<usize>,
    flags: Vec<&'s str>,
}

impl<'a> Council<'a> {
    pub fn new(
        backend: &'a dyn AgentBackend,
        index: &'a TfIdfIndex,
        similarity: &'a dyn SimilarityBackend,
        templates: &'a TemplateStore,
        config: CouncilConfig,
    ) -> Result<Self, CouncilError> {
        config.validate()?;
        Ok(Council {
            backend,
            index,
            similarity,
            templates,
            config,
            dispatch: Dispatch::Sequential,
        })
    }

    pub fn with_dispatch(mut self, dispatch: Dispatch) -> Self {
        self.dispatch = dispatch;
        self
    }

    pub fn config(&self) -> &CouncilConfig {
        &self.config
    }

    fn exemplar_context(&self, sets: &[&ExemplarSet]) -> Vec<(DmrsLabel, &'a str)> {
        let index = self.index;
        sets.iter()
            .flat_map(|s| s.rows())
            .map(|r| (index.meta(r).gold, index.text(r)))
            .collect()
    }

    fn run(&self, calls: Vec<PendingCall<'_>>, salt: u64) -> Result<Vec<CallRecord>, CouncilError> {
        let exec = |c: &PendingCall<'_>| invoke(self.backend, &c.request, &self.config.retry);
        let results: Vec<Result<Invocation, AgentError>> = match self.dispatch {
            Dispatch::Sequential => calls.iter().map(exec).collect(),
            Dispatch::Threaded { .. } => std::thread::scope(|s| {
                let handles: Vec<_> = calls.iter().map(|c| s.spawn(move || exec(c))).collect();
                handles.into_iter().map(|h| h.join().expect("agent call panicked")).collect()
            }),
            Dispatch::Shuffled(seed) => {
                let mut order: Vec<usize> = (0..calls.len()).collect();
                order.shuffle(&mut rng::stream(&[seed, salt]));
                let mut slots: Vec<Option<Result<Invocation, AgentError>>> = (0..calls.len()).map(|_| None).collect();
                for i in order {
                    slots[i] = Some(exec(&calls[i]));
                }
                slots.into_iter().map(|s| s.expect("every slot filled")).collect()
            }
        };
        calls
            .into_iter()
            .zip(results)
            .map(|(call, result)| {
                let inv = result?;
                Ok(CallRecord {
                    phase: call.phase,
                    role: call.request.role,
                    payload_hash: call.request.payload.hash(),
                    exemplar_rows: call.exemplars,
                    raw: inv.raw,
                    response: inv.response,
                    attempts: inv.attempts,
                    flags: call.flags.into_iter().map(String::from).collect(),
                })
            })
            .collect()
    }

    fn retrieval_err(sample_id: usize) -> impl Fn(RetrievalError) -> CouncilError {
        move |source| CouncilError::Retrieval { sample_id, source }
    }

    /// Phase 1: three independent verdicts; the pattern analyst sees MMR exemplars.
    pub fn phase1(&self, sample_id: usize, sample: &Sample) -> Result<(CandidatePool, Vec<CallRecord>), CouncilError> {
        let rc = &self.config.retrieval;
        let exemplars = mmr_select(self.index, sample, rc.k_phase1, rc.lambda, rc.exclude_same_dialogue)
            .map_err(Self::retrieval_err(sample_id))?;
        let mut calls = Vec::with_capacity(3);
        for role in AgentRole::PHASE1 {
            let (ctx, rows) = if role == AgentRole::PatternAnalyst {
                let ctx = PromptContext {
                    exemplars: self.exemplar_context(&[&exemplars]),
                    ..Default::default()
                };
                (ctx, exemplars.rows().collect())
            } else {
                (PromptContext::default(), Vec::new())
            };
            calls.push(PendingCall {
                phase: Phase::Phase1,
                request: AgentRequest {
                    role,
                    sample_id,
                    payload: assemble_prompt(role, sample, &ctx, self.templates)?,
                    candidates: Vec::new(),
                },
                exemplars: rows,
                flags: Vec::new(),
            });
        }
        let records = self.run(calls, rng::mix(&[sample_id as u64, 1]))?;
        let verdicts = records
            .iter()
            .map(|r| r.response.as_verdict().cloned().expect("phase-1 roles parse as verdicts"))
            .collect();
        Ok((CandidatePool::from_verdicts(verdicts), records))
    }

    /// Phase 2: one advocate per candidate with in-class exemplars.
    pub fn phase2(
        &self,
        sample_id: usize,
        sample: &Sample,
        pool: &CandidatePool,
    ) -> Result<(BTreeMap<DmrsLabel, AdvocateRating>, Vec<CallRecord>), CouncilError> {
        let mut calls = Vec::with_capacity(pool.candidates.len());
        for &class in &pool.candidates {
            let role = AgentRole::Advocate(class);
            let (set, flags) = self.in_class(sample_id, sample, class)?;
            let ctx = PromptContext {
                exemplars: self.exemplar_context(&[&set]),
                candidates: pool.candidates.clone(),
                ..Default::default()
            };
            calls.push(PendingCall {
                phase: Phase::Phase2,
                request: AgentRequest {
                    role,
                    sample_id,
                    payload: assemble_prompt(role, sample, &ctx, self.templates)?,
                    candidates: pool.candidates.clone(),
                },
                exemplars: set.rows().collect(),
                flags,
            });
        }
        let records = self.run(calls, rng::mix(&[sample_id as u64, 2]))?;
        let ratings = records
            .iter()
            .map(|r| {
                let rating = r.response.as_rating().cloned().expect("advocates parse as ratings");
                (rating.class, rating)
            })
            .collect();
        Ok((ratings, records))
    }

    fn in_class(&self, sample_id: usize, sample: &Sample, class: DmrsLabel) -> Result<(ExemplarSet, Vec<&'static str>), CouncilError> {
        match class_conditioned_retrieve(self.index, self.similarity, sample, class, self.config.retrieval.k_phase2) {
            Ok(set) => Ok((set, Vec::new())),
            Err(RetrievalError::NoClassCandidates { .. }) => Ok((
                ExemplarSet {
                    items: Vec::new(),
                    query_dialogue_id: sample.dialogue_id.clone(),
                },
                vec!["no_in_class_exemplars"],
            )),
            Err(e) => Err(Self::retrieval_err(sample_id)(e)),
        }
    }

    /// Phase 3: applies the resolution plan, making at most one call.
    pub fn resolve(
        &self,
        sample_id: usize,
        sample: &Sample,
        ratings: &BTreeMap<DmrsLabel, AdvocateRating>,
        pool: &CandidatePool,
    ) -> Result<(DmrsLabel, ResolutionPath, Vec<CallRecord>), CouncilError> {
        let plan = plan_resolution(ratings, &|c| pool.sourcing_confidence(c));
        let path = plan.path();
        let (role, candidates, sets, flags) = match plan {
            ResolutionPlan::Pick { label, path } => return Ok((label, path, Vec::new())),
            ResolutionPlan::Pairwise { pair: (a, b), .. } => {
                let (sa, mut fa) = self.in_class(sample_id, sample, a)?;
                let (sb, fb) = self.in_class(sample_id, sample, b)?;
                fa.extend(fb);
                fa.dedup();
                (AgentRole::PairwiseResolver, vec![a, b], vec![sa, sb], fa)
            }
            ResolutionPlan::Moderator { pool } => (AgentRole::Moderator, pool, Vec::new(), Vec::new()),
        };
        let ctx = PromptContext {
            exemplars: self.exemplar_context(&sets.iter().collect::<Vec<_>>()),
            candidates: candidates.clone(),
            ratings: candidates.iter().filter_map(|c| ratings.get(c).cloned()).collect(),
        };
        let call = PendingCall {
            phase: Phase::Phase3,
            request: AgentRequest {
                role,
                sample_id,
                payload: assemble_prompt(role, sample, &ctx, self.templates)?,
                candidates,
            },
            exemplars: sets.iter().flat_map(|s| s.rows()).collect(),
            flags,
        };
        let records = self.run(vec![call], rng::mix(&[sample_id as u64, 3]))?;
        let winner = records[0].response.as_choice().expect("resolvers parse as choices").winner;
        Ok((winner, path, records))
    }

    pub fn classify(&self, sample_id: usize, sample: &Sample) -> Result<CouncilResult, CouncilError> {
        let (pool, mut trace) = self.phase1(sample_id, sample)?;
        if let Some(label) = check_consensus(&pool, self.config.tau) {
            return Ok(CouncilResult {
                sample_id,
                label,
                path: ResolutionPath::EarlyConsensus,
                consensus: true,
                pool,
                ratings: BTreeMap::new(),
                call_count: trace.len() as u32,
                trace,
            });
        }
        let mut pool = inject_minority(pool, &self.config, self.index, sample);
        pool.cap(self.config.advocate_slots());
        let (ratings, records) = self.phase2(sample_id, sample, &pool)?;
        trace.extend(records);
        let (label, path, records) = self.resolve(sample_id, sample, &ratings, &pool)?;
        trace.extend(records);
        debug_assert!(trace.len() as u32 <= self.config.max_calls);
        Ok(CouncilResult {
            sample_id,
            label,
            path,
            consensus: false,
            pool,
            ratings,
            call_count: trace.len() as u32,
            trace,
        })
    }

    /// Classifies every sample; sample ids are dataset positions. Output is
    /// in dataset order regardless of dispatch.
    pub fn classify_batch(&self, ds: &Dataset) -> Vec<Result<CouncilResult, CouncilError>> {
        match self.dispatch {
            Dispatch::Sequential => ds.iter().enumerate().map(|(i, s)| self.classify(i, s)).collect(),
            Dispatch::Threaded { threads } => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("thread pool builds");
                pool.install(|| {
                    ds.samples
                        .par_iter()
                        .enumerate()
                        .map(|(i, s)| self.classify(i, s))
                        .collect()
                })
            }
            Dispatch::Shuffled(seed) => {
                let mut order: Vec<usize> = (0..ds.len()).collect();
                order.shuffle(&mut rng::stream(&[seed, u64::MAX]));
                let mut slots: Vec<Option<Result<CouncilResult, CouncilError>>> = (0..ds.len()).map(|_| None).collect();
                for i in order {
                    slots[i] = Some(self.classify(i, &ds.samples[i]));
                }
                slots.into_iter().map(|s| s.expect("every slot filled")).collect()
            }
        }
    }
}

/// Prediction rows for the successful results.
pub fn to_predictions(results: &[Result<CouncilResult, CouncilError>]) -> Vec<Prediction> {
    results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|r| Prediction {
            sample_id: r.sample_id,
            label: r.label,
            confidence: None,
            source: "council".into(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{MockBackend, Strength};
    use crate::data::Turn;
    use crate::retrieval::TfIdfCosine;

    fn doc(dialogue: &str, text: &str, gold: u8) -> Sample {
        Sample {
            dialogue_id: dialogue.into(),
            turns: vec![Turn {
                speaker: "s".into(),
                text: text.into(),
            }],
            target_index: 0,
            gold: Some(DmrsLabel::of(gold)),
        }
    }

    fn corpus() -> Dataset {
        let mut v = Vec::new();
        for i in 0..9u8 {
            v.push(doc(&format!("c{i}"), &format!("class {i} words sample{i}"), i));
            v.push(doc(&format!("c{i}b"), &format!("class {i} more words other{i}"), i));
        }
        Dataset::new(v)
    }

    fn verdict(p: u8, a: u8, c: f64) -> AgentResponse {
        AgentResponse::Verdict(AgentVerdict {
            primary: DmrsLabel::of(p),
            alternative: DmrsLabel::of(a),
            confidence: c,
            mechanism_name: "m".into(),
        })
    }

    fn rating(class: u8, s: Strength) -> AgentResponse {
        AgentResponse::Rating(AdvocateRating {
            class: DmrsLabel::of(class),
            strength: s,
            rationale: "r".into(),
        })
    }

    fn pool_of(v: &[(u8, u8, f64)]) -> CandidatePool {
        CandidatePool::from_verdicts(
            v.iter()
                .map(|&(p, a, c)| AgentVerdict {
                    primary: DmrsLabel::of(p),
                    alternative: DmrsLabel::of(a),
                    confidence: c,
                    mechanism_name: String::new(),
                })
                .collect(),
        )
    }

    fn labels(v: &[u8]) -> Vec<DmrsLabel> {
        v.iter().map(|&l| DmrsLabel::of(l)).collect()
    }

    #[test]
    fn pool_is_union_of_primaries_and_alternatives() {
        let pool = pool_of(&[(7, 6, 0.9), (7, 0, 0.8), (7, 6, 0.7)]);
        assert_eq!(pool.candidates, labels(&[0, 6, 7]));
        let wide = pool_of(&[(1, 2, 0.5), (3, 4, 0.5), (5, 6, 0.5)]);
        assert_eq!(wide.candidates.len(), 6);
    }

    #[test]
    fn consensus_rule() {
        assert_eq!(check_consensus(&pool_of(&[(6, 7, 0.9), (6, 7, 0.8), (6, 5, 0.4)]), 0.7), Some(DmrsLabel::of(6)));
        assert_eq!(check_consensus(&pool_of(&[(6, 7, 0.9), (6, 7, 0.5), (6, 5, 0.4)]), 0.7), None);
        assert_eq!(check_consensus(&pool_of(&[(7, 6, 0.99), (7, 6, 0.99), (6, 7, 0.99)]), 0.7), None);
        // Boundary: confidence exactly tau counts.
        assert!(check_consensus(&pool_of(&[(2, 7, 0.7), (2, 7, 0.7), (2, 5, 0.1)]), 0.7).is_some());
    }

    #[test]
    fn minority_injection() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let cfg = CouncilConfig::default();
        let q = doc("q", "class words sample4", 4);
        let injected = inject_minority(pool_of(&[(0, 7, 0.9), (7, 0, 0.8), (0, 7, 0.7)]), &cfg, &index, &q);
        assert_eq!(injected.candidates.len(), 3);
        let added = injected.injected.unwrap();
        assert!(cfg.minority_classes.contains(&added));
        assert_eq!(added, DmrsLabel::of(4));

        let kept = inject_minority(pool_of(&[(3, 7, 0.9), (7, 3, 0.8), (3, 7, 0.7)]), &cfg, &index, &q);
        assert_eq!(kept.candidates, labels(&[3, 7]));
        assert!(kept.injected.is_none());
    }

    #[test]
    fn cap_drops_weakest_alternatives_first() {
        let mut pool = pool_of(&[(1, 2, 0.9), (3, 4, 0.6), (5, 6, 0.3)]);
        pool.cap(5);
        assert_eq!(pool.candidates, labels(&[1, 2, 3, 4, 5]));
        assert_eq!(pool.dropped, labels(&[6]));
        let mut pool = pool_of(&[(1, 2, 0.9), (3, 4, 0.6), (5, 6, 0.3)]);
        pool.injected = Some(DmrsLabel::of(8));
        pool.candidates.push(DmrsLabel::of(8));
        pool.cap(5);
        assert_eq!(pool.candidates, labels(&[1, 2, 3, 5, 8]));
    }

    fn council_for<'a>(
        mock: &'a MockBackend,
        index: &'a TfIdfIndex,
        sim: &'a TfIdfCosine<'a>,
        templates: &'a TemplateStore,
    ) -> Council<'a> {
        let mut cfg = CouncilConfig::default();
        cfg.retry = RetryPolicy::immediate(3);
        Council::new(mock, index, sim, templates, cfg).unwrap()
    }

    #[test]
    fn early_consensus_takes_three_calls() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 6, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(7, 6, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 0, 0.6));
        let council = council_for(&mock, &index, &sim, &templates);
        let res = council.classify(0, &ds.samples[0]).unwrap();
        assert_eq!(res.call_count, 3);
        assert_eq!(res.path, ResolutionPath::EarlyConsensus);
        assert_eq!(res.label, DmrsLabel::of(7));
        // Pattern analyst saw three exemplars, none from its own dialogue.
        let pa = &res.trace[2];
        assert_eq!(pa.role, AgentRole::PatternAnalyst);
        assert_eq!(pa.exemplar_rows.len(), 3);
        assert!(pa.exemplar_rows.iter().all(|&r| index.meta(r).dialogue_id != ds.samples[0].dialogue_id));
    }

    #[test]
    fn unique_strong_takes_five_calls() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        // Pool {3, 7}: 3 is a minority class, so nothing is injected.
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 3, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(3, 7, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 3, 0.6))
            .script(AgentRole::Advocate(DmrsLabel::of(3)), 0, &rating(3, Strength::Strong))
            .script(AgentRole::Advocate(DmrsLabel::of(7)), 0, &rating(7, Strength::Moderate));
        let council = council_for(&mock, &index, &sim, &templates);
        let res = council.classify(0, &ds.samples[0]).unwrap();
        assert_eq!(res.call_count, 5);
        assert_eq!(res.path, ResolutionPath::UniqueStrong);
        assert_eq!(res.label, DmrsLabel::of(3));
        assert_eq!(res.ratings[&DmrsLabel::of(3)].strength, Strength::Strong);
    }

    #[test]
    fn strong_tie_uses_pairwise_call() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        let choice = AgentResponse::Choice(crate::agents::Choice { winner: DmrsLabel::of(6) });
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 6, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(6, 7, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 2, 0.6))
            .script(AgentRole::Advocate(DmrsLabel::of(2)), 0, &rating(2, Strength::Weak))
            .script(AgentRole::Advocate(DmrsLabel::of(6)), 0, &rating(6, Strength::Strong))
            .script(AgentRole::Advocate(DmrsLabel::of(7)), 0, &rating(7, Strength::Strong))
            .script(AgentRole::PairwiseResolver, 0, &choice);
        let council = council_for(&mock, &index, &sim, &templates);
        let res = council.classify(0, &ds.samples[0]).unwrap();
        assert_eq!(res.call_count, 3 + 3 + 1);
        assert_eq!(res.path, ResolutionPath::PairwiseStrong);
        assert_eq!(res.label, DmrsLabel::of(6));
        let last = res.trace.last().unwrap();
        assert_eq!(last.role, AgentRole::PairwiseResolver);
    }

    #[test]
    fn moderator_out_of_pool_answer_is_an_error() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        let bad = AgentResponse::Choice(crate::agents::Choice { winner: DmrsLabel::of(0) });
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 3, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(3, 7, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 3, 0.6))
            .script(AgentRole::Advocate(DmrsLabel::of(3)), 0, &rating(3, Strength::Weak))
            .script(AgentRole::Advocate(DmrsLabel::of(7)), 0, &rating(7, Strength::Weak))
            .script(AgentRole::Moderator, 0, &bad);
        let council = council_for(&mock, &index, &sim, &templates);
        assert!(matches!(
            council.classify(0, &ds.samples[0]),
            Err(CouncilError::Agent(AgentError::Unparseable { .. }))
        ));
    }

    #[test]
    fn empty_class_falls_back_to_zero_exemplars() {
        // Class 5 only appears in the query's own dialogue.
        let ds = Dataset::new(vec![doc("d0", "alpha", 5), doc("d1", "beta", 7), doc("d2", "gamma", 3)]);
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 5, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(5, 7, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 5, 0.6))
            .script(AgentRole::Advocate(DmrsLabel::of(5)), 0, &rating(5, Strength::Strong))
            .script(AgentRole::Advocate(DmrsLabel::of(7)), 0, &rating(7, Strength::Weak));
        let council = council_for(&mock, &index, &sim, &templates);
        let res = council.classify(0, &ds.samples[0]).unwrap();
        let adv5 = res
            .trace
            .iter()
            .find(|r| r.role == AgentRole::Advocate(DmrsLabel::of(5)))
            .unwrap();
        assert!(adv5.exemplar_rows.is_empty());
        assert_eq!(adv5.flags, vec!["no_in_class_exemplars".to_string()]);
        assert_eq!(res.label, DmrsLabel::of(5));
    }

    #[test]
    fn config_validation() {
        let mut cfg = CouncilConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.advocate_slots(), 5);
        cfg.max_calls = 11;
        assert!(cfg.validate().is_err());
        cfg.max_calls = 6;
        assert_eq!(cfg.advocate_slots(), 2);
        cfg.max_calls = 4;
        assert!(cfg.validate().is_err());
        cfg.max_calls = 10;
        cfg.tau = 1.2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn result_serializes_and_round_trips() {
        let ds = corpus();
        let index = TfIdfIndex::build(&ds, &Default::default()).unwrap();
        let sim = TfIdfCosine::new(&index);
        let templates = TemplateStore::builtin();
        let mock = MockBackend::scripted()
            .script(AgentRole::ClinicalAnalyst, 0, &verdict(7, 3, 0.9))
            .script(AgentRole::MechanismSpecialist, 0, &verdict(3, 7, 0.8))
            .script(AgentRole::PatternAnalyst, 0, &verdict(7, 3, 0.6))
            .script(AgentRole::Advocate(DmrsLabel::of(3)), 0, &rating(3, Strength::Strong))
            .script(AgentRole::Advocate(DmrsLabel::of(7)), 0, &rating(7, Strength::Moderate));
        let council = council_for(&mock, &index, &sim, &templates);
        let res = council.classify(0, &ds.samples[0]).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        let back: CouncilResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, res);
    }
}
