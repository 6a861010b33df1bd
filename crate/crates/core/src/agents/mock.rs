//! Deterministic in-process agents for offline runs and tests.
//!
//! A [`MockBackend`] answers each role either from a scripted table keyed by
//! sample id or from a seeded [`StochasticProfile`]. Stochastic answers are a
//! pure function of `(profile seed, run seed, sample id, role, attempt)`.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentBackend, AgentRequest, AgentResponse, AgentRole, BackendError, ResponseKind, Strength};
use crate::label::{DmrsLabel, NUM_LABELS};
use crate::rng;

/// How one role (or every advocate) answers.
#[derive(Clone, Debug)]
pub enum RoleBehavior {
    /// `sample_id -> raw text per attempt`; the last entry repeats.
    Scripted(HashMap<usize, Vec<String>>),
    /// Defer to the backend's stochastic profile.
    Stochastic,
}

/// Knobs of the stochastic agents. Probabilities are conditioned on the
/// sample's hidden gold label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochasticParams {
    /// Phase-1 primary equals gold.
    pub phase1_correct: f64,
    /// Phase-1 primary is the majority class when gold is a minority class
    /// and the agent is wrong (checked after `phase1_correct`).
    pub phase1_majority_pull: f64,
    /// Alternative equals gold when the primary missed.
    pub alternative_hits_gold: f64,
    pub confidence_low: f64,
    pub confidence_high: f64,
    /// `[STRONG, MODERATE]` for the majority-class advocate; WEAK is the rest.
    pub majority_advocate: [f64; 2],
    /// `[STRONG, MODERATE]` for a minority advocate whose class is gold.
    pub true_advocate: [f64; 2],
    /// `[STRONG, MODERATE]` for a minority advocate whose class is not gold.
    pub false_advocate: [f64; 2],
    /// Pairwise/moderator picks the majority class when offered.
    pub choice_majority_pull: f64,
    /// Pairwise/moderator picks gold when offered (after the majority pull).
    pub choice_correct: f64,
    /// Per gold class: probability that one run departs from the profile's
    /// canonical answers for a sample and redraws every call from the run
    /// seed.
    pub perturbation: [f64; NUM_LABELS],
}

impl Default for StochasticParams {
    /// Calibrated so that three runs over a Table-1-proportioned corpus show
    /// about 22% unstable predictions (about 15.5% for L7), the L7 advocate
    /// rates STRONG 73% of the time and most errors land on L7.
    fn default() -> Self {
        StochasticParams {
            phase1_correct: 0.5,
            phase1_majority_pull: 0.7,
            alternative_hits_gold: 0.5,
            confidence_low: 0.5,
            confidence_high: 0.95,
            majority_advocate: [0.73, 0.17],
            true_advocate: [0.5, 0.3],
            false_advocate: [0.22, 0.35],
            choice_majority_pull: 0.65,
            choice_correct: 0.7,
            perturbation: [0.095, 0.25, 0.23, 0.19, 0.17, 0.15, 0.21, 0.135, 0.35],
        }
    }
}

#[derive(Clone, Debug)]
pub struct StochasticProfile {
    pub params: StochasticParams,
    /// Hidden gold per sample id; unknown samples behave like the majority class.
    pub golds: Vec<Option<DmrsLabel>>,
    pub profile_seed: u64,
}

impl StochasticProfile {
    pub fn new(params: StochasticParams, golds: Vec<Option<DmrsLabel>>, profile_seed: u64) -> Self {
        StochasticProfile {
            params,
            golds,
            profile_seed,
        }
    }

    fn gold(&self, sample_id: usize) -> DmrsLabel {
        self.golds.get(sample_id).copied().flatten().unwrap_or(DmrsLabel::MAJORITY)
    }

    /// Whether run `run_seed` departs from the canonical answers on `sample_id`.
    pub fn perturbed(&self, run_seed: u64, sample_id: usize) -> bool {
        let gold = self.gold(sample_id);
        rng::unit(&[self.profile_seed, run_seed, sample_id as u64, rng::str_key("perturb")])
            < self.params.perturbation[gold.index()]
    }

    pub fn respond(&self, request: &AgentRequest, run_seed: u64, attempt: u32) -> AgentResponse {
        let sample_id = request.sample_id;
        let gold = self.gold(sample_id);
        let base = if self.perturbed(run_seed, sample_id) {
            rng::mix(&[self.profile_seed, run_seed, 1])
        } else {
            rng::mix(&[self.profile_seed, 0])
        };
        let mut r = rng::stream(&[base, sample_id as u64, rng::str_key(&request.role.key()), attempt as u64]);
        let p = &self.params;
        match request.role.expected_kind() {
            ResponseKind::Verdict => {
                let u: f64 = r.random();
                let primary = if u < p.phase1_correct {
                    gold
                } else if !gold.is_majority() && r.random::<f64>() < p.phase1_majority_pull {
                    DmrsLabel::MAJORITY
                } else {
                    other_than(&mut r, &[gold])
                };
                let alternative = if primary != gold && r.random::<f64>() < p.alternative_hits_gold {
                    gold
                } else {
                    other_than(&mut r, &[primary])
                };
                let confidence = r.random_range(p.confidence_low..=p.confidence_high);
                AgentResponse::Verdict(super::AgentVerdict {
                    primary,
                    alternative,
                    confidence,
                    mechanism_name: "mock".into(),
                })
            }
            ResponseKind::Rating => {
                let class = request.role.class().expect("advocate carries its class");
                let [strong, moderate] = if class.is_majority() {
                    p.majority_advocate
                } else if class == gold {
                    p.true_advocate
                } else {
                    p.false_advocate
                };
                let u: f64 = r.random();
                let strength = if u < strong {
                    Strength::Strong
                } else if u < strong + moderate {
                    Strength::Moderate
                } else {
                    Strength::Weak
                };
                AgentResponse::Rating(super::AdvocateRating {
                    class,
                    strength,
                    rationale: "mock rating".into(),
                })
            }
            ResponseKind::Choice => {
                let cands = &request.candidates;
                let winner = if cands.contains(&DmrsLabel::MAJORITY) && r.random::<f64>() < p.choice_majority_pull {
                    DmrsLabel::MAJORITY
                } else if cands.contains(&gold) && r.random::<f64>() < p.choice_correct {
                    gold
                } else if cands.is_empty() {
                    gold
                } else {
                    cands[r.random_range(0..cands.len())]
                };
                AgentResponse::Choice(super::Choice { winner })
            }
        }
    }
}

fn other_than<R: Rng>(r: &mut R, excluded: &[DmrsLabel]) -> DmrsLabel {
    let pool: Vec<DmrsLabel> = DmrsLabel::all().filter(|l| !excluded.contains(l)).collect();
    pool[r.random_range(0..pool.len())]
}

#[derive(Clone, Debug, Default)]
pub struct MockBackend {
    behaviors: HashMap<String, RoleBehavior>,
    stochastic: Option<StochasticProfile>,
    seed: u64,
}

impl MockBackend {
    /// Every role answered by `profile`; `seed` is the run seed.
    pub fn stochastic(profile: StochasticProfile, seed: u64) -> Self {
        MockBackend {
            behaviors: HashMap::new(),
            stochastic: Some(profile),
            seed,
        }
    }

    pub fn scripted() -> Self {
        MockBackend::default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_profile(mut self, profile: StochasticProfile) -> Self {
        self.stochastic = Some(profile);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sets how `key` answers. `key` is a role key (`advocate:6`) or a role
    /// name (`advocate`, covering every class).
    pub fn set_behavior(&mut self, key: &str, behavior: RoleBehavior) {
        self.behaviors.insert(key.to_string(), behavior);
    }

    /// Scripts one response for `(role, sample_id)`.
    pub fn script(mut self, role: AgentRole, sample_id: usize, response: &AgentResponse) -> Self {
        self.script_raw(&role.key(), sample_id, vec![response.to_wire()]);
        self
    }

    /// Scripts raw text per attempt for `(key, sample_id)`.
    pub fn script_raw(&mut self, key: &str, sample_id: usize, attempts: Vec<String>) {
        let entry = self
            .behaviors
            .entry(key.to_string())
            .or_insert_with(|| RoleBehavior::Scripted(HashMap::new()));
        if let RoleBehavior::Scripted(table) = entry {
            table.insert(sample_id, attempts);
        } else {
            let mut table = HashMap::new();
            table.insert(sample_id, attempts);
            *entry = RoleBehavior::Scripted(table);
        }
    }

    /// Loads scripts from JSON: `{"role key": {"sample id": response or [responses]}}`.
    /// String values are used verbatim as raw text; objects are serialized.
    pub fn load_script(mut self, path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::NotConfigured(format!("{}: {e}", path.display())))?;
        let doc: HashMap<String, HashMap<String, serde_json::Value>> =
            serde_json::from_str(&text).map_err(|e| BackendError::NotConfigured(format!("{}: {e}", path.display())))?;
        for (key, table) in doc {
            if AgentRole::parse_key(&key).is_none() && key != "advocate" {
                return Err(BackendError::NotConfigured(format!("unknown role key {key:?} in script")));
            }
            for (sample, value) in table {
                let sample: usize = sample
                    .parse()
                    .map_err(|_| BackendError::NotConfigured(format!("bad sample id {sample:?} in script")))?;
                let raw_of = |v: &serde_json::Value| match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let attempts = match &value {
                    serde_json::Value::Array(items) => items.iter().map(raw_of).collect(),
                    other => vec![raw_of(other)],
                };
                self.script_raw(&key, sample, attempts);
            }
        }
        Ok(self)
    }
}

impl AgentBackend for MockBackend {
    fn call(&self, request: &AgentRequest, attempt: u32) -> Result<String, BackendError> {
        let role = request.role;
        let behavior = self.behaviors.get(&role.key()).or_else(|| self.behaviors.get(role.name()));
        match behavior {
            Some(RoleBehavior::Scripted(table)) => {
                let attempts = table.get(&request.sample_id).ok_or_else(|| {
                    BackendError::NotConfigured(format!("no script for {} on sample {}", role.key(), request.sample_id))
                })?;
                let i = (attempt.max(1) as usize - 1).min(attempts.len().saturating_sub(1));
                attempts
                    .get(i)
                    .cloned()
                    .ok_or_else(|| BackendError::NotConfigured(format!("empty script for {}", role.key())))
            }
            Some(RoleBehavior::Stochastic) | None => match &self.stochastic {
                Some(profile) => Ok(profile.respond(request, self.seed, attempt).to_wire()),
                None => Err(BackendError::NotConfigured(format!("no behavior for role {}", role.key()))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{invoke, AgentVerdict, PromptPayload, RetryPolicy};

    fn request(role: AgentRole, sample_id: usize) -> AgentRequest {
        AgentRequest {
            role,
            sample_id,
            payload: PromptPayload::new(String::new()),
            candidates: vec![DmrsLabel::of(6), DmrsLabel::of(7)],
        }
    }

    #[test]
    fn scripted_lookup_is_exact() {
        let verdict = AgentResponse::Verdict(AgentVerdict {
            primary: DmrsLabel::of(7),
            alternative: DmrsLabel::of(6),
            confidence: 0.9,
            mechanism_name: "suppression".into(),
        });
        let mock = MockBackend::scripted().script(AgentRole::ClinicalAnalyst, 0, &verdict);
        let inv = invoke(&mock, &request(AgentRole::ClinicalAnalyst, 0), &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(inv.response, verdict);
        assert_eq!(inv.attempts, 1);
        assert!(mock.call(&request(AgentRole::ClinicalAnalyst, 1), 1).is_err());
        assert!(mock.call(&request(AgentRole::Moderator, 0), 1).is_err());
    }

    #[test]
    fn scripted_attempts_advance() {
        let mut mock = MockBackend::scripted();
        mock.script_raw("advocate", 4, vec!["oops".into(), r#"{"strength":"WEAK","rationale":""}"#.into()]);
        let inv = invoke(&mock, &request(AgentRole::Advocate(DmrsLabel::of(2)), 4), &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(inv.attempts, 2);
        assert_eq!(inv.response.as_rating().unwrap().class, DmrsLabel::of(2));
    }

    #[test]
    fn stochastic_answers_are_pure() {
        let golds = (0..50).map(|i| Some(DmrsLabel::of((i % 9) as u8))).collect();
        let profile = StochasticProfile::new(StochasticParams::default(), golds, 42);
        let a = MockBackend::stochastic(profile.clone(), 7);
        let b = MockBackend::stochastic(profile, 7);
        let roles = [AgentRole::ClinicalAnalyst, AgentRole::Advocate(DmrsLabel::of(7)), AgentRole::PairwiseResolver];
        // Query b in reverse order: answers must not depend on call order.
        let forward: Vec<String> = (0..50)
            .flat_map(|s| roles.iter().map(move |&r| (s, r)))
            .map(|(s, r)| a.call(&request(r, s), 1).unwrap())
            .collect();
        let mut backward: Vec<String> = (0..50)
            .rev()
            .flat_map(|s| roles.iter().rev().map(move |&r| (s, r)))
            .map(|(s, r)| b.call(&request(r, s), 1).unwrap())
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn unperturbed_samples_ignore_the_run_seed() {
        let mut params = StochasticParams::default();
        params.perturbation = [0.0; NUM_LABELS];
        let profile = StochasticProfile::new(params, vec![Some(DmrsLabel::of(3)); 20], 5);
        let a = MockBackend::stochastic(profile.clone(), 1);
        let b = MockBackend::stochastic(profile, 2);
        for s in 0..20 {
            let r = request(AgentRole::MechanismSpecialist, s);
            assert_eq!(a.call(&r, 1).unwrap(), b.call(&r, 1).unwrap());
        }
    }

    #[test]
    fn majority_advocate_strong_rate_matches_profile() {
        let golds = (0..10_000).map(|i| Some(DmrsLabel::of((i % 9) as u8))).collect();
        let mock = MockBackend::stochastic(StochasticProfile::new(StochasticParams::default(), golds, 3), 11);
        let strong = (0..10_000)
            .filter(|&s| {
                let raw = mock.call(&request(AgentRole::Advocate(DmrsLabel::MAJORITY), s), 1).unwrap();
                raw.contains("STRONG")
            })
            .count();
        let rate = strong as f64 / 10_000.0;
        assert!((rate - 0.73).abs() <= 0.02, "STRONG rate {rate}");
    }

    #[test]
    fn script_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(
            &path,
            r#"{"pairwise_resolver": {"0": ["garbage", {"winner": 6}]}, "advocate:6": {"0": {"strength": "STRONG", "rationale": "x"}}}"#,
        )
        .unwrap();
        let mock = MockBackend::scripted().load_script(&path).unwrap();
        let inv = invoke(&mock, &request(AgentRole::PairwiseResolver, 0), &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(inv.attempts, 2);
        assert!(mock.call(&request(AgentRole::Advocate(DmrsLabel::of(6)), 0), 1).unwrap().contains("STRONG"));
        std::fs::write(&path, r#"{"oracle": {"0": {}}}"#).unwrap();
        assert!(MockBackend::scripted().load_script(&path).is_err());
    }
}
