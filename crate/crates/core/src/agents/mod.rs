//! Agent invocation: prompt payloads, backends and structured responses.
//!
//! Backends return raw text; the engine parses it against the schema of the
//! calling role and retries on failure. Nothing here interprets clinical
//! content, which lives entirely in templates.

mod http;
mod mock;
mod prompt;

pub use http::HttpBackend;
pub use mock::{MockBackend, RoleBehavior, StochasticParams, StochasticProfile};
pub use prompt::{assemble_prompt, PromptContext, PromptPayload, TemplateStore};

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::label::DmrsLabel;

/// Who is being asked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentRole {
    ClinicalAnalyst,
    MechanismSpecialist,
    PatternAnalyst,
    Advocate(DmrsLabel),
    PairwiseResolver,
    Moderator,
    CouncilRerun,
}

impl AgentRole {
    pub const PHASE1: [AgentRole; 3] = [
        AgentRole::ClinicalAnalyst,
        AgentRole::MechanismSpecialist,
        AgentRole::PatternAnalyst,
    ];

    /// Wire name, shared by every advocate.
    pub fn name(self) -> &'static str {
        match self {
            AgentRole::ClinicalAnalyst => "clinical_analyst",
            AgentRole::MechanismSpecialist => "mechanism_specialist",
            AgentRole::PatternAnalyst => "pattern_analyst",
            AgentRole::Advocate(_) => "advocate",
            AgentRole::PairwiseResolver => "pairwise_resolver",
            AgentRole::Moderator => "moderator",
            AgentRole::CouncilRerun => "council_rerun",
        }
    }

    /// Name plus class for advocates (`advocate:6`).
    pub fn key(self) -> String {
        match self {
            AgentRole::Advocate(c) => format!("advocate:{}", c.level()),
            other => other.name().to_string(),
        }
    }

    pub fn class(self) -> Option<DmrsLabel> {
        match self {
            AgentRole::Advocate(c) => Some(c),
            _ => None,
        }
    }

    pub fn parse_key(key: &str) -> Option<AgentRole> {
        if let Some(level) = key.strip_prefix("advocate:") {
            let level: i64 = level.parse().ok()?;
            return DmrsLabel::new(level).ok().map(AgentRole::Advocate);
        }
        Some(match key {
            "clinical_analyst" => AgentRole::ClinicalAnalyst,
            "mechanism_specialist" => AgentRole::MechanismSpecialist,
            "pattern_analyst" => AgentRole::PatternAnalyst,
            "pairwise_resolver" => AgentRole::PairwiseResolver,
            "moderator" => AgentRole::Moderator,
            "council_rerun" => AgentRole::CouncilRerun,
            _ => return None,
        })
    }

    pub fn expected_kind(self) -> ResponseKind {
        match self {
            AgentRole::Advocate(_) => ResponseKind::Rating,
            AgentRole::PairwiseResolver | AgentRole::Moderator => ResponseKind::Choice,
            _ => ResponseKind::Verdict,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for AgentRole {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for AgentRole {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let key = String::deserialize(d)?;
        AgentRole::parse_key(&key).ok_or_else(|| serde::de::Error::custom(format!("unknown agent role {key:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResponseKind {
    Verdict,
    Rating,
    Choice,
}

/// A Phase-1 style classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentVerdict {
    pub primary: DmrsLabel,
    pub alternative: DmrsLabel,
    pub confidence: f64,
    #[serde(rename = "mechanism")]
    pub mechanism_name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strength {
    Strong,
    Moderate,
    Weak,
}

impl Strength {
    pub const ALL: [Strength; 3] = [Strength::Strong, Strength::Moderate, Strength::Weak];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvocateRating {
    pub class: DmrsLabel,
    pub strength: Strength,
    pub rationale: String,
}

/// Answer of a pairwise resolver or moderator: one of the offered candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub winner: DmrsLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentResponse {
    Verdict(AgentVerdict),
    Rating(AdvocateRating),
    Choice(Choice),
}

impl AgentResponse {
    /// The wire JSON a backend would send for this response.
    pub fn to_wire(&self) -> String {
        let value = match self {
            AgentResponse::Verdict(v) => serde_json::json!({
                "primary": v.primary,
                "alternative": v.alternative,
                "confidence": v.confidence,
                "mechanism": v.mechanism_name,
            }),
            AgentResponse::Rating(r) => serde_json::json!({
                "strength": r.strength,
                "rationale": r.rationale,
            }),
            AgentResponse::Choice(c) => serde_json::json!({ "winner": c.winner }),
        };
        value.to_string()
    }

    pub fn as_verdict(&self) -> Option<&AgentVerdict> {
        match self {
            AgentResponse::Verdict(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_rating(&self) -> Option<&AdvocateRating> {
        match self {
            AgentResponse::Rating(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_choice(&self) -> Option<Choice> {
        match self {
            AgentResponse::Choice(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct WireRating {
    strength: Strength,
    rationale: String,
}

/// Parses `raw` against the schema of `request.role`.
///
/// Choices must name one of `request.candidates`.
pub fn parse_response(request: &AgentRequest, raw: &str) -> Result<AgentResponse, String> {
    match request.role.expected_kind() {
        ResponseKind::Verdict => {
            let v: AgentVerdict = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            if !v.confidence.is_finite() || !(0.0..=1.0).contains(&v.confidence) {
                return Err(format!("confidence {} outside [0, 1]", v.confidence));
            }
            Ok(AgentResponse::Verdict(v))
        }
        ResponseKind::Rating => {
            let w: WireRating = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            Ok(AgentResponse::Rating(AdvocateRating {
                class: request.role.class().expect("advocate carries its class"),
                strength: w.strength,
                rationale: w.rationale,
            }))
        }
        ResponseKind::Choice => {
            let c: Choice = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            if !request.candidates.contains(&c.winner) {
                return Err(format!("winner {} is not among candidates {:?}", c.winner, request.candidates));
            }
            Ok(AgentResponse::Choice(c))
        }
    }
}

/// Everything a backend receives for one call.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub sample_id: usize,
    pub payload: PromptPayload,
    /// Labels a choice may name (pair or moderator pool); advisory otherwise.
    pub candidates: Vec<DmrsLabel>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend has no response configured: {0}")]
    NotConfigured(String),
}

/// Produces raw response text for a request. `attempt` starts at 1.
pub trait AgentBackend: Send + Sync {
    fn call(&self, request: &AgentRequest, attempt: u32) -> Result<String, BackendError>;
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("{role} on sample {sample_id}: unparseable after {attempts} attempts ({reason}); raw: {raw}")]
    Unparseable {
        role: AgentRole,
        sample_id: usize,
        attempts: u32,
        reason: String,
        raw: String,
    },
    #[error("{role} on sample {sample_id}: backend failed after {attempts} attempts: {source}")]
    Backend {
        role: AgentRole,
        sample_id: usize,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Sleep before the second attempt after a transport failure; doubles
    /// after each further failure.
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A successful call with its audit data.
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub response: AgentResponse,
    pub raw: String,
    pub attempts: u32,
    /// Raw text (or transport error) of every failed attempt.
    pub failures: Vec<String>,
}

pub fn invoke(backend: &dyn AgentBackend, request: &AgentRequest, retry: &RetryPolicy) -> Result<Invocation, AgentError> {
    let max = retry.max_attempts.max(1);
    let mut failures = Vec::new();
    let mut backoff = retry.initial_backoff;
    let mut last_parse: Option<(String, String)> = None;
    let mut last_transport: Option<BackendError> = None;
    for attempt in 1..=max {
        match backend.call(request, attempt) {
            Ok(raw) => match parse_response(request, &raw) {
                Ok(response) => {
                    log::debug!("{} sample {} ok after {attempt} attempt(s)", request.role, request.sample_id);
                    return Ok(Invocation {
                        response,
                        raw,
                        attempts: attempt,
                        failures,
                    });
                }
                Err(reason) => {
                    failures.push(raw.clone());
                    last_parse = Some((reason, raw));
                    last_transport = None;
                }
            },
            Err(e @ BackendError::NotConfigured(_)) => {
                return Err(AgentError::Backend {
                    role: request.role,
                    sample_id: request.sample_id,
                    attempts: attempt,
                    source: e,
                });
            }
            Err(e) => {
                failures.push(e.to_string());
                last_transport = Some(e);
                last_parse = None;
                if attempt < max && !backoff.is_zero() {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
    if let Some(source) = last_transport {
        return Err(AgentError::Backend {
            role: request.role,
            sample_id: request.sample_id,
            attempts: max,
            source,
        });
    }
    let (reason, raw) = last_parse.expect("at least one attempt ran");
    Err(AgentError::Unparseable {
        role: request.role,
        sample_id: request.sample_id,
        attempts: max,
        reason,
        raw,
    })
}
