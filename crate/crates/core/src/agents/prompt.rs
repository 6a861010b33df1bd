//! Template rendering into opaque prompt payloads.
//!
//! Templates are plain text files named after the role (`pattern_analyst.txt`,
//! `advocate.txt`, optionally `advocate_6.txt` for a class-specific advocate).
//! Slots are written `{{name}}`:
//!
//! | slot | content |
//! |------|---------|
//! | `{{role}}` | short role instruction |
//! | `{{dialogue}}` | every turn as `speaker: text`, target marked with `>>` |
//! | `{{target}}` | the target utterance |
//! | `{{exemplars}}` | one `<exemplar level="N">` block per exemplar |
//! | `{{class}}` | advocate class, empty for other roles |
//! | `{{candidates}}` | comma-separated candidate levels |
//! | `{{ratings}}` | advocate ratings with rationales, one per line |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdvocateRating, AgentError, AgentRole};
use crate::data::Sample;
use crate::label::DmrsLabel;

/// Rendered prompt text. The engine never looks inside.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub text: String,
}

impl PromptPayload {
    pub fn new(text: String) -> Self {
        PromptPayload { text }
    }

    /// Hex SHA-256 of the text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "clinical_analyst",
        "{{role}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nExamples:\n{{exemplars}}\n\nRespond with JSON {\"primary\", \"alternative\", \"confidence\", \"mechanism\"}.\n",
    ),
    (
        "mechanism_specialist",
        "{{role}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nExamples:\n{{exemplars}}\n\nRespond with JSON {\"primary\", \"alternative\", \"confidence\", \"mechanism\"}.\n",
    ),
    (
        "pattern_analyst",
        "{{role}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nRetrieved examples:\n{{exemplars}}\n\nRespond with JSON {\"primary\", \"alternative\", \"confidence\", \"mechanism\"}.\n",
    ),
    (
        "council_rerun",
        "{{role}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nRespond with JSON {\"primary\", \"alternative\", \"confidence\", \"mechanism\"}.\n",
    ),
    (
        "advocate",
        "{{role}} Level {{class}}.\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nExamples of level {{class}}:\n{{exemplars}}\n\nRespond with JSON {\"strength\": \"STRONG\"|\"MODERATE\"|\"WEAK\", \"rationale\"}.\n",
    ),
    (
        "pairwise_resolver",
        "{{role}}\n\nCandidates: {{candidates}}\n\nAdvocate ratings:\n{{ratings}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nExamples:\n{{exemplars}}\n\nRespond with JSON {\"winner\"}.\n",
    ),
    (
        "moderator",
        "{{role}}\n\nCandidates: {{candidates}}\n\nAdvocate ratings:\n{{ratings}}\n\nDialogue:\n{{dialogue}}\n\nTarget utterance:\n{{target}}\n\nRespond with JSON {\"winner\"}.\n",
    ),
];

impl TemplateStore {
    /// Minimal structural templates with no clinical content.
    pub fn builtin() -> Self {
        TemplateStore {
            templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Loads every `*.txt` file in `dir`, keyed by file stem.
    pub fn from_dir(dir: &Path) -> Result<Self, AgentError> {
        let entries = std::fs::read_dir(dir).map_err(|e| AgentError::Template(format!("{}: {e}", dir.display())))?;
        let mut templates = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| AgentError::Template(e.to_string()))?.path();
            if path.extension().is_some_and(|x| x == "txt") {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| AgentError::Template(format!("{}: {e}", path.display())))?;
                templates.insert(stem, text);
            }
        }
        Ok(TemplateStore { templates })
    }

    pub fn insert(&mut self, key: &str, text: &str) {
        self.templates.insert(key.to_string(), text.to_string());
    }

    pub fn template_for(&self, role: AgentRole) -> Option<&str> {
        if let AgentRole::Advocate(c) = role {
            if let Some(t) = self.templates.get(&format!("advocate_{}", c.level())) {
                return Some(t);
            }
        }
        self.templates.get(role.name()).map(String::as_str)
    }
}

/// Slot content for one rendering.
#[derive(Clone, Debug, Default)]
pub struct PromptContext<'a> {
    /// `(gold label, text)` per exemplar, in retrieval order.
    pub exemplars: Vec<(DmrsLabel, &'a str)>,
    pub candidates: Vec<DmrsLabel>,
    pub ratings: Vec<AdvocateRating>,
}

fn role_instruction(role: AgentRole) -> &'static str {
    match role {
        AgentRole::ClinicalAnalyst => "You are the clinical analyst. Classify the target utterance.",
        AgentRole::MechanismSpecialist => "You are the mechanism specialist. Screen every level and classify the target utterance.",
        AgentRole::PatternAnalyst => "You are the pattern analyst. Classify the target utterance by analogy to the examples.",
        AgentRole::Advocate(_) => "You are the advocate for",
        AgentRole::PairwiseResolver => "Decide which of the two candidates fits the target utterance better.",
        AgentRole::Moderator => "Synthesize the deliberation and pick one candidate.",
        AgentRole::CouncilRerun => "Classify the target utterance.",
    }
}

fn render_dialogue(sample: &Sample) -> String {
    sample
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let marker = if i == sample.target_index { ">> " } else { "" };
            format!("{marker}{}: {}", t.speaker, t.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_exemplars(exemplars: &[(DmrsLabel, &str)]) -> String {
    exemplars
        .iter()
        .map(|(label, text)| format!("<exemplar level=\"{}\">\n{}\n</exemplar>\n", label.level(), text))
        .collect()
}

fn list(labels: &[DmrsLabel]) -> String {
    labels.iter().map(|l| l.level().to_string()).collect::<Vec<_>>().join(", ")
}

pub fn assemble_prompt(
    role: AgentRole,
    sample: &Sample,
    ctx: &PromptContext<'_>,
    store: &TemplateStore,
) -> Result<PromptPayload, AgentError> {
    let template = store
        .template_for(role)
        .ok_or_else(|| AgentError::Template(format!("no template for role {}", role.key())))?;
    let ratings = ctx
        .ratings
        .iter()
        .map(|r| format!("{}: {:?} - {}", r.class.level(), r.strength, r.rationale))
        .collect::<Vec<_>>()
        .join("\n");
    let class = role.class().map(|c| c.level().to_string()).unwrap_or_default();
    let text = template
        .replace("{{role}}", role_instruction(role))
        .replace("{{dialogue}}", &render_dialogue(sample))
        .replace("{{target}}", &sample.target().text)
        .replace("{{exemplars}}", &render_exemplars(&ctx.exemplars))
        .replace("{{class}}", &class)
        .replace("{{candidates}}", &list(&ctx.candidates))
        .replace("{{ratings}}", &ratings);
    Ok(PromptPayload::new(text))
}
