//! Evidence loaded from an evidence directory.
//!
//! `manifest.json` lists the sources and the training class distribution:
//!
//! ```text
//! {
//!   "train_distribution": {"L0": 293, "L1": 61, ...},
//!   "sources": [
//!     {"name": "ft9b", "kind": "fine_tuned", "path": "ft9b.runs.jsonl",
//!      "format": "runs", "recall": "ft9b.recall.json"},
//!     {"name": "resolver", "kind": "pairwise_resolver",
//!      "path": "resolver.jsonl", "format": "predictions"}
//!   ]
//! }
//! ```
//!
//! `recall` is either a path or an inline table. Counts in
//! `train_distribution` are normalised, so fractions work as well.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OverrideError;
use crate::consistency::{load_source, parse_class_key, EvidenceSource, RecallTable, SourceFormat, SourceKind};
use crate::data::{dense_labels, load_predictions, DataError, Prediction};
use crate::label::{DmrsLabel, NUM_LABELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecallSpec {
    Path(PathBuf),
    Inline(RecallTable),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub kind: SourceKind,
    pub path: PathBuf,
    pub format: SourceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<RecallSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceManifest {
    /// Class (`"L2"` or `"2"`) to count or fraction.
    pub train_distribution: BTreeMap<String, f64>,
    pub sources: Vec<SourceSpec>,
}

impl EvidenceManifest {
    pub fn distribution(&self) -> Result<BTreeMap<DmrsLabel, f64>, OverrideError> {
        self.train_distribution
            .iter()
            .map(|(k, v)| {
                parse_class_key(k)
                    .map(|c| (c, *v))
                    .ok_or_else(|| OverrideError::Manifest(format!("bad class key {k:?} in train_distribution")))
            })
            .collect()
    }
}

/// Council predictions plus every registered source.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceStore {
    pub council: Vec<DmrsLabel>,
    pub sources: Vec<EvidenceSource>,
    /// Expected test-set count per class.
    pub expected: [usize; NUM_LABELS],
}

/// A source's vote on one sample, with the terms the gates need.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceVote {
    pub source: String,
    pub kind: SourceKind,
    pub label: DmrsLabel,
    pub agreement: f64,
    pub recall: VoteRecall,
    pub weight: f64,
}

/// Validation recall of a source on the label it voted for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRecall {
    /// Sources without a recall table are never gated.
    Ungated,
    Known(f64),
    /// The source's table has no entry for the label; such votes never
    /// count as credible.
    Missing,
}

impl SourceVote {
    pub fn credible(&self, min_recall: f64) -> bool {
        match self.recall {
            VoteRecall::Ungated => true,
            VoteRecall::Known(r) => r >= min_recall,
            VoteRecall::Missing => false,
        }
    }
}

/// Everything known about one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvidenceBundle {
    pub sample_id: usize,
    pub council_label: DmrsLabel,
    pub council_rerun_label: Option<DmrsLabel>,
    pub pairwise_resolver_label: Option<DmrsLabel>,
    /// In source registration order.
    pub votes: Vec<SourceVote>,
}

/// `round(fraction * n)` per class.
pub fn expected_counts(distribution: &BTreeMap<DmrsLabel, f64>, n: usize) -> Result<[usize; NUM_LABELS], OverrideError> {
    let total: f64 = distribution.values().sum();
    if !(total > 0.0) || distribution.values().any(|v| *v < 0.0) {
        return Err(OverrideError::Manifest("train_distribution must be non-negative with a positive total".into()));
    }
    let mut out = [0usize; NUM_LABELS];
    for (c, v) in distribution {
        out[c.index()] = (v / total * n as f64).round() as usize;
    }
    Ok(out)
}

impl EvidenceStore {
    pub fn new(council: Vec<DmrsLabel>, sources: Vec<EvidenceSource>, expected: [usize; NUM_LABELS]) -> Result<Self, OverrideError> {
        let mut names: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(OverrideError::Manifest(format!("duplicate source name {:?}", w[0])));
        }
        if let Some(s) = sources.iter().find(|s| s.predictions.len() != council.len()) {
            return Err(OverrideError::Manifest(format!(
                "source {} covers {} samples, base has {}",
                s.name,
                s.predictions.len(),
                council.len()
            )));
        }
        Ok(EvidenceStore {
            council,
            sources,
            expected,
        })
    }

    /// Reads `dir/manifest.json` and every file it names. `base` holds the
    /// council predictions and fixes the sample count.
    pub fn load(dir: &Path, base: &[Prediction]) -> Result<Self, OverrideError> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| DataError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: EvidenceManifest =
            serde_json::from_str(&text).map_err(|e| OverrideError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        let council = dense_labels(base, base.len())?;
        let n = council.len();
        let mut sources = Vec::with_capacity(manifest.sources.len());
        for spec in &manifest.sources {
            let recall = match &spec.recall {
                None => None,
                Some(RecallSpec::Inline(t)) => Some(t.clone()),
                Some(RecallSpec::Path(p)) => Some(RecallTable::load(&dir.join(p))?),
            };
            if spec.kind == SourceKind::FineTuned && recall.is_none() {
                return Err(OverrideError::Manifest(format!("fine-tuned source {} has no recall table", spec.name)));
            }
            sources.push(load_source(&dir.join(&spec.path), &spec.name, spec.kind, spec.format, n, recall)?);
        }
        EvidenceStore::new(council, sources, expected_counts(&manifest.distribution()?, n)?)
    }

    /// Convenience for loading base predictions from a file.
    pub fn load_with_base_file(dir: &Path, base: &Path) -> Result<Self, OverrideError> {
        Self::load(dir, &load_predictions(base)?)
    }

    pub fn len(&self) -> usize {
        self.council.len()
    }

    pub fn is_empty(&self) -> bool {
        self.council.is_empty()
    }

    pub fn source(&self, name: &str) -> Option<&EvidenceSource> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn bundle(&self, sample_id: usize) -> Result<EvidenceBundle, OverrideError> {
        let council_label = *self.council.get(sample_id).ok_or(OverrideError::UnknownSample(sample_id))?;
        let mut votes = Vec::new();
        let mut rerun = None;
        let mut resolver = None;
        for src in &self.sources {
            let Some(p) = src.prediction(sample_id) else { continue };
            let recall = match &src.recall {
                Some(t) => t.recall(p.label).map_or(VoteRecall::Missing, VoteRecall::Known),
                None if src.kind == SourceKind::FineTuned => VoteRecall::Missing,
                None => VoteRecall::Ungated,
            };
            match src.kind {
                SourceKind::CouncilRerun => {
                    rerun.get_or_insert(p.label);
                }
                SourceKind::PairwiseResolver => {
                    resolver.get_or_insert(p.label);
                }
                _ => {}
            }
            votes.push(SourceVote {
                source: src.name.clone(),
                kind: src.kind,
                label: p.label,
                agreement: p.agreement,
                recall,
                weight: super::volume_discount(self.expected[p.label.index()], src.predicted_count(p.label)),
            });
        }
        Ok(EvidenceBundle {
            sample_id,
            council_label,
            council_rerun_label: rerun,
            pairwise_resolver_label: resolver,
            votes,
        })
    }
}
