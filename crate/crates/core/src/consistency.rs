//! Self-consistency aggregation and evidence-source ingestion.
//!
//! A run file has one line per sample with every run's label:
//!
//! ```text
//! {"sample_id": 0, "labels": [6, 6, 7, 6]}
//! ```
//!
//! A recall table maps classes to validation recall in percent, with keys
//! written either `"L4"` or `"4"`: `{"L1": 36, "L2": 40, "L4": 7}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_predictions, DataError};
use crate::label::{DmrsLabel, NUM_LABELS};

#[derive(Debug, thiserror::Error)]
pub enum ConsistencyError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("run set {0}: no runs")]
    NoRuns(String),
    #[error("run set {source_name}: sample {sample_id} has {got} labels, expected {expected}")]
    RaggedRuns {
        source_name: String,
        sample_id: usize,
        got: usize,
        expected: usize,
    },
    #[error("source {source_name}: {got} samples, dataset has {expected}")]
    CountMismatch {
        source_name: String,
        got: usize,
        expected: usize,
    },
    #[error("source {source_name}: sample {sample_id}: {message}")]
    BadSample {
        source_name: String,
        sample_id: usize,
        message: String,
    },
    #[error("recall table: {0}")]
    Recall(String),
    #[error("recall table has no entry for {0}")]
    MissingRecall(DmrsLabel),
}

/// `R` runs over `N` samples, stored run-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSet {
    pub source_name: String,
    pub runs: Vec<Vec<DmrsLabel>>,
    pub temperature_note: Option<String>,
}

#[derive(Deserialize)]
struct RunLine {
    sample_id: usize,
    labels: Vec<DmrsLabel>,
}

impl RunSet {
    pub fn new(source_name: &str, runs: Vec<Vec<DmrsLabel>>) -> Result<Self, ConsistencyError> {
        let Some(first) = runs.first() else {
            return Err(ConsistencyError::NoRuns(source_name.into()));
        };
        let n = first.len();
        if let Some(bad) = runs.iter().find(|r| r.len() != n) {
            return Err(ConsistencyError::CountMismatch {
                source_name: source_name.into(),
                got: bad.len(),
                expected: n,
            });
        }
        Ok(RunSet {
            source_name: source_name.into(),
            runs,
            temperature_note: None,
        })
    }

    pub fn num_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn num_samples(&self) -> usize {
        self.runs.first().map_or(0, Vec::len)
    }

    /// Labels of every run for one sample.
    pub fn votes(&self, sample_id: usize) -> impl Iterator<Item = DmrsLabel> + '_ {
        self.runs.iter().map(move |r| r[sample_id])
    }

    /// Reads a run file; sample ids must cover `0..N` exactly once.
    pub fn load(path: &Path, source_name: &str) -> Result<Self, ConsistencyError> {
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rows: BTreeMap<usize, Vec<DmrsLabel>> = BTreeMap::new();
        let mut width = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let parse = |message: String| DataError::Parse { line: i + 1, message };
            let line = line.map_err(|e| parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RunLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let expected = *width.get_or_insert(rec.labels.len());
            if rec.labels.is_empty() || rec.labels.len() != expected {
                return Err(ConsistencyError::RaggedRuns {
                    source_name: source_name.into(),
                    sample_id: rec.sample_id,
                    got: rec.labels.len(),
                    expected,
                });
            }
            if rows.insert(rec.sample_id, rec.labels).is_some() {
                return Err(DataError::Validation {
                    line: i + 1,
                    message: format!("duplicate sample_id {}", rec.sample_id),
                }
                .into());
            }
        }
        if let Some((&last, _)) = rows.last_key_value() {
            if last + 1 != rows.len() {
                let missing = (0..).find(|i| !rows.contains_key(i)).unwrap_or(0);
                return Err(ConsistencyError::BadSample {
                    source_name: source_name.into(),
                    sample_id: missing,
                    message: "missing from run file".into(),
                });
            }
        }
        let r = width.unwrap_or(0);
        let runs = (0..r).map(|k| rows.values().map(|labels| labels[k]).collect()).collect();
        RunSet::new(source_name, runs)
    }
}

/// One source's label for one sample with its vote agreement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePrediction {
    pub source_name: String,
    pub sample_id: usize,
    pub label: DmrsLabel,
    pub agreement: f64,
}

/// Modal label over `votes` (ties to the lower level) and its count.
pub fn modal(votes: impl IntoIterator<Item = DmrsLabel>) -> Option<(DmrsLabel, usize)> {
    let mut counts = [0usize; NUM_LABELS];
    for v in votes {
        counts[v.index()] += 1;
    }
    let (idx, &count) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (count > 0).then(|| (DmrsLabel::of(idx as u8), count))
}

/// Majority vote per sample; agreement is the modal count over `R`.
pub fn aggregate(rs: &RunSet) -> Vec<SourcePrediction> {
    let r = rs.num_runs() as f64;
    (0..rs.num_samples())
        .map(|i| {
            let (label, count) = modal(rs.votes(i)).expect("run set has at least one run");
            SourcePrediction {
                source_name: rs.source_name.clone(),
                sample_id: i,
                label,
                agreement: count as f64 / r,
            }
        })
        .collect()
}

/// Per-class validation recall, stored in percent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct RecallTable {
    percent: BTreeMap<DmrsLabel, f64>,
}

impl RecallTable {
    pub fn from_percent(entries: impl IntoIterator<Item = (DmrsLabel, f64)>) -> Result<Self, ConsistencyError> {
        let percent: BTreeMap<_, _> = entries.into_iter().collect();
        if let Some((c, p)) = percent.iter().find(|(_, p)| !(0.0..=100.0).contains(*p)) {
            return Err(ConsistencyError::Recall(format!("{c}: {p} outside [0, 100]")));
        }
        Ok(RecallTable { percent })
    }

    /// Recall as a fraction.
    pub fn recall(&self, class: DmrsLabel) -> Result<f64, ConsistencyError> {
        self.percent
            .get(&class)
            .map(|p| p / 100.0)
            .ok_or(ConsistencyError::MissingRecall(class))
    }

    pub fn covers(&self, class: DmrsLabel) -> bool {
        self.percent.contains_key(&class)
    }

    pub fn load(path: &Path) -> Result<Self, ConsistencyError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConsistencyError::Recall(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn parse_class_key(key: &str) -> Option<DmrsLabel> {
    let digits = key.strip_prefix('L').or_else(|| key.strip_prefix('l')).unwrap_or(key);
    digits.parse::<i64>().ok().and_then(|n| DmrsLabel::new(n).ok())
}

impl TryFrom<BTreeMap<String, f64>> for RecallTable {
    type Error = ConsistencyError;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        let entries = map
            .into_iter()
            .map(|(k, v)| {
                parse_class_key(&k)
                    .map(|c| (c, v))
                    .ok_or_else(|| ConsistencyError::Recall(format!("bad class key {k:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        RecallTable::from_percent(entries)
    }
}

impl From<RecallTable> for BTreeMap<String, f64> {
    fn from(t: RecallTable) -> Self {
        t.percent.into_iter().map(|(c, p)| (c.to_string(), p)).collect()
    }
}

/// What kind of evidence a source provides. Only fine-tuned sources carry
/// recall tables and pass through the credibility gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    FineTuned,
    PairwiseResolver,
    CouncilRerun,
    CouncilAlternate,
}

impl SourceKind {
    /// Resolver and alternate files may skip samples.
    pub fn allows_sparse(self) -> bool {
        matches!(self, SourceKind::PairwiseResolver | SourceKind::CouncilAlternate)
    }

    /// Counts as corroboration for a majority-to-minority override.
    pub fn corroborates(self) -> bool {
        matches!(self, SourceKind::PairwiseResolver | SourceKind::CouncilRerun)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// Run file, aggregated by majority vote.
    Runs,
    /// Prediction file; `confidence` becomes agreement (1.0 when null).
    Predictions,
}

/// A registered evidence source.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceSource {
    pub name: String,
    pub kind: SourceKind,
    /// Indexed by sample id.
    pub predictions: Vec<Option<SourcePrediction>>,
    pub recall: Option<RecallTable>,
    /// Number of samples the source assigns to each class.
    pub volume: [usize; NUM_LABELS],
}

impl EvidenceSource {
    pub fn from_predictions(
        name: &str,
        kind: SourceKind,
        predictions: Vec<SourcePrediction>,
        expected_count: usize,
        recall: Option<RecallTable>,
    ) -> Result<Self, ConsistencyError> {
        if !kind.allows_sparse() && predictions.len() != expected_count {
            return Err(ConsistencyError::CountMismatch {
                source_name: name.into(),
                got: predictions.len(),
                expected: expected_count,
            });
        }
        let mut slots: Vec<Option<SourcePrediction>> = vec![None; expected_count];
        let mut volume = [0usize; NUM_LABELS];
        for mut p in predictions {
            let id = p.sample_id;
            let bad = |message: &str| ConsistencyError::BadSample {
                source_name: name.into(),
                sample_id: id,
                message: message.into(),
            };
            if !(0.0..=1.0).contains(&p.agreement) {
                return Err(bad("agreement outside [0, 1]"));
            }
            let slot = slots.get_mut(id).ok_or_else(|| bad("sample id out of range"))?;
            if slot.is_some() {
                return Err(bad("duplicate sample id"));
            }
            volume[p.label.index()] += 1;
            p.source_name = name.into();
            *slot = Some(p);
        }
        Ok(EvidenceSource {
            name: name.into(),
            kind,
            predictions: slots,
            recall,
            volume,
        })
    }

    pub fn prediction(&self, sample_id: usize) -> Option<&SourcePrediction> {
        self.predictions.get(sample_id).and_then(Option::as_ref)
    }

    pub fn predicted_count(&self, class: DmrsLabel) -> usize {
        self.volume[class.index()]
    }
}

/// Reads a source file and registers it against a dataset of `expected_count` samples.
pub fn load_source(
    path: &Path,
    name: &str,
    kind: SourceKind,
    format: SourceFormat,
    expected_count: usize,
    recall: Option<RecallTable>,
) -> Result<EvidenceSource, ConsistencyError> {
    let predictions = match format {
        SourceFormat::Runs => aggregate(&RunSet::load(path, name)?),
        SourceFormat::Predictions => load_predictions(path)?
            .into_iter()
            .map(|p| SourcePrediction {
                source_name: name.into(),
                sample_id: p.sample_id,
                label: p.label,
                agreement: p.confidence.unwrap_or(1.0),
            })
            .collect(),
    };
    EvidenceSource::from_predictions(name, kind, predictions, expected_count, recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(v: u8) -> DmrsLabel {
        DmrsLabel::of(v)
    }

    fn runs_from_votes(votes: &[u8]) -> RunSet {
        RunSet::new("m", votes.iter().map(|&v| vec![l(v)]).collect()).unwrap()
    }

    #[test]
    fn seventeen_of_twenty() {
        let mut votes = vec![6u8; 17];
        votes.extend([7, 7, 5]);
        let p = &aggregate(&runs_from_votes(&votes))[0];
        assert_eq!(p.label, l(6));
        assert_eq!(p.agreement, 0.85);
    }

    #[test]
    fn single_run_and_ties() {
        assert_eq!(aggregate(&runs_from_votes(&[4]))[0].agreement, 1.0);
        let mut votes = vec![3u8; 10];
        votes.extend([7u8; 10]);
        let p = &aggregate(&runs_from_votes(&votes))[0];
        assert_eq!((p.label, p.agreement), (l(3), 0.5));
    }

    #[test]
    fn run_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, "{\"sample_id\":1,\"labels\":[2,2,3]}\n{\"sample_id\":0,\"labels\":[7,6,6]}\n").unwrap();
        let rs = RunSet::load(&path, "m").unwrap();
        assert_eq!(rs.num_runs(), 3);
        assert_eq!(rs.runs[0], vec![l(7), l(2)]);
        let agg = aggregate(&rs);
        assert_eq!(agg[0].label, l(6));
        assert_eq!(agg[1].label, l(2));

        std::fs::write(&path, "{\"sample_id\":0,\"labels\":[7,6]}\n{\"sample_id\":1,\"labels\":[2]}\n").unwrap();
        assert!(matches!(RunSet::load(&path, "m"), Err(ConsistencyError::RaggedRuns { .. })));
        std::fs::write(&path, "{\"sample_id\":0,\"labels\":[7]}\n{\"sample_id\":2,\"labels\":[2]}\n").unwrap();
        assert!(matches!(RunSet::load(&path, "m"), Err(ConsistencyError::BadSample { sample_id: 1, .. })));
    }

    #[test]
    fn recall_table_keys_and_lookup() {
        let t: RecallTable = serde_json::from_str(r#"{"L1": 36, "L2": 40, "3": 21, "L4": 7}"#).unwrap();
        assert_eq!(t.recall(l(2)).unwrap(), 0.40);
        assert_eq!(t.recall(l(3)).unwrap(), 0.21);
        assert!(matches!(t.recall(l(8)), Err(ConsistencyError::MissingRecall(_))));
        assert!(serde_json::from_str::<RecallTable>(r#"{"L9": 3}"#).is_err());
        assert!(serde_json::from_str::<RecallTable>(r#"{"L1": 130}"#).is_err());
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<RecallTable>(&json).unwrap(), t);
    }

    #[test]
    fn count_mismatch_and_volume() {
        let preds: Vec<SourcePrediction> = (0..471)
            .map(|i| SourcePrediction {
                source_name: String::new(),
                sample_id: i,
                label: if i < 31 { l(2) } else { l(7) },
                agreement: 1.0,
            })
            .collect();
        let err = EvidenceSource::from_predictions("fb", SourceKind::FineTuned, preds.clone(), 472, None);
        assert!(matches!(err, Err(ConsistencyError::CountMismatch { got: 471, expected: 472, .. })));
        let src = EvidenceSource::from_predictions("fb", SourceKind::FineTuned, preds, 471, None).unwrap();
        assert_eq!(src.predicted_count(l(2)), 31);
        assert_eq!(src.prediction(3).unwrap().source_name, "fb");
    }

    #[test]
    fn sparse_sources_accept_gaps() {
        let preds = vec![SourcePrediction {
            source_name: "r".into(),
            sample_id: 5,
            label: l(6),
            agreement: 1.0,
        }];
        let src = EvidenceSource::from_predictions("r", SourceKind::PairwiseResolver, preds, 10, None).unwrap();
        assert!(src.prediction(0).is_none());
        assert_eq!(src.prediction(5).unwrap().label, l(6));
    }

    #[test]
    fn prediction_file_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(
            &path,
            "{\"sample_id\":0,\"label\":6,\"confidence\":0.9,\"source\":\"x\"}\n{\"sample_id\":1,\"label\":7,\"confidence\":null,\"source\":\"x\"}\n",
        )
        .unwrap();
        let src = load_source(&path, "rerun", SourceKind::CouncilRerun, SourceFormat::Predictions, 2, None).unwrap();
        assert_eq!(src.prediction(0).unwrap().agreement, 0.9);
        assert_eq!(src.prediction(1).unwrap().agreement, 1.0);
        assert!(load_source(&path, "rerun", SourceKind::CouncilRerun, SourceFormat::Predictions, 3, None).is_err());
    }
}
