//! Dataset ingestion, grouped splitting, balanced resampling and class counts.
//!
//! Datasets are JSON Lines, one record per sample:
//!
//! ```text
//! {"dialogue_id": "d1", "turns": [["seeker", "hi"]], "target_index": 0, "gold": 7}
//! ```
//!
//! `gold` may be `null` or absent for unlabeled (test-time) samples.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::{DmrsLabel, NUM_LABELS};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Validation { line: usize, message: String },
    #[error("sample {index} has no gold label")]
    Unlabeled { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One dialogue turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl From<(String, String)> for Turn {
    fn from((speaker, text): (String, String)) -> Self {
        Turn { speaker, text }
    }
}

impl From<Turn> for (String, String) {
    fn from(t: Turn) -> Self {
        (t.speaker, t.text)
    }
}

/// A dialogue together with the index of the utterance to classify.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
    pub target_index: usize,
    pub gold: Option<DmrsLabel>,
}

impl Sample {
    pub fn target(&self) -> &Turn {
        &self.turns[self.target_index]
    }

    /// The target utterance preceded by up to `context_turns` earlier turns,
    /// joined by newlines.
    pub fn context_text(&self, context_turns: usize) -> String {
        let start = self.target_index.saturating_sub(context_turns);
        self.turns[start..=self.target_index]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self) -> Result<(), String> {
        if self.dialogue_id.is_empty() {
            return Err("dialogue_id is empty".into());
        }
        if self.turns.is_empty() {
            return Err("turns is empty".into());
        }
        if self.target_index >= self.turns.len() {
            return Err(format!(
                "target_index {} out of bounds for {} turns",
                self.target_index,
                self.turns.len()
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawSample {
    dialogue_id: String,
    turns: Vec<(String, String)>,
    target_index: i64,
    #[serde(default)]
    gold: Option<i64>,
}

/// An ordered collection of samples. Order is the file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Gold labels for every sample, failing on the first unlabeled one.
    pub fn golds(&self) -> Result<Vec<DmrsLabel>, DataError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(index, s)| s.gold.ok_or(DataError::Unlabeled { index }))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        write_text(path, &self.to_jsonl())
    }
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| DataError::Validation { line: line_no, message };
        let gold = raw
            .gold
            .map(DmrsLabel::new)
            .transpose()
            .map_err(|e| invalid(e.to_string()))?;
        if raw.target_index < 0 {
            return Err(invalid(format!("negative target_index {}", raw.target_index)));
        }
        let sample = Sample {
            dialogue_id: raw.dialogue_id,
            turns: raw.turns.into_iter().map(Turn::from).collect(),
            target_index: raw.target_index as usize,
            gold,
        };
        sample.validate().map_err(invalid)?;
        samples.push(sample);
    }
    Ok(Dataset { samples })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(BufReader::new(file))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(text.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Per-class sample counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    pub counts: [usize; NUM_LABELS],
    pub total: usize,
}

impl ClassHistogram {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a DmrsLabel>) -> Self {
        let mut h = ClassHistogram::default();
        for l in labels {
            h.counts[l.index()] += 1;
            h.total += 1;
        }
        h
    }

    pub fn count(&self, label: DmrsLabel) -> usize {
        self.counts[label.index()]
    }

    pub fn fraction(&self, label: DmrsLabel) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(label) as f64 / self.total as f64
        }
    }

    /// Most frequent class; ties go to the lower level.
    pub fn majority(&self) -> DmrsLabel {
        DmrsLabel::all()
            .max_by(|a, b| self.count(*a).cmp(&self.count(*b)).then(b.cmp(a)))
            .expect("label space is non-empty")
    }

    pub fn as_map(&self) -> BTreeMap<DmrsLabel, usize> {
        DmrsLabel::all().map(|l| (l, self.count(l))).collect()
    }
}

pub fn class_distribution(ds: &Dataset) -> Result<ClassHistogram, DataError> {
    let golds = ds.golds()?;
    Ok(ClassHistogram::from_labels(&golds))
}

/// One train/validation split of a grouped k-fold partition.
#[derive(Clone, Debug)]
pub struct Fold {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub train: Dataset,
    pub val: Dataset,
}

/// Grouped k-fold: every dialogue lands in exactly one validation fold.
///
/// Groups are shuffled with `seed`, then assigned largest-first to the fold
/// with the fewest samples so far (lowest fold index on ties). Indices within
/// each fold keep file order.
pub fn group_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    if k < 2 {
        return Err(DataError::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let entry = members.entry(s.dialogue_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(s.dialogue_id.as_str());
        }
        entry.push(i);
    }
    if order.len() < k {
        return Err(DataError::InvalidArgument(format!(
            "k={k} exceeds the number of distinct dialogues ({})",
            order.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // Stable sort keeps the shuffled order among equal-sized groups.
    order.sort_by_key(|g| std::cmp::Reverse(members[g].len()));

    let mut fold_of = vec![0usize; ds.len()];
    let mut sizes = vec![0usize; k];
    for g in &order {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k >= 2");
        for &i in &members[g] {
            fold_of[i] = target;
        }
        sizes[target] += members[g].len();
    }

    Ok((0..k)
        .map(|f| {
            let (val_indices, train_indices): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| fold_of[i] == f);
            Fold {
                train: ds.subset(&train_indices),
                val: ds.subset(&val_indices),
                train_indices,
                val_indices,
            }
        })
        .collect())
}

/// Caps over-represented classes and oversamples rare ones.
///
/// Classes above `majority_cap` are downsampled without replacement; classes
/// below `minority_floor` keep every sample and are topped up by drawing with
/// replacement. Kept samples retain file order; oversampled copies follow,
/// grouped by ascending class.
pub fn balanced_sample(
    ds: &Dataset,
    majority_cap: usize,
    minority_floor: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if majority_cap == 0 {
        return Err(DataError::InvalidArgument("majority_cap must be positive".into()));
    }
    if minority_floor > majority_cap {
        return Err(DataError::InvalidArgument(format!(
            "minority_floor {minority_floor} exceeds majority_cap {majority_cap}"
        )));
    }
    let golds = ds.golds()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_LABELS];
    for (i, g) in golds.iter().enumerate() {
        by_class[g.index()].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: HashSet<usize> = HashSet::new();
    let mut extra: Vec<usize> = Vec::new();
    for members in &by_class {
        if members.len() > majority_cap {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            kept.extend(shuffled.into_iter().take(majority_cap));
        } else {
            kept.extend(members.iter().copied());
            if !members.is_empty() && members.len() < minority_floor {
                for _ in members.len()..minority_floor {
                    extra.push(members[rng.random_range(0..members.len())]);
                }
            }
        }
    }
    let mut indices: Vec<usize> = (0..ds.len()).filter(|i| kept.contains(i)).collect();
    indices.extend(extra);
    Ok(ds.subset(&indices))
}

/// One row of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: usize,
    pub label: DmrsLabel,
    pub confidence: Option<f64>,
    pub source: String,
}

pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(c) = p.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(DataError::Validation {
                    line: line_no,
                    message: format!("confidence {c} outside [0, 1]"),
                });
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(BufReader::new(file))
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), DataError> {
    write_text(path, &predictions_to_jsonl(preds))
}

/// Dense label vector indexed by sample id; every id in `0..n` must appear once.
pub fn dense_labels(preds: &[Prediction], n: usize) -> Result<Vec<DmrsLabel>, DataError> {
    let mut out: Vec<Option<DmrsLabel>> = vec![None; n];
    for (row, p) in preds.iter().enumerate() {
        let slot = out.get_mut(p.sample_id).ok_or_else(|| DataError::Validation {
            line: row + 1,
            message: format!("sample_id {} out of range for {n} samples", p.sample_id),
        })?;
        if slot.replace(p.label).is_some() {
            return Err(DataError::Validation {
                line: row + 1,
                message: format!("duplicate sample_id {}", p.sample_id),
            });
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                DataError::InvalidArgument(format!("prediction missing for sample {i} (expected {n} rows)"))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dialogue: &str, gold: Option<u8>) -> Sample {
        Sample {
            dialogue_id: dialogue.to_string(),
            turns: vec![Turn {
                speaker: "seeker".into(),
                text: format!("text for {dialogue}"),
            }],
            target_index: 0,
            gold: gold.map(DmrsLabel::of),
        }
    }

    fn labeled(counts: &[(u8, usize)]) -> Dataset {
        let mut samples = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                samples.push(sample(&format!("d{label}_{i}"), Some(label)));
            }
        }
        Dataset::new(samples)
    }

    #[test]
    fn parses_minimal_record() {
        let ds = parse_dataset(
            r#"{"dialogue_id":"d1","turns":[["seeker","hi"]],"target_index":0,"gold":7}"#.as_bytes(),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0].gold, Some(DmrsLabel::of(7)));
        assert_eq!(ds.samples[0].target().text, "hi");
    }

    #[test]
    fn missing_or_null_gold_is_unlabeled() {
        let text = concat!(
            r#"{"dialogue_id":"d1","turns":[["a","x"]],"target_index":0,"gold":null}"#,
            "\n",
            r#"{"dialogue_id":"d2","turns":[["a","y"]],"target_index":0}"#
        );
        let ds = parse_dataset(text.as_bytes()).unwrap();
        assert!(ds.samples.iter().all(|s| s.gold.is_none()));
        assert!(matches!(class_distribution(&ds), Err(DataError::Unlabeled { index: 0 })));
    }

    #[test]
    fn out_of_bounds_target_names_line() {
        let text = concat!(
            r#"{"dialogue_id":"d1","turns":[["a","x"]],"target_index":0,"gold":1}"#,
            "\n",
            r#"{"dialogue_id":"d1","turns":[["a","x"],["b","y"]],"target_index":5,"gold":1}"#
        );
        match parse_dataset(text.as_bytes()) {
            Err(DataError::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_and_bad_label() {
        let err = parse_dataset("{not json".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse_dataset(
            r#"{"dialogue_id":"d1","turns":[["a","x"]],"target_index":0,"gold":9}"#.as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, DataError::Validation { line: 1, .. }));
    }

    #[test]
    fn empty_dialogue_id_and_turns_rejected() {
        assert!(parse_dataset(r#"{"dialogue_id":"","turns":[["a","x"]],"target_index":0}"#.as_bytes()).is_err());
        assert!(parse_dataset(r#"{"dialogue_id":"d","turns":[],"target_index":0}"#.as_bytes()).is_err());
    }

    #[test]
    fn histogram_counts() {
        let ds = labeled(&[(7, 2), (6, 1)]);
        let h = class_distribution(&ds).unwrap();
        assert_eq!(h.total, 3);
        assert_eq!(h.count(DmrsLabel::of(7)), 2);
        assert_eq!(h.count(DmrsLabel::of(6)), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), h.total);

        let empty = class_distribution(&Dataset::default()).unwrap();
        assert_eq!(empty.total, 0);
        assert!(empty.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn group_kfold_keeps_dialogues_whole() {
        let mut samples = Vec::new();
        for d in 0..4 {
            for _ in 0..2 {
                samples.push(sample(&format!("d{d}"), Some(7)));
            }
        }
        let ds = Dataset::new(samples);
        let folds = group_kfold(&ds, 2, 11).unwrap();
        assert_eq!(folds.len(), 2);
        let mut seen = vec![0; ds.len()];
        for f in &folds {
            let train: HashSet<_> = f.train.iter().map(|s| &s.dialogue_id).collect();
            assert!(f.val.iter().all(|s| !train.contains(&s.dialogue_id)));
            for &i in &f.val_indices {
                seen[i] += 1;
            }
            assert_eq!(f.val.len(), 4);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn group_kfold_rejects_too_many_folds() {
        let ds = Dataset::new((0..4).map(|d| sample(&format!("d{d}"), None)).collect());
        assert!(group_kfold(&ds, 10, 0).is_err());
        assert!(group_kfold(&ds, 1, 0).is_err());
    }

    #[test]
    fn group_kfold_is_seed_deterministic() {
        let ds = Dataset::new((0..30).map(|d| sample(&format!("d{}", d % 9), None)).collect());
        let a = group_kfold(&ds, 3, 5).unwrap();
        let b = group_kfold(&ds, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.val_indices, y.val_indices);
        }
    }

    #[test]
    fn balanced_sample_small_case() {
        // A:5 below floor 10 -> 10; B:100 above cap 50 -> 50.
        let ds = labeled(&[(1, 5), (7, 100)]);
        let out = balanced_sample(&ds, 50, 10, 3).unwrap();
        let h = class_distribution(&out).unwrap();
        assert_eq!(h.count(DmrsLabel::of(1)), 10);
        assert_eq!(h.count(DmrsLabel::of(7)), 50);
        // Every oversampled copy is one of the original five.
        let originals: HashSet<_> = ds.samples[..5].iter().map(|s| s.dialogue_id.clone()).collect();
        assert!(out
            .iter()
            .filter(|s| s.gold == Some(DmrsLabel::of(1)))
            .all(|s| originals.contains(&s.dialogue_id)));
        // Downsampling is without replacement.
        let majority: HashSet<_> = out
            .iter()
            .filter(|s| s.gold == Some(DmrsLabel::of(7)))
            .map(|s| s.dialogue_id.clone())
            .collect();
        assert_eq!(majority.len(), 50);
    }

    #[test]
    fn balanced_sample_identity_without_limits() {
        let ds = labeled(&[(0, 4), (3, 2), (7, 9)]);
        let out = balanced_sample(&ds, usize::MAX, 0, 99).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn prediction_coverage_checks() {
        let p = |id, l| Prediction {
            sample_id: id,
            label: DmrsLabel::of(l),
            confidence: None,
            source: "x".into(),
        };
        assert_eq!(
            dense_labels(&[p(1, 3), p(0, 7)], 2).unwrap(),
            vec![DmrsLabel::of(7), DmrsLabel::of(3)]
        );
        assert!(dense_labels(&[p(0, 7)], 2).is_err());
        assert!(dense_labels(&[p(0, 7), p(0, 6)], 2).is_err());
        assert!(dense_labels(&[p(3, 7)], 2).is_err());
    }
}
