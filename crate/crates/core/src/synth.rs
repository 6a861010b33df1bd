//! Seeded synthetic data: a dialogue corpus with the training class
//! proportions and a 472-sample override evidence fixture.
//!
//! Targets are built from per-class vocabularies plus shared filler. The
//! majority class draws from a deliberately small vocabulary, so its
//! utterances resemble one another far more than minority utterances do.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::consistency::{EvidenceSource, RecallTable, SourceFormat, SourceKind, SourcePrediction};
use crate::data::{predictions_to_jsonl, write_text, DataError, Dataset, Prediction, Sample, Turn};
use crate::label::{DmrsLabel, NUM_LABELS};
use crate::overrides::{EvidenceStore, OverrideError};
use crate::rng;

/// Training-set class counts (1,864 samples).
pub const TRAIN_COUNTS: [usize; NUM_LABELS] = [296, 108, 61, 99, 84, 48, 172, 968, 28];
/// Test-set gold support (472 samples).
pub const TEST_SUPPORT: [usize; NUM_LABELS] = [75, 27, 16, 25, 21, 12, 44, 245, 7];

/// Gold-by-predicted counts of the final override-applied predictions on
/// the 472-sample fixture.
pub const FINAL_CONFUSION: [[usize; NUM_LABELS]; NUM_LABELS] = [
    [43, 3, 2, 0, 1, 0, 1, 24, 1],
    [6, 7, 1, 1, 0, 0, 4, 6, 2],
    [0, 0, 6, 0, 1, 0, 4, 2, 3],
    [1, 3, 0, 7, 6, 1, 2, 1, 4],
    [0, 0, 1, 1, 12, 0, 0, 2, 5],
    [1, 2, 0, 0, 5, 2, 1, 1, 0],
    [1, 0, 6, 3, 1, 0, 15, 18, 0],
    [10, 0, 4, 2, 0, 1, 1, 226, 1],
    [5, 0, 0, 2, 0, 0, 0, 0, 0],
];

#[derive(Clone, Debug)]
pub struct CorpusConfig {
    pub counts: [usize; NUM_LABELS],
    pub dialogues: usize,
    pub seed: u64,
    /// Turns kept before each target.
    pub history: usize,
    pub dialogue_prefix: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            counts: TRAIN_COUNTS,
            dialogues: 200,
            seed: 0,
            history: 3,
            dialogue_prefix: "dlg".into(),
        }
    }
}

impl CorpusConfig {
    /// Scales the training proportions to `n` samples by largest remainder.
    pub fn proportional(n: usize, dialogues: usize, seed: u64) -> Self {
        let total: usize = TRAIN_COUNTS.iter().sum();
        let exact: Vec<f64> = TRAIN_COUNTS.iter().map(|&c| c as f64 * n as f64 / total as f64).collect();
        let mut counts = [0usize; NUM_LABELS];
        for (i, e) in exact.iter().enumerate() {
            counts[i] = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..NUM_LABELS).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        CorpusConfig {
            counts,
            dialogues,
            seed,
            ..Default::default()
        }
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vel", "po", "dri", "an", "es", "or", "ul", "bin", "ta", "qui", "ne", "fos", "ga", "hem",
];

fn word(parts: &[u64], syllables: usize) -> String {
    let mut r = rng::stream(parts);
    (0..syllables).map(|_| SYLLABLES[r.random_range(0..SYLLABLES.len())]).collect()
}

struct Vocab {
    class_words: Vec<Vec<String>>,
    filler: Vec<String>,
}

impl Vocab {
    fn new() -> Self {
        let class_words = (0..NUM_LABELS as u64)
            .map(|c| {
                let size = if c == DmrsLabel::MAJORITY.index() as u64 { 8 } else { 40 };
                (0..size).map(|i| format!("{}{}", word(&[c, i, 11], 2), c)).collect()
            })
            .collect();
        let filler = (0..120u64).map(|i| word(&[i, 29], 3)).collect();
        Vocab { class_words, filler }
    }

    fn utterance<R: Rng>(&self, r: &mut R, class: Option<DmrsLabel>) -> String {
        let mut words = Vec::new();
        if let Some(c) = class {
            let pool = &self.class_words[c.index()];
            let k = if c.is_majority() { 5 } else { 4 };
            words.extend(pool.choose_multiple(r, k).cloned());
        }
        let fill = r.random_range(3..=6);
        words.extend((0..fill).map(|_| self.filler[r.random_range(0..self.filler.len())].clone()));
        words.shuffle(r);
        words.join(" ")
    }
}

/// A corpus with exactly `cfg.counts` samples per class spread over
/// `cfg.dialogues` dialogues.
pub fn synthetic_corpus(cfg: &CorpusConfig) -> Dataset {
    let vocab = Vocab::new();
    let mut r = rng::stream(&[cfg.seed, rng::str_key("corpus")]);
    let mut labels: Vec<DmrsLabel> = DmrsLabel::all()
        .flat_map(|c| std::iter::repeat_n(c, cfg.counts[c.index()]))
        .collect();
    labels.shuffle(&mut r);
    let n = labels.len();
    let d = cfg.dialogues.clamp(1, n.max(1));
    let (base, extra) = (n / d, n % d);
    let mut samples = Vec::with_capacity(n);
    let mut next = labels.into_iter();
    for dlg in 0..d {
        let size = base + usize::from(dlg < extra);
        let dialogue_id = format!("{}{dlg:04}", cfg.dialogue_prefix);
        let mut turns: Vec<Turn> = Vec::new();
        for _ in 0..size {
            let gold = next.next().expect("label count matches sizes");
            turns.push(Turn {
                speaker: "supporter".into(),
                text: vocab.utterance(&mut r, None),
            });
            turns.push(Turn {
                speaker: "seeker".into(),
                text: vocab.utterance(&mut r, Some(gold)),
            });
            let start = turns.len().saturating_sub(cfg.history + 1);
            samples.push(Sample {
                dialogue_id: dialogue_id.clone(),
                turns: turns[start..].to_vec(),
                target_index: turns.len() - 1 - start,
                gold: Some(gold),
            });
        }
    }
    Dataset::new(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PlantedOutcome {
    Correction,
    Regression,
    Lateral,
}

/// An override the fixture evidence is built to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PlantedOverride {
    pub gold: DmrsLabel,
    pub from: DmrsLabel,
    pub to: DmrsLabel,
}

impl PlantedOverride {
    pub fn outcome(&self) -> PlantedOutcome {
        if self.to == self.gold {
            PlantedOutcome::Correction
        } else if self.from == self.gold {
            PlantedOutcome::Regression
        } else {
            PlantedOutcome::Lateral
        }
    }

    pub fn is_type_a(&self) -> bool {
        self.from.is_majority()
    }
}

/// `(gold, council, final)`: 7 majority-to-minority and 9 minority-to-minority
/// moves with 9 corrections, 4 regressions and 3 lateral moves.
const PLANTED: [(u8, u8, u8); 16] = [
    (6, 7, 6),
    (6, 7, 6),
    (2, 7, 2),
    (4, 7, 4),
    (7, 7, 6),
    (7, 7, 2),
    (6, 7, 2),
    (1, 0, 1),
    (2, 3, 2),
    (6, 4, 6),
    (3, 1, 3),
    (1, 6, 1),
    (0, 0, 1),
    (4, 4, 2),
    (3, 4, 1),
    (5, 0, 1),
];

/// Samples that pass no gate but come close.
#[derive(Clone, Copy, Debug)]
enum NearMiss {
    /// Fine-tuned agreement 0.75, resolver agrees.
    LowAgreement,
    /// Agreement 0.90 from a source with 7% recall on the class.
    NotCredible,
    /// Agreement 0.85 with no rerun or resolver support.
    Uncorroborated,
    /// Three FOR, three AGAINST.
    Balanced,
}

pub const FT_SOURCES: [&str; 3] = ["ft9b", "ftmoe", "ftboost"];

/// Validation recall (%) per fine-tuned source on L1..L6.
pub const FT_RECALL: [[f64; 6]; 3] = [
    [36.0, 40.0, 21.0, 7.0, 14.0, 43.0],
    [18.0, 60.0, 32.0, 29.0, 14.0, 23.0],
    [46.0, 60.0, 5.0, 14.0, 29.0, 23.0],
];

pub fn ft_recall_table(source: usize) -> RecallTable {
    RecallTable::from_percent((1..=6u8).map(|c| (DmrsLabel::of(c), FT_RECALL[source][c as usize - 1])))
        .expect("recall values are valid percentages")
}

const RUNS: usize = 20;

pub struct EvidenceFixture {
    pub golds: Vec<DmrsLabel>,
    pub base: Vec<Prediction>,
    /// Planted override per sample id.
    pub planted: BTreeMap<usize, PlantedOverride>,
    /// Fine-tuned run files, one `R x N` table per source.
    pub runs: Vec<Vec<Vec<DmrsLabel>>>,
    pub resolver: Vec<Prediction>,
    pub rerun: Vec<Prediction>,
    pub alternate: Vec<Prediction>,
}

/// Twenty votes, `agreeing` of them on `label`, with the rest spread so that
/// `label` stays the unique mode.
fn vote_column(label: DmrsLabel, agreeing: usize, salt: u64) -> Vec<DmrsLabel> {
    let mut votes = vec![label; agreeing];
    let others: Vec<DmrsLabel> = DmrsLabel::all().filter(|&c| c != label).collect();
    let start = (salt as usize) % others.len();
    for i in 0..RUNS - agreeing {
        votes.push(others[(start + i % 3) % others.len()]);
    }
    let mut r = rng::stream(&[salt, 5]);
    votes.shuffle(&mut r);
    votes
}

fn pred(sample_id: usize, label: DmrsLabel, source: &str) -> Prediction {
    Prediction {
        sample_id,
        label,
        confidence: None,
        source: source.into(),
    }
}

impl EvidenceFixture {
    pub fn new(seed: u64) -> Self {
        let l = DmrsLabel::of;
        // (gold, final) per sample, then shuffled.
        let mut cells: Vec<(u8, u8)> = Vec::new();
        for g in 0..NUM_LABELS {
            for p in 0..NUM_LABELS {
                cells.extend(std::iter::repeat_n((g as u8, p as u8), FINAL_CONFUSION[g][p]));
            }
        }
        let mut r = rng::stream(&[seed, rng::str_key("evidence")]);
        cells.shuffle(&mut r);
        let n = cells.len();
        let golds: Vec<DmrsLabel> = cells.iter().map(|&(g, _)| l(g)).collect();
        let mut council: Vec<DmrsLabel> = cells.iter().map(|&(_, p)| l(p)).collect();

        let mut planted = BTreeMap::new();
        for &(g, from, to) in &PLANTED {
            let id = (0..n)
                .find(|&i| cells[i] == (g, to) && !planted.contains_key(&i))
                .expect("fixture confusion has a cell for every planted override");
            council[id] = l(from);
            planted.insert(
                id,
                PlantedOverride {
                    gold: l(g),
                    from: l(from),
                    to: l(to),
                },
            );
        }

        let mut near: BTreeMap<usize, NearMiss> = BTreeMap::new();
        let kinds = [NearMiss::LowAgreement, NearMiss::NotCredible, NearMiss::Uncorroborated];
        let mut l7 = (0..n).filter(|&i| council[i].is_majority() && !planted.contains_key(&i));
        for k in kinds {
            for _ in 0..3 {
                near.insert(l7.next().expect("enough majority samples"), k);
            }
        }
        let balanced = (0..n)
            .filter(|&i| council[i] == l(3) && golds[i] == l(3) && !planted.contains_key(&i))
            .take(2);
        for i in balanced {
            near.insert(i, NearMiss::Balanced);
        }

        let mut runs = vec![vec![vec![DmrsLabel::MAJORITY; n]; RUNS]; 3];
        let mut set_runs = |src: usize, i: usize, label: DmrsLabel, agreeing: usize| {
            let column = vote_column(label, agreeing, rng::mix(&[seed, src as u64, i as u64]));
            for (k, v) in column.into_iter().enumerate() {
                runs[src][k][i] = v;
            }
        };
        let mut resolver = Vec::new();
        let mut rerun = Vec::with_capacity(n);
        let mut alternate = Vec::with_capacity(n);
        let credible = |src: usize, c: DmrsLabel| (1..=6).contains(&c.level()) && FT_RECALL[src][c.index() - 1] >= 15.0;

        for i in 0..n {
            let base = council[i];
            let mut rerun_label = base;
            let mut alt_label = base;
            let mut resolver_label = matches!(base.level(), 6 | 7).then_some(base);
            let mut ft = [(base, 12usize); 3];
            if let Some(p) = planted.get(&i) {
                if p.is_type_a() {
                    let src = if credible(0, p.to) { 0 } else { 1 };
                    ft[src] = (p.to, 17);
                    if p.to.level() == 6 {
                        resolver_label = Some(p.to);
                    } else {
                        rerun_label = p.to;
                    }
                } else {
                    let mut for_votes = 0;
                    for (src, slot) in ft.iter_mut().enumerate() {
                        if credible(src, p.to) {
                            *slot = (p.to, 12);
                            for_votes += 1;
                        }
                    }
                    alt_label = p.to;
                    if for_votes < 3 {
                        rerun_label = p.to;
                    }
                }
            } else if let Some(k) = near.get(&i) {
                match k {
                    NearMiss::LowAgreement => {
                        ft[0] = (l(6), 15);
                        resolver_label = Some(l(6));
                    }
                    NearMiss::NotCredible => {
                        ft[0] = (l(4), 18);
                        rerun_label = l(4);
                    }
                    NearMiss::Uncorroborated => ft[1] = (l(3), 17),
                    NearMiss::Balanced => {
                        ft = [(l(2), 12); 3];
                        rerun_label = l(4);
                    }
                }
            }
            for (src, (label, agreeing)) in ft.into_iter().enumerate() {
                set_runs(src, i, label, agreeing);
            }
            if let Some(label) = resolver_label {
                resolver.push(pred(i, label, "resolver"));
            }
            rerun.push(pred(i, rerun_label, "rerun"));
            alternate.push(pred(i, alt_label, "alternate"));
        }

        let base = council.iter().enumerate().map(|(i, &c)| pred(i, c, "council")).collect();
        EvidenceFixture {
            golds,
            base,
            planted,
            runs,
            resolver,
            rerun,
            alternate,
        }
    }

    pub fn len(&self) -> usize {
        self.golds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.golds.is_empty()
    }

    pub fn council_labels(&self) -> Vec<DmrsLabel> {
        self.base.iter().map(|p| p.label).collect()
    }

    pub fn final_labels(&self) -> Vec<DmrsLabel> {
        let mut out = self.council_labels();
        for (&i, p) in &self.planted {
            out[i] = p.to;
        }
        out
    }

    fn train_distribution() -> BTreeMap<String, f64> {
        DmrsLabel::all().map(|c| (c.to_string(), TRAIN_COUNTS[c.index()] as f64)).collect()
    }

    /// Builds the store in memory, bypassing the files.
    pub fn store(&self) -> Result<EvidenceStore, OverrideError> {
        let n = self.len();
        let mut sources = Vec::new();
        for (src, name) in FT_SOURCES.iter().enumerate() {
            let rs = crate::consistency::RunSet::new(name, self.runs[src].clone())?;
            sources.push(EvidenceSource::from_predictions(
                name,
                SourceKind::FineTuned,
                crate::consistency::aggregate(&rs),
                n,
                Some(ft_recall_table(src)),
            )?);
        }
        let as_source = |name: &str, kind, preds: &[Prediction]| {
            let sp = preds
                .iter()
                .map(|p| SourcePrediction {
                    source_name: name.into(),
                    sample_id: p.sample_id,
                    label: p.label,
                    agreement: 1.0,
                })
                .collect();
            EvidenceSource::from_predictions(name, kind, sp, n, None)
        };
        sources.push(as_source("resolver", SourceKind::PairwiseResolver, &self.resolver)?);
        sources.push(as_source("rerun", SourceKind::CouncilRerun, &self.rerun)?);
        sources.push(as_source("alternate", SourceKind::CouncilAlternate, &self.alternate)?);
        let dist = Self::train_distribution()
            .into_iter()
            .map(|(k, v)| (crate::consistency::parse_class_key(&k).expect("label key"), v))
            .collect();
        let expected = crate::overrides::expected_counts(&dist, n)?;
        EvidenceStore::new(self.council_labels(), sources, expected)
    }

    /// Writes `manifest.json`, the source files, `base.jsonl` (council
    /// predictions) and `gold.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut specs = Vec::new();
        for (src, name) in FT_SOURCES.iter().enumerate() {
            let file = format!("{name}.runs.jsonl");
            let mut text = String::new();
            for i in 0..self.len() {
                let labels: Vec<u8> = self.runs[src].iter().map(|run| run[i].level()).collect();
                text.push_str(&serde_json::json!({"sample_id": i, "labels": labels}).to_string());
                text.push('\n');
            }
            write_text(&dir.join(&file), &text)?;
            let recall_file = format!("{name}.recall.json");
            write_text(
                &dir.join(&recall_file),
                &serde_json::to_string_pretty(&ft_recall_table(src)).expect("recall table serializes"),
            )?;
            specs.push(serde_json::json!({
                "name": name, "kind": SourceKind::FineTuned, "path": file,
                "format": SourceFormat::Runs, "recall": recall_file,
            }));
        }
        for (name, kind, preds) in [
            ("resolver", SourceKind::PairwiseResolver, &self.resolver),
            ("rerun", SourceKind::CouncilRerun, &self.rerun),
            ("alternate", SourceKind::CouncilAlternate, &self.alternate),
        ] {
            let file = format!("{name}.jsonl");
            write_text(&dir.join(&file), &predictions_to_jsonl(preds))?;
            specs.push(serde_json::json!({
                "name": name, "kind": kind, "path": file, "format": SourceFormat::Predictions,
            }));
        }
        let manifest = serde_json::json!({
            "train_distribution": Self::train_distribution(),
            "sources": specs,
        });
        write_text(
            &dir.join("manifest.json"),
            &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        write_text(&dir.join("base.jsonl"), &predictions_to_jsonl(&self.base))?;
        let gold: Vec<Prediction> = self.golds.iter().enumerate().map(|(i, &g)| pred(i, g, "gold")).collect();
        write_text(&dir.join("gold.jsonl"), &predictions_to_jsonl(&gold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{class_distribution, group_kfold};

    #[test]
    fn corpus_matches_counts_and_groups() {
        let ds = synthetic_corpus(&CorpusConfig::default());
        assert_eq!(ds.len(), 1864);
        assert_eq!(class_distribution(&ds).unwrap().counts, TRAIN_COUNTS);
        let dialogues: std::collections::BTreeSet<_> = ds.iter().map(|s| s.dialogue_id.as_str()).collect();
        assert_eq!(dialogues.len(), 200);
        assert!(group_kfold(&ds, 5, 1).is_ok());
        for s in ds.iter() {
            assert_eq!(s.target().speaker, "seeker");
            assert!(s.turns.len() <= 4);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = synthetic_corpus(&CorpusConfig::default());
        let b = synthetic_corpus(&CorpusConfig::default());
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = synthetic_corpus(&CorpusConfig {
            seed: 9,
            ..Default::default()
        });
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn proportional_counts_sum() {
        let cfg = CorpusConfig::proportional(2400, 250, 3);
        assert_eq!(cfg.counts.iter().sum::<usize>(), 2400);
        assert!(cfg.counts[7] > 1200);
    }

    #[test]
    fn fixture_shape() {
        let fx = EvidenceFixture::new(0);
        assert_eq!(fx.len(), 472);
        let support: Vec<usize> = (0..NUM_LABELS).map(|c| fx.golds.iter().filter(|g| g.index() == c).count()).collect();
        assert_eq!(support, TEST_SUPPORT.to_vec());
        assert_eq!(fx.planted.len(), 16);
        assert_eq!(fx.planted.values().filter(|p| p.is_type_a()).count(), 7);
        let count = |o| fx.planted.values().filter(|p| p.outcome() == o).count();
        assert_eq!(
            (count(PlantedOutcome::Correction), count(PlantedOutcome::Regression), count(PlantedOutcome::Lateral)),
            (9, 4, 3)
        );
    }
}
