//! Few-shot exemplar retrieval.
//!
//! Phase-1 exemplars come from MMR over TF-IDF cosine with same-dialogue
//! exclusion. Phase-2 advocates get exemplars restricted to their class and
//! ranked by a [`SimilarityBackend`].

mod mmr;
mod similarity;
mod tfidf;

pub use mmr::mmr_greedy;
pub use similarity::{HttpSimilarity, SimilarityBackend, TfIdfCosine};
pub use tfidf::{tokenize, RowMeta, SparseVec, TfIdfIndex, TokenizerConfig};

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::label::DmrsLabel;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("corpus must be labeled: {0}")]
    Unlabeled(String),
    #[error("dialogue exclusion removed every candidate for dialogue {0:?}")]
    ExclusionExhausted(String),
    #[error("no {class} candidates outside dialogue {dialogue_id:?}")]
    NoClassCandidates { class: DmrsLabel, dialogue_id: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("empty exemplar set")]
    EmptyExemplars,
    #[error("similarity backend failed: {0}")]
    Backend(String),
}

/// Retrieval parameters (`[retrieval]` in the run config).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub lambda: f64,
    pub k_phase1: usize,
    pub k_phase2: usize,
    pub context_turns: usize,
    pub exclude_same_dialogue: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            lambda: 0.5,
            k_phase1: 3,
            k_phase2: 3,
            context_turns: 3,
            exclude_same_dialogue: true,
        }
    }
}

impl RetrievalConfig {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            corpus_context_turns: 0,
            query_context_turns: self.context_turns,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub row: usize,
    pub score: f64,
}

/// Ordered exemplars retrieved for one query.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub items: Vec<Exemplar>,
    pub query_dialogue_id: String,
}

impl ExemplarSet {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|e| e.row)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn eligible_rows(index: &TfIdfIndex, query: &Sample, exclude: bool) -> Vec<usize> {
    (0..index.len())
        .filter(|&r| !exclude || index.meta(r).dialogue_id != query.dialogue_id)
        .collect()
}

/// MMR-diversified exemplars for `query`.
pub fn mmr_select(
    index: &TfIdfIndex,
    query: &Sample,
    k: usize,
    lambda: f64,
    exclude_same_dialogue: bool,
) -> Result<ExemplarSet, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RetrievalError::BadLambda(lambda));
    }
    let rows = eligible_rows(index, query, exclude_same_dialogue);
    if rows.is_empty() {
        return Err(RetrievalError::ExclusionExhausted(query.dialogue_id.clone()));
    }
    let q = index.query_vector(query);
    let relevance: Vec<f64> = rows.iter().map(|&r| q.dot(index.row(r))).collect();
    let picked = mmr_greedy(&rows, &relevance, |a, b| index.row(a).dot(index.row(b)), k, lambda);
    Ok(ExemplarSet {
        items: picked.into_iter().map(|(row, score)| Exemplar { row, score }).collect(),
        query_dialogue_id: query.dialogue_id.clone(),
    })
}

/// Plain relevance ranking, the reference point for MMR diversity.
pub fn top_k_relevance(
    index: &TfIdfIndex,
    query: &Sample,
    k: usize,
    exclude_same_dialogue: bool,
) -> Result<ExemplarSet, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let rows = eligible_rows(index, query, exclude_same_dialogue);
    if rows.is_empty() {
        return Err(RetrievalError::ExclusionExhausted(query.dialogue_id.clone()));
    }
    let q = index.query_vector(query);
    let mut scored: Vec<Exemplar> = rows
        .into_iter()
        .map(|row| Exemplar {
            row,
            score: q.dot(index.row(row)),
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.row.cmp(&b.row)));
    scored.truncate(k);
    Ok(ExemplarSet {
        items: scored,
        query_dialogue_id: query.dialogue_id.clone(),
    })
}

/// In-class exemplars outside the query's dialogue, ranked by `backend`
/// similarity (descending, then lowest row id). Returns all candidates when
/// fewer than `k` exist.
pub fn class_conditioned_retrieve(
    index: &TfIdfIndex,
    backend: &dyn SimilarityBackend,
    query: &Sample,
    class: DmrsLabel,
    k: usize,
) -> Result<ExemplarSet, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let rows: Vec<usize> = (0..index.len())
        .filter(|&r| {
            let m = index.meta(r);
            m.gold == class && m.dialogue_id != query.dialogue_id
        })
        .collect();
    if rows.is_empty() {
        return Err(RetrievalError::NoClassCandidates {
            class,
            dialogue_id: query.dialogue_id.clone(),
        });
    }
    let scores = backend.score_rows(index, &index.query_text(query), &rows)?;
    let mut scored: Vec<Exemplar> = rows
        .into_iter()
        .zip(scores)
        .map(|(row, score)| Exemplar { row, score })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.row.cmp(&b.row)));
    scored.truncate(k);
    Ok(ExemplarSet {
        items: scored,
        query_dialogue_id: query.dialogue_id.clone(),
    })
}

/// Share of exemplars whose gold label is the corpus majority class.
pub fn majority_fraction(ex: &ExemplarSet, index: &TfIdfIndex) -> Result<f64, RetrievalError> {
    if ex.is_empty() {
        return Err(RetrievalError::EmptyExemplars);
    }
    let majority = index.majority_class();
    let hits = ex.rows().filter(|&r| index.meta(r).gold == majority).count();
    Ok(hits as f64 / ex.len() as f64)
}

/// Class among `classes` whose centroid is most similar to the query; ties
/// and classes without corpus samples resolve to the lowest level.
pub fn nearest_centroid(index: &TfIdfIndex, query: &Sample, classes: &[DmrsLabel]) -> Option<DmrsLabel> {
    let q = index.query_vector(query);
    let mut sorted = classes.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut best: Option<(DmrsLabel, f64)> = None;
    for c in sorted {
        let s = index.centroid(c).map_or(0.0, |cent| q.dot(cent));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Turn};

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
        Dataset::new(vec![
            doc("d1", "feeling calm and coping well today", 7),
            doc("d2", "coping well with calm breathing", 7),
            doc("d3", "i keep blaming everyone else", 2),
            doc("d7", "coping well calm", 7),
            doc("d4", "just facts no feelings about the loss", 6),
            doc("d5", "lots of unknowns but fine", 6),
        ])
    }

    #[test]
    fn lambda_one_equals_relevance_top_k() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        for q in ds.iter() {
            for k in 1..=5 {
                let a: Vec<usize> = mmr_select(&idx, q, k, 1.0, true).unwrap().rows().collect();
                let b: Vec<usize> = top_k_relevance(&idx, q, k, true).unwrap().rows().collect();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn same_dialogue_is_excluded() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let q = doc("d7", "coping well calm", 7);
        let ex = mmr_select(&idx, &q, 5, 0.5, true).unwrap();
        assert!(ex.rows().all(|r| idx.meta(r).dialogue_id != "d7"));
        assert_eq!(ex.len(), 5);
        // Without exclusion the identical document wins.
        let ex = mmr_select(&idx, &q, 1, 1.0, false).unwrap();
        assert_eq!(idx.meta(ex.items[0].row).dialogue_id, "d7");
    }

    #[test]
    fn exclusion_can_exhaust_corpus() {
        let ds = Dataset::new(vec![doc("d1", "a", 7), doc("d1", "b", 6)]);
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        assert!(matches!(
            mmr_select(&idx, &ds.samples[0], 3, 0.5, true),
            Err(RetrievalError::ExclusionExhausted(_))
        ));
    }

    #[test]
    fn whole_corpus_selection_is_a_permutation() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let q = doc("zz", "calm feelings", 7);
        let mut rows: Vec<usize> = mmr_select(&idx, &q, 6, 0.3, true).unwrap().rows().collect();
        rows.sort();
        assert_eq!(rows, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn class_conditioned_orders_by_cosine() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let backend = TfIdfCosine::new(&idx);
        let q = doc("q", "no feelings about the facts", 6);
        let ex = class_conditioned_retrieve(&idx, &backend, &q, DmrsLabel::of(6), 10).unwrap();
        assert_eq!(ex.len(), 2);
        let direct: Vec<f64> = [4usize, 5]
            .iter()
            .map(|&r| idx.query_vector(&q).cosine(idx.row(r)))
            .collect();
        let expected = if direct[0] >= direct[1] { vec![4, 5] } else { vec![5, 4] };
        assert_eq!(ex.rows().collect::<Vec<_>>(), expected);
        // Row-vector shortcut agrees with text-level similarity.
        for e in &ex.items {
            let s = backend.similarity(&idx.query_text(&q), idx.text(e.row)).unwrap();
            assert!((s - e.score).abs() < 1e-12);
        }
    }

    #[test]
    fn class_conditioned_without_candidates_errors() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let backend = TfIdfCosine::new(&idx);
        let q = doc("d3", "blame", 2);
        assert!(matches!(
            class_conditioned_retrieve(&idx, &backend, &q, DmrsLabel::of(2), 3),
            Err(RetrievalError::NoClassCandidates { .. })
        ));
    }

    #[test]
    fn majority_fraction_counts() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let set = |rows: &[usize]| ExemplarSet {
            items: rows.iter().map(|&row| Exemplar { row, score: 0.0 }).collect(),
            query_dialogue_id: "q".into(),
        };
        assert!((majority_fraction(&set(&[0, 1, 4]), &idx).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(majority_fraction(&set(&[2, 4]), &idx).unwrap(), 0.0);
        assert!(majority_fraction(&set(&[]), &idx).is_err());
    }

    #[test]
    fn nearest_centroid_prefers_similar_class() {
        let ds = corpus();
        let idx = TfIdfIndex::build(&ds, &TokenizerConfig::default()).unwrap();
        let q = doc("q", "blaming everyone", 0);
        let got = nearest_centroid(&idx, &q, &[DmrsLabel::of(6), DmrsLabel::of(2), DmrsLabel::of(8)]);
        assert_eq!(got, Some(DmrsLabel::of(2)));
        let unrelated = doc("q", "zzz", 0);
        assert_eq!(
            nearest_centroid(&idx, &unrelated, &[DmrsLabel::of(8), DmrsLabel::of(3)]),
            Some(DmrsLabel::of(3))
        );
    }
}
