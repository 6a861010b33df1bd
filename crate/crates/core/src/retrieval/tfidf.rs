//! Sparse TF-IDF vectors over a labeled corpus.
//!
//! Weighting: sublinear term frequency `1 + ln(tf)`, smoothed inverse
//! document frequency `ln((1 + N) / (1 + df)) + 1`, rows L2-normalized.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::data::{Dataset, Sample};
use crate::label::{DmrsLabel, NUM_LABELS};

/// Lowercased runs of Unicode alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Sparse vector with strictly increasing column ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_unsorted(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
        entries.retain(|e| e.1 != 0.0);
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for e in &mut self.entries {
                e.1 /= n;
            }
        }
        self
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut sum = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    /// Cosine similarity; zero vectors are orthogonal to everything.
    pub fn cosine(&self, other: &SparseVec) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }
}

/// How corpus documents and queries are turned into text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Preceding turns included with the target utterance on the corpus side.
    pub corpus_context_turns: usize,
    /// Preceding turns included with the target utterance on the query side.
    pub query_context_turns: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            corpus_context_turns: 0,
            query_context_turns: 3,
        }
    }
}

/// Per-row corpus metadata carried into exemplar blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMeta {
    pub dialogue_id: String,
    pub gold: DmrsLabel,
}

#[derive(Clone, Debug)]
pub struct TfIdfIndex {
    vocabulary: HashMap<String, u32>,
    idf: Vec<f64>,
    rows: Vec<SparseVec>,
    meta: Vec<RowMeta>,
    texts: Vec<String>,
    centroids: [Option<SparseVec>; NUM_LABELS],
    config: TokenizerConfig,
}

impl TfIdfIndex {
    pub fn build(corpus: &Dataset, config: &TokenizerConfig) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let golds = corpus.golds().map_err(|e| RetrievalError::Unlabeled(e.to_string()))?;

        let texts: Vec<String> = corpus
            .iter()
            .map(|s| s.context_text(config.corpus_context_turns))
            .collect();
        let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();

        // Column ids follow sorted term order so the index is independent of
        // hash iteration order.
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for toks in &tokenized {
            let mut uniq: Vec<&str> = toks.iter().map(String::as_str).collect();
            uniq.sort_unstable();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = corpus.len() as f64;
        let mut vocabulary = HashMap::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (col, (term, d)) in df.iter().enumerate() {
            vocabulary.insert(term.to_string(), col as u32);
            idf.push(((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0);
        }

        let mut index = TfIdfIndex {
            vocabulary,
            idf,
            rows: Vec::new(),
            meta: corpus
                .iter()
                .zip(&golds)
                .map(|(s, g)| RowMeta {
                    dialogue_id: s.dialogue_id.clone(),
                    gold: *g,
                })
                .collect(),
            texts,
            centroids: Default::default(),
            config: config.clone(),
        };
        index.rows = tokenized.iter().map(|t| index.weigh(t)).collect();

        let mut sums: Vec<HashMap<u32, f64>> = vec![HashMap::new(); NUM_LABELS];
        let mut counts = [0usize; NUM_LABELS];
        for (row, m) in index.rows.iter().zip(&index.meta) {
            counts[m.gold.index()] += 1;
            for &(col, w) in row.entries() {
                *sums[m.gold.index()].entry(col).or_insert(0.0) += w;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            if counts[c] > 0 {
                let entries = sum.into_iter().map(|(col, w)| (col, w / counts[c] as f64)).collect();
                index.centroids[c] = Some(SparseVec::from_unsorted(entries).normalized());
            }
        }
        Ok(index)
    }

    fn weigh(&self, tokens: &[String]) -> SparseVec {
        let mut tf: HashMap<u32, usize> = HashMap::new();
        for t in tokens {
            if let Some(&col) = self.vocabulary.get(t) {
                *tf.entry(col).or_insert(0) += 1;
            }
        }
        let entries = tf
            .into_iter()
            .map(|(col, f)| (col, (1.0 + (f as f64).ln()) * self.idf[col as usize]))
            .collect();
        SparseVec::from_unsorted(entries).normalized()
    }

    /// Vectorizes arbitrary text; out-of-vocabulary terms are dropped.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        self.weigh(&tokenize(text))
    }

    pub fn query_text(&self, sample: &Sample) -> String {
        sample.context_text(self.config.query_context_turns)
    }

    pub fn query_vector(&self, sample: &Sample) -> SparseVec {
        self.vectorize(&self.query_text(sample))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vocabulary(&self) -> &HashMap<String, u32> {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn row(&self, id: usize) -> &SparseVec {
        &self.rows[id]
    }

    pub fn meta(&self, id: usize) -> &RowMeta {
        &self.meta[id]
    }

    pub fn text(&self, id: usize) -> &str {
        &self.texts[id]
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    /// Normalized mean of the rows labeled `class`, if any.
    pub fn centroid(&self, class: DmrsLabel) -> Option<&SparseVec> {
        self.centroids[class.index()].as_ref()
    }

    /// Most frequent gold label in the corpus; ties go to the lower level.
    pub fn majority_class(&self) -> DmrsLabel {
        crate::data::ClassHistogram::from_labels(self.meta.iter().map(|m| &m.gold)).majority()
    }
}
