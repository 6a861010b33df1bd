//! Pluggable text-to-text similarity used for within-class re-ranking.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::tfidf::TfIdfIndex;
use super::RetrievalError;

/// Symmetric similarity in `[-1, 1]`.
pub trait SimilarityBackend: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, RetrievalError>;

    /// Scores `query` against corpus rows. Implementations may use the
    /// index's precomputed vectors as long as results equal `similarity`.
    fn score_rows(&self, index: &TfIdfIndex, query: &str, rows: &[usize]) -> Result<Vec<f64>, RetrievalError> {
        rows.iter().map(|&r| self.similarity(query, index.text(r))).collect()
    }
}

/// Cosine similarity over the TF-IDF space of an index.
pub struct TfIdfCosine<'a> {
    index: &'a TfIdfIndex,
}

impl<'a> TfIdfCosine<'a> {
    pub fn new(index: &'a TfIdfIndex) -> Self {
        TfIdfCosine { index }
    }
}

impl SimilarityBackend for TfIdfCosine<'_> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, RetrievalError> {
        Ok(self.index.vectorize(a).cosine(&self.index.vectorize(b)))
    }

    fn score_rows(&self, index: &TfIdfIndex, query: &str, rows: &[usize]) -> Result<Vec<f64>, RetrievalError> {
        if !std::ptr::eq(index, self.index) {
            return rows.iter().map(|&r| self.similarity(query, index.text(r))).collect();
        }
        // Every corpus text vectorizes back to its stored row.
        let q = self.index.vectorize(query);
        Ok(rows.iter().map(|&r| q.cosine(self.index.row(r))).collect())
    }
}

#[derive(Serialize)]
struct SimilarityRequest<'a> {
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
struct SimilarityResponse {
    score: f64,
}

/// External embedding service: `POST {base}/similarity` with `{"a", "b"}`,
/// answering `{"score": float}`.
pub struct HttpSimilarity {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpSimilarity {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpSimilarity {
            endpoint: format!("{}/similarity", base_url.trim_end_matches('/')),
            agent,
        }
    }
}

impl SimilarityBackend for HttpSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, RetrievalError> {
        let resp: SimilarityResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(SimilarityRequest { a, b })
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| RetrievalError::Backend(e.to_string()))?;
        if !resp.score.is_finite() || !(-1.0..=1.0).contains(&resp.score) {
            return Err(RetrievalError::Backend(format!("similarity {} outside [-1, 1]", resp.score)));
        }
        Ok(resp.score)
    }
}
