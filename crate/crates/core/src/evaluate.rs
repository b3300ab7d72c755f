//! Prompt agreement and user-score aggregation.

use std::collections::BTreeMap;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::archive::{Tag, TagSet};
use crate::study::{Response, ScoreRecord};
use crate::stats;

pub const EMBEDDING_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite embedding entry")]
    NonFinite,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("expected {EMBEDDING_DIM} values, got {0}")]
    BadDimension(usize),
    #[error("text is empty")]
    EmptyText,
    #[error("no input left to aggregate")]
    EmptyInput,
    #[error("no valid scores")]
    NoValidScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Any non-empty finite vector; providers enforce [`EMBEDDING_DIM`].
    pub fn new(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(Self(values))
    }

    /// Like [`Embedding::new`] but requires the provider dimension.
    pub fn from_provider(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EvalError::BadDimension(values.len()));
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EvalError>;
}

/// Unit vector seeded from the SHA-256 of the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubEmbedder;

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Embedding::from_provider(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Distribution {
    /// Interpolated quantiles over continuous values.
    pub fn of(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        Ok(Self {
            n: values.len(),
            median: stats::median(values).unwrap(),
            mean: stats::mean(values).unwrap(),
            p25: stats::quantile(values, 0.25).unwrap(),
            p75: stats::quantile(values, 0.75).unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub distribution: Distribution,
    pub similarities: Vec<f64>,
    /// Pairs dropped because embedding failed, with their index.
    pub dropped: Vec<(usize, EvalError)>,
}

/// Similarity between client and server prompts across pairs.
pub fn agreement_stats(
    pairs: &[(String, String)],
    provider: &dyn EmbeddingProvider,
) -> Result<Agreement, EvalError> {
    let mut similarities = Vec::new();
    let mut dropped = Vec::new();
    for (i, (client, server)) in pairs.iter().enumerate() {
        let sim = provider
            .embed(client)
            .and_then(|a| provider.embed(server).map(|b| (a, b)))
            .and_then(|(a, b)| cosine_similarity(&a, &b));
        match sim {
            Ok(s) => similarities.push(s),
            Err(e) => dropped.push((i, e)),
        }
    }
    Ok(Agreement {
        distribution: Distribution::of(&similarities)?,
        similarities,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub item_id: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreSummary {
    /// Lower median plus Tukey hinges over `values`.
    pub fn from_values(item_id: impl Into<String>, values: &[f64]) -> Option<Self> {
        let (q1, q3) = stats::tukey_hinges(values)?;
        Some(Self {
            item_id: item_id.into(),
            n: values.len(),
            median: stats::lower_median(values)?,
            q1,
            q3,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Summary over the scored responses of one item; `cannot judge` answers
/// are excluded.
pub fn summarize_scores(records: &[ScoreRecord]) -> Result<ScoreSummary, EvalError> {
    let item_id = records
        .first()
        .map(|r| r.task_id.clone())
        .ok_or(EvalError::NoValidScores)?;
    let values: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.response {
            Response::Quality(v) | Response::Relevance(v) => Some(f64::from(v)),
            Response::CannotJudge => None,
        })
        .collect();
    ScoreSummary::from_values(item_id, &values).ok_or(EvalError::NoValidScores)
}

/// `(median value, fraction of items with median <= value)` rows.
pub fn score_cdf(summaries: &[ScoreSummary]) -> Vec<(f64, f64)> {
    let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    stats::ecdf(&medians)
}

/// Per-tag summary over item medians. Items count once per tag they carry;
/// tags without items are absent.
pub fn tag_boxplots(items: &[(ScoreSummary, TagSet)]) -> BTreeMap<Tag, ScoreSummary> {
    let mut groups: BTreeMap<Tag, Vec<f64>> = BTreeMap::new();
    for (summary, tags) in items {
        for tag in tags.iter() {
            groups.entry(tag).or_default().push(summary.median);
        }
    }
    groups
        .into_iter()
        .filter_map(|(tag, medians)| ScoreSummary::from_values(tag.as_str(), &medians).map(|s| (tag, s)))
        .collect()
}

pub fn write_summaries_csv<W: io::Write>(out: W, summaries: &[ScoreSummary]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "n", "median", "q1", "q3", "min", "max"])?;
    for s in summaries {
        w.write_record([
            s.item_id.clone(),
            s.n.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: io::Write>(out: W, rows: &[(f64, f64)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["score", "cumulative_fraction"])?;
    for (v, f) in rows {
        w.write_record([v.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_boxplots_csv<W: io::Write>(out: W, boxplots: &BTreeMap<Tag, ScoreSummary>) -> Result<(), csv::Error> {
    let summaries: Vec<ScoreSummary> = boxplots.values().cloned().collect();
    write_summaries_csv(out, &summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn rec(task: &str, pid: usize, response: Response) -> ScoreRecord {
        ScoreRecord {
            task_id: task.into(),
            participant_id: format!("p{pid}"),
            response,
            submitted_at: Utc::now(),
        }
    }

    #[test]
    fn cosine_cases() {
        let a = emb(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 1.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(
            cosine_similarity(&emb(&[1.0]), &emb(&[1.0, 0.0])),
            Err(EvalError::DimensionMismatch(1, 2))
        );
        assert_eq!(cosine_similarity(&emb(&[0.0, 0.0]), &emb(&[1.0, 0.0])), Err(EvalError::ZeroVector));
    }

    #[test]
    fn stub_embedder() {
        let a = StubEmbedder.embed("a bridge").unwrap();
        assert_eq!(a, StubEmbedder.embed("a bridge").unwrap());
        assert_eq!(a.dim(), EMBEDDING_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(StubEmbedder.embed(""), Err(EvalError::EmptyText));
        assert_eq!(Embedding::from_provider(vec![0.5; 512]), Err(EvalError::BadDimension(512)));
    }

    #[test]
    fn agreement_identical_pairs() {
        let pairs = vec![("x".to_string(), "x".to_string()), ("y".into(), "y".into())];
        let a = agreement_stats(&pairs, &StubEmbedder).unwrap();
        assert!((a.distribution.median - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_all_dropped() {
        let pairs = vec![("".to_string(), "x".to_string())];
        assert_eq!(agreement_stats(&pairs, &StubEmbedder), Err(EvalError::EmptyInput));
    }

    #[test]
    fn summaries() {
        let recs: Vec<_> = [3, 4, 5].iter().enumerate().map(|(i, v)| rec("t", i, Response::Quality(*v))).collect();
        assert_eq!(summarize_scores(&recs).unwrap().median, 4.0);
        let recs: Vec<_> = [2, 3, 4, 5].iter().enumerate().map(|(i, v)| rec("t", i, Response::Quality(*v))).collect();
        assert_eq!(summarize_scores(&recs).unwrap().median, 3.0);
        let only_cj = vec![rec("t", 0, Response::CannotJudge)];
        assert_eq!(summarize_scores(&only_cj), Err(EvalError::NoValidScores));
        let mixed = vec![rec("t", 0, Response::CannotJudge), rec("t", 1, Response::Relevance(2))];
        let s = summarize_scores(&mixed).unwrap();
        assert_eq!((s.n, s.median), (1, 2.0));
    }

    #[test]
    fn cdf_and_boxplots() {
        let s = |id: &str, m: f64| ScoreSummary::from_values(id, &[m]).unwrap();
        assert_eq!(score_cdf(&[s("a", 4.0), s("b", 4.0), s("c", 5.0)]), vec![(4.0, 2.0 / 3.0), (5.0, 1.0)]);
        assert_eq!(score_cdf(&[s("a", 3.0)]), vec![(3.0, 1.0)]);

        let food = TagSet::new(vec![Tag::Food]).unwrap();
        let both = TagSet::new(vec![Tag::Food, Tag::Object]).unwrap();
        let plots = tag_boxplots(&[(s("a", 4.0), food.clone()), (s("b", 4.0), food), (s("c", 2.0), both)]);
        assert_eq!(plots[&Tag::Food].n, 3);
        assert_eq!(plots[&Tag::Object].median, 2.0);
        assert!(!plots.contains_key(&Tag::Hand));
    }
}
