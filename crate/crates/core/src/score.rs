//! Score sets: the per-sample OOD scores a detector produced on one test set.
//!
//! Scores are oriented so that higher means "more in-distribution". Labels are
//! optional; unlabeled sets are what the predictor sees at test time.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Ind,
    Ood,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ind => "ind",
            Label::Ood => "ood",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" => Ok(Label::Ind),
            "ood" => Ok(Label::Ood),
            other => Err(Error::InvalidInput(format!("unknown label '{other}'"))),
        }
    }
}

/// A non-empty collection of finite OOD scores with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    id: String,
    scores: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl ScoreSet {
    /// Unlabeled set.
    pub fn new(id: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        Self::build(id.into(), scores, None)
    }

    pub fn labeled(id: impl Into<String>, scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} scores",
                labels.len(),
                scores.len()
            )));
        }
        Self::build(id.into(), scores, Some(labels))
    }

    /// Labeled set from separate IND and OOD score vectors (IND first).
    pub fn from_parts(id: impl Into<String>, ind: &[f64], ood: &[f64]) -> Result<Self> {
        let scores = ind.iter().chain(ood).copied().collect();
        let labels = std::iter::repeat_n(Label::Ind, ind.len())
            .chain(std::iter::repeat_n(Label::Ood, ood.len()))
            .collect();
        Self::labeled(id, scores, labels)
    }

    fn build(id: String, scores: Vec<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidInput(format!("score set '{id}' is empty")));
        }
        if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "score set '{id}': non-finite score at index {k}"
            )));
        }
        Ok(Self { id, scores, labels })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Same scores, labels dropped.
    pub fn unlabeled(&self) -> ScoreSet {
        ScoreSet {
            id: self.id.clone(),
            scores: self.scores.clone(),
            labels: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> ScoreSet {
        self.id = id.into();
        self
    }

    /// Count of (IND, OOD) samples, or `None` when unlabeled.
    pub fn class_counts(&self) -> Option<(usize, usize)> {
        let labels = self.labels.as_ref()?;
        let n_ind = labels.iter().filter(|&&l| l == Label::Ind).count();
        Some((n_ind, labels.len() - n_ind))
    }

    /// Scores of one class, in stored order.
    pub fn class_scores(&self, class: Label) -> Vec<f64> {
        match &self.labels {
            Some(labels) => self
                .scores
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(&s, _)| s)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Scores paired with labels, failing unless both classes are present.
    pub(crate) fn supervised(&self) -> Result<(&[f64], &[Label], usize, usize)> {
        let labels = self.labels.as_deref().ok_or_else(|| {
            Error::UnsupportedMetric(format!("score set '{}' has no labels", self.id))
        })?;
        let n_ind = labels.iter().filter(|&&l| l == Label::Ind).count();
        let n_ood = labels.len() - n_ind;
        if n_ind == 0 || n_ood == 0 {
            return Err(Error::UnsupportedMetric(format!(
                "score set '{}' needs both IND and OOD samples (got {n_ind}/{n_ood})",
                self.id
            )));
        }
        Ok((&self.scores, labels, n_ind, n_ood))
    }

    /// Applies `f` to every score, keeping labels.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<ScoreSet> {
        Self::build(
            self.id.clone(),
            self.scores.iter().map(|&s| f(s)).collect(),
            self.labels.clone(),
        )
    }

    /// Keeps only the samples whose indices are listed, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<ScoreSet> {
        let scores = indices.iter().map(|&i| self.scores[i]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::build(self.id.clone(), scores, labels)
    }
}

/// One row of detector logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRow {
    pub sample_id: String,
    pub logits: Vec<f64>,
    pub label: Option<Label>,
}

impl LogitRow {
    pub fn new(
        sample_id: impl Into<String>,
        logits: Vec<f64>,
        label: Option<Label>,
    ) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 logits, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput("non-finite logit".into()));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            logits,
            label,
        })
    }
}
