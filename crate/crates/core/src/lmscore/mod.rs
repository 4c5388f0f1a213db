//! Masked-position and sequence scoring.
//!
//! [`NGramModel`] is the built-in scorer; [`ExternalScorer`] speaks a small JSON
//! protocol so a neural masked LM can be plugged in without linking it.

mod external;
mod ngram;

use std::collections::HashSet;

use thiserror::Error;

use crate::http::HttpError;
use crate::textcore::TokenSeq;

pub use external::{ExternalScorer, ScoreRequest, ScoreResponse};
pub use ngram::{NGramModel, SequenceScore, WordId, BOS, EOS, MODEL_FORMAT, MODEL_VERSION};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("corpus has no tokens to train on")]
    EmptyCorpus,
    #[error("n-gram order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("smoothing k must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("cannot score an empty sequence")]
    EmptySequence,
    #[error("mask position {position} out of range for context of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("token `{0}` at the masked position is not a word")]
    NotAWord(String),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("invalid score distribution: {0}")]
    InvalidDistribution(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("external scorer: {0}")]
    Http(#[from] HttpError),
    #[error("external scorer: {0}")]
    External(String),
}

/// A context with one position hidden from the scorer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedQuery {
    context: TokenSeq,
    position: usize,
}

impl MaskedQuery {
    pub fn new(context: TokenSeq, position: usize) -> Result<Self, LmError> {
        if position >= context.len() {
            return Err(LmError::PositionOutOfRange {
                position,
                len: context.len(),
            });
        }
        Ok(MaskedQuery { context, position })
    }

    pub fn context(&self) -> &TokenSeq {
        &self.context
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Normalized form of the hidden token.
    pub fn actual(&self) -> &str {
        self.context.tokens()[self.position].norm()
    }
}

/// What a masked prediction is normalized over.
#[derive(Debug, Clone, Copy)]
pub enum Candidates<'a> {
    Words(&'a [String]),
    FullVocab,
}

/// Probabilities for the hidden position, one entry per candidate in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    probs: Vec<(String, f64)>,
}

impl ScoreDistribution {
    /// Checks the range and mass invariants.
    pub fn new(probs: Vec<(String, f64)>) -> Result<Self, LmError> {
        let mut seen = HashSet::new();
        let mut total = 0.0;
        for (w, p) in &probs {
            if !(0.0..=1.0).contains(p) {
                return Err(LmError::InvalidDistribution(format!(
                    "probability {p} for `{w}` outside [0, 1]"
                )));
            }
            if !seen.insert(w.as_str()) {
                return Err(LmError::InvalidDistribution(format!("duplicate word `{w}`")));
            }
            total += p;
        }
        if total > 1.0 + 1e-9 {
            return Err(LmError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(ScoreDistribution { probs })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `word`, 0 when it is not a candidate.
    pub fn prob(&self, word: &str) -> f64 {
        self.probs
            .iter()
            .find(|(w, _)| w == word)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().map(|(_, p)| p).sum()
    }

    /// Most probable word other than `exclude`; ties go to the alphabetically first word.
    pub fn best_alternative(&self, exclude: &str) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (w, p) in &self.probs {
            if w == exclude {
                continue;
            }
            best = match best {
                None => Some((w, *p)),
                Some((bw, bp)) if *p > bp || (*p == bp && w.as_str() < bw) => Some((w, *p)),
                keep => keep,
            };
        }
        best
    }

    /// `P(actual) - P(best alternative)`.
    pub fn delta_p(&self, actual: &str) -> f64 {
        let alt = self.best_alternative(actual).map_or(0.0, |(_, p)| p);
        self.prob(actual) - alt
    }
}

/// Anything that can fill a masked position with a probability distribution.
pub trait MaskedScorer: Send + Sync {
    /// Provenance string recorded in inferability reports.
    fn scorer_id(&self) -> String;

    fn predict(
        &self,
        query: &MaskedQuery,
        candidates: Candidates<'_>,
    ) -> Result<ScoreDistribution, LmError>;

    /// Inferability gap at the query position under a full-vocabulary prediction.
    fn delta_p(&self, query: &MaskedQuery) -> Result<f64, LmError> {
        let dist = self.predict(query, Candidates::FullVocab)?;
        Ok(dist.delta_p(query.actual()))
    }
}

/// ΔP of the word at `position`: its probability minus that of the best alternative.
pub fn delta_p(
    scorer: &dyn MaskedScorer,
    context: &TokenSeq,
    position: usize,
) -> Result<f64, LmError> {
    let token = context.get(position).ok_or(LmError::PositionOutOfRange {
        position,
        len: context.len(),
    })?;
    if !token.is_word() {
        return Err(LmError::NotAWord(token.surface().to_string()));
    }
    let query = MaskedQuery::new(context.clone(), position)?;
    scorer.delta_p(&query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::tokenize;

    struct Fixed(Vec<(String, f64)>);

    impl MaskedScorer for Fixed {
        fn scorer_id(&self) -> String {
            "fixed".into()
        }

        fn predict(&self, _: &MaskedQuery, _: Candidates<'_>) -> Result<ScoreDistribution, LmError> {
            ScoreDistribution::new(self.0.clone())
        }
    }

    fn fixed(entries: &[(&str, f64)]) -> Fixed {
        Fixed(entries.iter().map(|(w, p)| (w.to_string(), *p)).collect())
    }

    #[test]
    fn degenerate_scorer_gives_one() {
        let ctx = tokenize("went to town");
        let s = fixed(&[("to", 1.0), ("in", 0.0)]);
        assert_eq!(delta_p(&s, &ctx, 1).unwrap(), 1.0);
    }

    #[test]
    fn uniform_pair_gives_zero() {
        let ctx = tokenize("went to town");
        let s = fixed(&[("to", 0.5), ("in", 0.5)]);
        assert_eq!(delta_p(&s, &ctx, 1).unwrap(), 0.0);
    }

    #[test]
    fn negative_when_not_top() {
        let ctx = tokenize("went to town");
        let s = fixed(&[("to", 0.2), ("in", 0.7), ("at", 0.1)]);
        assert!((delta_p(&s, &ctx, 1).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_position() {
        let ctx = tokenize("went to town .");
        let s = fixed(&[("to", 1.0)]);
        assert!(matches!(
            delta_p(&s, &ctx, 9),
            Err(LmError::PositionOutOfRange { .. })
        ));
        assert!(matches!(delta_p(&s, &ctx, 3), Err(LmError::NotAWord(_))));
    }

    #[test]
    fn alternative_ties_are_alphabetical() {
        let d = ScoreDistribution::new(vec![
            ("the".into(), 0.4),
            ("zed".into(), 0.3),
            ("bee".into(), 0.3),
        ])
        .unwrap();
        assert_eq!(d.best_alternative("the"), Some(("bee", 0.3)));
    }

    #[test]
    fn distribution_rejects_excess_mass() {
        assert!(ScoreDistribution::new(vec![("a".into(), 0.7), ("b".into(), 0.7)]).is_err());
        assert!(ScoreDistribution::new(vec![("a".into(), -0.1)]).is_err());
    }
}
