//! Ranking candidate words by how confidently a masked scorer recovers them.
//!
//! Every occurrence of a candidate word in the corpus is masked and scored with
//! ΔP (probability of the actual word minus the best alternative). Words are then
//! ordered by their mean ΔP, most inferable first, and cut into nested level sets.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmscore::{delta_p, LmError, MaskedScorer};
use crate::parallel::with_workers;
use crate::textcore::{tokenize, Corpus, Lexicon, LexiconError, TokenSeq};

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_MIN_OCCURRENCES: usize = 10;
pub const DEFAULT_STEP: usize = 5;

#[derive(Debug, Error)]
pub enum InferabilityError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("word set is empty")]
    EmptyWordSet,
    #[error("scoring fragment {fragment} failed: {source}")]
    Scorer {
        fragment: usize,
        #[source]
        source: LmError,
    },
    #[error("level {level} with step {step} needs {needed} ranked words, report has {available}")]
    LevelOutOfRange {
        level: usize,
        step: usize,
        needed: usize,
        available: usize,
    },
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report csv: {0}")]
    Format(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Mean over every scored position.
    #[default]
    PerOccurrence,
    /// Mean over fragments of the per-fragment mean.
    PerFragment,
}

#[derive(Debug, Clone)]
pub struct RankOptions {
    /// Tokens kept on each side of the masked position.
    pub window: usize,
    pub min_occurrences: usize,
    pub averaging: Averaging,
    pub workers: Option<usize>,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            window: DEFAULT_WINDOW,
            min_occurrences: DEFAULT_MIN_OCCURRENCES,
            averaging: Averaging::PerOccurrence,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferabilityEntry {
    pub word: String,
    pub mean_delta_p: f64,
    pub occurrences: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferabilityReport {
    pub entries: Vec<InferabilityEntry>,
    /// Words of the input set that never occur in the corpus.
    pub skipped: Vec<String>,
    pub corpus_id: String,
    pub scorer_id: String,
}

/// The context actually shown to the scorer: at most `window` tokens either side.
pub fn window_around(seq: &TokenSeq, position: usize, window: usize) -> (TokenSeq, usize) {
    let lo = position.saturating_sub(window);
    let hi = (position + window + 1).min(seq.len());
    (TokenSeq::new(seq.tokens()[lo..hi].to_vec()), position - lo)
}

fn score_fragment(
    seq: &TokenSeq,
    wordset: &Lexicon,
    word_index: &HashMap<&str, usize>,
    scorer: &dyn MaskedScorer,
    window: usize,
) -> Result<Vec<(usize, f64)>, LmError> {
    let mut out = Vec::new();
    for (pos, tok) in seq.iter().enumerate() {
        if !tok.is_word() || !wordset.contains(tok.norm()) {
            continue;
        }
        let (ctx, local) = window_around(seq, pos, window);
        out.push((word_index[tok.norm()], delta_p(scorer, &ctx, local)?));
    }
    Ok(out)
}

/// Scores every occurrence of every word of `wordset` in `corpus` and returns the
/// words sorted by mean ΔP, descending (ties by word).
pub fn rank_terms(
    corpus: &Corpus,
    wordset: &Lexicon,
    scorer: &dyn MaskedScorer,
    opts: &RankOptions,
) -> Result<InferabilityReport, InferabilityError> {
    if corpus.is_empty() {
        return Err(InferabilityError::EmptyCorpus);
    }
    if wordset.is_empty() {
        return Err(InferabilityError::EmptyWordSet);
    }
    let word_index: HashMap<&str, usize> = wordset
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();

    let per_fragment: Vec<Vec<(usize, f64)>> = with_workers(opts.workers, || {
        corpus
            .fragments()
            .par_iter()
            .map(|frag| {
                let seq = tokenize(&frag.text);
                score_fragment(&seq, wordset, &word_index, scorer, opts.window).map_err(
                    |source| InferabilityError::Scorer {
                        fragment: frag.id,
                        source,
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let n = wordset.len();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    let mut fragment_counts = vec![0usize; n];
    let mut frag_sum = vec![0.0f64; n];
    let mut frag_n = vec![0usize; n];
    for scored in &per_fragment {
        match opts.averaging {
            Averaging::PerOccurrence => {
                for &(w, dp) in scored {
                    sums[w] += dp;
                    counts[w] += 1;
                }
            }
            Averaging::PerFragment => {
                frag_sum.iter_mut().for_each(|s| *s = 0.0);
                frag_n.iter_mut().for_each(|c| *c = 0);
                for &(w, dp) in scored {
                    frag_sum[w] += dp;
                    frag_n[w] += 1;
                }
                for w in 0..n {
                    if frag_n[w] > 0 {
                        sums[w] += frag_sum[w] / frag_n[w] as f64;
                        fragment_counts[w] += 1;
                        counts[w] += frag_n[w];
                    }
                }
            }
        }
    }

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (w, word) in wordset.words().iter().enumerate() {
        if counts[w] == 0 {
            skipped.push(word.clone());
            continue;
        }
        let denom = match opts.averaging {
            Averaging::PerOccurrence => counts[w],
            Averaging::PerFragment => fragment_counts[w],
        };
        entries.push(InferabilityEntry {
            word: word.clone(),
            mean_delta_p: sums[w] / denom as f64,
            occurrences: counts[w],
            low_confidence: counts[w] < opts.min_occurrences,
        });
    }
    sort_entries(&mut entries);
    if entries.is_empty() {
        log::warn!("no word of `{}` occurs in the corpus", wordset.name());
    }

    Ok(InferabilityReport {
        entries,
        skipped,
        corpus_id: corpus.name().to_string(),
        scorer_id: scorer.scorer_id(),
    })
}

pub(crate) fn sort_entries(entries: &mut [InferabilityEntry]) {
    entries.sort_by(|a, b| {
        b.mean_delta_p
            .total_cmp(&a.mean_delta_p)
            .then_with(|| a.word.cmp(&b.word))
    });
}

/// Top `level * step` words of the ranking.
pub fn level_set(
    report: &InferabilityReport,
    level: usize,
    step: usize,
) -> Result<Lexicon, InferabilityError> {
    let needed = level * step;
    if level == 0 || step == 0 || needed > report.entries.len() {
        return Err(InferabilityError::LevelOutOfRange {
            level,
            step,
            needed,
            available: report.entries.len(),
        });
    }
    let words = report.entries[..needed].iter().map(|e| e.word.as_str());
    Ok(Lexicon::new(format!("level-{level}"), words)?)
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    word: String,
    mean_delta_p: f64,
    occurrences: usize,
    flag: String,
}

const FLAG_OK: &str = "ok";
const FLAG_LOW: &str = "low_confidence";

impl InferabilityReport {
    /// `word,mean_delta_p,occurrences,flag`, one row per ranked word in rank order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), InferabilityError> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(CsvRow {
                word: e.word.clone(),
                mean_delta_p: e.mean_delta_p,
                occurrences: e.occurrences,
                flag: if e.low_confidence { FLAG_LOW } else { FLAG_OK }.to_string(),
            })?;
        }
        if self.entries.is_empty() {
            out.write_record(["word", "mean_delta_p", "occurrences", "flag"])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, corpus_id: &str) -> Result<Self, InferabilityError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            if !(-1.0..=1.0).contains(&row.mean_delta_p) || row.occurrences == 0 {
                return Err(InferabilityError::Format(format!(
                    "invalid row for `{}`",
                    row.word
                )));
            }
            entries.push(InferabilityEntry {
                word: row.word,
                mean_delta_p: row.mean_delta_p,
                occurrences: row.occurrences,
                low_confidence: row.flag == FLAG_LOW,
            });
        }
        let mut sorted = entries.clone();
        sort_entries(&mut sorted);
        if sorted != entries {
            return Err(InferabilityError::Format(
                "rows are not sorted by mean_delta_p descending".into(),
            ));
        }
        Ok(InferabilityReport {
            entries,
            skipped: Vec::new(),
            corpus_id: corpus_id.to_string(),
            scorer_id: "unknown".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmscore::{Candidates, MaskedQuery, ScoreDistribution};

    /// Puts 0.6 on "the", 0.4 on "a", regardless of context.
    struct Constant;

    impl MaskedScorer for Constant {
        fn scorer_id(&self) -> String {
            "constant".into()
        }

        fn predict(&self, _: &MaskedQuery, _: Candidates<'_>) -> Result<ScoreDistribution, LmError> {
            ScoreDistribution::new(vec![("a".into(), 0.4), ("the".into(), 0.6)])
        }
    }

    struct Failing;

    impl MaskedScorer for Failing {
        fn scorer_id(&self) -> String {
            "failing".into()
        }

        fn predict(&self, _: &MaskedQuery, _: Candidates<'_>) -> Result<ScoreDistribution, LmError> {
            Err(LmError::External("boom".into()))
        }
    }

    fn report(words: &[(&str, f64)]) -> InferabilityReport {
        let mut entries: Vec<InferabilityEntry> = words
            .iter()
            .map(|(w, m)| InferabilityEntry {
                word: w.to_string(),
                mean_delta_p: *m,
                occurrences: 20,
                low_confidence: false,
            })
            .collect();
        sort_entries(&mut entries);
        InferabilityReport {
            entries,
            skipped: vec![],
            corpus_id: "c".into(),
            scorer_id: "s".into(),
        }
    }

    #[test]
    fn absent_word_is_skipped() {
        let corpus = Corpus::from_texts("c", ["the cat sat", "the dog"]);
        let lex = Lexicon::new("t", ["the", "zebra"]).unwrap();
        let r = rank_terms(&corpus, &lex, &Constant, &RankOptions::default()).unwrap();
        assert_eq!(r.skipped, ["zebra"]);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].word, "the");
    }

    #[test]
    fn constant_scorer_mean_equals_single_value() {
        let corpus = Corpus::from_texts("c", vec!["the cat sat"; 5]);
        let lex = Lexicon::new("t", ["the"]).unwrap();
        let r = rank_terms(&corpus, &lex, &Constant, &RankOptions::default()).unwrap();
        assert_eq!(r.entries[0].occurrences, 5);
        assert!((r.entries[0].mean_delta_p - 0.2).abs() < 1e-12);
        assert!(r.entries[0].low_confidence);
    }

    #[test]
    fn nothing_found_gives_empty_entries() {
        let corpus = Corpus::from_texts("c", ["cat sat"]);
        let lex = Lexicon::new("t", ["the", "a"]).unwrap();
        let r = rank_terms(&corpus, &lex, &Constant, &RankOptions::default()).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.skipped, ["the", "a"]);
    }

    #[test]
    fn scorer_failure_names_fragment() {
        let corpus = Corpus::from_texts("c", ["cat sat", "the dog"]);
        let lex = Lexicon::new("t", ["the"]).unwrap();
        let err = rank_terms(&corpus, &lex, &Failing, &RankOptions::default()).unwrap_err();
        assert!(matches!(err, InferabilityError::Scorer { fragment: 1, .. }));
    }

    #[test]
    fn per_fragment_averaging() {
        struct ByLength;
        impl MaskedScorer for ByLength {
            fn scorer_id(&self) -> String {
                "len".into()
            }
            fn predict(&self, q: &MaskedQuery, _: Candidates<'_>) -> Result<ScoreDistribution, LmError> {
                let p = if q.context().len() > 3 { 1.0 } else { 0.0 };
                ScoreDistribution::new(vec![("the".into(), p)])
            }
        }
        // fragment 0: two occurrences with ΔP 1; fragment 1: one occurrence with ΔP 0
        let corpus = Corpus::from_texts("c", ["the x the y", "the z"]);
        let lex = Lexicon::new("t", ["the"]).unwrap();
        let occ = rank_terms(&corpus, &lex, &ByLength, &RankOptions::default()).unwrap();
        assert!((occ.entries[0].mean_delta_p - 2.0 / 3.0).abs() < 1e-12);
        let opts = RankOptions {
            averaging: Averaging::PerFragment,
            ..RankOptions::default()
        };
        let frag = rank_terms(&corpus, &lex, &ByLength, &opts).unwrap();
        assert!((frag.entries[0].mean_delta_p - 0.5).abs() < 1e-12);
        assert_eq!(frag.entries[0].occurrences, 3);
    }

    #[test]
    fn window_clips_context() {
        let seq = tokenize("a b c d e f g");
        let (ctx, pos) = window_around(&seq, 3, 2);
        assert_eq!(ctx.norms(), ["b", "c", "d", "e", "f"]);
        assert_eq!(pos, 2);
        let (ctx, pos) = window_around(&seq, 0, 64);
        assert_eq!(ctx.len(), 7);
        assert_eq!(pos, 0);
    }

    #[test]
    fn level_sets() {
        let words: Vec<(String, f64)> = (0..60).map(|i| (format!("w{i:02}"), 1.0 - i as f64 / 100.0)).collect();
        let refs: Vec<(&str, f64)> = words.iter().map(|(w, m)| (w.as_str(), *m)).collect();
        let r = report(&refs);
        let l1 = level_set(&r, 1, 5).unwrap();
        assert_eq!(l1.words(), ["w00", "w01", "w02", "w03", "w04"]);
        assert_eq!(l1.name(), "level-1");
        assert_eq!(level_set(&r, 5, 5).unwrap().len(), 25);
        assert!(matches!(
            level_set(&r, 13, 5),
            Err(InferabilityError::LevelOutOfRange { .. })
        ));
        assert!(level_set(&r, 0, 5).is_err());
        for k in 1..12 {
            let small = level_set(&r, k, 5).unwrap();
            let big = level_set(&r, k + 1, 5).unwrap();
            assert!(small.words().iter().all(|w| big.contains(w)));
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = report(&[("the", 0.9), ("a", 0.5), ("of", 0.5), ("and", -0.2)]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("word,mean_delta_p,occurrences,flag\nthe,0.9,20,ok\na,0.5"));
        let back = InferabilityReport::read_csv(&buf[..], "c").unwrap();
        assert_eq!(back.entries, r.entries);
    }

    #[test]
    fn csv_rejects_unsorted() {
        let text = "word,mean_delta_p,occurrences,flag\na,0.1,3,ok\nb,0.5,3,ok\n";
        assert!(InferabilityReport::read_csv(text.as_bytes(), "c").is_err());
    }
}
