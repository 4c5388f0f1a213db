//! Removing inferable terms from text and producing (original, distilled) pairs.

mod prompt;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textcore::{detokenize, tokenize, Corpus, Lexicon, Token, TokenSeq};

pub use prompt::{build_prompt, PromptTemplate, QUESTION_PLACEHOLDER, TERMS_PLACEHOLDER};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("term set is empty")]
    EmptyTermSet,
    #[error("original text is empty")]
    EmptyOriginal,
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("unresolved placeholder `{{{0}}}` in template")]
    UnresolvedPlaceholder(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("pair {id}: {message}")]
    InconsistentPair { id: usize, message: String },
    #[error("pairs file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TermSource {
    Manual,
    Report { report_id: String, level: usize },
}

/// The words a generator is asked to omit and a reconstructor may put back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSet {
    lexicon: Lexicon,
    source: TermSource,
}

impl TermSet {
    pub fn new(lexicon: Lexicon, source: TermSource) -> Result<Self, DistillError> {
        if lexicon.is_empty() {
            return Err(DistillError::EmptyTermSet);
        }
        Ok(TermSet { lexicon, source })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn source(&self) -> &TermSource {
        &self.source
    }
}

impl AsRef<Lexicon> for TermSet {
    fn as_ref(&self) -> &Lexicon {
        &self.lexicon
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistilledPair {
    pub original: TokenSeq,
    pub distilled: TokenSeq,
    /// Indices into `original`, ascending.
    pub removed_positions: Vec<usize>,
}

impl DistilledPair {
    /// Puts every removed token back where it was.
    pub fn reinsert(&self) -> TokenSeq {
        let mut out = Vec::with_capacity(self.original.len());
        let mut kept = self.distilled.iter();
        let mut removed = self.removed_positions.iter().peekable();
        for pos in 0..self.original.len() {
            if removed.peek() == Some(&&pos) {
                removed.next();
                out.push(self.original.tokens()[pos].clone());
            } else if let Some(t) = kept.next() {
                out.push(t.clone());
            }
        }
        TokenSeq::new(out)
    }

    pub fn saved_tokens(&self) -> usize {
        self.original.len() - self.distilled.len()
    }
}

/// Drops every token whose normalized form is in `terms`; kept surfaces are untouched.
pub fn distill_seq(seq: &TokenSeq, terms: &(impl AsRef<Lexicon> + ?Sized)) -> DistilledPair {
    let lex = terms.as_ref();
    let mut kept: Vec<Token> = Vec::with_capacity(seq.len());
    let mut removed = Vec::new();
    for (i, t) in seq.iter().enumerate() {
        if lex.contains(t.norm()) {
            removed.push(i);
        } else {
            kept.push(t.clone());
        }
    }
    DistilledPair {
        original: seq.clone(),
        distilled: TokenSeq::new(kept),
        removed_positions: removed,
    }
}

/// Percentage of original tokens (words and punctuation) that were removed.
pub fn saved_tokens_pct(pair: &DistilledPair) -> Result<f64, DistillError> {
    if pair.original.is_empty() {
        return Err(DistillError::EmptyOriginal);
    }
    Ok(100.0 * pair.saved_tokens() as f64 / pair.original.len() as f64)
}

/// Same percentage with punctuation left out of both counts.
pub fn saved_tokens_pct_words_only(pair: &DistilledPair) -> Result<f64, DistillError> {
    let orig = pair.original.word_count();
    if orig == 0 {
        return Err(DistillError::EmptyOriginal);
    }
    let dist = pair.distilled.word_count();
    Ok(100.0 * (orig - dist) as f64 / orig as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id: usize,
    pub pair: DistilledPair,
    pub no_removal: bool,
}

/// One pair per fragment, in fragment order.
pub fn make_pairs<'a>(
    corpus: &'a Corpus,
    terms: &'a (impl AsRef<Lexicon> + ?Sized),
) -> impl Iterator<Item = PairRecord> + 'a {
    corpus.iter().map(move |frag| {
        let pair = distill_seq(&tokenize(&frag.text), terms);
        PairRecord {
            id: frag.id,
            no_removal: pair.removed_positions.is_empty(),
            pair,
        }
    })
}

/// One line of the pairs JSONL file. The reconstruction fields are filled by the
/// batch reconstructor and absent before that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLine {
    pub id: usize,
    pub original: String,
    pub distilled: String,
    pub removed_positions: Vec<usize>,
    pub saved_pct: Option<f64>,
    pub saved_pct_words_only: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstructed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_positions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl PairLine {
    pub fn from_record(rec: &PairRecord) -> Self {
        PairLine {
            id: rec.id,
            original: detokenize(&rec.pair.original),
            distilled: detokenize(&rec.pair.distilled),
            removed_positions: rec.pair.removed_positions.clone(),
            saved_pct: saved_tokens_pct(&rec.pair).ok(),
            saved_pct_words_only: saved_tokens_pct_words_only(&rec.pair).ok(),
            reconstructed: None,
            inserted_positions: None,
            score: None,
        }
    }

    /// Re-tokenizes both texts and checks that the removal record is consistent.
    pub fn to_pair(&self) -> Result<DistilledPair, DistillError> {
        let original = tokenize(&self.original);
        let distilled = tokenize(&self.distilled);
        let bad = |message: String| DistillError::InconsistentPair { id: self.id, message };
        if self.removed_positions.windows(2).any(|w| w[0] >= w[1])
            || self.removed_positions.iter().any(|&p| p >= original.len())
        {
            return Err(bad("removed_positions out of range or unsorted".into()));
        }
        let expected: Vec<&Token> = original
            .iter()
            .enumerate()
            .filter(|(i, _)| self.removed_positions.binary_search(i).is_err())
            .map(|(_, t)| t)
            .collect();
        if expected.len() != distilled.len() || expected.iter().zip(distilled.iter()).any(|(a, b)| *a != b) {
            return Err(bad("distilled text is not the original minus removed positions".into()));
        }
        Ok(DistilledPair {
            original,
            distilled,
            removed_positions: self.removed_positions.clone(),
        })
    }
}

pub fn write_pairs_jsonl<'a, W: Write>(
    mut w: W,
    lines: impl IntoIterator<Item = &'a PairLine>,
) -> Result<(), DistillError> {
    for line in lines {
        serde_json::to_writer(&mut w, line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<PairLine>, DistillError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DistillError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::count_lexicon_terms;

    fn lex(words: &[&str]) -> Lexicon {
        Lexicon::new("s", words.iter().copied()).unwrap()
    }

    #[test]
    fn marathon_example() {
        let seq = tokenize("I went to the marathon in the city center");
        let pair = distill_seq(&seq, &lex(&["i", "to", "the", "in"]));
        assert_eq!(detokenize(&pair.distilled), "went marathon city center");
        assert_eq!(pair.removed_positions, [0, 2, 3, 5, 6]);
    }

    #[test]
    fn disjoint_set_is_noop() {
        let seq = tokenize("cats chase mice.");
        let pair = distill_seq(&seq, &lex(&["the"]));
        assert_eq!(pair.distilled, seq);
        assert!(pair.removed_positions.is_empty());
        assert_eq!(saved_tokens_pct(&pair).unwrap(), 0.0);
    }

    #[test]
    fn total_removal() {
        let pair = distill_seq(&tokenize("the the the"), &lex(&["the"]));
        assert!(pair.distilled.is_empty());
        assert_eq!(pair.removed_positions.len(), 3);
        assert_eq!(saved_tokens_pct(&pair).unwrap(), 100.0);
    }

    #[test]
    fn no_recapitalization() {
        let pair = distill_seq(&tokenize("The cat"), &lex(&["the"]));
        assert_eq!(detokenize(&pair.distilled), "cat");
    }

    #[test]
    fn saved_pct_with_and_without_punctuation() {
        // 9 words + final period; 4 of the words removed
        let seq = tokenize("I went to the marathon in the city center.");
        assert_eq!(seq.len(), 10);
        let pair = distill_seq(&seq, &lex(&["to", "the", "in"]));
        assert_eq!(pair.saved_tokens(), 4);
        assert!((saved_tokens_pct(&pair).unwrap() - 40.0).abs() < 1e-12);
        assert!((saved_tokens_pct_words_only(&pair).unwrap() - 400.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_original_errors() {
        let pair = distill_seq(&TokenSeq::default(), &lex(&["the"]));
        assert!(matches!(saved_tokens_pct(&pair), Err(DistillError::EmptyOriginal)));
    }

    #[test]
    fn term_set_must_be_non_empty() {
        let empty = Lexicon::new("e", Vec::<String>::new()).unwrap();
        assert!(matches!(
            TermSet::new(empty, TermSource::Manual),
            Err(DistillError::EmptyTermSet)
        ));
    }

    #[test]
    fn pairs_in_fragment_order_with_flags() {
        let corpus = Corpus::from_texts("c", ["the cat", "dogs bark", "a bird and the sky"]);
        let s = lex(&["the", "a", "and"]);
        let recs: Vec<PairRecord> = make_pairs(&corpus, &s).collect();
        assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(recs.iter().map(|r| r.no_removal).collect::<Vec<_>>(), [false, true, false]);
    }

    #[test]
    fn jsonl_round_trip() {
        let corpus = Corpus::from_texts("c", ["The cat sat on the mat.", "Nothing here"]);
        let s = lex(&["the", "on"]);
        let lines: Vec<PairLine> = make_pairs(&corpus, &s).map(|r| PairLine::from_record(&r)).collect();
        let mut buf = Vec::new();
        write_pairs_jsonl(&mut buf, &lines).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"id":0,"original":"The cat sat on the mat.","distilled":"cat sat mat.","removed_positions":[0,3,4],"saved_pct":42.857142857142854"#));
        let back = read_pairs_jsonl(&buf[..]).unwrap();
        assert_eq!(back, lines);
        let pair = back[0].to_pair().unwrap();
        assert_eq!(detokenize(&pair.reinsert()), "The cat sat on the mat.");
    }

    #[test]
    fn inconsistent_pair_rejected() {
        let line = PairLine {
            id: 7,
            original: "the cat".into(),
            distilled: "dog".into(),
            removed_positions: vec![0],
            saved_pct: None,
            saved_pct_words_only: None,
            reconstructed: None,
            inserted_positions: None,
            score: None,
        };
        assert!(matches!(line.to_pair(), Err(DistillError::InconsistentPair { id: 7, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const WORDS: &[&str] = &["the", "a", "of", "cat", "dog", "runs", "and", "The", ",", "."];

        fn text() -> impl Strategy<Value = String> {
            prop::collection::vec(prop::sample::select(WORDS), 0..20).prop_map(|w| w.join(" "))
        }

        fn subset() -> impl Strategy<Value = Vec<&'static str>> {
            prop::sample::subsequence(vec!["the", "a", "of", "and", "cat"], 0..5)
        }

        proptest! {
            #[test]
            fn distillation_invariants(t in text(), small in subset(), extra in subset()) {
                let seq = tokenize(&t);
                let s = lex(&small);
                let pair = distill_seq(&seq, &s);
                prop_assert_eq!(count_lexicon_terms(&pair.distilled, &s), 0);
                prop_assert!(distill_seq(&pair.distilled, &s).removed_positions.is_empty());
                prop_assert_eq!(pair.reinsert(), seq.clone());
                for &p in &pair.removed_positions {
                    prop_assert!(s.contains(seq.tokens()[p].norm()));
                }
                let big = lex(&small.iter().chain(&extra).copied().collect::<Vec<_>>());
                if !seq.is_empty() {
                    let a = saved_tokens_pct(&pair).unwrap();
                    let b = saved_tokens_pct(&distill_seq(&seq, &big)).unwrap();
                    prop_assert!(b >= a);
                    prop_assert!((0.0..=100.0).contains(&a));
                }
            }
        }
    }
}
