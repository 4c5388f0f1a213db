use serde::{Deserialize, Serialize};

use crate::textcore::{Lexicon, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Match,
    Omission,
    Insertion,
    Substitution,
}

/// One alignment column. Words are normalized forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub original_word: Option<String>,
    pub reconstructed_word: Option<String>,
}

impl AlignmentOp {
    fn pair(a: &str, b: &str) -> Self {
        AlignmentOp {
            kind: if a == b { OpKind::Match } else { OpKind::Substitution },
            original_word: Some(a.to_string()),
            reconstructed_word: Some(b.to_string()),
        }
    }

    fn omission(a: &str) -> Self {
        AlignmentOp {
            kind: OpKind::Omission,
            original_word: Some(a.to_string()),
            reconstructed_word: None,
        }
    }

    fn insertion(b: &str) -> Self {
        AlignmentOp {
            kind: OpKind::Insertion,
            original_word: None,
            reconstructed_word: Some(b.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NwScoring {
    pub match_score: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for NwScoring {
    fn default() -> Self {
        NwScoring {
            match_score: 1,
            mismatch: -1,
            gap: -1,
        }
    }
}

impl NwScoring {
    pub fn score_ops(&self, ops: &[AlignmentOp]) -> i64 {
        ops.iter()
            .map(|op| match op.kind {
                OpKind::Match => self.match_score,
                OpKind::Substitution => self.mismatch,
                OpKind::Omission | OpKind::Insertion => self.gap,
            })
            .sum()
    }
}

/// Needleman-Wunsch global alignment of two word sequences.
///
/// Among optimal alignments the traceback (run from the end) prefers a diagonal
/// step, then a gap in `b` (omission), then a gap in `a` (insertion).
pub fn nw_align<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B], scoring: &NwScoring) -> Vec<AlignmentOp> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut dp = vec![0i64; (n + 1) * w];
    for i in 1..=n {
        dp[i * w] = dp[(i - 1) * w] + scoring.gap;
    }
    for j in 1..=m {
        dp[j] = dp[j - 1] + scoring.gap;
    }
    let sub = |i: usize, j: usize| {
        if a[i].as_ref() == b[j].as_ref() {
            scoring.match_score
        } else {
            scoring.mismatch
        }
    };
    for i in 1..=n {
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + sub(i - 1, j - 1);
            let up = dp[(i - 1) * w + j] + scoring.gap;
            let left = dp[i * w + j - 1] + scoring.gap;
            dp[i * w + j] = diag.max(up).max(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * w + j - 1] + sub(i - 1, j - 1) {
            ops.push(AlignmentOp::pair(a[i - 1].as_ref(), b[j - 1].as_ref()));
            i -= 1;
            j -= 1;
        } else if i > 0 && here == dp[(i - 1) * w + j] + scoring.gap {
            ops.push(AlignmentOp::omission(a[i - 1].as_ref()));
            i -= 1;
        } else {
            ops.push(AlignmentOp::insertion(b[j - 1].as_ref()));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ThetaCounts {
    pub fn from_ops(ops: &[AlignmentOp]) -> Self {
        let count = |k: OpKind| ops.iter().filter(|o| o.kind == k).count();
        let subs = count(OpKind::Substitution);
        Self::from_counts(
            count(OpKind::Match),
            count(OpKind::Insertion) + subs,
            count(OpKind::Omission) + subs,
        )
    }

    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ThetaCounts {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Aligns the full token sequences and keeps only the columns that involve a
/// lexicon word on either side.
///
/// A kept column pairing two lexicon words is a match or substitution. A lexicon
/// word facing a gap or a non-lexicon word counts as an omission (original side)
/// or an insertion (reconstructed side).
pub fn theta_alignment(
    original: &TokenSeq,
    reconstructed: &TokenSeq,
    lexicon: &Lexicon,
    scoring: &NwScoring,
) -> Vec<AlignmentOp> {
    let ops = nw_align(&original.norms(), &reconstructed.norms(), scoring);
    let mut out = Vec::new();
    for op in ops {
        let a = op.original_word.as_deref().filter(|w| lexicon.contains(w));
        let b = op.reconstructed_word.as_deref().filter(|w| lexicon.contains(w));
        match (a, b) {
            (Some(a), Some(b)) => out.push(AlignmentOp::pair(a, b)),
            (Some(a), None) => out.push(AlignmentOp::omission(a)),
            (None, Some(b)) => out.push(AlignmentOp::insertion(b)),
            (None, None) => {}
        }
    }
    out
}

/// Precision, recall and F1 over lexicon-word positions.
pub fn theta_metrics(original: &TokenSeq, reconstructed: &TokenSeq, lexicon: &Lexicon) -> ThetaCounts {
    ThetaCounts::from_ops(&theta_alignment(original, reconstructed, lexicon, &NwScoring::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::tokenize;
    use proptest::prelude::*;

    fn kinds(ops: &[AlignmentOp]) -> Vec<OpKind> {
        ops.iter().map(|o| o.kind).collect()
    }

    /// Best score over every global alignment, by plain recursion.
    fn brute_force(a: &[&str], b: &[&str], s: &NwScoring) -> i64 {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0,
            (Some(_), None) => s.gap * a.len() as i64,
            (None, Some(_)) => s.gap * b.len() as i64,
            (Some((x, ra)), Some((y, rb))) => {
                let d = if x == y { s.match_score } else { s.mismatch };
                (d + brute_force(ra, rb, s))
                    .max(s.gap + brute_force(ra, b, s))
                    .max(s.gap + brute_force(a, rb, s))
            }
        }
    }

    fn lexicon() -> Lexicon {
        Lexicon::new("articles", ["the", "a", "an", "of"]).unwrap()
    }

    #[test]
    fn worked_sentence_pair() {
        let a = tokenize("The history of art is the fascinating subject of human culture.");
        let b = tokenize("History of the art is a fascinating subject of human culture.");
        let ops = theta_alignment(&a, &b, &lexicon(), &NwScoring::default());
        use OpKind::*;
        assert_eq!(kinds(&ops), [Omission, Match, Insertion, Substitution, Match]);
        assert_eq!(ops[3].original_word.as_deref(), Some("the"));
        assert_eq!(ops[3].reconstructed_word.as_deref(), Some("a"));
        let t = theta_metrics(&a, &b, &lexicon());
        assert_eq!((t.tp, t.fp, t.fn_), (2, 2, 2));
        assert_eq!((t.precision, t.recall, t.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn filtered_sequences_have_a_better_alignment_than_the_listed_row() {
        let a = ["the", "of", "the", "of"];
        let b = ["of", "the", "a", "of"];
        let s = NwScoring::default();
        let ops = nw_align(&a, &b, &s);
        assert_eq!(s.score_ops(&ops), brute_force(&a, &b, &s));
        use OpKind::*;
        assert_eq!(kinds(&ops), [Omission, Match, Match, Insertion, Match]);
        let listed = [
            AlignmentOp::omission("the"),
            AlignmentOp::pair("of", "of"),
            AlignmentOp::insertion("the"),
            AlignmentOp::pair("the", "a"),
            AlignmentOp::pair("of", "of"),
        ];
        assert!(s.score_ops(&listed) < s.score_ops(&ops));
    }

    #[test]
    fn identical_is_all_match() {
        let a = ["x", "y", "z"];
        assert!(nw_align(&a, &a, &NwScoring::default()).iter().all(|o| o.kind == OpKind::Match));
        assert!(nw_align::<&str, &str>(&[], &[], &NwScoring::default()).is_empty());
    }

    #[test]
    fn theta_conventions() {
        let lex = lexicon();
        let orig = tokenize("the cat of the town");
        let t = theta_metrics(&orig, &orig, &lex);
        assert_eq!((t.precision, t.recall, t.f1), (1.0, 1.0, 1.0));
        let stripped = tokenize("cat town");
        let t = theta_metrics(&orig, &stripped, &lex);
        assert_eq!((t.tp, t.fp, t.fn_), (0, 0, 3));
        assert_eq!((t.precision, t.recall, t.f1), (1.0, 0.0, 0.0));
        let none = tokenize("cat town");
        let t = theta_metrics(&none, &none, &lex);
        assert_eq!((t.precision, t.recall), (1.0, 1.0));
    }

    #[test]
    fn lexicon_word_facing_other_word_is_split() {
        let lex = lexicon();
        let t = theta_alignment(&tokenize("x the y"), &tokenize("x big y"), &lex, &NwScoring::default());
        assert_eq!(kinds(&t), [OpKind::Omission]);
    }

    fn seq() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(&["a", "b", "c", "d"][..]), 0..=8)
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(a in seq(), b in seq()) {
            let s = NwScoring::default();
            let ops = nw_align(&a, &b, &s);
            prop_assert_eq!(s.score_ops(&ops), brute_force(&a, &b, &s));
            let count = |k: OpKind| ops.iter().filter(|o| o.kind == k).count();
            let (mt, sb, om, ins) = (count(OpKind::Match), count(OpKind::Substitution), count(OpKind::Omission), count(OpKind::Insertion));
            prop_assert_eq!(a.len(), mt + sb + om);
            prop_assert_eq!(b.len(), mt + sb + ins);
            let left: Vec<&str> = ops.iter().filter_map(|o| o.original_word.as_deref()).collect();
            let right: Vec<&str> = ops.iter().filter_map(|o| o.reconstructed_word.as_deref()).collect();
            prop_assert_eq!(left, a.clone());
            prop_assert_eq!(right, b.clone());
            for o in &ops {
                if o.kind == OpKind::Match {
                    prop_assert_eq!(&o.original_word, &o.reconstructed_word);
                }
            }
        }

        #[test]
        fn theta_bounds(a in seq(), b in seq()) {
            let lex = Lexicon::new("l", ["a", "b"]).unwrap();
            let t = theta_metrics(&TokenSeq::from_words(&a), &TokenSeq::from_words(&b), &lex);
            for v in [t.precision, t.recall, t.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if t.precision > 0.0 && t.recall > 0.0 {
                let lo = t.precision.min(t.recall);
                let hi = t.precision.max(t.recall);
                prop_assert!(t.f1 >= lo - 1e-12 && t.f1 <= hi + 1e-12);
            }
        }
    }
}
