//! Rebuilding full text from distilled text by inserting words from the term set.
//!
//! Candidate outputs are scored by the n-gram model's boundary-padded sequence
//! log-probability minus a fixed penalty per inserted word. [`reconstruct`] runs a
//! beam search over insertion patterns; [`exhaustive_reconstruct`] enumerates every
//! pattern and exists as a reference for testing the search.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmscore::{NGramModel, WordId};
use crate::parallel::with_workers;
use crate::textcore::{Lexicon, Token, TokenSeq};

#[derive(Debug, Error, PartialEq)]
pub enum ReconstructError {
    #[error("beam width must be at least 1")]
    ZeroBeamWidth,
    #[error("insertion penalty must be non-negative, got {0}")]
    InvalidPenalty(f64),
    #[error("search space of {size} patterns exceeds the limit of {max_states}")]
    SearchSpaceTooLarge { size: String, max_states: u128 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub beam_width: usize,
    pub max_consecutive_insertions: usize,
    /// Subtracted from the log-probability once per inserted word.
    pub insertion_penalty: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            beam_width: 8,
            max_consecutive_insertions: 2,
            insertion_penalty: 0.5,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), ReconstructError> {
        if self.beam_width == 0 {
            return Err(ReconstructError::ZeroBeamWidth);
        }
        if self.insertion_penalty.is_nan() || self.insertion_penalty < 0.0 {
            return Err(ReconstructError::InvalidPenalty(self.insertion_penalty));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub output: TokenSeq,
    /// Indices into `output`, ascending.
    pub inserted_positions: Vec<usize>,
    /// Penalized log-probability of `output`.
    pub score: f64,
}

impl Reconstruction {
    /// The output with every inserted token deleted.
    pub fn without_insertions(&self) -> TokenSeq {
        self.output
            .iter()
            .enumerate()
            .filter(|(i, _)| self.inserted_positions.binary_search(i).is_err())
            .map(|(_, t)| t.clone())
            .collect()
    }
}

/// Number of insertion patterns for `n_tokens` input tokens: each of the
/// `n_tokens + 1` gaps holds a word sequence of length `0..=max_consecutive`.
/// `None` on overflow.
pub fn insertion_pattern_count(n_tokens: usize, s_size: usize, max_consecutive: usize) -> Option<u128> {
    let mut per_gap: u128 = 0;
    let mut power: u128 = 1;
    for _ in 0..=max_consecutive {
        per_gap = per_gap.checked_add(power)?;
        power = power.saturating_mul(s_size as u128);
    }
    let mut total: u128 = 1;
    for _ in 0..=n_tokens {
        total = total.checked_mul(per_gap)?;
    }
    Some(total)
}

fn penalized(logprob: f64, insertions: usize, penalty: f64) -> f64 {
    if insertions == 0 {
        logprob
    } else {
        logprob - penalty * insertions as f64
    }
}

/// Preference between two finished or partial outputs: higher score, then fewer
/// insertions, then the lexicographically smaller sequence of normalized forms.
fn prefer(a: (f64, usize, &[Token]), b: (f64, usize, &[Token])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.iter().map(Token::norm).cmp(b.2.iter().map(Token::norm)))
}

struct Inserts {
    tokens: Vec<Token>,
    ids: Vec<WordId>,
}

impl Inserts {
    fn new(terms: &Lexicon, model: &NGramModel) -> Self {
        Inserts {
            tokens: terms.words().iter().map(Token::new).collect(),
            ids: terms.words().iter().map(|w| model.id_or_unknown(w)).collect(),
        }
    }
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<Token>,
    inserted: Vec<usize>,
    history: Vec<WordId>,
    logprob: f64,
}

impl Hyp {
    fn score(&self, penalty: f64) -> f64 {
        penalized(self.logprob, self.inserted.len(), penalty)
    }
}

fn finish(mut tokens: Vec<Token>, inserted: Vec<usize>, score: f64) -> Reconstruction {
    let lowercase_follows = tokens
        .get(1)
        .is_some_and(|t| t.surface().chars().next().is_some_and(char::is_lowercase));
    if inserted.first() == Some(&0) && lowercase_follows {
        tokens[0] = tokens[0].capitalized();
    }
    Reconstruction {
        output: TokenSeq::new(tokens),
        inserted_positions: inserted,
        score,
    }
}

#[derive(Clone, Copy)]
enum Piece {
    Input(usize),
    Insert(usize),
}

/// One output token and the node before it; hypotheses share prefixes.
struct Node {
    parent: Option<usize>,
    piece: Piece,
}

#[derive(Clone)]
struct Partial {
    node: Option<usize>,
    state: Vec<WordId>,
    inserted: usize,
    logprob: f64,
}

impl Partial {
    fn advance(&self, model: &NGramModel, id: WordId) -> (Vec<WordId>, f64) {
        let logprob = self.logprob + model.prob_ids(&self.state, id).ln();
        let mut state = Vec::with_capacity(self.state.len());
        if !self.state.is_empty() {
            state.extend_from_slice(&self.state[1..]);
            state.push(id);
        }
        (state, logprob)
    }
}

struct Search<'a> {
    distilled: &'a TokenSeq,
    inserts: &'a Inserts,
    model: &'a NGramModel,
    penalty: f64,
    nodes: Vec<Node>,
}

impl Search<'_> {
    fn push(&mut self, parent: Option<usize>, piece: Piece) -> usize {
        self.nodes.push(Node { parent, piece });
        self.nodes.len() - 1
    }

    fn pieces(&self, mut node: Option<usize>) -> Vec<Piece> {
        let mut out = Vec::new();
        while let Some(i) = node {
            out.push(self.nodes[i].piece);
            node = self.nodes[i].parent;
        }
        out.reverse();
        out
    }

    fn token(&self, piece: Piece) -> &Token {
        match piece {
            Piece::Input(i) => &self.distilled.tokens()[i],
            Piece::Insert(j) => &self.inserts.tokens[j],
        }
    }

    fn prefer(&self, a: &Partial, b: &Partial) -> Ordering {
        let sa = penalized(a.logprob, a.inserted, self.penalty);
        let sb = penalized(b.logprob, b.inserted, self.penalty);
        sb.total_cmp(&sa).then(a.inserted.cmp(&b.inserted)).then_with(|| {
            let (pa, pb) = (self.pieces(a.node), self.pieces(b.node));
            pa.iter()
                .map(|&p| self.token(p).norm())
                .cmp(pb.iter().map(|&p| self.token(p).norm()))
        })
    }

    /// Emits `hyp` followed by every insertion sequence of length `1..=max`
    /// after it, depth first, in the same order as [`extend_gap`].
    fn extend_gap(&mut self, hyp: &Partial, max: usize, emit: &mut dyn FnMut(&mut Self, &Partial)) {
        emit(self, hyp);
        if max == 0 {
            return;
        }
        for j in 0..self.inserts.ids.len() {
            let (state, logprob) = hyp.advance(self.model, self.inserts.ids[j]);
            let node = self.push(hyp.node, Piece::Insert(j));
            let h = Partial {
                node: Some(node),
                state,
                inserted: hyp.inserted + 1,
                logprob,
            };
            self.extend_gap(&h, max - 1, emit);
        }
    }

    fn finish(&self, best: &Partial) -> Reconstruction {
        let mut tokens = Vec::new();
        let mut inserted = Vec::new();
        for piece in self.pieces(best.node) {
            if let Piece::Insert(_) = piece {
                inserted.push(tokens.len());
            }
            tokens.push(self.token(piece).clone());
        }
        finish(tokens, inserted, penalized(best.logprob, best.inserted, self.penalty))
    }
}

/// Beam search over insertions of words from `terms` into `distilled`.
///
/// Before each input token and at the end, every hypothesis is extended by each
/// sequence of up to `max_consecutive_insertions` words. Hypotheses that end in the
/// same model state after an input token are merged, keeping the preferred one,
/// and the best `beam_width` survive.
pub fn reconstruct(
    distilled: &TokenSeq,
    terms: &(impl AsRef<Lexicon> + ?Sized),
    model: &NGramModel,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction, ReconstructError> {
    cfg.validate()?;
    let inserts = Inserts::new(terms.as_ref(), model);
    let input_ids = model.ids_of(distilled);
    let mut search = Search {
        distilled,
        inserts: &inserts,
        model,
        penalty: cfg.insertion_penalty,
        nodes: Vec::new(),
    };

    let mut beam = vec![Partial {
        node: None,
        state: vec![model.bos(); model.order() - 1],
        inserted: 0,
        logprob: 0.0,
    }];

    for step in 0..=distilled.len() {
        let next_id = input_ids.get(step).copied().unwrap_or_else(|| model.eos());
        let is_input = step < distilled.len();
        let mut expanded: Vec<Partial> = Vec::new();
        for hyp in &beam {
            search.extend_gap(hyp, cfg.max_consecutive_insertions, &mut |s: &mut Search, h: &Partial| {
                let (state, logprob) = h.advance(s.model, next_id);
                let node = if is_input { Some(s.push(h.node, Piece::Input(step))) } else { h.node };
                expanded.push(Partial {
                    node,
                    state,
                    inserted: h.inserted,
                    logprob,
                });
            });
        }

        let mut best_by_state: HashMap<Vec<WordId>, usize> = HashMap::new();
        let mut kept: Vec<Partial> = Vec::new();
        for h in expanded {
            match best_by_state.get(&h.state) {
                Some(&i) => {
                    if search.prefer(&h, &kept[i]) == Ordering::Less {
                        kept[i] = h;
                    }
                }
                None => {
                    best_by_state.insert(h.state.clone(), kept.len());
                    kept.push(h);
                }
            }
        }
        kept.sort_by(|a, b| search.prefer(a, b));
        kept.truncate(cfg.beam_width);
        beam = kept;
    }

    Ok(search.finish(&beam[0]))
}

/// Reconstructs many inputs in parallel; results keep input order.
pub fn reconstruct_batch(
    inputs: &[TokenSeq],
    terms: &Lexicon,
    model: &NGramModel,
    cfg: &ReconstructionConfig,
    workers: Option<usize>,
) -> Vec<Result<Reconstruction, ReconstructError>> {
    with_workers(workers, || {
        inputs
            .par_iter()
            .map(|seq| reconstruct(seq, terms, model, cfg))
            .collect()
    })
}

/// Calls `emit` for `hyp` followed by every insertion sequence of length
/// `0..=max` (the empty sequence first).
fn extend_gap(
    hyp: &Hyp,
    inserts: &Inserts,
    model: &NGramModel,
    max: usize,
    emit: &mut dyn FnMut(&Hyp),
) {
    emit(hyp);
    if max == 0 {
        return;
    }
    for (tok, &id) in inserts.tokens.iter().zip(&inserts.ids) {
        let mut h = hyp.clone();
        h.logprob += model.prob_ids(&h.history, id).ln();
        h.history.push(id);
        h.inserted.push(h.tokens.len());
        h.tokens.push(tok.clone());
        extend_gap(&h, inserts, model, max - 1, emit);
    }
}

/// Scores every legal insertion pattern and returns the best under the same
/// scoring and preference order as [`reconstruct`].
pub fn exhaustive_reconstruct(
    distilled: &TokenSeq,
    terms: &(impl AsRef<Lexicon> + ?Sized),
    model: &NGramModel,
    cfg: &ReconstructionConfig,
    max_states: u128,
) -> Result<Reconstruction, ReconstructError> {
    cfg.validate()?;
    let terms = terms.as_ref();
    let size = insertion_pattern_count(distilled.len(), terms.len(), cfg.max_consecutive_insertions);
    match size {
        Some(n) if n <= max_states => {}
        _ => {
            return Err(ReconstructError::SearchSpaceTooLarge {
                size: size.map_or_else(|| "more than 2^128".to_string(), |n| n.to_string()),
                max_states,
            })
        }
    }
    let inserts = Inserts::new(terms, model);
    let penalty = cfg.insertion_penalty;
    let mut best: Option<Hyp> = None;
    enumerate(
        distilled,
        &model.ids_of(distilled),
        &inserts,
        model,
        cfg.max_consecutive_insertions,
        &mut |h| {
            let better = best.as_ref().is_none_or(|b| {
                prefer(
                    (h.score(penalty), h.inserted.len(), &h.tokens),
                    (b.score(penalty), b.inserted.len(), &b.tokens),
                ) == Ordering::Less
            });
            if better {
                best = Some(h.clone());
            }
        },
    );
    let best = best.expect("at least the empty pattern is enumerated");
    let score = best.score(penalty);
    Ok(finish(best.tokens, best.inserted, score))
}

/// Visits every complete output (end marker scored) exactly once.
fn enumerate(
    distilled: &TokenSeq,
    input_ids: &[WordId],
    inserts: &Inserts,
    model: &NGramModel,
    max: usize,
    visit: &mut dyn FnMut(&Hyp),
) {
    #[allow(clippy::too_many_arguments)]
    fn go(
        step: usize,
        hyp: &Hyp,
        distilled: &TokenSeq,
        input_ids: &[WordId],
        inserts: &Inserts,
        model: &NGramModel,
        max: usize,
        visit: &mut dyn FnMut(&Hyp),
    ) {
        extend_gap(hyp, inserts, model, max, &mut |h: &Hyp| {
            let mut h = h.clone();
            match distilled.get(step) {
                Some(t) => {
                    h.logprob += model.prob_ids(&h.history, input_ids[step]).ln();
                    h.history.push(input_ids[step]);
                    h.tokens.push(t.clone());
                    go(step + 1, &h, distilled, input_ids, inserts, model, max, visit);
                }
                None => {
                    h.logprob += model.prob_ids(&h.history, model.eos()).ln();
                    visit(&h);
                }
            }
        });
    }
    let start = Hyp {
        tokens: Vec::new(),
        inserted: Vec::new(),
        history: vec![model.bos(); model.order() - 1],
        logprob: 0.0,
    };
    go(0, &start, distilled, input_ids, inserts, model, max, visit);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::{detokenize, tokenize, Corpus};

    fn lex(words: &[&str]) -> Lexicon {
        Lexicon::new("s", words.iter().copied()).unwrap()
    }

    fn marathon_model() -> NGramModel {
        let corpus = Corpus::from_texts("m", vec!["i went to the marathon in the city center"; 20]);
        NGramModel::train(&corpus, 3, 0.01).unwrap()
    }

    fn check_invariants(input: &TokenSeq, r: &Reconstruction, s: &Lexicon) {
        assert_eq!(&r.without_insertions(), input);
        for &p in &r.inserted_positions {
            assert!(s.contains(r.output.tokens()[p].norm()));
        }
    }

    #[test]
    fn empty_term_set_is_identity() {
        let m = marathon_model();
        let input = tokenize("went marathon city center");
        let r = reconstruct(&input, &lex(&[]), &m, &ReconstructionConfig::default()).unwrap();
        assert_eq!(r.output, input);
        assert!(r.inserted_positions.is_empty());
        assert_eq!(r.score, m.score_with_boundaries(&input).logprob);
    }

    #[test]
    fn recovers_memorized_sentence() {
        let m = marathon_model();
        let s = lex(&["i", "to", "the", "in"]);
        let input = tokenize("went marathon city center");
        let cfg = ReconstructionConfig {
            beam_width: 32,
            ..Default::default()
        };
        let r = reconstruct(&input, &s, &m, &cfg).unwrap();
        assert_eq!(detokenize(&r.output), "I went to the marathon in the city center");
        assert_eq!(r.inserted_positions, [0, 2, 3, 5, 6]);
        check_invariants(&input, &r, &s);
        let ex = exhaustive_reconstruct(&input, &s, &m, &cfg, 10_000_000).unwrap();
        assert_eq!(ex, r);
    }

    #[test]
    fn infinite_penalty_is_identity() {
        let m = marathon_model();
        let input = tokenize("went marathon city center");
        let cfg = ReconstructionConfig {
            insertion_penalty: f64::INFINITY,
            ..Default::default()
        };
        let r = reconstruct(&input, &lex(&["i", "to", "the", "in"]), &m, &cfg).unwrap();
        assert_eq!(r.output, input);
        assert!(r.inserted_positions.is_empty());
    }

    #[test]
    fn empty_input() {
        let corpus = Corpus::from_texts("t", ["the", "the", "the", "cat"]);
        let m = NGramModel::train(&corpus, 3, 0.5).unwrap();
        let cfg = ReconstructionConfig::default();
        let s = lex(&["the"]);
        let r = reconstruct(&TokenSeq::default(), &s, &m, &cfg).unwrap();
        let candidates = ["", "the", "the the"].map(|t| {
            let seq = tokenize(t);
            let lp = m.score_with_boundaries(&seq).logprob;
            (penalized(lp, seq.len(), 0.5), seq)
        });
        let best = candidates
            .iter()
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.len().cmp(&a.1.len())))
            .unwrap();
        assert_eq!(r.score, best.0);
        assert_eq!(r.output.norms(), best.1.norms());
        assert_eq!(exhaustive_reconstruct(&TokenSeq::default(), &s, &m, &cfg, 10).unwrap(), r);
    }

    #[test]
    fn pattern_count_matches_enumeration() {
        let m = marathon_model();
        let s = lex(&["the", "to", "in"]);
        let input = tokenize("went marathon city center");
        let inserts = Inserts::new(&s, &m);
        let mut n: u128 = 0;
        enumerate(&input, &m.ids_of(&input), &inserts, &m, 2, &mut |_| n += 1);
        assert_eq!(n, 371_293);
        assert_eq!(insertion_pattern_count(4, 3, 2), Some(371_293));
        assert_eq!(insertion_pattern_count(0, 1, 2), Some(3));
        assert_eq!(insertion_pattern_count(3, 5, 0), Some(1));
    }

    #[test]
    fn exhaustive_refuses_large_spaces() {
        let m = marathon_model();
        let input = tokenize("went marathon city center");
        let err = exhaustive_reconstruct(&input, &lex(&["the", "to", "in"]), &m, &Default::default(), 1000)
            .unwrap_err();
        assert!(matches!(err, ReconstructError::SearchSpaceTooLarge { .. }));
    }

    #[test]
    fn score_equals_rescored_output() {
        let m = marathon_model();
        let input = tokenize("went marathon city center");
        let r = reconstruct(&input, &lex(&["the", "to"]), &m, &Default::default()).unwrap();
        let lp = m.score_with_boundaries(&r.output).logprob;
        assert_eq!(r.score, penalized(lp, r.inserted_positions.len(), 0.5));
    }

    #[test]
    fn capitalizes_only_leading_insertion() {
        let m = marathon_model();
        let s = lex(&["i"]);
        let r = reconstruct(&tokenize("went"), &s, &m, &Default::default()).unwrap();
        assert_eq!(detokenize(&r.output), "I went");
        let r = reconstruct(&tokenize("Went"), &s, &m, &Default::default()).unwrap();
        assert_eq!(r.output.tokens()[0].surface(), "i");
    }

    #[test]
    fn rejects_bad_config() {
        let m = marathon_model();
        let zero = ReconstructionConfig {
            beam_width: 0,
            ..Default::default()
        };
        assert_eq!(
            reconstruct(&TokenSeq::default(), &lex(&[]), &m, &zero).unwrap_err(),
            ReconstructError::ZeroBeamWidth
        );
        let neg = ReconstructionConfig {
            insertion_penalty: -1.0,
            ..Default::default()
        };
        assert!(reconstruct(&TokenSeq::default(), &lex(&[]), &m, &neg).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const VOCAB: &[&str] = &["the", "a", "of", "cat", "dog", "runs", "sees", "and"];

        fn model_from(sentences: &[Vec<&str>]) -> NGramModel {
            let texts: Vec<String> = sentences.iter().map(|s| s.join(" ")).collect();
            NGramModel::train(&Corpus::from_texts("p", texts), 3, 0.1).unwrap()
        }

        fn instance() -> impl Strategy<Value = (Vec<Vec<&'static str>>, Vec<&'static str>, Vec<&'static str>)> {
            (
                prop::collection::vec(prop::collection::vec(prop::sample::select(VOCAB), 1..8), 1..6),
                prop::collection::vec(prop::sample::select(VOCAB), 0..4),
                prop::sample::subsequence(vec!["the", "a", "of", "and", "cat"], 1..5),
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn beam_invariants_and_oracle((train, input, s) in instance(), width in 1usize..5) {
                let m = model_from(&train);
                let s = lex(&s);
                let input = TokenSeq::from_words(&input);
                let cfg = ReconstructionConfig { beam_width: width, ..Default::default() };
                let r = reconstruct(&input, &s, &m, &cfg).unwrap();
                check_invariants(&input, &r, &s);
                let wide = ReconstructionConfig { beam_width: s.len() + 1, ..cfg.clone() };
                let exact = reconstruct(&input, &s, &m, &wide).unwrap();
                let ex = exhaustive_reconstruct(&input, &s, &m, &wide, 1_000_000).unwrap();
                prop_assert_eq!(&exact, &ex);
                prop_assert!(r.score <= ex.score);
            }

            #[test]
            fn wider_beam_never_scores_lower((train, input, s) in instance(), width in 1usize..4) {
                let m = model_from(&train);
                let s = lex(&s);
                let input = TokenSeq::from_words(&input);
                let narrow = ReconstructionConfig { beam_width: width, ..Default::default() };
                let wider = ReconstructionConfig { beam_width: width + 1, ..Default::default() };
                let a = reconstruct(&input, &s, &m, &narrow).unwrap();
                let b = reconstruct(&input, &s, &m, &wider).unwrap();
                prop_assert!(b.score >= a.score);
            }
        }
    }
}
