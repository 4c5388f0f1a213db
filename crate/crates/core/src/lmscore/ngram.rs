use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::{Candidates, LmError, MaskedQuery, MaskedScorer, ScoreDistribution};
use crate::textcore::{tokenize, Corpus, TokenSeq};

pub type WordId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MODEL_FORMAT: &str = "trimkit-ngram";
pub const MODEL_VERSION: u32 = 1;

/// Id used for words outside the vocabulary. Never stored in a table.
const UNKNOWN: WordId = WordId::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: FxHashMap<WordId, u64>,
}

impl ContextCounts {
    fn count(&self, w: WordId) -> u64 {
        self.next.get(&w).copied().unwrap_or(0)
    }
}

/// Add-k smoothed n-gram model over normalized tokens.
///
/// `tables[n]` holds every context of length `n` (0 ≤ n < order) seen in training
/// together with its continuation counts. A query uses the longest suffix of its
/// history that was observed as a context.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    vocab: Vec<String>,
    ids: FxHashMap<String, WordId>,
    tables: Vec<FxHashMap<Box<[WordId]>, ContextCounts>>,
    candidate_ids: Vec<WordId>,
    bos: WordId,
    eos: WordId,
}

/// Log-probability of a sequence including its end boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    pub logprob: f64,
    pub perplexity: f64,
    /// Number of predicted positions (tokens plus the end marker).
    pub predicted: usize,
}

impl NGramModel {
    pub fn train(corpus: &Corpus, order: usize, smoothing_k: f64) -> Result<Self, LmError> {
        let seqs: Vec<TokenSeq> = corpus.iter().map(|p| tokenize(&p.text)).collect();
        Self::train_sequences(&seqs, order, smoothing_k)
    }

    pub fn train_sequences(
        seqs: &[TokenSeq],
        order: usize,
        smoothing_k: f64,
    ) -> Result<Self, LmError> {
        if order < 2 {
            return Err(LmError::InvalidOrder(order));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(LmError::InvalidSmoothing(smoothing_k));
        }
        if seqs.iter().all(TokenSeq::is_empty) {
            return Err(LmError::EmptyCorpus);
        }

        let mut words: BTreeSet<&str> = BTreeSet::new();
        words.insert(BOS);
        words.insert(EOS);
        for seq in seqs {
            words.extend(seq.iter().map(|t| t.norm()));
        }
        let vocab: Vec<String> = words.into_iter().map(str::to_string).collect();
        let mut model = Self::with_vocab(order, smoothing_k, vocab);

        let mut padded: Vec<WordId> = Vec::new();
        for seq in seqs.iter().filter(|s| !s.is_empty()) {
            padded.clear();
            padded.extend(std::iter::repeat_n(model.bos, order - 1));
            padded.extend(seq.iter().map(|t| model.ids[t.norm()]));
            padded.push(model.eos);
            for i in (order - 1)..padded.len() {
                let w = padded[i];
                for len in 0..order {
                    let ctx = &padded[i - len..i];
                    let table = &mut model.tables[len];
                    let cc = match table.get_mut(ctx) {
                        Some(cc) => cc,
                        None => table.entry(ctx.into()).or_default(),
                    };
                    cc.total += 1;
                    *cc.next.entry(w).or_insert(0) += 1;
                }
            }
        }
        Ok(model)
    }

    fn with_vocab(order: usize, smoothing_k: f64, vocab: Vec<String>) -> Self {
        let ids: FxHashMap<String, WordId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        let bos = ids[BOS];
        let eos = ids[EOS];
        let candidate_ids = (0..vocab.len() as WordId)
            .filter(|&i| i != bos && i != eos)
            .collect();
        NGramModel {
            order,
            smoothing_k,
            vocab,
            ids,
            tables: vec![FxHashMap::default(); order],
            candidate_ids,
            bos,
            eos,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// Sorted vocabulary, boundary markers included.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn word_id(&self, norm: &str) -> Option<WordId> {
        self.ids.get(norm).copied()
    }

    /// Id for `norm`, or the out-of-vocabulary id.
    pub fn id_or_unknown(&self, norm: &str) -> WordId {
        self.word_id(norm).unwrap_or(UNKNOWN)
    }

    pub fn bos(&self) -> WordId {
        self.bos
    }

    pub fn eos(&self) -> WordId {
        self.eos
    }

    pub fn ids_of(&self, seq: &TokenSeq) -> Vec<WordId> {
        seq.iter().map(|t| self.id_or_unknown(t.norm())).collect()
    }

    fn resolve(&self, history: &[WordId]) -> &ContextCounts {
        let max = (self.order - 1).min(history.len());
        for len in (1..=max).rev() {
            if let Some(cc) = self.tables[len].get(&history[history.len() - len..]) {
                return cc;
            }
        }
        &self.tables[0][&[][..]]
    }

    fn smoothed(&self, cc: &ContextCounts, w: WordId) -> f64 {
        (cc.count(w) as f64 + self.smoothing_k)
            / (cc.total as f64 + self.smoothing_k * self.vocab.len() as f64)
    }

    /// `p(w | history)`; only the last `order - 1` ids of `history` matter.
    pub fn prob_ids(&self, history: &[WordId], w: WordId) -> f64 {
        self.smoothed(self.resolve(history), w)
    }

    pub fn prob(&self, history: &[&str], w: &str) -> f64 {
        let h: Vec<WordId> = history.iter().map(|n| self.id_or_unknown(n)).collect();
        self.prob_ids(&h, self.id_or_unknown(w))
    }

    /// Unnormalized masked scores: `p(w | left) * p(right | left-tail, w)` for each candidate.
    fn masked_scores(&self, ctx: &[WordId], position: usize, cands: &[WordId]) -> Vec<f64> {
        let left = &ctx[position.saturating_sub(self.order - 1)..position];
        let left_cc = self.resolve(left);
        let right = ctx.get(position + 1).copied();
        let mut hist: Vec<WordId> = left[left.len().saturating_sub(self.order - 2)..].to_vec();
        hist.push(UNKNOWN);
        let last = hist.len() - 1;
        cands
            .iter()
            .map(|&w| {
                let mut s = self.smoothed(left_cc, w);
                if let Some(r) = right {
                    hist[last] = w;
                    s *= self.prob_ids(&hist, r);
                }
                s
            })
            .collect()
    }

    pub fn masked_predict(
        &self,
        query: &MaskedQuery,
        candidates: Candidates<'_>,
    ) -> Result<ScoreDistribution, LmError> {
        let ctx = self.ids_of(query.context());
        let (ids, names): (Vec<WordId>, Vec<String>) = match candidates {
            Candidates::FullVocab => self
                .candidate_ids
                .iter()
                .map(|&i| (i, self.vocab[i as usize].clone()))
                .unzip(),
            Candidates::Words(words) => words
                .iter()
                .map(|w| (self.id_or_unknown(w), w.clone()))
                .unzip(),
        };
        if ids.is_empty() {
            return Err(LmError::EmptyCandidates);
        }
        let scores = self.masked_scores(&ctx, query.position(), &ids);
        let sum: f64 = scores.iter().sum();
        ScoreDistribution::new(names.into_iter().zip(scores.iter().map(|s| s / sum)).collect())
    }

    /// Scores `seq` between boundary markers; an empty sequence predicts only the end marker.
    pub fn score_with_boundaries(&self, seq: &TokenSeq) -> SequenceScore {
        let mut history: Vec<WordId> = vec![self.bos; self.order - 1];
        let mut logprob = 0.0;
        for w in self.ids_of(seq).into_iter().chain(std::iter::once(self.eos)) {
            logprob += self.prob_ids(&history, w).ln();
            history.push(w);
        }
        let predicted = seq.len() + 1;
        SequenceScore {
            logprob,
            perplexity: (-logprob / predicted as f64).exp(),
            predicted,
        }
    }

    pub fn sequence_logprob(&self, seq: &TokenSeq) -> Result<SequenceScore, LmError> {
        if seq.is_empty() {
            return Err(LmError::EmptySequence);
        }
        Ok(self.score_with_boundaries(seq))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Deterministic JSON encoding: contexts and continuations are emitted in id order.
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), LmError> {
        let tables = self
            .tables
            .iter()
            .map(|table| {
                let mut recs: Vec<ContextRecord> = table
                    .iter()
                    .map(|(ctx, cc)| {
                        let mut next: Vec<(WordId, u64)> =
                            cc.next.iter().map(|(&w, &c)| (w, c)).collect();
                        next.sort_unstable();
                        ContextRecord {
                            context: ctx.to_vec(),
                            next,
                        }
                    })
                    .collect();
                recs.sort_unstable_by(|a, b| a.context.cmp(&b.context));
                recs
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            order: self.order,
            smoothing_k: self.smoothing_k,
            vocab: self.vocab.clone(),
            tables,
        };
        serde_json::to_writer(w, &file).map_err(|e| LmError::Format(e.to_string()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, LmError> {
        let file: ModelFile =
            serde_json::from_reader(r).map_err(|e| LmError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(LmError::Format(format!(
                "unsupported header {} v{}",
                file.format, file.version
            )));
        }
        if file.order < 2 {
            return Err(LmError::InvalidOrder(file.order));
        }
        if !(file.smoothing_k > 0.0 && file.smoothing_k.is_finite()) {
            return Err(LmError::InvalidSmoothing(file.smoothing_k));
        }
        if file.vocab.windows(2).any(|w| w[0] >= w[1])
            || !file.vocab.iter().any(|w| w == BOS)
            || !file.vocab.iter().any(|w| w == EOS)
        {
            return Err(LmError::Format("vocabulary must be sorted, unique and contain boundary markers".into()));
        }
        if file.tables.len() != file.order {
            return Err(LmError::Format(format!(
                "expected {} count tables, found {}",
                file.order,
                file.tables.len()
            )));
        }
        let v = file.vocab.len() as WordId;
        let mut model = Self::with_vocab(file.order, file.smoothing_k, file.vocab);
        for (len, recs) in file.tables.into_iter().enumerate() {
            for rec in recs {
                if rec.context.len() != len
                    || rec.context.iter().any(|&i| i >= v)
                    || rec.next.iter().any(|&(w, c)| w >= v || c == 0)
                {
                    return Err(LmError::Format(format!("bad context record in table {len}")));
                }
                let cc = ContextCounts {
                    total: rec.next.iter().map(|&(_, c)| c).sum(),
                    next: rec.next.into_iter().collect(),
                };
                model.tables[len].insert(rec.context.into(), cc);
            }
        }
        if !model.tables[0].contains_key(&[][..]) {
            return Err(LmError::Format("missing unigram table".into()));
        }
        Ok(model)
    }
}

impl MaskedScorer for NGramModel {
    fn scorer_id(&self) -> String {
        format!(
            "ngram(order={},k={},vocab={})",
            self.order,
            self.smoothing_k,
            self.vocab.len()
        )
    }

    fn predict(
        &self,
        query: &MaskedQuery,
        candidates: Candidates<'_>,
    ) -> Result<ScoreDistribution, LmError> {
        self.masked_predict(query, candidates)
    }

    /// Same arithmetic as the full-vocabulary prediction without materializing it.
    fn delta_p(&self, query: &MaskedQuery) -> Result<f64, LmError> {
        let ctx = self.ids_of(query.context());
        let scores = self.masked_scores(&ctx, query.position(), &self.candidate_ids);
        let sum: f64 = scores.iter().sum();
        let actual = self.word_id(query.actual());
        let mut p_actual = 0.0;
        let mut best_alt: Option<f64> = None;
        for (&id, &s) in self.candidate_ids.iter().zip(&scores) {
            if Some(id) == actual {
                p_actual = s / sum;
            } else if best_alt.is_none_or(|b| s > b) {
                best_alt = Some(s);
            }
        }
        Ok(p_actual - best_alt.map_or(0.0, |b| b / sum))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    smoothing_k: f64,
    vocab: Vec<String>,
    tables: Vec<Vec<ContextRecord>>,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<WordId>,
    next: Vec<(WordId, u64)>,
}
