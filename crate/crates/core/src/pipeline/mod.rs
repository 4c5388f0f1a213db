//! Experiment drivers: the lexicon count study, the level sweep, offline
//! evaluation of a reconstructor, and the live generate-then-reconstruct flow.

mod config;
mod generation;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::distill::{make_pairs, DistillError, PairRecord};
use crate::inferability::{level_set, InferabilityError, InferabilityReport};
use crate::lmscore::NGramModel;
use crate::metrics::{evaluate_pair, summarize, Embedder, MetricError, PairRow, RunningStats, Summary};
use crate::parallel::with_workers;
use crate::reconstruct::{reconstruct, ReconstructError, Reconstruction, ReconstructionConfig};
use crate::textcore::{count_lexicon_terms, tokenize, Corpus, Lexicon};

pub use config::{
    Config, ConfigError, CorpusSection, EndpointSection, InferabilitySection, PricingSection, ScorerSection,
    CONFIG_ENV,
};
pub use generation::{
    extra_instruction_tokens, run_trim, GenerationClient, GenerationError, GenerationRequest, GenerationResponse,
    Generator, TrimOutcome,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no pair has a non-empty original text")]
    NoPairs,
    #[error("pair {id}: {source}")]
    Metric {
        id: usize,
        #[source]
        source: MetricError,
    },
    #[error("pair {id}: {source}")]
    Reconstruct {
        id: usize,
        #[source]
        source: ReconstructError,
    },
    #[error(transparent)]
    Inferability(#[from] InferabilityError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("sweep csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountStats {
    pub mean: f64,
    pub std: f64,
    pub fragments: usize,
}

/// Mean and population standard deviation of lexicon-term counts per fragment.
pub fn exploratory_count(answers: &Corpus, lexicon: &Lexicon) -> Result<CountStats, PipelineError> {
    if answers.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut stats = RunningStats::default();
    for frag in answers.iter() {
        stats.push(count_lexicon_terms(&tokenize(&frag.text), lexicon) as f64);
    }
    Ok(CountStats {
        mean: stats.mean(),
        std: stats.std(),
        fragments: answers.len(),
    })
}

/// Turns a distilled pair back into full text.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &str;
    fn reconstruct_pair(&self, record: &PairRecord) -> Result<Reconstruction, ReconstructError>;
}

/// Beam-search insertion of the term set under an n-gram model.
pub struct BeamReconstructor<'a> {
    pub model: &'a NGramModel,
    pub terms: &'a Lexicon,
    pub config: ReconstructionConfig,
}

impl Reconstructor for BeamReconstructor<'_> {
    fn name(&self) -> &str {
        "beam"
    }

    fn reconstruct_pair(&self, record: &PairRecord) -> Result<Reconstruction, ReconstructError> {
        reconstruct(&record.pair.distilled, self.terms, self.model, &self.config)
    }
}

/// Returns the distilled text unchanged. Its score is 0 (not computed).
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn name(&self) -> &str {
        "identity"
    }

    fn reconstruct_pair(&self, record: &PairRecord) -> Result<Reconstruction, ReconstructError> {
        Ok(Reconstruction {
            output: record.pair.distilled.clone(),
            inserted_positions: Vec::new(),
            score: 0.0,
        })
    }
}

/// Puts back exactly what distillation removed. Its score is 0 (not computed).
pub struct PerfectOracle;

impl Reconstructor for PerfectOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn reconstruct_pair(&self, record: &PairRecord) -> Result<Reconstruction, ReconstructError> {
        Ok(Reconstruction {
            output: record.pair.reinsert(),
            inserted_positions: record.pair.removed_positions.clone(),
            score: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedPair {
    pub row: PairRow,
    pub reconstruction: Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineEval {
    pub pairs: Vec<EvaluatedPair>,
    pub summary: Summary,
    /// Ids of pairs left out because their original text has no tokens.
    pub skipped: Vec<usize>,
}

impl OfflineEval {
    pub fn rows(&self) -> Vec<PairRow> {
        self.pairs.iter().map(|p| p.row.clone()).collect()
    }
}

/// Reconstructs and scores every pair, in parallel, keeping input order.
pub fn run_offline_eval(
    pairs: &[PairRecord],
    reconstructor: &dyn Reconstructor,
    theta_lexicon: &Lexicon,
    lm: &NGramModel,
    embedder: &Embedder,
    workers: Option<usize>,
) -> Result<OfflineEval, PipelineError> {
    let (usable, skipped): (Vec<&PairRecord>, Vec<&PairRecord>) =
        pairs.iter().partition(|p| !p.pair.original.is_empty());
    for p in &skipped {
        log::info!("pair {} has an empty original and is skipped", p.id);
    }
    if usable.is_empty() {
        return Err(PipelineError::NoPairs);
    }
    let results: Vec<Result<EvaluatedPair, PipelineError>> = with_workers(workers, || {
        usable
            .par_iter()
            .map(|rec| {
                let recon = reconstructor
                    .reconstruct_pair(rec)
                    .map_err(|source| PipelineError::Reconstruct { id: rec.id, source })?;
                let report = evaluate_pair(
                    &rec.pair.original,
                    &recon.output,
                    &rec.pair.distilled,
                    theta_lexicon,
                    lm,
                    embedder,
                )
                .map_err(|source| PipelineError::Metric { id: rec.id, source })?;
                Ok(EvaluatedPair {
                    row: PairRow { id: rec.id, report },
                    reconstruction: recon,
                })
            })
            .collect()
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(pairs.iter().map(|p| &p.row.report));
    Ok(OfflineEval {
        pairs,
        summary,
        skipped: skipped.iter().map(|p| p.id).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    #[default]
    Beam,
    Identity,
    Oracle,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub max_level: usize,
    pub step: usize,
    pub reconstruction: ReconstructionConfig,
    pub mode: SweepMode,
    /// Lexicon for Θ; each level's own term set when `None`.
    pub theta_lexicon: Option<Lexicon>,
    pub workers: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            max_level: 12,
            step: crate::inferability::DEFAULT_STEP,
            reconstruction: ReconstructionConfig::default(),
            mode: SweepMode::Beam,
            theta_lexicon: None,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSweepRow {
    pub level: usize,
    pub set_size: usize,
    pub n_pairs: usize,
    pub pairs_without_removal: usize,
    pub mean_saved_pct: f64,
    pub mean_bleu: f64,
    pub mean_rouge1: f64,
    #[serde(rename = "mean_rougeL")]
    pub mean_rouge_l: f64,
    pub mean_meteor: f64,
    pub mean_cosine: f64,
    pub mean_perplexity: f64,
    pub mean_theta_f1: f64,
}

/// Distills, reconstructs and scores the corpus once per level of the ranking.
pub fn run_level_sweep(
    corpus: &Corpus,
    report: &InferabilityReport,
    lm: &NGramModel,
    embedder: &Embedder,
    opts: &SweepOptions,
) -> Result<Vec<LevelSweepRow>, PipelineError> {
    // fail before any work if the ranking is too short
    level_set(report, opts.max_level, opts.step)?;
    let mut rows = Vec::with_capacity(opts.max_level);
    for level in 1..=opts.max_level {
        let terms = level_set(report, level, opts.step)?;
        let pairs: Vec<PairRecord> = make_pairs(corpus, &terms).collect();
        let beam = BeamReconstructor {
            model: lm,
            terms: &terms,
            config: opts.reconstruction.clone(),
        };
        let reconstructor: &dyn Reconstructor = match opts.mode {
            SweepMode::Beam => &beam,
            SweepMode::Identity => &IdentityReconstructor,
            SweepMode::Oracle => &PerfectOracle,
        };
        let theta = opts.theta_lexicon.as_ref().unwrap_or(&terms);
        let eval = run_offline_eval(&pairs, reconstructor, theta, lm, embedder, opts.workers)?;
        let pairs_without_removal = pairs
            .iter()
            .filter(|p| p.no_removal && !p.pair.original.is_empty())
            .count();
        if pairs_without_removal > 0 {
            log::info!("level {level}: {pairs_without_removal} pair(s) without any removal");
        }
        let s = &eval.summary;
        rows.push(LevelSweepRow {
            level,
            set_size: terms.len(),
            n_pairs: s.n,
            pairs_without_removal,
            mean_saved_pct: s.mean("saved_tokens_pct"),
            mean_bleu: s.mean("sacrebleu_pct"),
            mean_rouge1: s.mean("rouge1_pct"),
            mean_rouge_l: s.mean("rougeL_pct"),
            mean_meteor: s.mean("meteor_pct"),
            mean_cosine: s.mean("cosine_pct"),
            mean_perplexity: s.mean("perplexity"),
            mean_theta_f1: s.mean("theta_f1_pct"),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[LevelSweepRow]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
