//! Comparing a reconstruction with its original.
//!
//! Θ-metrics score only the function-word positions of a Needleman-Wunsch
//! alignment. The rest are the usual surface measures plus fluency under the
//! n-gram model.

mod align;
mod cosine;
mod overlap;
mod report;

use thiserror::Error;

use crate::http::HttpError;

pub use align::{nw_align, theta_alignment, theta_metrics, AlignmentOp, NwScoring, OpKind, ThetaCounts};
pub use cosine::{cosine_similarity, CosineScore, Embedder, ExternalEmbedder, TfIdf};
pub use overlap::{bleu, meteor_lite, rouge, RougeScores};
pub use report::{
    evaluate_pair, read_pair_rows, summarize, write_pair_csv, ColumnSummary, MetricReport, PairRow,
    RunningStats, Summary, PAIR_CSV_COLUMNS,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("original text is empty")]
    EmptyOriginal,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding service: {0}")]
    Embedding(#[from] HttpError),
    #[error("results csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("results csv: {0}")]
    Format(String),
}
