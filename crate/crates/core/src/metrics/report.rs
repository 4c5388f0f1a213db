use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::align::{theta_metrics, ThetaCounts};
use super::cosine::{cosine_similarity, Embedder};
use super::overlap::{bleu, meteor_lite, rouge};
use super::MetricError;
use crate::lmscore::NGramModel;
use crate::textcore::{Lexicon, TokenSeq};

/// Every measurement for one (original, reconstructed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub theta: ThetaCounts,
    pub sacrebleu_pct: f64,
    pub meteor_pct: f64,
    pub rouge1_pct: f64,
    pub rouge_l_pct: f64,
    pub cosine_pct: f64,
    pub cosine_zero_vector: bool,
    pub perplexity: f64,
    pub perplexity_original: f64,
    pub saved_tokens_pct: f64,
    pub original_tokens: usize,
    pub distilled_tokens: usize,
    pub reconstructed_tokens: usize,
}

pub fn evaluate_pair(
    original: &TokenSeq,
    reconstructed: &TokenSeq,
    distilled: &TokenSeq,
    lexicon: &Lexicon,
    lm: &NGramModel,
    embedder: &Embedder,
) -> Result<MetricReport, MetricError> {
    if original.is_empty() {
        return Err(MetricError::EmptyOriginal);
    }
    let r = rouge(reconstructed, original);
    let cos = cosine_similarity(reconstructed, original, embedder)?;
    Ok(MetricReport {
        theta: theta_metrics(original, reconstructed, lexicon),
        sacrebleu_pct: bleu(reconstructed, original)?,
        meteor_pct: meteor_lite(reconstructed, original),
        rouge1_pct: r.rouge1_pct,
        rouge_l_pct: r.rouge_l_pct,
        cosine_pct: cos.pct,
        cosine_zero_vector: cos.zero_vector,
        perplexity: lm.score_with_boundaries(reconstructed).perplexity,
        perplexity_original: lm.score_with_boundaries(original).perplexity,
        saved_tokens_pct: 100.0 * (original.len() as f64 - distilled.len() as f64) / original.len() as f64,
        original_tokens: original.len(),
        distilled_tokens: distilled.len(),
        reconstructed_tokens: reconstructed.len(),
    })
}

/// Single-pass mean and population standard deviation (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub id: usize,
    pub report: MetricReport,
}

pub const PAIR_CSV_COLUMNS: [&str; 18] = [
    "theta_tp",
    "theta_fp",
    "theta_fn",
    "theta_precision_pct",
    "theta_recall_pct",
    "theta_f1_pct",
    "sacrebleu_pct",
    "meteor_pct",
    "rouge1_pct",
    "rougeL_pct",
    "cosine_pct",
    "cosine_zero_vector",
    "perplexity",
    "perplexity_original",
    "saved_tokens_pct",
    "original_tokens",
    "distilled_tokens",
    "reconstructed_tokens",
];

impl MetricReport {
    /// Values in [`PAIR_CSV_COLUMNS`] order; Θ rates are scaled to percent.
    pub fn values(&self) -> [f64; 18] {
        let t = &self.theta;
        [
            t.tp as f64,
            t.fp as f64,
            t.fn_ as f64,
            100.0 * t.precision,
            100.0 * t.recall,
            100.0 * t.f1,
            self.sacrebleu_pct,
            self.meteor_pct,
            self.rouge1_pct,
            self.rouge_l_pct,
            self.cosine_pct,
            if self.cosine_zero_vector { 1.0 } else { 0.0 },
            self.perplexity,
            self.perplexity_original,
            self.saved_tokens_pct,
            self.original_tokens as f64,
            self.distilled_tokens as f64,
            self.reconstructed_tokens as f64,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        MetricReport {
            theta: ThetaCounts {
                tp: v[0] as usize,
                fp: v[1] as usize,
                fn_: v[2] as usize,
                precision: v[3] / 100.0,
                recall: v[4] / 100.0,
                f1: v[5] / 100.0,
            },
            sacrebleu_pct: v[6],
            meteor_pct: v[7],
            rouge1_pct: v[8],
            rouge_l_pct: v[9],
            cosine_pct: v[10],
            cosine_zero_vector: v[11] != 0.0,
            perplexity: v[12],
            perplexity_original: v[13],
            saved_tokens_pct: v[14],
            original_tokens: v[15] as usize,
            distilled_tokens: v[16] as usize,
            reconstructed_tokens: v[17] as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub columns: Vec<ColumnSummary>,
}

impl Summary {
    pub fn get(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn mean(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |c| c.mean)
    }
}

/// Per-column mean and population standard deviation, accumulated in row order.
pub fn summarize<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Summary {
    let mut stats = [RunningStats::default(); 18];
    let mut n = 0;
    for r in reports {
        n += 1;
        for (s, v) in stats.iter_mut().zip(r.values()) {
            s.push(v);
        }
    }
    Summary {
        n,
        columns: PAIR_CSV_COLUMNS
            .iter()
            .zip(stats)
            .map(|(&name, s)| ColumnSummary {
                name,
                mean: s.mean(),
                std: s.std(),
            })
            .collect(),
    }
}

/// One row per pair, then a `mean` row and a `std` row.
pub fn write_pair_csv<W: Write>(w: W, rows: &[PairRow]) -> Result<(), MetricError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("id").chain(PAIR_CSV_COLUMNS))?;
    for row in rows {
        out.write_record(
            std::iter::once(row.id.to_string()).chain(row.report.values().iter().map(f64::to_string)),
        )?;
    }
    let summary = summarize(rows.iter().map(|r| &r.report));
    out.write_record(std::iter::once("mean".to_string()).chain(summary.columns.iter().map(|c| c.mean.to_string())))?;
    out.write_record(std::iter::once("std".to_string()).chain(summary.columns.iter().map(|c| c.std.to_string())))?;
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the per-pair rows of a file written by [`write_pair_csv`], skipping the summary rows.
pub fn read_pair_rows<R: Read>(r: R) -> Result<Vec<PairRow>, MetricError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let index: Vec<usize> = std::iter::once("id")
        .chain(PAIR_CSV_COLUMNS)
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| MetricError::Format(format!("missing column `{c}`")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id_field = rec.get(index[0]).unwrap_or("");
        if id_field == "mean" || id_field == "std" {
            continue;
        }
        let id = id_field
            .parse()
            .map_err(|_| MetricError::Format(format!("bad id `{id_field}`")))?;
        let mut values = Vec::with_capacity(18);
        for &i in &index[1..] {
            let field = rec.get(i).unwrap_or("");
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| MetricError::Format(format!("pair {id}: bad number `{field}`")))?,
            );
        }
        rows.push(PairRow {
            id,
            report: MetricReport::from_values(&values),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TfIdf;
    use crate::textcore::{tokenize, Corpus};
    use proptest::prelude::*;

    fn setup() -> (NGramModel, Embedder, Lexicon) {
        let texts = ["the cat sat on the mat", "a dog ran to the park", "the bird sang in a tree"];
        let corpus = Corpus::from_texts("t", texts);
        let lm = NGramModel::train(&corpus, 3, 0.1).unwrap();
        let seqs: Vec<TokenSeq> = texts.iter().map(|t| tokenize(t)).collect();
        let emb = Embedder::TfIdf(TfIdf::fit(&seqs));
        (lm, emb, Lexicon::new("s", ["the", "a", "on", "to", "in"]).unwrap())
    }

    #[test]
    fn identity_row() {
        let (lm, emb, lex) = setup();
        let o = tokenize("the cat sat on the mat");
        let d = tokenize("cat sat mat");
        let r = evaluate_pair(&o, &o, &d, &lex, &lm, &emb).unwrap();
        assert_eq!((r.theta.precision, r.theta.recall, r.theta.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.sacrebleu_pct, 100.0);
        assert_eq!((r.rouge1_pct, r.rouge_l_pct), (100.0, 100.0));
        assert_eq!(r.cosine_pct, 100.0);
        assert_eq!(r.perplexity, r.perplexity_original);
        assert!((r.saved_tokens_pct - 50.0).abs() < 1e-12);
    }

    #[test]
    fn distilled_as_reconstruction() {
        let (lm, emb, lex) = setup();
        let o = tokenize("the cat sat on the mat");
        let d = tokenize("cat sat mat");
        let r = evaluate_pair(&o, &d, &d, &lex, &lm, &emb).unwrap();
        assert_eq!(r.theta.recall, 0.0);
        assert_eq!(r.theta.precision, 1.0);
        assert!((r.saved_tokens_pct - 50.0).abs() < 1e-12);
        assert!(r.perplexity > r.perplexity_original);
        assert!(r.perplexity >= 1.0);
    }

    #[test]
    fn empty_original_rejected() {
        let (lm, emb, lex) = setup();
        let e = TokenSeq::default();
        assert!(matches!(
            evaluate_pair(&e, &e, &e, &lex, &lm, &emb),
            Err(MetricError::EmptyOriginal)
        ));
    }

    #[test]
    fn csv_round_trip_with_summary() {
        let (lm, emb, lex) = setup();
        let o = tokenize("the cat sat on the mat");
        let d = tokenize("cat sat mat");
        let rows = vec![
            PairRow { id: 0, report: evaluate_pair(&o, &o, &d, &lex, &lm, &emb).unwrap() },
            PairRow { id: 1, report: evaluate_pair(&o, &d, &d, &lex, &lm, &emb).unwrap() },
        ];
        let mut buf = Vec::new();
        write_pair_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("id,theta_tp,"));
        assert!(lines[3].starts_with("mean,"));
        assert!(lines[4].starts_with("std,"));
        let back = read_pair_rows(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn counts_two_and_four() {
        let mut s = RunningStats::default();
        s.push(2.0);
        s.push(4.0);
        assert_eq!((s.mean(), s.std()), (3.0, 1.0));
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(xs in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let mut s = RunningStats::default();
            for &x in &xs {
                s.push(x);
            }
            let (m, sd) = two_pass(&xs);
            prop_assert!((s.mean() - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((s.std() - sd).abs() <= 1e-9 * (1.0 + sd));
        }
    }
}
