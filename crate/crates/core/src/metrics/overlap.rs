use std::collections::HashMap;

use super::MetricError;
use crate::textcore::TokenSeq;

const MAX_ORDER: usize = 4;
const METEOR_ALPHA: f64 = 0.9;

fn ngram_counts<'a>(words: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-free sentence BLEU on normalized forms, in percent.
///
/// Geometric mean of clipped 1- to 4-gram precisions. A zero precision for
/// n ≥ 2 is replaced by `(matches + 1) / (total + 1)`; a zero unigram precision
/// gives 0. Candidates shorter than the reference pay `exp(1 - r/c)`.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = candidate.norms();
    let refr = reference.norms();
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let c = ngram_counts(&cand, n);
        let r = ngram_counts(&refr, n);
        let matches: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
        let total = cand.len().saturating_sub(n - 1);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok((100.0 * bp * (log_sum / MAX_ORDER as f64).exp()).min(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScores {
    pub rouge1_pct: f64,
    pub rouge_l_pct: f64,
}

fn f1(overlap: usize, cand: usize, refr: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / refr as f64;
    100.0 * 2.0 * p * r / (p + r)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-1 and ROUGE-L F1 on normalized forms, in percent. Both are 0 when either side is empty.
pub fn rouge(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScores {
    let cand = candidate.norms();
    let refr = reference.norms();
    if cand.is_empty() || refr.is_empty() {
        return RougeScores {
            rouge1_pct: 0.0,
            rouge_l_pct: 0.0,
        };
    }
    let c = ngram_counts(&cand, 1);
    let r = ngram_counts(&refr, 1);
    let overlap: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScores {
        rouge1_pct: f1(overlap, cand.len(), refr.len()),
        rouge_l_pct: f1(lcs_len(&cand, &refr), cand.len(), refr.len()),
    }
}

/// Exact-match METEOR variant, in percent.
///
/// Each candidate word, left to right, is matched to the first unused reference
/// occurrence of the same form. The harmonic mean weights recall by `alpha = 0.9`
/// and is reduced by `0.5 * (chunks / matches)^3`, where a chunk is a run of
/// matches adjacent in both sequences.
pub fn meteor_lite(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let cand = candidate.norms();
    let refr = reference.norms();
    let mut used = vec![false; refr.len()];
    let mut aligned: Vec<usize> = Vec::new();
    for w in &cand {
        if let Some(j) = (0..refr.len()).find(|&j| !used[j] && refr[j] == *w) {
            used[j] = true;
            aligned.push(j);
        } else {
            aligned.push(usize::MAX);
        }
    }
    let matches = aligned.iter().filter(|&&j| j != usize::MAX).count();
    if matches == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for &j in &aligned {
        if j == usize::MAX {
            prev = None;
            continue;
        }
        if prev.is_none_or(|p| p + 1 != j) {
            chunks += 1;
        }
        prev = Some(j);
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / refr.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    100.0 * fmean * (1.0 - penalty)
}
