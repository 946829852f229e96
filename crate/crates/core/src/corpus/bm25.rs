//! Okapi BM25 over lowercased alphanumeric tokens.
//!
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//!
//! Each distinct query term counts once. The `1 +` inside the logarithm keeps
//! idf positive, so a chapter scores 0 exactly when it shares no term with
//! the query.

use std::collections::BTreeSet;

use serde::Serialize;

use super::CorpusIndex;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalScore {
    pub alias: String,
    pub score: f64,
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Top `k` chapters by descending score; ties go to the smaller alias.
pub fn rank_chapters(index: &CorpusIndex, query: &str, k: usize) -> Vec<RetrievalScore> {
    let terms: BTreeSet<String> = tokenize(query).collect();
    let n = index.len() as f64;
    let total_len: u64 = index.stats().map(|(_, s)| u64::from(s.length)).sum();
    let avgdl = if index.is_empty() { 0.0 } else { total_len as f64 / n };

    let idf: Vec<(&str, f64)> = terms
        .iter()
        .map(|t| {
            let df = f64::from(index.doc_freq(t));
            (t.as_str(), (1.0 + (n - df + 0.5) / (df + 0.5)).ln())
        })
        .collect();

    let mut scores: Vec<RetrievalScore> = index
        .stats()
        .map(|(alias, stats)| {
            let norm = if avgdl > 0.0 {
                1.0 - BM25_B + BM25_B * f64::from(stats.length) / avgdl
            } else {
                1.0
            };
            let score = idf
                .iter()
                .filter_map(|(term, idf)| {
                    let tf = f64::from(*stats.term_counts.get(*term)?);
                    Some(idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm))
                })
                .sum();
            RetrievalScore {
                alias: alias.to_string(),
                score,
            }
        })
        .collect();

    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.alias.cmp(&b.alias)));
    scores.truncate(k);
    scores
}
