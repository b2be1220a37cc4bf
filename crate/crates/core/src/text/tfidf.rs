use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Smoothed inverse document frequency `ln((N + 1) / (df + 1)) + 1`.
pub fn idf(df: u64, n_docs: usize) -> f64 {
    ((n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

/// Per-position `tf * idf`, where `tf` is the raw count of the token inside
/// this document and `df` comes from `vocab` (0 for unknown tokens).
pub fn tfidf_scores<S: AsRef<str>>(tokens: &[S], vocab: &Vocab) -> Vec<f64> {
    let mut tf: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_ref()).or_default() += 1;
    }
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            tf[t] as f64 * idf(vocab.df_of(t), vocab.n_docs())
        })
        .collect()
}

/// Positions that survive truncation to `l_r`, in original order.
///
/// Drops the lowest-scored occurrences first; among equal scores the later
/// position goes first.
pub fn truncate_positions(scores: &[f64], l_r: usize) -> Vec<usize> {
    if scores.len() <= l_r {
        return (0..scores.len()).collect();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    let mut keep = vec![true; scores.len()];
    for &p in &order[..scores.len() - l_r] {
        keep[p] = false;
    }
    (0..scores.len()).filter(|&p| keep[p]).collect()
}

/// A document truncated or padded to the model's sequence length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    /// Token ids, exactly `l_r` long, padded with [`PAD`].
    pub tokens: Vec<usize>,
    /// `true` for real tokens.
    pub mask: Vec<bool>,
    /// Sorted label ids.
    pub labels: Vec<usize>,
}

impl Document {
    /// Number of real (unpadded) positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn l_r(&self) -> usize {
        self.tokens.len()
    }
}

/// Scores `tokens` against `vocab`, keeps the `l_r` most important
/// occurrences, and pads the result.
pub fn truncate_by_tfidf<S: AsRef<str>>(
    id: &str,
    tokens: &[S],
    mut labels: Vec<usize>,
    vocab: &Vocab,
    l_r: usize,
) -> Result<Document> {
    if l_r == 0 {
        return Err(Error::Param("sequence length l_r must be positive".into()));
    }
    let scores = tfidf_scores(tokens, vocab);
    let kept = truncate_positions(&scores, l_r);
    let mut ids: Vec<usize> = kept.iter().map(|&p| vocab.id(tokens[p].as_ref())).collect();
    let mut mask = vec![true; ids.len()];
    ids.resize(l_r, PAD);
    mask.resize(l_r, false);
    labels.sort_unstable();
    labels.dedup();
    Ok(Document {
        id: id.to_owned(),
        tokens: ids,
        mask,
        labels,
    })
}
