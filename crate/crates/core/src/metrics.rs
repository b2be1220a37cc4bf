//! Multi-label evaluation metrics, label slices, and attention-mode matching.
//!
//! Scores are one row per document with one column per label; truths are
//! the sorted label-id sets of the same documents.

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use std::collections::HashMap;

fn check_aligned(scores: &[Vec<f64>], truths: &[Vec<usize>]) -> Result<usize> {
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} score rows for {} documents",
            scores.len(),
            truths.len()
        )));
    }
    let n = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("score rows of unequal length".into()));
    }
    if let Some(&bad) = truths.iter().flatten().find(|&&l| l >= n) {
        return Err(Error::Index(format!("truth label {bad} out of range ({n} labels)")));
    }
    Ok(n)
}

fn truth_matrix(truths: &[Vec<usize>], n: usize) -> Vec<Vec<bool>> {
    truths
        .iter()
        .map(|t| {
            let mut row = vec![false; n];
            t.iter().for_each(|&l| row[l] = true);
            row
        })
        .collect()
}

/// Micro F1 over all (document, label) pairs; a pair is predicted positive
/// when its score is at least `threshold`.
pub fn micro_f1(scores: &[Vec<f64>], truths: &[Vec<usize>], threshold: f64) -> Result<f64> {
    let n = check_aligned(scores, truths)?;
    let y = truth_matrix(truths, n);
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (row, t) in scores.iter().zip(&y) {
        for (&s, &pos) in row.iter().zip(t) {
            match (s >= threshold, pos) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

/// Flattened (score, positive) pairs, optionally restricted to a label subset.
fn flat_pairs(
    scores: &[Vec<f64>],
    truths: &[Vec<usize>],
    subset: Option<&[bool]>,
) -> Result<Vec<(f64, bool)>> {
    let n = check_aligned(scores, truths)?;
    if let Some(s) = subset {
        if s.len() != n {
            return Err(Error::Shape(format!("label subset of {} for {n} labels", s.len())));
        }
    }
    let y = truth_matrix(truths, n);
    let mut pairs = Vec::with_capacity(scores.len() * n);
    for (row, t) in scores.iter().zip(&y) {
        for l in 0..n {
            if subset.is_none_or(|s| s[l]) {
                pairs.push((row[l], t[l]));
            }
        }
    }
    Ok(pairs)
}

/// Rank-based (Mann–Whitney) micro AUC; ties count one half.
pub fn micro_auc(scores: &[Vec<f64>], truths: &[Vec<usize>]) -> Result<f64> {
    let mut pairs = flat_pairs(scores, truths, None)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined(format!(
            "{n_pos} positive and {n_neg} negative pairs"
        )));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks over tie groups, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Label ids of the `k` highest scores, ties to the lower id.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Param(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Mean over all documents of `|top-k ∩ truth| / k`.
pub fn precision_at_k(scores: &[Vec<f64>], truths: &[Vec<usize>], k: usize) -> Result<f64> {
    let n = check_aligned(scores, truths)?;
    check_k(k, n)?;
    if scores.is_empty() {
        return Err(Error::Input("no documents".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(truths)
        .map(|(row, t)| {
            let hits = top_k(row, k).iter().filter(|l| t.contains(l)).count();
            hits as f64 / k as f64
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Mean of `|top-k ∩ truth| / |truth|` over documents with a non-empty
/// truth. With `group`, truths are first restricted to the group while the
/// ranking still covers every label. `None` when no document qualifies.
pub fn recall_at_k(
    scores: &[Vec<f64>],
    truths: &[Vec<usize>],
    k: usize,
    group: Option<&[bool]>,
) -> Result<Option<f64>> {
    let n = check_aligned(scores, truths)?;
    check_k(k, n)?;
    if let Some(gm) = group {
        if gm.len() != n {
            return Err(Error::Shape(format!("group mask of {} for {n} labels", gm.len())));
        }
    }
    let mut total = 0.0;
    let mut docs = 0usize;
    for (row, t) in scores.iter().zip(truths) {
        let t: Vec<usize> = t
            .iter()
            .copied()
            .filter(|&l| group.is_none_or(|gm| gm[l]))
            .collect();
        if t.is_empty() {
            continue;
        }
        let hits = top_k(row, k).iter().filter(|l| t.contains(l)).count();
        total += hits as f64 / t.len() as f64;
        docs += 1;
    }
    Ok((docs > 0).then(|| total / docs as f64))
}

/// Average precision `Σ (R_i − R_{i−1}) P_i` over the distinct score
/// thresholds of the flattened pairs, optionally for a label subset.
pub fn aupr(scores: &[Vec<f64>], truths: &[Vec<usize>], subset: Option<&[bool]>) -> Result<f64> {
    let mut pairs = flat_pairs(scores, truths, subset)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    if n_pos == 0 {
        return Err(Error::Input("no positive pairs for AUPR".into()));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            group_tp += pairs[j].1 as usize;
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        ap += (group_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        i = j;
    }
    Ok(ap)
}

pub const N_BUCKETS: usize = 11;

/// 1-based frequency bucket: `[0,10)` → 1, `[10,20)` → 2, …, `[100,∞)` → 11.
pub fn frequency_bucket(count: u64) -> usize {
    (count / 10).min(10) as usize + 1
}

pub fn frequency_buckets(train_counts: &[u64]) -> Vec<usize> {
    train_counts.iter().map(|&c| frequency_bucket(c)).collect()
}

/// Labels by training frequency: S seen more than five times, F one to
/// five times, Z never seen but present in the test labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Groups {
    pub s: Vec<usize>,
    pub f: Vec<usize>,
    pub z: Vec<usize>,
}

impl Groups {
    /// Membership mask over `n` labels for one of `"S"`, `"F"`, `"Z"`.
    pub fn mask(&self, name: &str, n: usize) -> Vec<bool> {
        let ids = match name {
            "S" => &self.s,
            "F" => &self.f,
            _ => &self.z,
        };
        let mut m = vec![false; n];
        ids.iter().for_each(|&l| m[l] = true);
        m
    }
}

pub fn group_split_sfz(train_counts: &[u64], test_labels: &[bool]) -> Groups {
    let mut g = Groups::default();
    for (l, &c) in train_counts.iter().enumerate() {
        match c {
            0 if test_labels.get(l).copied().unwrap_or(false) => g.z.push(l),
            0 => {}
            1..=5 => g.f.push(l),
            _ => g.s.push(l),
        }
    }
    g
}

fn sq_dist(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Composed pseudo modes `α¹ α² … αᴷ` of a trace as `l_r × m` columns.
fn composed_modes(trace: &AttentionTrace) -> Result<Vec<Vec<f64>>> {
    let first = trace
        .alphas
        .first()
        .ok_or_else(|| Error::Input(format!("trace of {:?} holds no attention", trace.doc)))?;
    let (l_r, _) = first.dims2();
    let mut rows: Vec<Vec<f64>> = (0..l_r).map(|r| first.row(r).to_vec()).collect();
    for alpha in &trace.alphas[1..] {
        let (inner, cols) = alpha.dims2();
        rows = rows
            .iter()
            .map(|row| {
                (0..cols)
                    .map(|c| (0..inner).map(|k| row[k] * alpha.at(k, c)).sum())
                    .collect()
            })
            .collect();
    }
    let m = rows.first().map_or(0, Vec::len);
    Ok((0..m).map(|c| rows.iter().map(|r| r[c]).collect()).collect())
}

/// For each real label, the pseudo mode whose attention over positions is
/// nearest (Euclidean) to the label's own attention, by majority vote over
/// documents. Ties go to the lower mode index in both steps.
pub fn attention_mode_match(
    pseudo: &[AttentionTrace],
    labelwise: &[AttentionTrace],
) -> Result<Vec<usize>> {
    let by_doc: HashMap<&str, &AttentionTrace> =
        labelwise.iter().map(|t| (t.doc.as_str(), t)).collect();
    let pseudo_docs: std::collections::HashSet<&str> =
        pseudo.iter().map(|t| t.doc.as_str()).collect();
    if pseudo.is_empty()
        || by_doc.len() != labelwise.len()
        || pseudo_docs.len() != pseudo.len()
        || pseudo_docs.len() != by_doc.len()
        || pseudo_docs.iter().any(|d| !by_doc.contains_key(d))
    {
        return Err(Error::Input(
            "pseudo and label-wise traces cover different documents".into(),
        ));
    }
    let mut votes: Vec<Vec<u64>> = Vec::new();
    for pt in pseudo {
        let lt = by_doc[pt.doc.as_str()];
        let modes = composed_modes(pt)?;
        let alpha = lt
            .alphas
            .first()
            .ok_or_else(|| Error::Input(format!("trace of {:?} holds no attention", lt.doc)))?;
        let (l_r, n) = alpha.dims2();
        if modes.first().map_or(0, Vec::len) != l_r {
            return Err(Error::Shape(format!(
                "document {:?}: {} positions against {l_r}",
                pt.doc,
                modes.first().map_or(0, Vec::len)
            )));
        }
        if votes.is_empty() {
            votes = vec![vec![0; modes.len()]; n];
        } else if votes.len() != n || votes[0].len() != modes.len() {
            return Err(Error::Shape("traces disagree on label or mode counts".into()));
        }
        for (label, tally) in votes.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (j, mode) in modes.iter().enumerate() {
                let d = sq_dist(mode.iter().copied(), (0..l_r).map(|r| alpha.at(r, label)));
                if d < best.0 {
                    best = (d, j);
                }
            }
            tally[best.1] += 1;
        }
    }
    Ok(votes
        .iter()
        .map(|tally| {
            let max = tally.iter().copied().max().unwrap_or(0);
            tally.iter().position(|&c| c == max).unwrap_or(0)
        })
        .collect())
}
