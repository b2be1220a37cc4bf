//! Evaluation reports, attention explanations, and mode matching.

use super::corpus::{Dataset, Split};
use super::train::{predict_all, truths};
use crate::attention::{explain_gamma, top_k_words, TraceRecord};
use crate::error::{Error, Result};
use crate::labels::{code_prefix, LabelCatalog};
use crate::metrics::{
    aupr, attention_mode_match, frequency_buckets, group_split_sfz, micro_auc, micro_f1,
    precision_at_k, recall_at_k, N_BUCKETS,
};
use crate::model::Model;
use crate::text::Document;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

pub const P_AT_K: [usize; 3] = [1, 5, 8];
pub const R_AT_K: [usize; 2] = [5, 10];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: String,
    pub labels: usize,
    pub aupr: Option<f64>,
    pub r_at_5: Option<f64>,
    pub r_at_10: Option<f64>,
    /// Expected R@10 of a uniformly random ranking.
    pub random_r_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: usize,
    pub labels: usize,
    pub aupr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: Split,
    pub n_docs: usize,
    pub n_labels: usize,
    pub threshold: f64,
    pub micro_f1: f64,
    pub micro_auc: Option<f64>,
    pub aupr: Option<f64>,
    pub precision_at_k: BTreeMap<String, f64>,
    pub recall_at_k: BTreeMap<String, Option<f64>>,
    /// Micro F1 of scoring every label by its training frequency.
    pub prior_micro_f1: f64,
    pub groups: Vec<GroupRow>,
    pub buckets: Vec<BucketRow>,
    pub notes: BTreeMap<String, String>,
}

/// Scores equal to each label's share of training documents.
pub fn prior_scores(ds: &Dataset, n_docs: usize) -> Vec<Vec<f64>> {
    let n_train = ds.train.len().max(1) as f64;
    let row: Vec<f64> = ds
        .catalog
        .train_counts()
        .iter()
        .map(|&c| c as f64 / n_train)
        .collect();
    vec![row; n_docs]
}

/// 1 for every true label, 0 elsewhere.
pub fn oracle_scores(docs: &[Document], n_labels: usize) -> Vec<Vec<f64>> {
    docs.iter()
        .map(|d| {
            let mut row = vec![0.0; n_labels];
            d.labels.iter().for_each(|&l| row[l] = 1.0);
            row
        })
        .collect()
}

fn defined<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::AucUndefined(_)) | Err(Error::Input(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Every metric of `scores` against the documents of `split`.
pub fn report(
    ds: &Dataset,
    split: Split,
    scores: &[Vec<f64>],
    threshold: f64,
) -> Result<MetricsReport> {
    let docs = ds.split(split);
    if docs.is_empty() {
        return Err(Error::Input(format!("{split:?} split is empty")));
    }
    let t = truths(docs);
    let n = ds.catalog.len();
    let mut precision = BTreeMap::new();
    for k in P_AT_K.into_iter().filter(|&k| k <= n) {
        precision.insert(k.to_string(), precision_at_k(scores, &t, k)?);
    }
    let mut recall = BTreeMap::new();
    for k in R_AT_K.into_iter().filter(|&k| k <= n) {
        recall.insert(k.to_string(), recall_at_k(scores, &t, k, None)?);
    }

    let counts = ds.catalog.train_counts();
    let mut present = vec![false; n];
    t.iter().flatten().for_each(|&l| present[l] = true);
    let groups = group_split_sfz(&counts, &present);
    let mut group_rows = Vec::new();
    for name in ["S", "F", "Z"] {
        let mask = groups.mask(name, n);
        let r = |k: usize| -> Result<Option<f64>> {
            if k > n {
                return Ok(None);
            }
            recall_at_k(scores, &t, k, Some(&mask))
        };
        group_rows.push(GroupRow {
            group: name.to_owned(),
            labels: mask.iter().filter(|&&b| b).count(),
            aupr: defined(aupr(scores, &t, Some(&mask)))?,
            r_at_5: r(5)?,
            r_at_10: r(10)?,
            random_r_at_10: random_recall(10, n),
        });
    }
    let bucket_of = frequency_buckets(&counts);
    let mut bucket_rows = Vec::new();
    for b in 1..=N_BUCKETS {
        let mask: Vec<bool> = bucket_of.iter().map(|&x| x == b).collect();
        bucket_rows.push(BucketRow {
            bucket: b,
            labels: mask.iter().filter(|&&x| x).count(),
            aupr: defined(aupr(scores, &t, Some(&mask)))?,
        });
    }

    let notes = BTreeMap::from([
        (
            "precision_at_k".to_owned(),
            "averaged over all documents, including those with fewer than k true labels"
                .to_owned(),
        ),
        (
            "recall_at_k".to_owned(),
            "documents without true labels (in the group) are skipped".to_owned(),
        ),
        ("aupr".to_owned(), "average precision over flattened pairs".to_owned()),
    ]);
    Ok(MetricsReport {
        split,
        n_docs: docs.len(),
        n_labels: n,
        threshold,
        micro_f1: micro_f1(scores, &t, threshold)?,
        micro_auc: defined(micro_auc(scores, &t))?,
        aupr: defined(aupr(scores, &t, None))?,
        precision_at_k: precision,
        recall_at_k: recall,
        prior_micro_f1: micro_f1(&prior_scores(ds, docs.len()), &t, threshold)?,
        groups: group_rows,
        buckets: bucket_rows,
        notes,
    })
}

/// Expected recall@k of a uniformly random ranking of `n` labels: each true
/// label lands in the top k with probability `min(k, n) / n`.
pub fn random_recall(k: usize, n: usize) -> f64 {
    k.min(n) as f64 / n as f64
}

pub fn evaluate(model: &Model, ds: &Dataset, split: Split, threshold: f64) -> Result<MetricsReport> {
    let scores = predict_all(model, ds.split(split))?;
    report(ds, split, &scores, threshold)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn groups_csv(r: &MetricsReport) -> String {
    let mut out = String::from("group,labels,aupr,r_at_5,r_at_10,random_r_at_10\n");
    for g in &r.groups {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.group,
            g.labels,
            opt(g.aupr),
            opt(g.r_at_5),
            opt(g.r_at_10),
            g.random_r_at_10
        ));
    }
    out
}

pub fn buckets_csv(r: &MetricsReport) -> String {
    let mut out = String::from("bucket,labels,aupr\n");
    for b in &r.buckets {
        out.push_str(&format!("{},{},{}\n", b.bucket, b.labels, opt(b.aupr)));
    }
    out
}

fn find_doc<'a>(ds: &'a Dataset, id: &str) -> Result<&'a Document> {
    [Split::Train, Split::Valid, Split::Test]
        .iter()
        .flat_map(|&s| ds.split(s))
        .find(|d| d.id == id)
        .ok_or_else(|| Error::Input(format!("unknown document id {id:?}")))
}

/// γ and top words for each requested document. Without explicit label
/// codes, a document's labels are its true labels plus every label scored
/// at or above `threshold`.
pub fn explain(
    model: &Model,
    ds: &Dataset,
    doc_ids: &[String],
    label_codes: Option<&[String]>,
    threshold: f64,
    k: usize,
) -> Result<Vec<TraceRecord>> {
    let fixed: Option<Vec<usize>> = label_codes
        .map(|codes| {
            codes
                .iter()
                .map(|c| {
                    ds.catalog
                        .id(c)
                        .ok_or_else(|| Error::Input(format!("unknown label {c:?}")))
                })
                .collect()
        })
        .transpose()?;
    let mut out = Vec::new();
    for id in doc_ids {
        let doc = find_doc(ds, id)?;
        let (scores, trace) = model.predict_traced(doc)?;
        let labels = match &fixed {
            Some(ls) => ls.clone(),
            None => (0..scores.len())
                .filter(|&l| doc.labels.contains(&l) || scores[l] >= threshold)
                .collect(),
        };
        for l in labels {
            let gamma = explain_gamma(&trace, l, model.version())?;
            let top = top_k_words(&gamma, doc, &ds.vocab, k.min(doc.real_len().max(1)))?;
            out.push(TraceRecord::new(&doc.id, ds.catalog.code(l), gamma, top));
        }
    }
    Ok(out)
}

/// Pseudo mode per label from traces of both models on the same documents.
pub fn match_modes(pseudo: &Model, labelwise: &Model, docs: &[Document]) -> Result<Vec<usize>> {
    let traces = |m: &Model| -> Result<Vec<_>> {
        docs.par_iter()
            .map(|d| m.predict_traced(d).map(|(_, t)| t))
            .collect()
    };
    attention_mode_match(&traces(pseudo)?, &traces(labelwise)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModesReport {
    pub n_docs: usize,
    pub modes: BTreeMap<String, usize>,
    pub prefix_len: usize,
    /// Share of sibling label pairs mapped to one mode.
    pub sibling_same_mode_rate: Option<f64>,
    pub nonsibling_same_mode_rate: Option<f64>,
}

/// Same-mode rates over pairs of included labels, split by whether the two
/// codes share their first `prefix_len` characters.
pub fn same_mode_rates(
    modes: &[usize],
    catalog: &LabelCatalog,
    include: &[bool],
    prefix_len: usize,
) -> (Option<f64>, Option<f64>) {
    let ids: Vec<usize> = (0..modes.len()).filter(|&l| include[l]).collect();
    let prefixes: Vec<String> = (0..modes.len())
        .map(|l| code_prefix(catalog.code(l), prefix_len))
        .collect();
    let (mut sib, mut sib_same, mut other, mut other_same) = (0u64, 0u64, 0u64, 0u64);
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let same = modes[a] == modes[b];
            if prefixes[a] == prefixes[b] {
                sib += 1;
                sib_same += same as u64;
            } else {
                other += 1;
                other_same += same as u64;
            }
        }
    }
    let rate = |hit: u64, total: u64| (total > 0).then(|| hit as f64 / total as f64);
    (rate(sib_same, sib), rate(other_same, other))
}

pub fn modes_report(
    modes: &[usize],
    catalog: &LabelCatalog,
    include: &[bool],
    n_docs: usize,
    prefix_len: usize,
) -> ModesReport {
    let (sib, other) = same_mode_rates(modes, catalog, include, prefix_len);
    ModesReport {
        n_docs,
        modes: modes
            .iter()
            .enumerate()
            .map(|(l, &m)| (catalog.code(l).to_owned(), m))
            .collect(),
        prefix_len,
        sibling_same_mode_rate: sib,
        nonsibling_same_mode_rate: other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_mode_rates_count_pairs() {
        let catalog =
            LabelCatalog::new([("A01", "x"), ("A02", "y"), ("B01", "z"), ("B02", "w")]).unwrap();
        // siblings (A01,A02) same, (B01,B02) differ; cross pairs: A01-B01 same
        let modes = [0, 0, 0, 1];
        let (s, o) = same_mode_rates(&modes, &catalog, &[true; 4], 1);
        assert_eq!(s, Some(0.5));
        assert_eq!(o, Some(2.0 / 4.0));
        let (s, o) = same_mode_rates(&modes, &catalog, &[true, true, false, false], 1);
        assert_eq!((s, o), (Some(1.0), None));
    }

    #[test]
    fn random_recall_is_k_over_n() {
        assert_eq!(random_recall(10, 50), 0.2);
        assert_eq!(random_recall(10, 4), 1.0);
    }
}
