//! Synthetic hierarchical multi-label corpus.
//!
//! Labels are the leaves of a prefix-coded tree: a letter for the first
//! level, two digits for the second, and `.`-separated digits below, so
//! `C01.2` is the third child of `C01`. Every node owns a handful of
//! tokens. A leaf's token distribution puts 70% of its mass on its
//! parent's distribution and 30% on its own tokens, so siblings overlap
//! heavily. Documents mix background tokens with tokens drawn from their
//! labels.

use super::corpus::{RawDoc, Split};
use crate::error::{Error, Result};
use crate::labels::LabelCatalog;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub depth: usize,
    pub branching: usize,
    pub n_docs: usize,
    pub doc_len: usize,
    pub vocab_size: usize,
    pub zero_shot_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_labels: 50,
            depth: 3,
            branching: 4,
            n_docs: 260,
            doc_len: 120,
            vocab_size: 600,
            zero_shot_fraction: 0.0,
            seed: 0,
        }
    }
}

const LEAF_PARENT_SHARE: f64 = 0.7;
const INNER_PARENT_SHARE: f64 = 0.5;
const BACKGROUND_SHARE: f64 = 0.5;
const SIBLING_BIAS: f64 = 0.6;
const NODE_TOKENS: usize = 6;
const LEAF_TOKENS: usize = 4;
const TITLE_LEN: usize = 3;

fn code(path: &[usize]) -> String {
    let mut s = String::new();
    for (level, &i) in path.iter().enumerate() {
        match level {
            0 => s.push((b'A' + i as u8) as char),
            1 => s.push_str(&format!("{i:02}")),
            2 => s.push_str(&format!(".{i}")),
            _ => s.push_str(&i.to_string()),
        }
    }
    s
}

/// First `n` leaf paths in lexicographic order.
fn leaf_paths(depth: usize, branching: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    let mut path = vec![0; depth];
    while out.len() < n {
        out.push(path.clone());
        let mut k = depth;
        while k > 0 {
            k -= 1;
            path[k] += 1;
            if path[k] < branching {
                break;
            }
            path[k] = 0;
        }
    }
    out
}

type Dist = Vec<(usize, f64)>;

fn mix(parent: &Dist, own: &[usize], parent_share: f64) -> Dist {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for &(w, p) in parent {
        *acc.entry(w).or_default() += parent_share * p;
    }
    for &w in own {
        *acc.entry(w).or_default() += (1.0 - parent_share) / own.len() as f64;
    }
    acc.into_iter().collect()
}

fn sampler(d: &Dist) -> (Vec<usize>, WeightedIndex<f64>) {
    let words = d.iter().map(|&(w, _)| w).collect();
    let idx = WeightedIndex::new(d.iter().map(|&(_, p)| p)).expect("positive weights");
    (words, idx)
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

/// Generates a corpus (with explicit splits) and its label catalog.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vec<RawDoc>, LabelCatalog)> {
    let SynthConfig {
        n_labels,
        depth,
        branching,
        n_docs,
        doc_len,
        vocab_size,
        zero_shot_fraction,
        seed,
    } = *cfg;
    if !(1..=4).contains(&depth) || !(1..=10).contains(&branching) {
        return Err(Error::Param(format!(
            "depth {depth} must be 1..=4 and branching {branching} 1..=10"
        )));
    }
    if n_labels == 0 || (branching as u64).pow(depth as u32) < n_labels as u64 {
        return Err(Error::Param(format!(
            "a tree with branching {branching} and depth {depth} cannot hold {n_labels} labels"
        )));
    }
    if n_docs < 3 || doc_len == 0 {
        return Err(Error::Param("need at least 3 documents of positive length".into()));
    }
    if !(0.0..1.0).contains(&zero_shot_fraction) {
        return Err(Error::Param(format!(
            "zero_shot_fraction {zero_shot_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let leaves = leaf_paths(depth, branching, n_labels);
    let mut inner: Vec<Vec<usize>> = leaves
        .iter()
        .flat_map(|p| (1..p.len()).map(move |k| p[..k].to_vec()))
        .collect();
    inner.sort();
    inner.dedup();

    let n_background = (vocab_size / 5).max(1);
    let needed = n_background + inner.len() * NODE_TOKENS + leaves.len() * LEAF_TOKENS;
    if vocab_size < needed {
        return Err(Error::Param(format!(
            "vocab_size {vocab_size} too small, this tree needs {needed}"
        )));
    }
    let mut pool: Vec<usize> = (n_background..vocab_size).collect();
    pool.shuffle(&mut rng);
    let mut take = |k: usize| pool.split_off(pool.len() - k);

    let mut dists: BTreeMap<Vec<usize>, Dist> = BTreeMap::new();
    for node in &inner {
        let own = take(NODE_TOKENS);
        let d = match dists.get(&node[..node.len() - 1]) {
            Some(parent) if node.len() > 1 => mix(parent, &own, INNER_PARENT_SHARE),
            _ => mix(&Vec::new(), &own, 0.0),
        };
        dists.insert(node.clone(), d);
    }
    let leaf_dists: Vec<Dist> = leaves
        .iter()
        .map(|leaf| {
            let own = take(LEAF_TOKENS);
            match dists.get(&leaf[..leaf.len() - 1]) {
                Some(parent) => mix(parent, &own, LEAF_PARENT_SHARE),
                None => mix(&Vec::new(), &own, 0.0),
            }
        })
        .collect();
    let leaf_samplers: Vec<_> = leaf_dists.iter().map(sampler).collect();

    let codes: Vec<String> = leaves.iter().map(|p| code(p)).collect();
    let mut catalog_rows = Vec::with_capacity(n_labels);
    for (l, (words, idx)) in leaf_samplers.iter().enumerate() {
        let title: Vec<String> = (0..TITLE_LEN).map(|_| word(words[idx.sample(&mut rng)])).collect();
        catalog_rows.push((codes[l].clone(), title.join(" ")));
    }
    let catalog = LabelCatalog::new(catalog_rows)?;

    let n_zero = (zero_shot_fraction * n_labels as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_labels).collect();
    order.shuffle(&mut rng);
    let mut is_zero = vec![false; n_labels];
    order[..n_zero.min(n_labels - 1)].iter().for_each(|&l| is_zero[l] = true);
    let zero: Vec<usize> = (0..n_labels).filter(|&l| is_zero[l]).collect();
    let seen: Vec<usize> = (0..n_labels).filter(|&l| !is_zero[l]).collect();

    // Zipf-like label popularity over a random ranking
    let mut rank: Vec<usize> = (0..n_labels).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = rank.iter().map(|&r| 1.0 / ((r + 1) as f64).sqrt()).collect();
    let siblings: Vec<Vec<usize>> = (0..n_labels)
        .map(|l| {
            (0..n_labels)
                .filter(|&o| o != l && leaves[o][..depth - 1] == leaves[l][..depth - 1])
                .collect()
        })
        .collect();
    let bg_idx = WeightedIndex::new((0..n_background).map(|r| 1.0 / (r + 1) as f64))
        .expect("positive weights");
    let count_idx = WeightedIndex::new([0.3, 0.3, 0.2, 0.1, 0.1]).expect("positive weights");

    let n_valid = (n_docs / 10).max(1);
    let n_test = (n_docs / 10).max(1);
    let n_train = n_docs - n_valid - n_test;
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let allowed: &[usize] = if split == Split::Train { &seen } else { &(0..n_labels).collect::<Vec<_>>() };
        let allowed = allowed.to_vec();
        let weights: Vec<f64> = allowed.iter().map(|&l| popularity[l]).collect();
        let pick = WeightedIndex::new(&weights).expect("positive weights");

        let first = if split == Split::Train && i < seen.len() {
            // every seen label occurs in training at least once
            seen[i]
        } else if split == Split::Test && !zero.is_empty() && rng.gen_bool(0.5) {
            *zero.choose(&mut rng).expect("non-empty")
        } else {
            allowed[pick.sample(&mut rng)]
        };
        let want = count_idx.sample(&mut rng) + 1;
        let mut labels = vec![first];
        for _ in 1..want * 4 {
            if labels.len() == want {
                break;
            }
            let candidates: Vec<usize> = labels
                .iter()
                .flat_map(|&l| siblings[l].iter().copied())
                .filter(|s| !labels.contains(s) && allowed.contains(s))
                .collect();
            let next = if !candidates.is_empty() && rng.gen_bool(SIBLING_BIAS) {
                *candidates.choose(&mut rng).expect("non-empty")
            } else {
                allowed[pick.sample(&mut rng)]
            };
            if !labels.contains(&next) {
                labels.push(next);
            }
        }

        let mut tokens = Vec::with_capacity(doc_len);
        for _ in 0..doc_len {
            let w = if rng.gen_bool(BACKGROUND_SHARE) {
                bg_idx.sample(&mut rng)
            } else {
                let l = *labels.choose(&mut rng).expect("non-empty");
                let (words, idx) = &leaf_samplers[l];
                words[idx.sample(&mut rng)]
            };
            tokens.push(word(w));
        }
        labels.sort_unstable();
        docs.push(RawDoc {
            id: format!("doc{i:05}"),
            text: tokens.join(" "),
            labels: labels.iter().map(|&l| codes[l].clone()).collect(),
            split: Some(split),
        });
    }
    Ok((docs, catalog))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn codes_follow_the_path() {
        assert_eq!(code(&[2, 18, 1]), "C18.1");
        assert_eq!(code(&[0]), "A");
        assert_eq!(code(&[1, 3, 0, 2]), "B03.02");
        assert_eq!(leaf_paths(2, 2, 3), vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn structure_matches_the_request() {
        let cfg = SynthConfig {
            zero_shot_fraction: 0.2,
            ..SynthConfig::default()
        };
        let (docs, cat) = synth_generate(&cfg).unwrap();
        assert_eq!(docs.len(), cfg.n_docs);
        assert_eq!(cat.len(), cfg.n_labels);
        // scan oracle: codes are letter + two digits + '.' + digit and unique
        let mut seen = HashSet::new();
        for l in cat.labels() {
            let c: Vec<char> = l.code.chars().collect();
            assert_eq!(c.len(), 5, "{}", l.code);
            assert!(c[0].is_ascii_uppercase() && c[1].is_ascii_digit() && c[2].is_ascii_digit());
            assert_eq!(c[3], '.');
            assert!(c[4].is_ascii_digit() && (c[4] as usize - '0' as usize) < cfg.branching);
            assert!(seen.insert(l.code.clone()));
            assert_eq!(l.title.split_whitespace().count(), TITLE_LEN);
        }
        let codes: HashSet<&str> = cat.labels().iter().map(|l| l.code.as_str()).collect();
        for d in &docs {
            assert_eq!(d.text.split_whitespace().count(), cfg.doc_len);
            assert!((1..=5).contains(&d.labels.len()));
            assert!(d.labels.iter().all(|c| codes.contains(c.as_str())));
        }
        let train: HashSet<&String> = docs
            .iter()
            .filter(|d| d.split == Some(Split::Train))
            .flat_map(|d| &d.labels)
            .collect();
        let test: HashSet<&String> = docs
            .iter()
            .filter(|d| d.split == Some(Split::Test))
            .flat_map(|d| &d.labels)
            .collect();
        assert_eq!(train.len(), 40);
        assert!(test.iter().any(|c| !train.contains(c)));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg };
        assert_ne!(synth_generate(&cfg).unwrap().0, synth_generate(&other).unwrap().0);
    }

    #[test]
    fn infeasible_trees_are_rejected() {
        let bad = SynthConfig {
            n_labels: 100,
            branching: 4,
            depth: 3,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad), Err(Error::Param(_))));
        let tiny_vocab = SynthConfig {
            vocab_size: 50,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&tiny_vocab).is_err());
    }
}
