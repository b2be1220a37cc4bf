//! Mini-batch training with early stopping on validation micro F1.

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::corpus::{prepare, read_corpus, Dataset};
use super::optim::{self, OptimConfig, OptimState};
use crate::error::{Error, Result};
use crate::labels::{embed_catalog, load_label_vectors, LabelCatalog};
use crate::metrics::micro_f1;
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::text::{skipgram_pretrain, Document, SkipGramConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

/// Derives an independent stream seed from the run seed and two counters.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reads the corpus and catalog named by the config and preprocesses them.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let raw = read_corpus(cfg.require("corpus")?)?;
    let catalog = LabelCatalog::load_tsv(cfg.require("catalog")?)?;
    prepare(&raw, catalog, cfg)
}

/// Skip-gram word vectors over the dataset's embedding corpus.
pub fn pretrain_embeddings(cfg: &RunConfig, ds: &Dataset) -> Result<Tensor> {
    let sg = SkipGramConfig {
        dim: cfg.d_e,
        window: cfg.emb_window,
        negatives: cfg.emb_negatives,
        epochs: cfg.emb_epochs,
        seed: stream_seed(cfg.seed, 1, 0),
        ..SkipGramConfig::default()
    };
    skipgram_pretrain(&ds.embedding_corpus, ds.vocab.len(), &sg)
}

/// Label vectors from the configured file, or averaged word vectors of
/// each label description.
pub fn label_vectors(cfg: &RunConfig, ds: &Dataset, table: &Tensor) -> Result<Tensor> {
    match &cfg.vectors {
        Some(path) => {
            let mut catalog = ds.catalog.clone();
            load_label_vectors(path, &mut catalog)?;
            let v = catalog.vectors().cloned().expect("vectors were just installed");
            if v.shape()[1] != cfg.d_t {
                return Err(Error::Config(format!(
                    "label vectors have {} columns but d_t = {}",
                    v.shape()[1],
                    cfg.d_t
                )));
            }
            Ok(v)
        }
        None => Ok(standardize(&embed_catalog(&ds.catalog, cfg.tokenizer, &ds.vocab, table)?)),
    }
}

/// Removes the catalog mean from every label vector and rescales each to
/// unit length. Averaged word vectors share a large common component that
/// otherwise makes every label attend to the same modes.
pub fn standardize(v: &Tensor) -> Tensor {
    let (n, d) = v.dims2();
    let mean: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|r| v.at(r, c)).sum::<f64>() / n as f64)
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        let row: Vec<f64> = v.row(r).iter().zip(&mean).map(|(x, m)| x - m).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let k = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        data.extend(row.iter().map(|x| x * k));
    }
    Tensor::new(vec![n, d], data).expect("same shape")
}

pub fn model_config(cfg: &RunConfig, ds: &Dataset) -> ModelConfig {
    ModelConfig {
        vocab_size: ds.vocab.len(),
        n_labels: ds.catalog.len(),
        d_e: cfg.d_e,
        d_c: cfg.d_c,
        d_t: cfg.d_t,
        head: cfg.head,
        m: cfg.m.clone(),
        dropout: cfg.dropout,
    }
}

/// Evaluation-mode scores for every document, in order.
pub fn predict_all(model: &Model, docs: &[Document]) -> Result<Vec<Vec<f64>>> {
    docs.par_iter().map(|d| model.predict(d)).collect()
}

pub fn truths(docs: &[Document]) -> Vec<Vec<usize>> {
    docs.iter().map(|d| d.labels.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_micro_f1: f64,
    pub best_valid_micro_f1: f64,
    pub improved: bool,
}

#[derive(Serialize)]
struct LogHeader<'a> {
    patience: usize,
    patience_unit: &'a str,
    seed: u64,
    head: String,
    optimizer: String,
    n_train: usize,
    n_valid: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-epoch parameters and the optimizer state that produced them.
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
}

fn write_line(log: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(log, "{line}").map_err(|e| Error::io("training log", e))
}

/// Trains from a fresh model. `log` receives a JSON header line and then
/// one JSON line per epoch.
pub fn train(
    cfg: &RunConfig,
    ds: &Dataset,
    pretrained: Option<&Tensor>,
    label_vectors: Tensor,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if ds.valid.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let mut model = Model::new(model_config(cfg, ds), label_vectors, pretrained, cfg.seed)?;
    let header = LogHeader {
        patience: cfg.patience,
        patience_unit: "epochs",
        seed: cfg.seed,
        head: cfg.head.to_string(),
        optimizer: cfg.optimizer.to_string(),
        n_train: ds.train.len(),
        n_valid: ds.valid.len(),
    };
    write_line(log, &serde_json::to_string(&header).expect("header serializes"))?;

    let ocfg = OptimConfig::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut state = OptimState::default();
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2, 0));
    let valid_truths = truths(&ds.valid);
    // labels absent from training are outside the training label space
    let counts = ds.catalog.train_counts();
    let seen: Vec<usize> = (0..counts.len()).filter(|&l| counts[l] > 0).collect();
    let scope = (seen.len() < ds.catalog.len()).then_some(seen.as_slice());

    let mut best: Option<Checkpoint> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, BTreeMap<String, Tensor>)> = batch
                .par_iter()
                .map(|&i| {
                    let seed = stream_seed(cfg.seed, epoch as u64, i as u64 + 1);
                    model.loss_and_grads(&ds.train[i], seed, scope)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
            for (loss, grads) in results {
                loss_sum += loss;
                for (name, g) in grads {
                    match total.get_mut(&name) {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, x)| *a += x),
                        None => {
                            total.insert(name, g);
                        }
                    }
                }
            }
            total
                .values_mut()
                .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= scale));
            optim::step(model.params_mut(), &total, &mut state, &ocfg)?;
        }
        let train_loss = loss_sum / ds.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }

        let f1 = micro_f1(&predict_all(&model, &ds.valid)?, &valid_truths, cfg.threshold)?;
        let improved = f1 > best_f1;
        if improved {
            best_f1 = f1;
            since_best = 0;
            best = Some(Checkpoint {
                config_text: cfg.to_text(),
                epoch: epoch as u64,
                best_metric: f1,
                seed: cfg.seed,
                model: model.clone(),
                optim: state.clone(),
            });
        } else {
            since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            valid_micro_f1: f1,
            best_valid_micro_f1: best_f1,
            improved,
        };
        write_line(log, &serde_json::to_string(&entry).expect("log entries serialize"))?;
        epochs.push(entry);
        if since_best > cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch ran"),
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_differ_across_counters() {
        let s: std::collections::HashSet<u64> = (0..50)
            .flat_map(|a| (0..50).map(move |b| stream_seed(7, a, b)))
            .collect();
        assert_eq!(s.len(), 2500);
        assert_eq!(stream_seed(1, 2, 3), stream_seed(1, 2, 3));
    }

    #[test]
    fn standardized_vectors_are_centered_unit_rows() {
        let v = Tensor::new(vec![3, 2], vec![5.0, 1.0, 6.0, 1.5, 5.5, 4.0]).unwrap();
        let s = standardize(&v);
        for c in 0..2 {
            let centered: Vec<f64> = (0..3).map(|r| v.at(r, c) - [5.5, 6.5 / 3.0][c]).collect();
            for r in 0..3 {
                assert_eq!(s.at(r, c).signum(), centered[r].signum());
            }
        }
        for r in 0..3 {
            let n: f64 = s.row(r).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let flat = standardize(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 1.0, 2.0]).unwrap());
        assert!(flat.data().iter().all(|&x| x == 0.0));
    }
}
