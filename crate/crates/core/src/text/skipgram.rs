//! Skip-gram with negative sampling over token-id sequences.

use super::vocab::UNK;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 3,
            negatives: 5,
            epochs: 5,
            seed: 0,
            learning_rate: 0.025,
        }
    }
}

/// Trainer state: input (returned) and output vector tables.
pub struct SkipGram {
    cfg: SkipGramConfig,
    vocab_size: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    noise: Option<WeightedIndex<f64>>,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

fn trainable(id: usize) -> bool {
    id > UNK
}

impl SkipGram {
    pub fn new(corpus: &[Vec<usize>], vocab_size: usize, cfg: SkipGramConfig) -> Result<Self> {
        if cfg.window < 1 {
            return Err(Error::Param("skip-gram window must be at least 1".into()));
        }
        if cfg.negatives < 1 {
            return Err(Error::Param("skip-gram needs at least one negative".into()));
        }
        if cfg.dim == 0 || vocab_size == 0 {
            return Err(Error::Param("embedding table must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = 0.5 / cfg.dim as f64;
        let input = (0..vocab_size * cfg.dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        let mut counts = vec![0.0f64; vocab_size];
        for &id in corpus.iter().flatten() {
            if id >= vocab_size {
                return Err(Error::Index(format!("token id {id} >= vocab size {vocab_size}")));
            }
            if trainable(id) {
                counts[id] += 1.0;
            }
        }
        let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
        let noise = WeightedIndex::new(&weights).ok();
        Ok(Self {
            output: vec![0.0; vocab_size * cfg.dim],
            cfg,
            vocab_size,
            input,
            noise,
            rng,
            epochs_done: 0,
        })
    }

    /// One pass over the corpus. Returns the mean negative objective per
    /// (center, context) pair, measured before each update.
    pub fn train_epoch(&mut self, corpus: &[Vec<usize>]) -> f64 {
        let Some(noise) = self.noise.clone() else {
            self.epochs_done += 1;
            return 0.0;
        };
        let d = self.cfg.dim;
        let total = self.cfg.epochs.max(1) as f64;
        let lr = self.cfg.learning_rate * (1.0 - self.epochs_done as f64 / total).max(1e-4);
        let mut loss = 0.0;
        let mut pairs = 0usize;
        let mut neu = vec![0.0; d];
        for seq in corpus {
            for (pos, &center) in seq.iter().enumerate() {
                if !trainable(center) {
                    continue;
                }
                let lo = pos.saturating_sub(self.cfg.window);
                let hi = (pos + self.cfg.window + 1).min(seq.len());
                for (cpos, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos || !trainable(context) {
                        continue;
                    }
                    neu.iter_mut().for_each(|v| *v = 0.0);
                    let e = center * d;
                    for k in 0..=self.cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut self.rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let o = target * d;
                        let dot: f64 = (0..d).map(|j| self.input[e + j] * self.output[o + j]).sum();
                        let p = crate::tensor::Act::Sigmoid.apply(dot);
                        loss -= if label == 1.0 {
                            p.max(1e-300).ln()
                        } else {
                            (1.0 - p).max(1e-300).ln()
                        };
                        let g = lr * (label - p);
                        for j in 0..d {
                            neu[j] += g * self.output[o + j];
                            self.output[o + j] += g * self.input[e + j];
                        }
                    }
                    for j in 0..d {
                        self.input[e + j] += neu[j];
                    }
                    pairs += 1;
                }
            }
        }
        self.epochs_done += 1;
        if pairs == 0 {
            0.0
        } else {
            loss / pairs as f64
        }
    }

    pub fn table(&self) -> Tensor {
        Tensor::new(vec![self.vocab_size, self.cfg.dim], self.input.clone())
            .expect("table shape is consistent by construction")
    }
}

/// Pre-trains a `vocab_size × dim` input embedding table on `corpus`.
pub fn skipgram_pretrain(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
) -> Result<Tensor> {
    let mut sg = SkipGram::new(corpus, vocab_size, cfg.clone())?;
    for _ in 0..cfg.epochs {
        sg.train_epoch(corpus);
    }
    Ok(sg.table())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two disjoint cliques: ids 2..7 and 7..12.
    fn clique_corpus(seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..80)
            .map(|i| {
                let base = if i % 2 == 0 { 2 } else { 7 };
                (0..20).map(|_| base + rng.gen_range(0..5)).collect()
            })
            .collect()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let corpus = clique_corpus(0);
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 0,
            seed: 11,
            ..Default::default()
        };
        let t = skipgram_pretrain(&corpus, 12, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let expected: Vec<f64> = (0..96).map(|_| rng.gen_range(-0.0625..0.0625)).collect();
        assert_eq!(t.data(), &expected[..]);
        assert!(t.data().iter().all(|v| v.abs() <= 0.5 / 8.0));
    }

    #[test]
    fn parameter_errors() {
        let corpus = clique_corpus(0);
        let bad_window = SkipGramConfig {
            window: 0,
            ..Default::default()
        };
        assert!(matches!(
            skipgram_pretrain(&corpus, 12, &bad_window),
            Err(Error::Param(_))
        ));
        let bad_neg = SkipGramConfig {
            negatives: 0,
            ..Default::default()
        };
        assert!(matches!(
            skipgram_pretrain(&corpus, 12, &bad_neg),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let corpus = clique_corpus(1);
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let a = skipgram_pretrain(&corpus, 12, &cfg).unwrap();
        let b = skipgram_pretrain(&corpus, 12, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cliques_separate_in_cosine() {
        let corpus = clique_corpus(2);
        let cfg = SkipGramConfig {
            dim: 16,
            epochs: 10,
            seed: 3,
            window: 2,
            ..Default::default()
        };
        let t = skipgram_pretrain(&corpus, 12, &cfg).unwrap();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for a in 2..12 {
            for b in (a + 1)..12 {
                let c = cosine(t.row(a), t.row(b));
                if (a < 7) == (b < 7) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        let (intra, inter) = (intra / ni as f64, inter / nx as f64);
        assert!(intra > inter, "intra {intra} inter {inter}");
    }

    #[test]
    fn epoch_loss_does_not_increase() {
        let corpus = clique_corpus(4);
        let cfg = SkipGramConfig {
            dim: 16,
            epochs: 6,
            seed: 9,
            ..Default::default()
        };
        let mut sg = SkipGram::new(&corpus, 12, cfg).unwrap();
        let losses: Vec<f64> = (0..6).map(|_| sg.train_epoch(&corpus)).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{losses:?}");
        }
        assert!(losses[5] < losses[0]);
    }
}
