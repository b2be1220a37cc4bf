//! Full classifier: encoder, attention head, and scorer.

use crate::attention::{
    bce_loss, init_head, labelwise_attention, score, similarity_scores, stack_attention,
    AttentionTrace, HeadKind,
};
use crate::encoder::{encode, init_encoder, EncoderDims};
use crate::error::{Error, Result};
use crate::params::{Bound, Params};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::Document;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_labels: usize,
    pub d_e: usize,
    pub d_c: usize,
    pub d_t: usize,
    pub head: HeadKind,
    /// Mode count per pseudo layer; ignored by the label-wise head.
    pub m: Vec<usize>,
    pub dropout: f64,
}

impl ModelConfig {
    /// Attention layer sizes actually instantiated.
    pub fn layer_sizes(&self) -> Vec<usize> {
        match self.head {
            HeadKind::Pseudo => self.m.clone(),
            HeadKind::Labelwise => vec![self.n_labels],
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `n × 1` label probabilities.
    pub scores: Var,
    pub alphas: Vec<Var>,
    pub beta: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Params,
    label_vectors: Tensor,
    version: u64,
}

impl Model {
    /// Fresh model with seeded initialisation.
    pub fn new(
        config: ModelConfig,
        label_vectors: Tensor,
        pretrained: Option<&Tensor>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let dims = EncoderDims {
            vocab_size: config.vocab_size,
            d_e: config.d_e,
            d_c: config.d_c,
        };
        init_encoder(&mut params, dims, pretrained, &mut rng)?;
        init_head(&mut params, config.d_c, config.d_t, &config.layer_sizes(), &mut rng)?;
        Self::from_parts(config, params, label_vectors, 0)
    }

    pub fn from_parts(
        config: ModelConfig,
        params: Params,
        label_vectors: Tensor,
        version: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Param(format!(
                "dropout {} outside [0, 1)",
                config.dropout
            )));
        }
        if config.n_labels == 0 {
            return Err(Error::Param("model needs at least one label".into()));
        }
        if label_vectors.shape() != [config.n_labels, config.d_t] {
            return Err(Error::Shape(format!(
                "label vectors {:?}, expected [{}, {}]",
                label_vectors.shape(),
                config.n_labels,
                config.d_t
            )));
        }
        Ok(Self {
            config,
            params,
            label_vectors,
            version,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access; any outstanding attention traces become stale.
    pub fn params_mut(&mut self) -> &mut Params {
        self.version += 1;
        &mut self.params
    }

    pub fn label_vectors(&self) -> &Tensor {
        &self.label_vectors
    }

    /// Incremented on every parameter mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        doc: &Document,
        train: bool,
        seed: u64,
    ) -> Result<Forward> {
        let x = encode(g, p, doc, self.config.dropout, train, seed)?;
        match self.config.head {
            HeadKind::Pseudo => {
                let (u, alphas) = stack_attention(g, p, x, &doc.mask, self.config.m.len())?;
                let v = g.constant(self.label_vectors.clone());
                let (scores, beta) = similarity_scores(g, p, u, v)?;
                Ok(Forward {
                    scores,
                    alphas,
                    beta: Some(beta),
                })
            }
            HeadKind::Labelwise => {
                let (vecs, alpha) = labelwise_attention(g, p, x, &doc.mask)?;
                Ok(Forward {
                    scores: score(g, p, vecs)?,
                    alphas: vec![alpha],
                    beta: None,
                })
            }
        }
    }

    /// 0/1 target vector of a document.
    pub fn targets(&self, doc: &Document) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.config.n_labels];
        for &l in &doc.labels {
            *y.get_mut(l).ok_or_else(|| {
                Error::Index(format!("label id {l} out of range in document {:?}", doc.id))
            })? = 1.0;
        }
        Ok(y)
    }

    /// Training loss of one document and the gradient of every block.
    /// With `scope`, only those labels enter the loss.
    pub fn loss_and_grads(
        &self,
        doc: &Document,
        seed: u64,
        scope: Option<&[usize]>,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let y = self.targets(doc)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let fwd = self.forward(&mut g, &p, doc, true, seed)?;
        let loss = match scope {
            Some(ids) => {
                let s = g.gather_rows(fwd.scores, ids)?;
                let y: Vec<f64> = ids.iter().map(|&i| y[i]).collect();
                bce_loss(&mut g, s, &y)?
            }
            None => bce_loss(&mut g, fwd.scores, &y)?,
        };
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], p.grads(&g)))
    }

    /// Evaluation-mode label probabilities.
    pub fn predict(&self, doc: &Document) -> Result<Vec<f64>> {
        Ok(self.predict_traced(doc)?.0)
    }

    /// Probabilities plus the attention trace of the pass.
    pub fn predict_traced(&self, doc: &Document) -> Result<(Vec<f64>, AttentionTrace)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let fwd = self.forward(&mut g, &p, doc, false, 0)?;
        let trace = AttentionTrace {
            doc: doc.id.clone(),
            mask: doc.mask.clone(),
            alphas: fwd.alphas.iter().map(|&a| g.value(a).clone()).collect(),
            beta: fwd.beta.map(|b| g.value(b).clone()),
            version: self.version,
        };
        Ok((g.value(fwd.scores).data().to_vec(), trace))
    }
}
