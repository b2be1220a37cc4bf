//! Attention heads, similarity scoring, and attention attribution.
//!
//! The pseudo head scores every position against `m` shared attention
//! modes (`x W + b`, softmax over positions), pools `x` per mode, and maps
//! each pooled vector through a dense+ReLU layer `h`. Layers stack by
//! treating the previous layer's `m` outputs as positions. Each real label
//! then mixes the mode outputs with weights `β = softmax(u vᵀ)` and a
//! shared dense+sigmoid `f` turns the mixture into a probability.
//!
//! The label-wise head is the same single layer with one mode per label,
//! scored by `f` directly.

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, Params};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::{Document, Vocab};
use rand::Rng;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

pub const SCORE_W: &str = "score.w";
pub const SCORE_B: &str = "score.b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadKind {
    #[default]
    Pseudo,
    Labelwise,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo" => Ok(HeadKind::Pseudo),
            "labelwise" => Ok(HeadKind::Labelwise),
            other => Err(Error::Config(format!(
                "unknown head {other:?} (expected pseudo or labelwise)"
            ))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Pseudo => "pseudo",
            HeadKind::Labelwise => "labelwise",
        })
    }
}

/// Block names of attention layer `k` (0-based).
#[derive(Debug, Clone, Copy)]
pub struct LayerNames(pub usize);

impl LayerNames {
    pub fn w(self) -> String {
        format!("attn.{}.w", self.0)
    }
    pub fn b(self) -> String {
        format!("attn.{}.b", self.0)
    }
    pub fn h_w(self) -> String {
        format!("attn.{}.h.w", self.0)
    }
    pub fn h_b(self) -> String {
        format!("attn.{}.h.b", self.0)
    }
}

/// Adds attention layers with mode counts `sizes` and the shared scorer.
/// Intermediate layers keep width `d_c`; the last maps to `d_t`.
pub fn init_head(
    params: &mut Params,
    d_c: usize,
    d_t: usize,
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Param(format!(
            "attention layer sizes must be non-empty and positive, got {sizes:?}"
        )));
    }
    if d_c == 0 || d_t == 0 {
        return Err(Error::Param("d_c and d_t must be positive".into()));
    }
    for (k, &m) in sizes.iter().enumerate() {
        let names = LayerNames(k);
        let d_out = if k + 1 == sizes.len() { d_t } else { d_c };
        params.insert(names.w(), glorot(d_c, m, rng));
        params.insert(names.b(), Tensor::zeros(&[1, m]));
        params.insert(names.h_w(), glorot(d_c, d_out, rng));
        params.insert(names.h_b(), Tensor::full(&[1, d_out], 0.01));
    }
    params.insert(SCORE_W, glorot(d_t, 1, rng));
    params.insert(SCORE_B, Tensor::zeros(&[1, 1]));
    Ok(())
}

/// One attention layer over `x` (`positions × d_in`). Returns the mode
/// outputs (`m × d_out`) and the attention matrix α (`positions × m`).
pub fn attention_layer(
    g: &mut Graph,
    p: &Bound,
    k: usize,
    x: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let names = LayerNames(k);
    let w = p.var(&names.w())?;
    let (xs, ws) = (g.shape(x), g.shape(w));
    if xs.len() != 2 || xs[1] != ws[0] {
        return Err(Error::Shape(format!(
            "layer {k} input {xs:?} against weights {ws:?}"
        )));
    }
    let scores = g.matmul(x, w)?;
    let scores = g.add(scores, p.var(&names.b())?)?;
    let alpha = g.softmax(scores, 0, mask)?;
    let alpha_t = g.transpose(alpha)?;
    let pooled = g.head_matmul(alpha_t, x)?;
    let dense = g.matmul(pooled, p.var(&names.h_w())?)?;
    let dense = g.add(dense, p.var(&names.h_b())?)?;
    Ok((g.relu(dense), alpha))
}

/// Single pseudo attention layer over the encoder output.
pub fn pseudo_attention(g: &mut Graph, p: &Bound, x: Var, mask: &[bool]) -> Result<(Var, Var)> {
    attention_layer(g, p, 0, x, Some(mask))
}

/// `layers` stacked attention layers; returns the final mode outputs and
/// every layer's α.
pub fn stack_attention(
    g: &mut Graph,
    p: &Bound,
    x: Var,
    mask: &[bool],
    layers: usize,
) -> Result<(Var, Vec<Var>)> {
    if layers == 0 {
        return Err(Error::Param("at least one attention layer is required".into()));
    }
    let (mut u, first) = pseudo_attention(g, p, x, mask)?;
    let mut alphas = vec![first];
    for k in 1..layers {
        let (next, alpha) = attention_layer(g, p, k, u, None)?;
        u = next;
        alphas.push(alpha);
    }
    Ok((u, alphas))
}

/// One attention mode per label; returns `n × d_t` label vectors and α.
pub fn labelwise_attention(g: &mut Graph, p: &Bound, x: Var, mask: &[bool]) -> Result<(Var, Var)> {
    attention_layer(g, p, 0, x, Some(mask))
}

/// `s_i = f(Σ_j β_ij u_j)` with `β_i = softmax_j(u_j · v_i)`. Returns the
/// scores (`n × 1`) and β (`n × m`).
pub fn similarity_scores(g: &mut Graph, p: &Bound, u: Var, v: Var) -> Result<(Var, Var)> {
    let (us, vs) = (g.shape(u), g.shape(v));
    if us.len() != 2 || vs.len() != 2 || us[1] != vs[1] {
        return Err(Error::Shape(format!(
            "mode outputs {us:?} against label vectors {vs:?}"
        )));
    }
    let u_t = g.transpose(u)?;
    let logits = g.matmul(v, u_t)?;
    let beta = g.softmax(logits, 1, None)?;
    let mixed = g.head_matmul(beta, u)?;
    Ok((score(g, p, mixed)?, beta))
}

/// Shared dense+sigmoid scorer applied row-wise.
pub fn score(g: &mut Graph, p: &Bound, rows: Var) -> Result<Var> {
    let z = g.matmul(rows, p.var(SCORE_W)?)?;
    let z = g.add(z, p.var(SCORE_B)?)?;
    Ok(g.sigmoid(z))
}

/// Summed binary cross-entropy of one document's scores.
pub fn bce_loss(g: &mut Graph, s: Var, y: &[f64]) -> Result<Var> {
    g.bce(s, y)
}

/// Attention matrices of one forward pass, kept for attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub doc: String,
    pub mask: Vec<bool>,
    /// α per layer: `l_r × m_1`, `m_1 × m_2`, …
    pub alphas: Vec<Tensor>,
    /// `n × m`; absent for the label-wise head.
    pub beta: Option<Tensor>,
    /// Parameter version the trace was produced under.
    pub version: u64,
}

/// Attention weight per input position behind label `label`'s score:
/// `α¹ α² … αᴷ β_iᵀ`, or α's column `label` for the label-wise head.
pub fn explain_gamma(trace: &AttentionTrace, label: usize, version: u64) -> Result<Vec<f64>> {
    if trace.version != version {
        return Err(Error::Contract(format!(
            "trace of document {:?} was recorded at parameter version {}, model is at {version}",
            trace.doc, trace.version
        )));
    }
    let first = trace
        .alphas
        .first()
        .ok_or_else(|| Error::Contract("trace holds no attention".into()))?;
    let selector = match &trace.beta {
        Some(beta) => {
            let (n, _) = beta.dims2();
            if label >= n {
                return Err(Error::Index(format!("label {label} out of range ({n} labels)")));
            }
            beta.row(label).to_vec()
        }
        None => {
            let (_, n) = trace.alphas.last().map(Tensor::dims2).unwrap_or((0, 0));
            if label >= n {
                return Err(Error::Index(format!("label {label} out of range ({n} labels)")));
            }
            let mut one = vec![0.0; n];
            one[label] = 1.0;
            one
        }
    };
    // right-to-left: fold the selector back through the layers
    let mut weights = selector;
    for alpha in trace.alphas.iter().rev() {
        let (rows, cols) = alpha.dims2();
        if cols != weights.len() {
            return Err(Error::Shape(format!(
                "attention {:?} against {} weights",
                alpha.shape(),
                weights.len()
            )));
        }
        weights = (0..rows)
            .map(|r| alpha.row(r).iter().zip(&weights).map(|(a, w)| a * w).sum())
            .collect();
    }
    debug_assert_eq!(weights.len(), first.dims2().0);
    Ok(weights)
}

/// One attributed word.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordWeight {
    pub token: String,
    pub position: usize,
    pub weight: f64,
}

/// The `k` real positions with the largest γ, ties to the earlier position.
pub fn top_k_words(gamma: &[f64], doc: &Document, vocab: &Vocab, k: usize) -> Result<Vec<WordWeight>> {
    if k == 0 {
        return Err(Error::Param("k must be at least 1".into()));
    }
    if gamma.len() != doc.l_r() {
        return Err(Error::Shape(format!(
            "{} weights for a document of length {}",
            gamma.len(),
            doc.l_r()
        )));
    }
    let mut positions: Vec<usize> = (0..gamma.len()).filter(|&p| doc.mask[p]).collect();
    positions.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
    Ok(positions
        .into_iter()
        .take(k)
        .map(|p| WordWeight {
            token: vocab.token(doc.tokens[p]).unwrap_or("<unk>").to_owned(),
            position: p,
            weight: gamma[p],
        })
        .collect())
}

/// One line of the trace export.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub doc: String,
    pub label: String,
    pub gamma: Vec<f64>,
    pub top_words: Vec<(String, usize, f64)>,
}

impl TraceRecord {
    pub fn new(doc: &str, label: &str, gamma: Vec<f64>, top: Vec<WordWeight>) -> Self {
        Self {
            doc: doc.to_owned(),
            label: label.to_owned(),
            gamma,
            top_words: top
                .into_iter()
                .map(|w| (w.token, w.position, w.weight))
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}
