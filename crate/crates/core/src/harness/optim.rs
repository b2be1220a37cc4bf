//! LAMB and Adam updates over named parameter blocks.

use super::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay,
        }
    }
}

/// First and second moments per block plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One optimizer step. Every gradient is checked for finiteness before any
/// parameter changes.
pub fn step(
    params: &mut Params,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<()> {
    for (name, g) in grads {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in block {name}")));
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for block {name} of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let mut r = Vec::with_capacity(g.len());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            r.push(m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.data()[i]);
        }
        let ratio = match cfg.kind {
            OptimizerKind::Adam => 1.0,
            OptimizerKind::Lamb => trust_ratio(p.data(), &r),
        };
        for (pi, ri) in p.data_mut().iter_mut().zip(&r) {
            *pi -= cfg.lr * ratio * ri;
        }
    }
    Ok(())
}

/// `‖p‖ / ‖r‖`, or 1 when either norm is zero.
pub fn trust_ratio(p: &[f64], r: &[f64]) -> f64 {
    let (pn, rn) = (l2(p), l2(r));
    if pn == 0.0 || rn == 0.0 {
        1.0
    } else {
        pn / rn
    }
}
