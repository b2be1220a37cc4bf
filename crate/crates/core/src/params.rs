//! Named parameter blocks and their binding onto a graph.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand::Rng;
use std::collections::BTreeMap;

/// Trainable weights keyed by block name. Iteration order is the name
/// order, which fixes the layout of checkpoints and optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    blocks: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.blocks.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Param(format!("no parameter block {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::Param(format!("no parameter block {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.blocks.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalar weights.
    pub fn size(&self) -> usize {
        self.blocks.values().map(Tensor::len).sum()
    }

    /// Registers every block as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .blocks
            .iter()
            .map(|(k, t)| (k.clone(), g.param(t.clone())))
            .collect();
        Bound { vars }
    }

    /// Pairs already registered vars with the block names, in name order.
    pub fn bound_from(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "{} vars for {} parameter blocks",
                vars.len(),
                self.blocks.len()
            )));
        }
        let vars = self.blocks.keys().cloned().zip(vars.iter().copied()).collect();
        Ok(Bound { vars })
    }

    /// Block values in name order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.blocks.values().cloned().collect()
    }
}

/// Graph handles for a bound [`Params`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Param(format!("no parameter block {name:?}")))
    }

    /// Gradients after `backward`, zero for blocks the loss did not reach.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let grad = g
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (k.clone(), grad)
            })
            .collect()
    }
}

/// Uniform Glorot initialisation for a `fan_in × fan_out` matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], -limit, limit, rng)
}

/// Random `n × n` orthogonal matrix by Gram-Schmidt on uniform samples.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // resample nearly dependent draws
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    Tensor::from_rows(&rows).expect("square matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal(6, &mut rng);
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = q.row(i).iter().zip(q.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unbound_block_is_a_param_error() {
        let mut p = Params::new();
        p.insert("a", Tensor::scalar(1.0));
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        assert!(b.var("a").is_ok());
        assert!(matches!(b.var("z"), Err(Error::Param(_))));
        assert!(p.get("z").is_err());
    }
}
