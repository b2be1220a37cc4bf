use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function with central
/// differences.
///
/// `f` builds the loss on a fresh graph from one [`Var`] per entry of
/// `params`. Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if !g.value(loss).data()[0].is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for c in 0..params[pi].len() {
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[c] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (grads[c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_linear_functions() {
        let w = Tensor::new(vec![4], vec![0.1, -2.0, 3.5, 0.0]).unwrap();
        let err = finite_diff_check(|g, v| Ok(g.sum(v[0])), &[w], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_at_zero() {
        let w = Tensor::zeros(&[3]);
        let mut g = Graph::new();
        let v = g.param(w.clone());
        let s = g.sigmoid(v);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert!(g.grad(v).unwrap().data().iter().all(|&d| (d - 0.25).abs() < 1e-15));
        let err = finite_diff_check(
            |g, v| {
                let s = g.sigmoid(v[0]);
                Ok(g.sum(s))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let w = Tensor::new(vec![1], vec![f64::INFINITY]).unwrap();
        let res = finite_diff_check(|g, v| Ok(g.sum(v[0])), &[w], 1e-5);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
