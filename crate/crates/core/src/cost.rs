//! Multiplication and storage accounting for the two attention heads.
//!
//! Label-wise attention pools the `l_r × d_c` positions once per label
//! (`αᵀ x`, `d_c·l_r·n` products) and stores an `l_r × n` attention
//! matrix. The pseudo head pools once per mode and then mixes modes per
//! label (`(αᵀ x)` then `β ·`, `d_c·l_r·m + d_c·m·n`), storing `l_r × m`
//! and `m × n`. Dense layers and activations are excluded on both sides.

use crate::attention::{
    init_head, labelwise_attention, pseudo_attention, similarity_scores, HeadKind,
};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Graph, Tensor};
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

pub const CSV_HEADER: &str = "l_r,n,m,d_c,labelwise_mults,pseudo_mults,labelwise_elems,pseudo_elems";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostConfig {
    pub l_r: u64,
    pub n: u64,
    pub m: u64,
    pub d_c: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub config: CostConfig,
    pub mults_labelwise: u128,
    pub mults_pseudo: u128,
    pub elems_labelwise: u128,
    pub elems_pseudo: u128,
}

impl CostReport {
    /// Pseudo over label-wise multiplications.
    pub fn mult_ratio(&self) -> Ratio<u128> {
        Ratio::new(self.mults_pseudo, self.mults_labelwise)
    }

    /// Pseudo over label-wise stored elements.
    pub fn elem_ratio(&self) -> Ratio<u128> {
        Ratio::new(self.elems_pseudo, self.elems_labelwise)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.config.l_r,
            self.config.n,
            self.config.m,
            self.config.d_c,
            self.mults_labelwise,
            self.mults_pseudo,
            self.elems_labelwise,
            self.elems_pseudo
        )
    }
}

fn mul(a: u128, b: u128) -> Result<u128> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Numeric(format!("cost overflow in {a} * {b}")))
}

fn add(a: u128, b: u128) -> Result<u128> {
    a.checked_add(b)
        .ok_or_else(|| Error::Numeric(format!("cost overflow in {a} + {b}")))
}

/// Exact closed-form costs of both heads.
pub fn analytic_cost(l_r: u64, n: u64, m: u64, d_c: u64) -> Result<CostReport> {
    let config = CostConfig { l_r, n, m, d_c };
    if [l_r, n, m, d_c].contains(&0) {
        return Err(Error::Param(format!("cost arguments must be ≥ 1, got {config:?}")));
    }
    let (l, n128, m128, d) = (l_r as u128, n as u128, m as u128, d_c as u128);
    Ok(CostReport {
        config,
        mults_labelwise: mul(mul(d, l)?, n128)?,
        mults_pseudo: add(mul(mul(d, l)?, m128)?, mul(mul(d, m128)?, n128)?)?,
        elems_labelwise: mul(l, n128)?,
        elems_pseudo: add(mul(l, m128)?, mul(m128, n128)?)?,
    })
}

/// Head multiplications recorded while `forward` runs on `g`. The graph's
/// counters must start at zero.
pub fn count_head_muls<F>(g: &mut Graph, forward: F) -> Result<u64>
where
    F: FnOnce(&mut Graph) -> Result<()>,
{
    if g.mul_count() != 0 || g.head_mul_count() != 0 {
        return Err(Error::Contract(
            "multiplication counter was not reset before measuring".into(),
        ));
    }
    forward(g)?;
    Ok(g.head_mul_count())
}

/// Runs one single-layer head forward on random inputs of the given sizes
/// (label vectors of width `d_c`) and returns the counted head products.
pub fn measured_cost(head: HeadKind, config: CostConfig, seed: u64) -> Result<u64> {
    let CostConfig { l_r, n, m, d_c } = config;
    let (l_r, n, m, d_c) = (l_r as usize, n as usize, m as usize, d_c as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    let sizes = match head {
        HeadKind::Pseudo => vec![m],
        HeadKind::Labelwise => vec![n],
    };
    init_head(&mut params, d_c, d_c, &sizes, &mut rng)?;
    let x = Tensor::uniform(&[l_r, d_c], -1.0, 1.0, &mut rng);
    let v = Tensor::uniform(&[n, d_c], -1.0, 1.0, &mut rng);
    let mask = vec![true; l_r];
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    count_head_muls(&mut g, |g| {
        let x = g.constant(x);
        match head {
            HeadKind::Pseudo => {
                let (u, _) = pseudo_attention(g, &p, x, &mask)?;
                let v = g.constant(v);
                similarity_scores(g, &p, u, v)?;
            }
            HeadKind::Labelwise => {
                labelwise_attention(g, &p, x, &mask)?;
            }
        }
        Ok(())
    })
}

/// Cost reports for each `n` in an ascending sweep.
pub fn memory_curve(l_r: u64, d_c: u64, m: u64, n_values: &[u64]) -> Result<Vec<CostReport>> {
    if n_values.is_empty() {
        return Err(Error::Param("empty label-count sweep".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param(format!(
            "label counts must be strictly ascending: {n_values:?}"
        )));
    }
    n_values
        .iter()
        .map(|&n| analytic_cost(l_r, n, m, d_c))
        .collect()
}

pub fn to_csv(rows: &[CostReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_configuration() {
        let r = analytic_cost(2500, 10000, 128, 128).unwrap();
        assert_eq!(r.mults_labelwise, 3_200_000_000);
        assert_eq!(r.elems_labelwise, 25_000_000);
        assert_eq!(r.mults_pseudo, 204_800_000);
        assert_eq!(r.elems_pseudo, 1_600_000);
        assert_eq!(r.elem_ratio(), Ratio::new(16, 250));
    }

    #[test]
    fn unit_and_degenerate_cases() {
        let r = analytic_cost(1, 1, 1, 1).unwrap();
        assert_eq!((r.mults_labelwise, r.mults_pseudo), (1, 2));
        assert!(analytic_cost(0, 1, 1, 1).is_err());
        assert!(matches!(
            analytic_cost(u64::MAX, u64::MAX, u64::MAX, u64::MAX),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn toy_measurements() {
        let cfg = CostConfig {
            l_r: 8,
            n: 6,
            m: 2,
            d_c: 4,
        };
        assert_eq!(measured_cost(HeadKind::Pseudo, cfg, 0).unwrap(), 112);
        assert_eq!(measured_cost(HeadKind::Labelwise, cfg, 0).unwrap(), 192);
        assert_eq!(measured_cost(HeadKind::Pseudo, cfg, 1).unwrap(), 112);
    }

    #[test]
    fn unreset_counter_is_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 2]));
        g.matmul(a, a).unwrap();
        assert!(matches!(
            count_head_muls(&mut g, |_| Ok(())),
            Err(Error::Contract(_))
        ));
        g.reset_counters();
        assert_eq!(count_head_muls(&mut g, |_| Ok(())).unwrap(), 0);
    }

    #[test]
    fn curve_slopes_and_csv() {
        let rows = memory_curve(2500, 128, 128, &[1000, 2000, 10000]).unwrap();
        for w in rows.windows(2) {
            let dn = (w[1].config.n - w[0].config.n) as u128;
            assert_eq!(w[1].elems_labelwise - w[0].elems_labelwise, 2500 * dn);
            assert_eq!(w[1].elems_pseudo - w[0].elems_pseudo, 128 * dn);
        }
        assert_eq!(rows[2].elem_ratio(), Ratio::new(16, 250));
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("2500,10000,128,128,3200000000,204800000,25000000,1600000"));
        assert!(memory_curve(1, 1, 1, &[2, 1]).is_err());
        assert!(memory_curve(1, 1, 1, &[]).is_err());
    }

    proptest! {
        #[test]
        fn merged_modes_never_cheaper(l_r in 1u64..3000, n in 1u64..3000, d_c in 1u64..512) {
            let r = analytic_cost(l_r, n, n, d_c).unwrap();
            prop_assert_eq!(r.mults_pseudo, r.mults_labelwise + (d_c * n * n) as u128);
        }

        #[test]
        fn few_modes_are_cheaper(l_r in 1u64..3000, n in 1u64..3000, m in 1u64..3000, d_c in 1u64..512) {
            let r = analytic_cost(l_r, n, m, d_c).unwrap();
            // m < l_r·n/(l_r+n) ⇔ m·(l_r+n) < l_r·n
            if (m as u128) * ((l_r + n) as u128) < (l_r as u128) * (n as u128) {
                prop_assert!(r.mults_pseudo < r.mults_labelwise);
            }
        }
    }
}
