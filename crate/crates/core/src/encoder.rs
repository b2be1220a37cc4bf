//! Word embedding, bidirectional LSTM, and layer normalization.
//!
//! Produces the `l_r × d_c` position matrix consumed by the attention
//! heads. Each LSTM direction has `d_c / 2` hidden units; gate columns are
//! laid out as input, forget, candidate, output.

use crate::error::{Error, Result};
use crate::params::{glorot, orthogonal, Bound, Params};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::Document;
use rand::Rng;

pub const EMBEDDING: &str = "embedding";
pub const LN_GAIN: &str = "ln.gain";
pub const LN_BIAS: &str = "ln.bias";

/// Names of the parameter blocks of one LSTM direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "lstm.fwd",
            Direction::Backward => "lstm.bwd",
        }
    }

    pub fn w_in(self) -> String {
        format!("{}.w_in", self.prefix())
    }

    pub fn w_rec(self) -> String {
        format!("{}.w_rec", self.prefix())
    }

    pub fn bias(self) -> String {
        format!("{}.bias", self.prefix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub d_e: usize,
    pub d_c: usize,
}

/// Adds encoder blocks to `params`. A pretrained table, when given,
/// replaces the random embedding.
pub fn init_encoder(
    params: &mut Params,
    dims: EncoderDims,
    pretrained: Option<&Tensor>,
    rng: &mut impl Rng,
) -> Result<()> {
    let EncoderDims {
        vocab_size,
        d_e,
        d_c,
    } = dims;
    if d_c == 0 || d_c % 2 != 0 {
        return Err(Error::Param(format!("d_c must be positive and even, got {d_c}")));
    }
    if vocab_size == 0 || d_e == 0 {
        return Err(Error::Param("vocabulary size and d_e must be positive".into()));
    }
    let table = match pretrained {
        Some(t) => {
            if t.shape() != [vocab_size, d_e] {
                return Err(Error::Shape(format!(
                    "pretrained table {:?}, expected [{vocab_size}, {d_e}]",
                    t.shape()
                )));
            }
            t.clone()
        }
        None => Tensor::uniform(&[vocab_size, d_e], -0.1, 0.1, rng),
    };
    params.insert(EMBEDDING, table);

    let h = d_c / 2;
    for dir in [Direction::Forward, Direction::Backward] {
        params.insert(dir.w_in(), glorot(d_e, 4 * h, rng));
        let mut rec = vec![0.0; h * 4 * h];
        for gate in 0..4 {
            let q = orthogonal(h, rng);
            for r in 0..h {
                rec[r * 4 * h + gate * h..r * 4 * h + (gate + 1) * h].copy_from_slice(q.row(r));
            }
        }
        params.insert(dir.w_rec(), Tensor::new(vec![h, 4 * h], rec)?);
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        params.insert(dir.bias(), Tensor::new(vec![1, 4 * h], bias)?);
    }
    params.insert(LN_GAIN, Tensor::full(&[d_c], 1.0));
    params.insert(LN_BIAS, Tensor::zeros(&[d_c]));
    Ok(())
}

fn mask_column(g: &mut Graph, mask: &[bool]) -> Result<Var> {
    let col = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Ok(g.constant(Tensor::new(vec![mask.len(), 1], col)?))
}

/// Embedding lookup followed by dropout; PAD rows are zero.
pub fn embed_tokens(
    g: &mut Graph,
    p: &Bound,
    doc: &Document,
    dropout: f64,
    train: bool,
    seed: u64,
) -> Result<Var> {
    if doc.tokens.len() != doc.mask.len() {
        return Err(Error::Shape(format!(
            "{} tokens with {} mask entries",
            doc.tokens.len(),
            doc.mask.len()
        )));
    }
    let rows = g.gather_rows(p.var(EMBEDDING)?, &doc.tokens)?;
    let dropped = g.dropout(rows, dropout, seed, train)?;
    let mask = mask_column(g, &doc.mask)?;
    g.mul(dropped, mask)
}

/// Hidden state per position for one direction. Masked positions keep the
/// state reached so far.
fn lstm_direction(
    g: &mut Graph,
    p: &Bound,
    dir: Direction,
    emb: Var,
    mask: &[bool],
) -> Result<Vec<Var>> {
    let w_rec = p.var(&dir.w_rec())?;
    let h = g.shape(w_rec)[0];
    let proj = g.matmul(emb, p.var(&dir.w_in())?)?;
    let pre = g.add(proj, p.var(&dir.bias())?)?;
    let l_r = mask.len();
    let mut state_h = g.constant(Tensor::zeros(&[1, h]));
    let mut state_c = g.constant(Tensor::zeros(&[1, h]));
    let mut out = vec![state_h; l_r];
    let order: Box<dyn Iterator<Item = usize>> = match dir {
        Direction::Forward => Box::new(0..l_r),
        Direction::Backward => Box::new((0..l_r).rev()),
    };
    for t in order {
        if mask[t] {
            let x_t = g.row(pre, t)?;
            let rec = g.matmul(state_h, w_rec)?;
            let z = g.add(x_t, rec)?;
            let zi = g.slice_cols(z, 0, h)?;
            let zf = g.slice_cols(z, h, h)?;
            let zg = g.slice_cols(z, 2 * h, h)?;
            let zo = g.slice_cols(z, 3 * h, h)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let keep = g.mul(f, state_c)?;
            let write = g.mul(i, cand)?;
            state_c = g.add(keep, write)?;
            let tc = g.tanh(state_c);
            state_h = g.mul(o, tc)?;
        }
        out[t] = state_h;
    }
    Ok(out)
}

/// Concatenated forward and backward hidden states, `l_r × d_c`.
pub fn bilstm_forward(g: &mut Graph, p: &Bound, emb: Var, mask: &[bool]) -> Result<Var> {
    if g.shape(emb).first() != Some(&mask.len()) {
        return Err(Error::Shape(format!(
            "embedding {:?} with mask of length {}",
            g.shape(emb),
            mask.len()
        )));
    }
    let fwd = lstm_direction(g, p, Direction::Forward, emb, mask)?;
    let bwd = lstm_direction(g, p, Direction::Backward, emb, mask)?;
    let fwd = g.stack_rows(&fwd)?;
    let bwd = g.stack_rows(&bwd)?;
    g.concat_cols(fwd, bwd)
}

/// `layer_norm(bilstm(embed(doc)))`.
pub fn encode(
    g: &mut Graph,
    p: &Bound,
    doc: &Document,
    dropout: f64,
    train: bool,
    seed: u64,
) -> Result<Var> {
    let emb = embed_tokens(g, p, doc, dropout, train, seed)?;
    let hidden = bilstm_forward(g, p, emb, &doc.mask)?;
    g.layer_norm(hidden, p.var(LN_GAIN)?, p.var(LN_BIAS)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(tokens: Vec<usize>, mask: Vec<bool>) -> Document {
        Document {
            id: "d".into(),
            tokens,
            mask,
            labels: vec![],
        }
    }

    fn params(seed: u64, d_e: usize, d_c: usize) -> Params {
        let mut p = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = EncoderDims {
            vocab_size: 6,
            d_e,
            d_c,
        };
        init_encoder(&mut p, dims, None, &mut rng).unwrap();
        // non-trivial layer norm affine so its gradients are exercised
        let gain = Tensor::uniform(&[d_c], 0.5, 1.5, &mut rng);
        let bias = Tensor::uniform(&[d_c], -0.5, 0.5, &mut rng);
        p.insert(LN_GAIN, gain);
        p.insert(LN_BIAS, bias);
        p
    }

    #[test]
    fn rejects_odd_width() {
        let mut p = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dims = EncoderDims {
            vocab_size: 3,
            d_e: 2,
            d_c: 3,
        };
        assert!(init_encoder(&mut p, dims, None, &mut rng).is_err());
    }

    #[test]
    fn forget_bias_is_one() {
        let p = params(0, 3, 4);
        let b = p.get(&Direction::Forward.bias()).unwrap();
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn embedding_contracts() {
        let p = params(1, 3, 4);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let pad = doc(vec![0, 0, 0], vec![false; 3]);
        let e = embed_tokens(&mut g, &b, &pad, 0.2, true, 9).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));

        let d = doc(vec![2, 4, 0], vec![true, true, false]);
        let e = embed_tokens(&mut g, &b, &d, 0.2, false, 9).unwrap();
        let table = p.get(EMBEDDING).unwrap();
        assert_eq!(g.value(e).row(0), table.row(2));
        assert_eq!(g.value(e).row(1), table.row(4));
        assert_eq!(g.value(e).row(2), &[0.0; 3]);

        let a = embed_tokens(&mut g, &b, &d, 0.5, true, 9).unwrap();
        let c = embed_tokens(&mut g, &b, &d, 0.5, true, 9).unwrap();
        assert_eq!(g.value(a), g.value(c));
    }

    #[test]
    fn zero_weights_zero_output() {
        let mut p = params(2, 3, 4);
        let names: Vec<String> = p.iter().map(|(k, _)| k.clone()).collect();
        for n in names {
            p.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let emb = g.constant(Tensor::zeros(&[3, 3]));
        let out = bilstm_forward(&mut g, &b, emb, &[true; 3]).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    /// Scalar-loop LSTM over the real positions of one direction.
    fn lstm_oracle(p: &Params, dir: Direction, x: &Tensor, mask: &[bool]) -> Vec<Vec<f64>> {
        let w_in = p.get(&dir.w_in()).unwrap();
        let w_rec = p.get(&dir.w_rec()).unwrap();
        let bias = p.get(&dir.bias()).unwrap();
        let (l_r, d_e) = x.dims2();
        let h = w_rec.shape()[0];
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0f64; h];
        let mut out = vec![vec![]; l_r];
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..l_r).collect(),
            Direction::Backward => (0..l_r).rev().collect(),
        };
        for t in order {
            if mask[t] {
                let mut z = vec![0.0f64; 4 * h];
                for (j, zj) in z.iter_mut().enumerate() {
                    let mut acc = bias.data()[j];
                    for k in 0..d_e {
                        acc += x.at(t, k) * w_in.at(k, j);
                    }
                    for k in 0..h {
                        acc += hs[k] * w_rec.at(k, j);
                    }
                    *zj = acc;
                }
                let mut nh = vec![0.0; h];
                for u in 0..h {
                    let i = sigmoid(z[u]);
                    let f = sigmoid(z[h + u]);
                    let gg = z[2 * h + u].tanh();
                    let o = sigmoid(z[3 * h + u]);
                    cs[u] = f * cs[u] + i * gg;
                    nh[u] = o * cs[u].tanh();
                }
                hs = nh;
            }
            out[t] = hs.clone();
        }
        out
    }

    #[test]
    fn bilstm_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (case, mask) in [vec![true; 3], vec![true, false, true], vec![true, true, false]]
            .into_iter()
            .enumerate()
        {
            let p = params(case as u64, 3, 4);
            let x = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let emb = g.constant(x.clone());
            let out = bilstm_forward(&mut g, &b, emb, &mask).unwrap();
            let fwd = lstm_oracle(&p, Direction::Forward, &x, &mask);
            let bwd = lstm_oracle(&p, Direction::Backward, &x, &mask);
            for t in 0..3 {
                let want: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
                for (a, w) in g.value(out).row(t).iter().zip(&want) {
                    assert!((a - w).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn single_step_uses_one_input_for_both_halves() {
        let mut p = params(4, 3, 4);
        let fwd: Vec<(String, Tensor)> = [Direction::Forward.w_in(), Direction::Forward.w_rec(), Direction::Forward.bias()]
            .into_iter()
            .map(|n| (n.clone(), p.get(&n).unwrap().clone()))
            .collect();
        for (name, t) in fwd {
            p.insert(name.replace("fwd", "bwd"), t);
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let emb = g.constant(Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.9]).unwrap());
        let out = bilstm_forward(&mut g, &b, emb, &[true]).unwrap();
        let row = g.value(out).row(0);
        assert_eq!(row[..2], row[2..]);
    }

    #[test]
    fn reversal_swaps_directions() {
        let p = params(5, 3, 4);
        let mut swapped = p.clone();
        for (a, b) in [
            (Direction::Forward.w_in(), Direction::Backward.w_in()),
            (Direction::Forward.w_rec(), Direction::Backward.w_rec()),
            (Direction::Forward.bias(), Direction::Backward.bias()),
        ] {
            swapped.insert(a.clone(), p.get(&b).unwrap().clone());
            swapped.insert(b, p.get(&a).unwrap().clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let mask = [true, true, false, true];
        let mut rev_rows: Vec<Vec<f64>> = (0..4).map(|r| x.row(r).to_vec()).collect();
        rev_rows.reverse();
        let rev_mask: Vec<bool> = mask.iter().rev().copied().collect();

        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let e = g.constant(x);
        let orig = bilstm_forward(&mut g, &b, e, &mask).unwrap();
        let bs = swapped.bind(&mut g);
        let e = g.constant(Tensor::from_rows(&rev_rows).unwrap());
        let rev = bilstm_forward(&mut g, &bs, e, &rev_mask).unwrap();
        for t in 0..4 {
            let o = g.value(orig).row(t);
            let r = g.value(rev).row(3 - t);
            assert!(o[..2].iter().zip(&r[2..]).all(|(a, b)| (a - b).abs() < 1e-14));
            assert!(o[2..].iter().zip(&r[..2]).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn pad_content_does_not_leak() {
        let p = params(7, 3, 4);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let mask = vec![true, true, false, false];
        let a = encode(&mut g, &b, &doc(vec![2, 3, 0, 0], mask.clone()), 0.0, false, 0).unwrap();
        let c = encode(&mut g, &b, &doc(vec![2, 3, 5, 4], mask), 0.0, false, 0).unwrap();
        let (va, vc) = (g.value(a), g.value(c));
        assert_eq!(va.row(0), vc.row(0));
        assert_eq!(va.row(1), vc.row(1));
        assert_eq!(va.row(2), va.row(3));
        assert_eq!(va.shape(), &[4, 4]);
    }

    #[test]
    fn encode_gradients_match_finite_differences() {
        let p = params(8, 3, 4);
        let d = doc(vec![2, 5, 1, 0], vec![true, true, true, false]);
        let err = finite_diff_check(
            |g, vars| {
                let b = p.bound_from(vars)?;
                let x = encode(g, &b, &d, 0.0, false, 0)?;
                // weight rows so the layer norm output does not sum to a constant
                let w = g.constant(Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect())?);
                let y = g.mul(x, w)?;
                Ok(g.mean(y))
            },
            &p.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
