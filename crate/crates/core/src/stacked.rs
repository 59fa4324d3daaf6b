//! Feature-wise multi-head self-attention with an FFN sub-layer.
//!
//! Attention runs across the N feature rows of the journey matrix: queries,
//! keys and values are projections of each feature's length-T history, so the
//! weight map ξ is N×N. Each sub-layer is wrapped as `LayerNorm(x + f(x))`.
//!
//! Time-indexed weights (`w_q`, `w_k`, `w_v`, `w_1`, `w_2`, `b_2`) are sized
//! for `t_max`; a shorter journey uses their leading block, which is the same
//! as zero-padding the journey and ignoring the padded outputs.

use crate::autodiff::{Tape, Var};
use crate::init::Initializer;
use crate::tensor::{Result, Tensor, MASKED};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// `[d_k, t_max]`
    pub w_q: T,
    /// `[d_k, t_max]`
    pub w_k: T,
    /// `[t_max, t_max]`
    pub w_v: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedBlockParams<T> {
    pub heads: Vec<HeadParams<T>>,
    /// `[n, heads * n]`
    pub w_o: T,
    /// `[d_ff, t_max]`
    pub w_1: T,
    /// `[d_ff]`
    pub b_1: T,
    /// `[t_max, d_ff]`
    pub w_2: T,
    /// `[t_max]`
    pub b_2: T,
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedParams<T> {
    pub blocks: Vec<StackedBlockParams<T>>,
}

pub struct StackedDims {
    pub n: usize,
    pub t_max: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub depth: usize,
}

impl StackedParams<Tensor> {
    pub fn init(dims: &StackedDims, init: &mut Initializer) -> Self {
        let StackedDims { n, t_max, heads, d_k, d_ff, depth } = *dims;
        let blocks = (0..depth)
            .map(|_| StackedBlockParams {
                heads: (0..heads)
                    .map(|_| HeadParams {
                        w_q: init.matrix(d_k, t_max),
                        w_k: init.matrix(d_k, t_max),
                        w_v: init.matrix(t_max, t_max),
                    })
                    .collect(),
                w_o: init.zero_matrix(n, heads * n),
                w_1: init.matrix(d_ff, t_max),
                b_1: init.zeros(d_ff),
                w_2: init.zero_matrix(t_max, d_ff),
                b_2: init.zeros(t_max),
                ln1_gain: init.ones(t_max),
                ln1_bias: init.zeros(t_max),
                ln2_gain: init.ones(t_max),
                ln2_bias: init.zeros(t_max),
            })
            .collect();
        Self { blocks }
    }

    /// ξ for one head of the first block.
    pub fn attention_weights(&self, r: &Tensor, head: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let rv = tape.constant(r.clone());
        let xi = attention_weights(&mut tape, rv, &p.blocks[0].heads[head], None)?;
        Ok(tape.value(xi).clone())
    }

    /// `head_m(r)` for one head of the first block.
    pub fn head_output(&self, r: &Tensor, head: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let rv = tape.constant(r.clone());
        let (out, _) = head_output(&mut tape, rv, &p.blocks[0].heads[head], None)?;
        Ok(tape.value(out).clone())
    }

    /// `W_o [head_1 ⊕ … ⊕ head_m]` of the first block.
    pub fn multi_head(&self, r: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let rv = tape.constant(r.clone());
        let (out, _) = multi_head(&mut tape, rv, &p.blocks[0], None)?;
        Ok(tape.value(out).clone())
    }

    /// Full module: returns `h` and the ξ maps of every head of every block.
    pub fn forward(&self, r: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let rv = tape.constant(r.clone());
        let (h, xi) = forward(&mut tape, rv, &p, None)?;
        let xi = xi.into_iter().map(|v| tape.value(v).clone()).collect();
        Ok((tape.value(h).clone(), xi))
    }

    fn bind(&self, tape: &mut Tape) -> StackedParams<Var> {
        self.map("", &mut |_, t| tape.param(t.clone()))
    }
}

impl<T> StackedParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> StackedParams<U> {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                let pre = format!("{prefix}block{b}.");
                let mut g = |name: &str, t: &T| f(&format!("{pre}{name}"), t);
                StackedBlockParams {
                    heads: blk
                        .heads
                        .iter()
                        .enumerate()
                        .map(|(m, h)| HeadParams {
                            w_q: g(&format!("head{m}.w_q"), &h.w_q),
                            w_k: g(&format!("head{m}.w_k"), &h.w_k),
                            w_v: g(&format!("head{m}.w_v"), &h.w_v),
                        })
                        .collect(),
                    w_o: g("w_o", &blk.w_o),
                    w_1: g("w_1", &blk.w_1),
                    b_1: g("b_1", &blk.b_1),
                    w_2: g("w_2", &blk.w_2),
                    b_2: g("b_2", &blk.b_2),
                    ln1_gain: g("ln1_gain", &blk.ln1_gain),
                    ln1_bias: g("ln1_bias", &blk.ln1_bias),
                    ln2_gain: g("ln2_gain", &blk.ln2_gain),
                    ln2_bias: g("ln2_bias", &blk.ln2_bias),
                }
            })
            .collect();
        StackedParams { blocks }
    }
}

/// Scaled dot-product logits `Qᵀ K / sqrt(d_k)`, shape `[n, n]`.
/// Key features flagged unobserved get a masked logit.
pub fn attention_logits(
    tape: &mut Tape,
    r: Var,
    head: &HeadParams<Var>,
    observed: Option<&[bool]>,
) -> Result<Var> {
    let (n, t) = tape.value(r).dims2("stacked attention")?;
    let d_k = tape.value(head.w_q).shape()[0];
    let rt = tape.transpose(r)?;
    let w_q = tape.narrow(head.w_q, 1, t)?;
    let w_k = tape.narrow(head.w_k, 1, t)?;
    let q = tape.matmul(w_q, rt)?;
    let k = tape.matmul(w_k, rt)?;
    let qt = tape.transpose(q)?;
    let dots = tape.matmul(qt, k)?;
    let logits = tape.scale(dots, 1.0 / (d_k as f64).sqrt());
    match observed {
        Some(obs) if obs.iter().any(|&o| !o) && obs.iter().any(|&o| o) => {
            let mut mask = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for (j, &o) in obs.iter().enumerate() {
                    if !o {
                        mask.set2(i, j, MASKED);
                    }
                }
            }
            let m = tape.constant(mask);
            tape.add(logits, m)
        }
        _ => Ok(logits),
    }
}

/// ξ: row `i` is the distribution over key features for query feature `i`.
pub fn attention_weights(
    tape: &mut Tape,
    r: Var,
    head: &HeadParams<Var>,
    observed: Option<&[bool]>,
) -> Result<Var> {
    let logits = attention_logits(tape, r, head, observed)?;
    tape.softmax(logits, 1)
}

/// `head(r)[i] = Σ_j ξ_ij V_jᵀ` with `V_j = W_V r_jᵀ`. Returns `(head, ξ)`.
pub fn head_output(
    tape: &mut Tape,
    r: Var,
    head: &HeadParams<Var>,
    observed: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (_, t) = tape.value(r).dims2("stacked attention")?;
    let xi = attention_weights(tape, r, head, observed)?;
    let w_v = tape.narrow(head.w_v, 0, t)?;
    let w_v = tape.narrow(w_v, 1, t)?;
    let w_vt = tape.transpose(w_v)?;
    // (W_V rᵀ)ᵀ = r W_Vᵀ
    let values = tape.matmul(r, w_vt)?;
    Ok((tape.matmul(xi, values)?, xi))
}

pub fn multi_head(
    tape: &mut Tape,
    r: Var,
    block: &StackedBlockParams<Var>,
    observed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(block.heads.len());
    let mut xis = Vec::with_capacity(block.heads.len());
    for head in &block.heads {
        let (o, xi) = head_output(tape, r, head, observed)?;
        outs.push(o);
        xis.push(xi);
    }
    let stacked = tape.concat(&outs, 0)?;
    Ok((tape.matmul(block.w_o, stacked)?, xis))
}

/// Layer norm of each feature row across its visits, then a per-visit
/// affine narrowed to the journey length. Rows are the attention tokens, so
/// this is the usual per-token normalization.
fn norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let t = tape.value(x).shape()[1];
    let y = tape.layer_norm(x, 1, LAYER_NORM_EPS)?;
    let y = tape.transpose(y)?;
    let gain = tape.narrow(gain, 0, t)?;
    let bias = tape.narrow(bias, 0, t)?;
    let y = tape.mul_col(y, gain)?;
    let y = tape.add_col(y, bias)?;
    tape.transpose(y)
}

/// `W_2 max(W_1 x + b_1, 0) + b_2`, applied to each feature's length-T row.
fn feed_forward(tape: &mut Tape, x: Var, block: &StackedBlockParams<Var>) -> Result<Var> {
    let (_, t) = tape.value(x).dims2("ffn")?;
    let xt = tape.transpose(x)?;
    let w_1 = tape.narrow(block.w_1, 1, t)?;
    let hidden = tape.matmul(w_1, xt)?;
    let hidden = tape.add_col(hidden, block.b_1)?;
    let hidden = tape.relu(hidden);
    let w_2 = tape.narrow(block.w_2, 0, t)?;
    let b_2 = tape.narrow(block.b_2, 0, t)?;
    let out = tape.matmul(w_2, hidden)?;
    let out = tape.add_col(out, b_2)?;
    tape.transpose(out)
}

pub fn block_forward(
    tape: &mut Tape,
    r: Var,
    block: &StackedBlockParams<Var>,
    observed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let (mha, xis) = multi_head(tape, r, block, observed)?;
    let x = tape.add(r, mha)?;
    let x = norm(tape, x, block.ln1_gain, block.ln1_bias)?;
    let ffn = feed_forward(tape, x, block)?;
    let y = tape.add(x, ffn)?;
    let h = norm(tape, y, block.ln2_gain, block.ln2_bias)?;
    Ok((h, xis))
}

/// Runs every block in sequence; ξ maps are returned block-major.
pub fn forward(
    tape: &mut Tape,
    r: Var,
    params: &StackedParams<Var>,
    observed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let mut h = r;
    let mut all = Vec::new();
    for block in &params.blocks {
        let (next, xis) = block_forward(tape, h, block, observed)?;
        h = next;
        all.extend(xis);
    }
    Ok((h, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(n: usize, t: usize) -> StackedDims {
        StackedDims { n, t_max: t, heads: 2, d_k: 2, d_ff: 5, depth: 1 }
    }

    fn params(n: usize, t: usize, seed: u64) -> StackedParams<Tensor> {
        StackedParams::init(&dims(n, t), &mut Initializer::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        t
    }

    fn zero_all(p: &StackedParams<Tensor>) -> StackedParams<Tensor> {
        p.map("", &mut |name, t| {
            if name.contains("gain") {
                Tensor::ones(t.shape())
            } else {
                Tensor::zeros(t.shape())
            }
        })
    }

    #[test]
    fn zero_projections_give_uniform_weights() {
        let p = zero_all(&params(4, 3, 1));
        let xi = p.attention_weights(&random(&[4, 3], 2), 0).unwrap();
        for x in xi.data() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_feature_closed_form() {
        // d_k = 1, T = 1, unit projections: logits row 0 = [1, 1 + ln 3].
        let mut p = StackedParams::init(
            &StackedDims { n: 2, t_max: 1, heads: 1, d_k: 1, d_ff: 1, depth: 1 },
            &mut Initializer::new(ChaCha8Rng::seed_from_u64(0)),
        );
        p.blocks[0].heads[0].w_q = Tensor::ones(&[1, 1]);
        p.blocks[0].heads[0].w_k = Tensor::ones(&[1, 1]);
        let r = Tensor::new(&[2, 1], vec![1.0, 1.0 + 3f64.ln()]).unwrap();
        let xi = p.attention_weights(&r, 0).unwrap();
        assert!((xi.at2(0, 0) - 0.25).abs() < 1e-12);
        assert!((xi.at2(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rows_are_distributions() {
        let p = params(5, 4, 11);
        let r = random(&[5, 4], 11);
        for head in 0..2 {
            let xi = p.attention_weights(&r, head).unwrap();
            for i in 0..5 {
                let row = xi.row(i);
                assert!(row.iter().all(|&x| x >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_weights_identity_values_average_rows() {
        let mut p = zero_all(&params(3, 4, 5));
        p.blocks[0].heads[0].w_v = Tensor::identity(4);
        let r = random(&[3, 4], 6);
        let out = p.head_output(&r, 0).unwrap();
        for i in 0..3 {
            for t in 0..4 {
                let mean = (0..3).map(|j| r.at2(j, t)).sum::<f64>() / 3.0;
                assert!((out.at2(i, t) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn one_hot_weights_select_value_row() {
        // Feature 2 dominates every dot product, so each query picks key 2.
        let mut p = zero_all(&params(3, 2, 5));
        let h = &mut p.blocks[0].heads[0];
        h.w_q = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        h.w_k = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        h.w_v = Tensor::identity(2);
        let r = Tensor::new(&[3, 2], vec![1.0, 0.3, 2.0, -0.7, 400.0, 0.9]).unwrap();
        let out = p.head_output(&r, 0).unwrap();
        for i in 0..3 {
            assert!((out.at2(i, 0) - 400.0).abs() < 1e-9);
            assert!((out.at2(i, 1) - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn head_output_matches_loop_reference() {
        let (n, t, d_k) = (4, 5, 2);
        let p = params(n, t, 21);
        let r = random(&[n, t], 22);
        let h = &p.blocks[0].heads[1];
        let out = p.head_output(&r, 1).unwrap();
        // Q_i = W_Q r_iᵀ, K_j = W_K r_jᵀ, V_j = W_V r_jᵀ, all by explicit loops.
        let proj = |w: &Tensor, rows: usize, i: usize| -> Vec<f64> {
            (0..rows).map(|a| (0..t).map(|s| w.at2(a, s) * r.at2(i, s)).sum()).collect()
        };
        for i in 0..n {
            let q = proj(&h.w_q, d_k, i);
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let k = proj(&h.w_k, d_k, j);
                    q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d_k as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for s in 0..t {
                let mut acc = 0.0;
                for j in 0..n {
                    let v = proj(&h.w_v, t, j);
                    acc += (logits[j] - mx).exp() / z * v[s];
                }
                assert!((out.at2(i, s) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_reduce_to_double_layer_norm() {
        let p = zero_all(&params(3, 4, 3));
        let r = random(&[3, 4], 4);
        let (h, _) = p.forward(&r).unwrap();
        let mut tape = Tape::new();
        let rv = tape.constant(r);
        let a = tape.layer_norm(rv, 1, LAYER_NORM_EPS).unwrap();
        let b = tape.layer_norm(a, 1, LAYER_NORM_EPS).unwrap();
        for (x, y) in h.data().iter().zip(tape.value(b).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shape_and_shorter_journeys() {
        let p = params(3, 6, 8);
        for t in 1..=6 {
            let (h, xi) = p.forward(&random(&[3, t], t as u64)).unwrap();
            assert_eq!(h.shape(), &[3, t]);
            assert!(h.is_finite());
            assert_eq!(xi.len(), 2);
        }
    }

    #[test]
    fn heads_are_permutation_equivariant() {
        let (n, t) = (4, 3);
        let mut p = params(n, t, 31);
        // W_o = [I | I] commutes with a row permutation.
        let mut w_o = Tensor::zeros(&[n, 2 * n]);
        for i in 0..n {
            w_o.set2(i, i, 1.0);
            w_o.set2(i, n + i, 1.0);
        }
        p.blocks[0].w_o = w_o;
        let r = random(&[n, t], 32);
        let perm = [2, 0, 3, 1];
        let mut pr = Tensor::zeros(&[n, t]);
        for (dst, &src) in perm.iter().enumerate() {
            for s in 0..t {
                pr.set2(dst, s, r.at2(src, s));
            }
        }
        let a = p.multi_head(&r).unwrap();
        let b = p.multi_head(&pr).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for s in 0..t {
                assert!((b.at2(dst, s) - a.at2(src, s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unobserved_key_features_get_zero_weight() {
        let p = params(4, 3, 9);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let r = tape.constant(random(&[4, 3], 10));
        let obs = [true, false, true, false];
        let xi = attention_weights(&mut tape, r, &bound.blocks[0].heads[0], Some(&obs)).unwrap();
        let xi = tape.value(xi);
        for i in 0..4 {
            assert_eq!(xi.at2(i, 1), 0.0);
            assert_eq!(xi.at2(i, 3), 0.0);
            assert!((xi.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
