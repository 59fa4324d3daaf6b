//! Long-term temporal attention.
//!
//! Every (source `i`, target `j`) visit pair is scored per feature by a
//! two-layer network of `h_i`, `h_j`, the raw gap `μ_j − μ_i` and the static
//! code vectors. A strict forward mask restricts target `j` to sources
//! `i < j`, the scores are softmaxed over sources per feature, and
//! `e_j = Σ_i P_ij ⊙ h_i`. The first visit has no admissible source, so
//! `e_1 = 0`. The module output is `e* = e + h`.
//!
//! So `e_j` never reads a later visit. Its own embedding `h_j` enters only
//! as the query that conditions the scores, never as an averaged source.
//!
//! Only the `T·(T−1)/2` admissible pairs are scored, packed target-major
//! into one matrix. Applying the mask and then the softmax gives the same
//! weights, with the masked ones exactly zero, at half the cost.

use crate::autodiff::{Tape, Var};
use crate::config::Activation;
use crate::init::Initializer;
use crate::tensor::{Result, Tensor, TensorError, MASKED};

#[derive(Clone, Debug, PartialEq)]
pub struct LongTermParams<T> {
    /// `[n, n]`, applied to the source visit
    pub w11: T,
    /// `[n, n]`, applied to the target visit
    pub w12: T,
    /// `[n, 1]`, applied to the gap
    pub w13: T,
    pub b1: T,
    /// `[d_h, n]`
    pub w21: T,
    /// `[d_h, g_c]`
    pub w22: T,
    /// `[d_h, g_d]`
    pub w23: T,
    pub b2: T,
    /// `[n, d_h]`
    pub w31: T,
    pub b3: T,
}

pub struct LongTermDims {
    pub n: usize,
    pub d_h: usize,
    pub g_c: usize,
    pub g_d: usize,
}

impl LongTermParams<Tensor> {
    pub fn init(dims: &LongTermDims, init: &mut Initializer) -> Self {
        let LongTermDims { n, d_h, g_c, g_d } = *dims;
        Self {
            w11: init.matrix(n, n),
            w12: init.matrix(n, n),
            w13: init.matrix(n, 1),
            b1: init.zeros(n),
            w21: init.matrix(d_h, n),
            w22: init.matrix(d_h, g_c),
            w23: init.matrix(d_h, g_d),
            b2: init.zeros(d_h),
            w31: init.matrix(n, d_h),
            b3: init.zeros(n),
        }
    }
}

impl<T> LongTermParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LongTermParams<U> {
        let mut g = |name: &str, t: &T| f(&format!("{prefix}{name}"), t);
        LongTermParams {
            w11: g("w11", &self.w11),
            w12: g("w12", &self.w12),
            w13: g("w13", &self.w13),
            b1: g("b1", &self.b1),
            w21: g("w21", &self.w21),
            w22: g("w22", &self.w22),
            w23: g("w23", &self.w23),
            b2: g("b2", &self.b2),
            w31: g("w31", &self.w31),
            b3: g("b3", &self.b3),
        }
    }
}

/// The `{0, −∞}` forward mask: entry `(i, j)` is 0 iff `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardMask {
    values: Tensor,
}

impl ForwardMask {
    pub fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(TensorError::Range { op: "forward mask (empty journey)", start: 0, end: 0, extent: 0 });
        }
        let mut values = Tensor::full(&[t, t], MASKED);
        for i in 0..t {
            for j in i + 1..t {
                values.set2(i, j, 0.0);
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at2(i, j)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.values
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Journey-level term `W^(22) r_c + W^(23) r_d + b^(2)`, shape `[d_h, 1]`.
fn static_term(tape: &mut Tape, r_c: Var, r_d: Var, p: &LongTermParams<Var>) -> Result<Var> {
    let c = tape.matmul(p.w22, r_c)?;
    let d = tape.matmul(p.w23, r_d)?;
    let s = tape.add(c, d)?;
    tape.add_col(s, p.b2)
}

/// Unmasked score of one pair. Vectors are columns: `h_i`, `h_j` are `[n, 1]`,
/// `r_c` is `[g_c, 1]`, `r_d` is `[g_d, 1]`. Returns `[n, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn pair_score(
    tape: &mut Tape,
    h_i: Var,
    h_j: Var,
    delta_ij: f64,
    r_c: Var,
    r_d: Var,
    p: &LongTermParams<Var>,
    act: Activation,
) -> Result<Var> {
    let a = tape.matmul(p.w11, h_i)?;
    let b = tape.matmul(p.w12, h_j)?;
    let delta = tape.constant(Tensor::new(&[1, 1], vec![delta_ij])?);
    let c = tape.matmul(p.w13, delta)?;
    let pre = tape.add(a, b)?;
    let pre = tape.add(pre, c)?;
    let pre = tape.add_col(pre, p.b1)?;
    let inner = activate(tape, pre, act);
    let z = tape.matmul(p.w21, inner)?;
    let s = static_term(tape, r_c, r_d, p)?;
    let z = tape.add(z, s)?;
    let z = activate(tape, z, act);
    let out = tape.matmul(p.w31, z)?;
    tape.add_col(out, p.b3)
}

pub struct LongTermOutput {
    /// Context `e`, `[n, T]`.
    pub e: Var,
    pub e_star: Var,
    /// `[n, T(T−1)/2]`: only pairs with source `i` before target `j`, at
    /// column [`pair_col`]`(i, j)`, softmaxed per target. Masked pairs are
    /// never scored, so their weight is exactly zero. `None` for a
    /// single-visit journey.
    pub attention: Option<Var>,
}

pub fn forward(
    tape: &mut Tape,
    h: Var,
    mu: &[f64],
    r_c: Var,
    r_d: Var,
    p: &LongTermParams<Var>,
    act: Activation,
) -> Result<LongTermOutput> {
    let (e, attention) = attend(tape, h, h, mu, r_c, r_d, p, act)?;
    let e_star = tape.add(e, h)?;
    Ok(LongTermOutput { e, e_star, attention })
}

/// Context `e` with the two roles of the visit embeddings kept apart:
/// `sources` are scored and averaged, `queries` condition the score of
/// each target visit. [`forward`] passes the same embeddings for both.
#[allow(clippy::too_many_arguments)]
pub fn attend(
    tape: &mut Tape,
    sources: Var,
    queries: Var,
    mu: &[f64],
    r_c: Var,
    r_d: Var,
    p: &LongTermParams<Var>,
    act: Activation,
) -> Result<(Var, Option<Var>)> {
    let (n, t) = tape.value(sources).dims2("long_term")?;
    let q_shape = tape.value(queries).shape();
    if q_shape != [n, t] {
        return Err(TensorError::Shape { op: "long_term queries", lhs: vec![n, t], rhs: q_shape.to_vec() });
    }
    if mu.len() != t {
        return Err(TensorError::Shape { op: "long_term timestamps", lhs: vec![n, t], rhs: vec![mu.len()] });
    }
    if t == 1 {
        return Ok((tape.constant(Tensor::zeros(&[n, 1])), None));
    }
    let lens: Vec<usize> = (1..t).collect();
    let cols = t * (t - 1) / 2;
    let mut src = Vec::with_capacity(cols);
    let mut dst = Vec::with_capacity(cols);
    let mut gaps = Vec::with_capacity(cols);
    for j in 1..t {
        for i in 0..j {
            src.push(i);
            dst.push(j);
            gaps.push(mu[j] - mu[i]);
        }
    }

    let a = tape.matmul(p.w11, sources)?;
    let b = tape.matmul(p.w12, queries)?;
    let a = tape.gather_cols(a, src.clone())?;
    let b = tape.gather_cols(b, dst)?;
    let gap_row = tape.constant(Tensor::new(&[1, cols], gaps)?);
    let c = tape.matmul(p.w13, gap_row)?;
    let pre = tape.add(a, b)?;
    let pre = tape.add(pre, c)?;
    let pre = tape.add_col(pre, p.b1)?;
    let inner = activate(tape, pre, act);
    let z = tape.matmul(p.w21, inner)?;
    let s = static_term(tape, r_c, r_d, p)?;
    let z = tape.add_col(z, s)?;
    let z = activate(tape, z, act);
    let scores = tape.matmul(p.w31, z)?;
    let scores = tape.add_col(scores, p.b3)?;

    let attention = tape.segment_softmax(scores, lens.clone())?;
    let values = tape.gather_cols(sources, src)?;
    let weighted = tape.mul(attention, values)?;
    let e_tail = tape.segment_sum(weighted, lens)?;
    let first = tape.constant(Tensor::zeros(&[n, 1]));
    let e = tape.concat(&[first, e_tail], 1)?;
    Ok((e, Some(attention)))
}

/// Column of pair (source `i`, target `j`), `i < j`, in the packed layout.
pub fn pair_col(i: usize, j: usize) -> usize {
    j * (j - 1) / 2 + i
}

/// Expands the packed attention to the full `[n, T, T]` map `P[l, i, j]`,
/// zero wherever `i >= j`.
pub fn full_attention(n: usize, t: usize, attention: Option<&Tensor>) -> Tensor {
    let mut full = vec![0.0; n * t * t];
    if let Some(att) = attention {
        for l in 0..n {
            for i in 0..t {
                for j in i + 1..t {
                    full[(l * t + i) * t + j] = att.at2(l, pair_col(i, j));
                }
            }
        }
    }
    Tensor::new(&[n, t, t], full).expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        t
    }

    fn codes(len: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..len).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[len, 1], v).unwrap()
    }

    fn dims() -> LongTermDims {
        LongTermDims { n: 3, d_h: 4, g_c: 5, g_d: 5 }
    }

    fn run(p: &LongTermParams<Tensor>, h: &Tensor, mu: &[f64], rc: &Tensor, rd: &Tensor) -> (Tensor, Tensor) {
        let (e_star, att, _) = run_with_context(p, h, mu, rc, rd);
        (e_star, att)
    }

    fn run_with_context(
        p: &LongTermParams<Tensor>,
        h: &Tensor,
        mu: &[f64],
        rc: &Tensor,
        rd: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let hv = tape.constant(h.clone());
        let rcv = tape.constant(rc.clone());
        let rdv = tape.constant(rd.clone());
        let out = forward(&mut tape, hv, mu, rcv, rdv, &pv, Activation::Tanh).unwrap();
        let (n, t) = h.dims2("").unwrap();
        let att = out.attention.map(|a| tape.value(a).clone());
        (tape.value(out.e_star).clone(), full_attention(n, t, att.as_ref()), tape.value(out.e).clone())
    }

    fn run_split(
        p: &LongTermParams<Tensor>,
        sources: &Tensor,
        queries: &Tensor,
        mu: &[f64],
        rc: &Tensor,
        rd: &Tensor,
    ) -> Tensor {
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let s = tape.constant(sources.clone());
        let q = tape.constant(queries.clone());
        let rcv = tape.constant(rc.clone());
        let rdv = tape.constant(rd.clone());
        let (e, _) = attend(&mut tape, s, q, mu, rcv, rdv, &pv, Activation::Tanh).unwrap();
        tape.value(e).clone()
    }

    #[test]
    fn mask_pattern() {
        let m = ForwardMask::new(3).unwrap();
        let expected = [
            [MASKED, 0.0, 0.0],
            [MASKED, MASKED, 0.0],
            [MASKED, MASKED, MASKED],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), expected[i][j]);
            }
        }
        assert_eq!(ForwardMask::new(1).unwrap().get(0, 0), MASKED);
        assert!(ForwardMask::new(0).is_err());
        for t in 1..10 {
            let m = ForwardMask::new(t).unwrap();
            let zeros = m.as_tensor().data().iter().filter(|&&x| x == 0.0).count();
            assert_eq!(zeros, t * (t - 1) / 2);
        }
    }

    #[test]
    fn zero_network_scores_bias() {
        let p = LongTermParams::init(&dims(), &mut Initializer::new(ChaCha8Rng::seed_from_u64(1)));
        let p = p.map("", &mut |name, t| {
            if name == "b3" {
                Tensor::vector(vec![0.5, -1.0, 2.0])
            } else {
                Tensor::zeros(t.shape())
            }
        });
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let hi = tape.constant(random(&[3, 1], 2));
        let hj = tape.constant(random(&[3, 1], 3));
        let rc = tape.constant(codes(5, 4));
        let rd = tape.constant(codes(5, 5));
        let s = pair_score(&mut tape, hi, hj, 2.5, rc, rd, &pv, Activation::Tanh).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, -1.0, 2.0]);
    }

    /// The pair scores evaluated element by element.
    fn reference_score(
        p: &LongTermParams<Tensor>,
        hi: &[f64],
        hj: &[f64],
        delta: f64,
        rc: &[f64],
        rd: &[f64],
    ) -> Vec<f64> {
        let n = hi.len();
        let d_h = p.b2.len();
        let inner: Vec<f64> = (0..n)
            .map(|a| {
                let mut s = p.w13.at2(a, 0) * delta + p.b1.data()[a];
                for b in 0..n {
                    s += p.w11.at2(a, b) * hi[b] + p.w12.at2(a, b) * hj[b];
                }
                s.tanh()
            })
            .collect();
        let z: Vec<f64> = (0..d_h)
            .map(|a| {
                let mut s = p.b2.data()[a];
                for b in 0..n {
                    s += p.w21.at2(a, b) * inner[b];
                }
                for (b, x) in rc.iter().enumerate() {
                    s += p.w22.at2(a, b) * x;
                }
                for (b, x) in rd.iter().enumerate() {
                    s += p.w23.at2(a, b) * x;
                }
                s.tanh()
            })
            .collect();
        (0..n)
            .map(|a| p.b3.data()[a] + (0..d_h).map(|b| p.w31.at2(a, b) * z[b]).sum::<f64>())
            .collect()
    }

    fn with_random_biases(seed: u64) -> LongTermParams<Tensor> {
        let p = LongTermParams::init(&dims(), &mut Initializer::new(ChaCha8Rng::seed_from_u64(seed)));
        let mut k = 0;
        p.map("", &mut |name, t| {
            k += 1;
            if name.starts_with('b') {
                random(t.shape(), seed + 100 + k)
            } else {
                t.clone()
            }
        })
    }

    #[test]
    fn pair_score_matches_direct_formula() {
        let p = with_random_biases(7);
        let (hi, hj) = (random(&[3, 1], 8), random(&[3, 1], 9));
        let (rc, rd) = (codes(5, 10), codes(5, 11));
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let vars: Vec<Var> = [&hi, &hj, &rc, &rd].iter().map(|t| tape.constant((*t).clone())).collect();
        let s = pair_score(&mut tape, vars[0], vars[1], 1.75, vars[2], vars[3], &pv, Activation::Tanh).unwrap();
        let want = reference_score(&p, hi.data(), hj.data(), 1.75, rc.data(), rd.data());
        for (a, b) in tape.value(s).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_codes_drop_static_terms() {
        let p = with_random_biases(17);
        let zero = Tensor::zeros(&[5, 1]);
        let p_no_codes = p.map("", &mut |name, t| {
            if name == "w22" || name == "w23" {
                random(t.shape(), 99)
            } else {
                t.clone()
            }
        });
        let (hi, hj) = (random(&[3, 1], 8), random(&[3, 1], 9));
        let a = reference_score(&p, hi.data(), hj.data(), 0.5, zero.data(), zero.data());
        let b = reference_score(&p_no_codes, hi.data(), hj.data(), 0.5, zero.data(), zero.data());
        assert_eq!(a, b);
    }

    #[test]
    fn dense_forward_matches_pairwise_route() {
        let (n, t) = (3, 5);
        let p = with_random_biases(23);
        let h = random(&[n, t], 24);
        let mu = [0.0, 0.4, 1.9, 2.0, 5.5];
        let (rc, rd) = (codes(5, 25), codes(5, 26));
        let (e_star, att) = run(&p, &h, &mu, &rc, &rd);
        for j in 1..t {
            let scores: Vec<Vec<f64>> = (0..j)
                .map(|i| reference_score(&p, &h.column(i), &h.column(j), mu[j] - mu[i], rc.data(), rd.data()))
                .collect();
            for l in 0..n {
                let mx = scores.iter().map(|s| s[l]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s[l] - mx).exp()).sum();
                let mut e = 0.0;
                for i in 0..t {
                    let want = if i < j { (scores[i][l] - mx).exp() / z } else { 0.0 };
                    assert!((att.at3(l, i, j) - want).abs() < 1e-12);
                    e += want * h.at2(l, i);
                }
                assert!((e_star.at2(l, j) - h.at2(l, j) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_visits_attend_fully_to_first() {
        let p = with_random_biases(3);
        let h = random(&[3, 2], 4);
        let (e_star, att, e) = run_with_context(&p, &h, &[0.0, 1.0], &codes(5, 1), &codes(5, 2));
        for l in 0..3 {
            assert_eq!(att.at3(l, 0, 1), 1.0);
            assert_eq!(att.at3(l, 1, 1), 0.0);
            assert_eq!(e.at2(l, 1), h.at2(l, 0));
            assert_eq!(e.at2(l, 0), 0.0);
            for j in 0..2 {
                assert_eq!(e_star.at2(l, j), e.at2(l, j) + h.at2(l, j));
            }
        }
    }

    #[test]
    fn single_visit_has_zero_context() {
        let p = with_random_biases(3);
        let h = random(&[3, 1], 4);
        let (e_star, att) = run(&p, &h, &[0.0], &codes(5, 1), &codes(5, 2));
        assert_eq!(e_star, h);
        assert_eq!(att.max_abs(), 0.0);
    }

    #[test]
    fn causality_probe() {
        let (n, t) = (3, 5);
        let p = with_random_biases(41);
        let h = random(&[n, t], 42);
        let mu = [0.0, 1.0, 1.5, 4.0, 4.25];
        let (rc, rd) = (codes(5, 1), codes(5, 2));
        let (base_star, _, base) = run_with_context(&p, &h, &mu, &rc, &rd);
        let base_split = run_split(&p, &h, &h, &mu, &rc, &rd);
        assert_eq!(base_split, base);
        for i in 0..t {
            let mut probe = h.clone();
            for l in 0..n {
                probe.set2(l, i, h.at2(l, i) + 0.75);
            }
            let (pert_star, _, pert) = run_with_context(&p, &probe, &mu, &rc, &rd);
            let as_source = run_split(&p, &probe, &h, &mu, &rc, &rd);
            for j in 0..=i {
                for l in 0..n {
                    assert_eq!(base.at2(l, j), as_source.at2(l, j), "e_{j} moved when source h_{i} changed");
                    if j < i {
                        assert_eq!(base.at2(l, j), pert.at2(l, j), "e_{j} moved when h_{i} changed");
                        assert_eq!(base_star.at2(l, j), pert_star.at2(l, j));
                    }
                }
            }
        }
    }

    #[test]
    fn target_embedding_conditions_scores() {
        let (n, t) = (3, 5);
        let p = with_random_biases(43);
        let h = random(&[n, t], 44);
        let mu = [0.0, 1.0, 1.5, 4.0, 4.25];
        let (rc, rd) = (codes(5, 1), codes(5, 2));
        let base = run_split(&p, &h, &h, &mu, &rc, &rd);
        let mut q = h.clone();
        for l in 0..n {
            q.set2(l, 3, h.at2(l, 3) + 0.75);
        }
        let moved = run_split(&p, &h, &q, &mu, &rc, &rd);
        assert!((0..n).any(|l| moved.at2(l, 3) != base.at2(l, 3)));
        for j in [0, 1, 2, 4] {
            for l in 0..n {
                assert_eq!(moved.at2(l, j), base.at2(l, j));
            }
        }
    }
}
