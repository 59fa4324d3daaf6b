//! Time-interval encoding and short-term temporal attention.
//!
//! Consecutive intervals are embedded into the feature space and interleaved
//! with the visit embeddings:
//!
//! ```text
//! h' = [0, 0, h_1, δ̃_2, h_2, …, δ̃_T, h_T]        width 2T + 1
//! ```
//!
//! where `δ̃_t = W_δ (μ_t − μ_{t−1}) + b_δ`. Each feature row is then
//! convolved with its own length-3 kernel at stride 2, so window `t` covers
//! exactly `(h_{t−1}, δ̃_t, h_t)` and the output has width T. A per-visit
//! softmax over features gives α, and `k* = α ⊙ k + k`.

use crate::autodiff::{Tape, Var};
use crate::init::Initializer;
use crate::tensor::{Result, Tensor, TensorError, MASKED};

pub const KERNEL_SIZE: usize = 3;
pub const STRIDE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeEncoderParams<T> {
    /// `[n, 1]`
    pub w_delta: T,
    /// `[n]`
    pub b_delta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortTermParams<T> {
    /// Row `j` is the kernel of feature `j`, `[n, 3]`.
    pub kernels: T,
    /// `[n]`
    pub biases: T,
    /// `[n, n]`
    pub w_alpha: T,
    /// `[n]`
    pub b_alpha: T,
}

impl TimeEncoderParams<Tensor> {
    pub fn init(n: usize, init: &mut Initializer) -> Self {
        Self {
            w_delta: init.matrix(n, 1),
            b_delta: init.zeros(n),
        }
    }

    /// Encoded consecutive intervals, `[n, T − 1]`; `None` for a single visit.
    pub fn encode_intervals(&self, mu: &[f64]) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let p = self.map("", &mut |_, t| tape.constant(t.clone()));
        Ok(encode_intervals(&mut tape, mu, &p)?.map(|v| tape.value(v).clone()))
    }
}

impl<T> TimeEncoderParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> TimeEncoderParams<U> {
        TimeEncoderParams {
            w_delta: f(&format!("{prefix}w_delta"), &self.w_delta),
            b_delta: f(&format!("{prefix}b_delta"), &self.b_delta),
        }
    }
}

impl ShortTermParams<Tensor> {
    pub fn init(n: usize, init: &mut Initializer) -> Self {
        Self {
            kernels: init.glorot(&[n, KERNEL_SIZE], KERNEL_SIZE, 1),
            biases: init.zeros(n),
            w_alpha: init.matrix(n, n),
            b_alpha: init.zeros(n),
        }
    }

    /// Returns `(k*, α, k)` for an interleaved input.
    pub fn forward(&self, h_prime: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.map("", &mut |_, t| tape.constant(t.clone()));
        let x = tape.constant(h_prime.clone());
        let out = short_term(&mut tape, x, &p, None)?;
        Ok((
            tape.value(out.k_star).clone(),
            tape.value(out.alpha).clone(),
            tape.value(out.k).clone(),
        ))
    }
}

impl<T> ShortTermParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> ShortTermParams<U> {
        ShortTermParams {
            kernels: f(&format!("{prefix}kernels"), &self.kernels),
            biases: f(&format!("{prefix}biases"), &self.biases),
            w_alpha: f(&format!("{prefix}w_alpha"), &self.w_alpha),
            b_alpha: f(&format!("{prefix}b_alpha"), &self.b_alpha),
        }
    }
}

/// `μ_t − μ_{t−1}` for `t = 2..T`. Fails on a decreasing or non-finite timestamp.
pub fn consecutive_intervals(mu: &[f64]) -> Result<Vec<f64>> {
    if let Some(pos) = mu.iter().position(|m| !m.is_finite()) {
        return Err(TensorError::Range { op: "timestamps", start: pos, end: pos + 1, extent: mu.len() });
    }
    mu.windows(2)
        .enumerate()
        .map(|(i, w)| {
            if w[1] < w[0] {
                Err(TensorError::Range {
                    op: "timestamps must be nondecreasing",
                    start: i,
                    end: i + 1,
                    extent: mu.len(),
                })
            } else {
                Ok(w[1] - w[0])
            }
        })
        .collect()
}

pub fn encode_intervals(tape: &mut Tape, mu: &[f64], p: &TimeEncoderParams<Var>) -> Result<Option<Var>> {
    let deltas = consecutive_intervals(mu)?;
    if deltas.is_empty() {
        return Ok(None);
    }
    let row = tape.constant(Tensor::new(&[1, deltas.len()], deltas)?);
    let enc = tape.matmul(p.w_delta, row)?;
    Ok(Some(tape.add_col(enc, p.b_delta)?))
}

/// Source-column order for [`interleave`], given a source laid out as
/// `[zero, h_1..h_T, δ̃_2..δ̃_T]`.
pub fn interleave_order(t: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(2 * t + 1);
    order.push(0);
    for s in 0..t {
        order.push(if s == 0 { 0 } else { t + s });
        order.push(1 + s);
    }
    order
}

/// `[0, 0, h_1, δ̃_2, h_2, …, δ̃_T, h_T]`, shape `[n, 2T + 1]`.
pub fn interleave(tape: &mut Tape, h: Var, delta_enc: Option<Var>) -> Result<Var> {
    let (n, t) = tape.value(h).dims2("interleave")?;
    if let Some(d) = delta_enc {
        let shape = tape.value(d).shape();
        if shape != [n, t - 1] {
            return Err(TensorError::Shape {
                op: "interleave",
                lhs: vec![n, t],
                rhs: shape.to_vec(),
            });
        }
    } else if t != 1 {
        return Err(TensorError::Shape { op: "interleave", lhs: vec![n, t], rhs: vec![] });
    }
    let zero = tape.constant(Tensor::zeros(&[n, 1]));
    let mut parts = vec![zero, h];
    parts.extend(delta_enc);
    let src = tape.concat(&parts, 1)?;
    tape.gather_cols(src, interleave_order(t))
}

/// Visit columns of an interleaved matrix.
pub fn deinterleave(h_prime: &Tensor) -> Result<Tensor> {
    let (n, w) = h_prime.dims2("deinterleave")?;
    if w < 3 || w % 2 == 0 {
        return Err(TensorError::Rank { op: "deinterleave", expected: 2, shape: vec![n, w] });
    }
    let t = (w - 1) / 2;
    let mut out = Tensor::zeros(&[n, t]);
    for j in 0..n {
        for s in 0..t {
            out.set2(j, s, h_prime.at2(j, 2 * s + 2));
        }
    }
    Ok(out)
}

pub struct ShortTermOutput {
    pub k: Var,
    pub alpha: Var,
    pub k_star: Var,
}

/// Convolution, α attention and residual. `observed` is an `[n, T]` 0/1 grid;
/// unobserved cells get masked α logits, and a visit with no observed cell
/// gets an all-zero α column.
pub fn short_term(
    tape: &mut Tape,
    h_prime: Var,
    p: &ShortTermParams<Var>,
    observed: Option<&Tensor>,
) -> Result<ShortTermOutput> {
    let conv = tape.strided_conv(h_prime, p.kernels, p.biases, STRIDE)?;
    let k = tape.relu(conv);
    let logits = tape.matmul(p.w_alpha, k)?;
    let logits = tape.add_col(logits, p.b_alpha)?;
    let alpha = match observed {
        None => tape.softmax(logits, 0)?,
        Some(obs) => {
            let (n, t) = tape.value(k).dims2("short_term")?;
            if obs.shape() != [n, t] {
                return Err(TensorError::Shape { op: "observation mask", lhs: vec![n, t], rhs: obs.shape().to_vec() });
            }
            let mut mask = Tensor::zeros(&[n, t]);
            let mut keep = Tensor::ones(&[n, t]);
            for s in 0..t {
                let any = (0..n).any(|j| obs.at2(j, s) != 0.0);
                for j in 0..n {
                    if !any {
                        keep.set2(j, s, 0.0);
                    } else if obs.at2(j, s) == 0.0 {
                        mask.set2(j, s, MASKED);
                    }
                }
            }
            let m = tape.constant(mask);
            let masked = tape.add(logits, m)?;
            let a = tape.softmax(masked, 0)?;
            let keep = tape.constant(keep);
            tape.mul(a, keep)?
        }
    };
    let weighted = tape.mul(alpha, k)?;
    let k_star = tape.add(weighted, k)?;
    Ok(ShortTermOutput { k, alpha, k_star })
}
