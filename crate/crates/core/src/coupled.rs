//! Coupled attention, prediction head and weighted cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::init::Initializer;
use crate::tensor::{Result, Tensor, TensorError};

/// Probability floor used before taking the log in [`loss`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PoolParams<T> {
    /// `[t_max, t_max]`
    pub w_beta: T,
    /// `[t_max]`
    pub b_beta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledParams<T> {
    /// `[d_u, 2n]`
    pub w_u: T,
    pub b_u: T,
    /// Absent when the coupled attention is ablated (mean pooling).
    pub pool: Option<PoolParams<T>>,
    /// `[2, d_u]`
    pub w_y: T,
    pub b_y: T,
}

impl CoupledParams<Tensor> {
    pub fn init(n: usize, d_u: usize, t_max: usize, attention_pool: bool, init: &mut Initializer) -> Self {
        let w_u = init.matrix(d_u, 2 * n);
        let b_u = init.zeros(d_u);
        let pool = attention_pool.then(|| PoolParams {
            w_beta: init.zero_matrix(t_max, t_max),
            b_beta: init.zeros(t_max),
        });
        Self {
            w_u,
            b_u,
            pool,
            w_y: init.matrix(2, d_u),
            b_y: init.zeros(2),
        }
    }
}

impl<T> CoupledParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> CoupledParams<U> {
        let mut g = |name: &str, t: &T| f(&format!("{prefix}{name}"), t);
        let w_u = g("w_u", &self.w_u);
        let b_u = g("b_u", &self.b_u);
        let pool = self.pool.as_ref().map(|p| PoolParams {
            w_beta: g("w_beta", &p.w_beta),
            b_beta: g("b_beta", &p.b_beta),
        });
        CoupledParams {
            w_u,
            b_u,
            pool,
            w_y: g("w_y", &self.w_y),
            b_y: g("b_y", &self.b_y),
        }
    }
}

/// Per-class loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub pos: f64,
    pub neg: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self { pos: 1.0, neg: 1.0 }
    }
}

impl ClassWeights {
    pub fn new(pos: f64, neg: f64) -> Option<Self> {
        (pos > 0.0 && neg > 0.0 && pos.is_finite() && neg.is_finite()).then_some(Self { pos, neg })
    }

    pub fn for_label(&self, label: u8) -> f64 {
        if label == 1 {
            self.pos
        } else {
            self.neg
        }
    }
}

/// `u_t = ReLU(W_u [left_t ; right_t] + b_u)`, shape `[d_u, T]`.
pub fn couple(tape: &mut Tape, left: Var, right: Var, p: &CoupledParams<Var>) -> Result<Var> {
    let x = tape.concat(&[left, right], 0)?;
    let u = tape.matmul(p.w_u, x)?;
    let u = tape.add_col(u, p.b_u)?;
    Ok(tape.relu(u))
}

/// Attention pooling over time. `β = softmax_t(u W_β + b_β)` row-wise and
/// `u* = Σ_t β_t ⊙ u_t`. Returns `(u* as [d_u, 1], β)`.
pub fn pool_attention(tape: &mut Tape, u: Var, p: &PoolParams<Var>) -> Result<(Var, Var)> {
    let (d_u, t) = tape.value(u).dims2("pool")?;
    let t_max = tape.value(p.w_beta).shape()[0];
    if t > t_max {
        return Err(TensorError::Range { op: "journey longer than t_max", start: 0, end: t, extent: t_max });
    }
    let w = tape.narrow(p.w_beta, 0, t)?;
    let w = tape.narrow(w, 1, t)?;
    let b = tape.narrow(p.b_beta, 0, t)?;
    let logits = tape.matmul(u, w)?;
    let logits = tape.add_row(logits, b)?;
    let beta = tape.softmax(logits, 1)?;
    let weighted = tape.mul(beta, u)?;
    let pooled = tape.sum_axis(weighted, 1)?;
    Ok((tape.reshape(pooled, &[d_u, 1])?, beta))
}

/// Uniform pooling, `u* = mean_t u_t`.
pub fn pool_mean(tape: &mut Tape, u: Var) -> Result<Var> {
    let (d_u, t) = tape.value(u).dims2("pool")?;
    let s = tape.sum_axis(u, 1)?;
    let s = tape.reshape(s, &[d_u, 1])?;
    Ok(tape.scale(s, 1.0 / t as f64))
}

/// `u* = u_T`.
pub fn pool_last(tape: &mut Tape, u: Var) -> Result<Var> {
    let (_, t) = tape.value(u).dims2("pool")?;
    tape.slice(u, 1, t - 1, 1)
}

/// `ŷ = softmax(W_y u* + b_y)`, shape `[2]`.
pub fn predict(tape: &mut Tape, u_star: Var, p: &CoupledParams<Var>) -> Result<Var> {
    let z = tape.matmul(p.w_y, u_star)?;
    let z = tape.reshape(z, &[2])?;
    let z = tape.add(z, p.b_y)?;
    tape.softmax(z, 0)
}

/// `−w_y · log ŷ[y]` with `ŷ[y]` clamped to `[ε, 1 − ε]`.
pub fn loss(tape: &mut Tape, y_hat: Var, label: u8, weights: &ClassWeights) -> Result<Var> {
    if label > 1 {
        return Err(TensorError::Range { op: "label", start: label as usize, end: label as usize + 1, extent: 2 });
    }
    let p = tape.slice(y_hat, 0, label as usize, 1)?;
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let lp = tape.log(p);
    Ok(tape.scale(lp, -weights.for_label(label)))
}
