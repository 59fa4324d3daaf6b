//! Full network: stacked attention, time-aware short-term and long-term
//! paths, coupled attention and the prediction head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::coupled::{self, ClassWeights, CoupledParams};
use crate::data::{dense_codes, PatientJourney};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::long_term::{self, LongTermDims, LongTermParams};
use crate::stacked::{self, StackedDims, StackedParams};
use crate::tensor::Tensor;
use crate::temporal::{self, ShortTermParams, TimeEncoderParams};

/// All trainable tensors. Disabled modules own no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub stacked: Option<StackedParams<T>>,
    pub time_encoder: Option<TimeEncoderParams<T>>,
    pub short: Option<ShortTermParams<T>>,
    pub long: Option<LongTermParams<T>>,
    pub coupled: CoupledParams<T>,
}

impl<T> ModelParams<T> {
    /// Applies `f` to every parameter in a fixed order, passing its
    /// dotted name.
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            stacked: self.stacked.as_ref().map(|p| p.map("stacked.", f)),
            time_encoder: self.time_encoder.as_ref().map(|p| p.map("time.", f)),
            short: self.short.as_ref().map(|p| p.map("short.", f)),
            long: self.long.as_ref().map(|p| p.map("long.", f)),
            coupled: self.coupled.map("coupled.", f),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.map(&mut |name, _| names.push(name.to_string()));
        names
    }
}

impl ModelParams<Tensor> {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(cfg.seed));
        let n = cfg.n_features;
        let stacked = (!cfg.disable_stacked).then(|| {
            let dims = StackedDims {
                n,
                t_max: cfg.t_max,
                heads: cfg.heads,
                d_k: cfg.d_k,
                d_ff: cfg.d_ff,
                depth: cfg.stacked_depth,
            };
            StackedParams::init(&dims, &mut init)
        });
        let time_encoder = (!cfg.disable_short).then(|| TimeEncoderParams::init(n, &mut init));
        let short = (!cfg.disable_short).then(|| ShortTermParams::init(n, &mut init));
        let long = (!cfg.disable_long).then(|| {
            let dims = LongTermDims { n, d_h: cfg.d_h, g_c: cfg.g_c, g_d: cfg.g_d };
            LongTermParams::init(&dims, &mut init)
        });
        let coupled = CoupledParams::init(n, cfg.d_u, cfg.t_max, !cfg.disable_coupled, &mut init);
        Ok(Self { stacked, time_encoder, short, long, coupled })
    }

    /// Copies of the parameter tensors in [`ModelParams::map`] order.
    pub fn flatten(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.map(&mut |_, t| out.push(t.clone()));
        out
    }

    /// Rebuilds the structure from tensors given in [`ModelParams::map`] order.
    pub fn from_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        let mut it = tensors.into_iter();
        let mut bad = None;
        let out = self.map(&mut |name, old| match it.next() {
            Some(t) if t.shape() == old.shape() => t,
            Some(t) => {
                bad.get_or_insert_with(|| format!("{name}: shape {:?}, expected {:?}", t.shape(), old.shape()));
                old.clone()
            }
            None => {
                bad.get_or_insert_with(|| format!("{name}: missing"));
                old.clone()
            }
        });
        if it.next().is_some() {
            bad.get_or_insert_with(|| "too many tensors".into());
        }
        match bad {
            Some(msg) => Err(Error::Data(format!("parameter mismatch: {msg}"))),
            None => Ok(out),
        }
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.len());
        n
    }

    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        self.map(&mut |_, t| s += t.data().iter().map(|x| x * x).sum::<f64>());
        s.sqrt()
    }

    /// Leaves on `tape`: trainable when `trainable`, constant otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelParams<Var> {
        self.map(&mut |_, t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
    }
}

/// How the coupled sequence is reduced over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Learned attention; falls back to the mean when that module is disabled.
    Configured,
    Mean,
    /// Last visit only.
    Last,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Mask imputed cells out of the feature and short-term attention. Off
    /// for training and scoring, on for exported maps.
    pub obs_mask: bool,
    pub pooling: Pooling,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { obs_mask: false, pooling: Pooling::Configured }
    }
}

/// Intermediate representations and attention maps of one forward pass.
pub struct ForwardOutput {
    pub y_hat: Var,
    /// Stacked-attention output, `[n, T]`.
    pub h: Var,
    pub k_star: Option<Var>,
    pub e_star: Option<Var>,
    /// Coupled representation, `[d_u, T]`.
    pub u: Var,
    /// One `[n, n]` map per head, block-major.
    pub xi: Vec<Var>,
    pub alpha: Option<Var>,
    /// Long-term attention over admissible pairs, `[n, T(T − 1)/2]`; see
    /// [`long_term::full_attention`] for the dense layout.
    pub long: Option<Var>,
    pub beta: Option<Var>,
}

/// Runs the network on one journey. `params` must be bound to `tape`.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &ModelParams<Var>,
    journey: &PatientJourney,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    let id = journey.id.as_str();
    let (n, t) = (journey.n_features(), journey.n_visits());
    if n != cfg.n_features {
        return Err(Error::invariant(id, "r", format!("{n} features, model expects {}", cfg.n_features)));
    }
    if t > cfg.t_max {
        return Err(Error::invariant(id, "r", format!("{t} visits exceed t_max = {}", cfg.t_max)));
    }
    let r = tape.constant(journey.r.clone());
    let (observed, obs_grid) = if opts.obs_mask {
        (journey.observed_features(), journey.obs_mask())
    } else {
        (None, None)
    };

    let (h, xi) = match &params.stacked {
        Some(p) => stacked::forward(tape, r, p, observed.as_deref())?,
        None => (r, Vec::new()),
    };

    let (k_star, alpha) = match (&params.time_encoder, &params.short) {
        (Some(enc), Some(p)) => {
            let deltas = temporal::encode_intervals(tape, &journey.mu, enc)?;
            let h_prime = temporal::interleave(tape, h, deltas)?;
            let out = temporal::short_term(tape, h_prime, p, obs_grid.as_ref())?;
            (Some(out.k_star), Some(out.alpha))
        }
        _ => (None, None),
    };

    let (e_star, long) = match &params.long {
        Some(p) => {
            let r_c = tape.constant(dense_codes(id, "r_c", &journey.r_c, cfg.g_c)?);
            let r_d = tape.constant(dense_codes(id, "r_d", &journey.r_d, cfg.g_d)?);
            let out = long_term::forward(tape, h, &journey.mu, r_c, r_d, p, cfg.long_activation)?;
            (Some(out.e_star), out.attention)
        }
        None => (None, None),
    };

    let (left, right) = match (k_star, e_star) {
        (Some(k), Some(e)) => (k, e),
        (None, Some(e)) => (e, e),
        (Some(k), None) => (k, k),
        (None, None) => return Err(Error::Config("both temporal paths are disabled".into())),
    };
    let u = coupled::couple(tape, left, right, &params.coupled)?;
    let (u_star, beta) = match (opts.pooling, &params.coupled.pool) {
        (Pooling::Configured, Some(pool)) => {
            let (s, b) = coupled::pool_attention(tape, u, pool)?;
            (s, Some(b))
        }
        (Pooling::Configured, None) | (Pooling::Mean, _) => (coupled::pool_mean(tape, u)?, None),
        (Pooling::Last, _) => (coupled::pool_last(tape, u)?, None),
    };
    let y_hat = coupled::predict(tape, u_star, &params.coupled)?;
    Ok(ForwardOutput { y_hat, h, k_star, e_star, u, xi, alpha, long, beta })
}

/// Weighted cross-entropy of one journey.
pub fn journey_loss(tape: &mut Tape, out: &ForwardOutput, label: u8, weights: &ClassWeights) -> Result<Var> {
    Ok(coupled::loss(tape, out.y_hat, label, weights)?)
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    /// Positive-class probability.
    pub fn score(&self, journey: &PatientJourney) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape, false);
        let out = forward(&mut tape, &self.config, &params, journey, ForwardOptions::default())?;
        Ok(tape.value(out.y_hat).data()[1])
    }

    pub fn score_all(&self, journeys: &[PatientJourney]) -> Result<Vec<f64>> {
        journeys.iter().map(|j| self.score(j)).collect()
    }
}
