//! Synthetic journeys with a known labelling rule.
//!
//! Two planted patterns decide the label:
//!
//! * long range: feature 0 at the first visit exceeds `long_threshold` and
//!   diagnosis code 0 is set. Only a model that sees the static codes and
//!   can look back to the first visit recovers it.
//! * short range: feature 1 rises by more than `short_threshold` between two
//!   consecutive visits that are less than `gap_threshold` hours apart.
//!   Decoy jumps of the same size are planted across long gaps, so the
//!   interval between visits matters.
//!
//! The label is 1 when either pattern is present. Each is planted with
//! probability `p = 1 − sqrt(1 − positive_rate)`, so their union hits the
//! configured rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::PatientJourney;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Autoregressive coefficient of the background signal.
const AR_COEF: f64 = 0.8;
/// Innovation scale of the background signal relative to `noise_scale`.
const AR_NOISE: f64 = 0.5;
/// Probability of a decoy jump across a long gap.
const DECOY_RATE: f64 = 0.9;
/// Probability that diagnosis code 0 is set. Spikes are planted with
/// probability `p / CODE0_RATE`, so a spike alone does not decide the label.
const CODE0_RATE: f64 = 1.0 / 3.0;
/// Planted and decoy jumps land on one of visits `1..=JUMP_WINDOW`.
const JUMP_WINDOW: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub journeys: usize,
    pub n_features: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub g_c: usize,
    pub g_d: usize,
    pub positive_rate: f64,
    pub noise_scale: f64,
    pub long_threshold: f64,
    pub short_threshold: f64,
    /// Hours; jumps across shorter gaps count.
    pub gap_threshold: f64,
    /// Mean of the exponential inter-visit gap, in hours.
    pub mean_gap: f64,
    pub spike_amplitude: f64,
    pub jump_amplitude: f64,
    /// Fraction of cells of features 2.. left unobserved and imputed.
    pub missing_rate: f64,
    /// Probability that any code other than diagnosis 0 is set.
    pub code_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            journeys: 2000,
            n_features: 16,
            t_min: 8,
            t_max: 48,
            g_c: 32,
            g_d: 32,
            positive_rate: 0.2,
            noise_scale: 1.0,
            long_threshold: 2.5,
            short_threshold: 2.5,
            gap_threshold: 1.0,
            mean_gap: 2.0,
            spike_amplitude: 4.0,
            jump_amplitude: 8.0,
            missing_rate: 0.05,
            code_rate: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_features < 2 {
            return bad("n_features must be at least 2");
        }
        if self.t_min < 2 || self.t_max < self.t_min {
            return bad("need 2 <= t_min <= t_max");
        }
        if self.g_c == 0 || self.g_d == 0 {
            return bad("code vocabularies must be non-empty");
        }
        if !(0.0..=0.75).contains(&self.positive_rate) {
            return bad("positive_rate must lie in [0, 0.75]");
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("spike_amplitude", self.spike_amplitude),
            ("jump_amplitude", self.jump_amplitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        for (name, v) in [("gap_threshold", self.gap_threshold), ("mean_gap", self.mean_gap)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be finite and positive"));
            }
        }
        if self.long_threshold.is_nan() || self.short_threshold.is_nan() {
            return bad("thresholds must not be NaN");
        }
        for (name, v) in [("missing_rate", self.missing_rate), ("code_rate", self.code_rate)] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Whether the long-range pattern is present.
pub fn long_rule(j: &PatientJourney, cfg: &SyntheticConfig) -> bool {
    j.r.at2(0, 0) > cfg.long_threshold && j.r_c.first() == Some(&0)
}

/// Whether the short-range pattern is present.
pub fn short_rule(j: &PatientJourney, cfg: &SyntheticConfig) -> bool {
    let row = j.r.row(1);
    (1..j.n_visits()).any(|t| row[t] - row[t - 1] > cfg.short_threshold && j.mu[t] - j.mu[t - 1] < cfg.gap_threshold)
}

/// The label implied by a journey's raw features, timestamps and codes.
pub fn label_rule(j: &PatientJourney, cfg: &SyntheticConfig) -> u8 {
    (long_rule(j, cfg) || short_rule(j, cfg)) as u8
}

/// Generates `cfg.journeys` journeys, deterministic in `seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<PatientJourney>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = cfg.journeys.max(1).to_string().len();
    (0..cfg.journeys)
        .map(|k| {
            let mut j = journey(cfg, &mut rng, format!("syn{k:0width$}"))?;
            j.label = label_rule(&j, cfg);
            Ok(j)
        })
        .collect()
}

fn journey(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String) -> Result<PatientJourney> {
    let n = cfg.n_features;
    let t = rng.random_range(cfg.t_min..=cfg.t_max);
    let p = 1.0 - (1.0 - cfg.positive_rate).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let gaps = Exp::new(1.0 / cfg.mean_gap).map_err(|e| Error::Config(format!("synthetic: {e}")))?;
    let noise = cfg.noise_scale * AR_NOISE;

    let mut mu = vec![0.0; t];
    let mut gap = vec![0.0; t];
    for g in gap.iter_mut().skip(1) {
        // Keep ordinary gaps off the threshold boundary so the short rule is
        // decided only by planted jumps.
        *g = loop {
            let x = gaps.sample(rng);
            if x >= cfg.gap_threshold * 1.2 || x <= cfg.gap_threshold * 0.8 {
                break x;
            }
        };
    }

    let spike = rng.random_bool((p / CODE0_RATE).min(1.0));
    let code0 = rng.random_bool(CODE0_RATE);
    let window = JUMP_WINDOW.min(t - 1);
    let jump_at = rng.random_bool(p).then(|| rng.random_range(1..=window));
    let decoy_at = rng.random_bool(DECOY_RATE).then(|| rng.random_range(1..=window)).filter(|&d| Some(d) != jump_at);
    if let Some(s) = jump_at {
        gap[s] = rng.random_range(0.1..0.9) * cfg.gap_threshold;
    }
    if let Some(d) = decoy_at {
        gap[d] = rng.random_range(1.5..4.0) * cfg.gap_threshold;
    }
    for s in 1..t {
        mu[s] = mu[s - 1] + gap[s];
    }

    let mut r = Tensor::zeros(&[n, t]);
    for f in 0..n {
        let (offset, scale) = if f < 2 { (0.0, 1.0) } else { (f as f64, 1.0 + 0.1 * f as f64) };
        let mut x = noise * unit.sample(rng);
        for s in 0..t {
            if s > 0 {
                x = AR_COEF * x + noise * unit.sample(rng);
                if f == 1 && (Some(s) == jump_at || Some(s) == decoy_at) {
                    x += cfg.jump_amplitude + 0.1 * noise * unit.sample(rng);
                }
            } else if f == 0 && spike {
                x = cfg.spike_amplitude + 0.25 * cfg.noise_scale * unit.sample(rng);
            }
            r.set2(f, s, offset + scale * x);
        }
    }

    let mut imputed = Vec::new();
    if cfg.missing_rate > 0.0 {
        for f in 2..n {
            let mut last = f as f64;
            for s in 0..t {
                if rng.random_bool(cfg.missing_rate) {
                    imputed.push((f, s));
                    r.set2(f, s, last);
                } else {
                    last = r.at2(f, s);
                }
            }
        }
    }

    let mut r_c: Vec<usize> = (1..cfg.g_c).filter(|_| rng.random_bool(cfg.code_rate)).collect();
    if code0 {
        r_c.insert(0, 0);
    }
    let r_d = (0..cfg.g_d).filter(|_| rng.random_bool(cfg.code_rate)).collect();

    Ok(PatientJourney { id, r, mu, r_c, r_d, label: 0, imputed })
}
