#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tattnet::{Model, ModelConfig, PatientJourney, Tensor};

/// A small model shape for exhaustive checks.
pub fn tiny_config(n: usize, t_max: usize, g: usize) -> ModelConfig {
    ModelConfig {
        n_features: n,
        t_max,
        heads: 2,
        d_k: 3,
        d_ff: 4,
        d_h: 4,
        d_u: 5,
        g_c: g,
        g_d: g,
        ..ModelConfig::default()
    }
}

/// Random journey with strictly increasing times, some codes and one
/// imputed cell on the last feature.
pub fn random_journey(n: usize, t: usize, g: usize, seed: u64) -> PatientJourney {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Tensor::zeros(&[n, t]);
    for x in r.data_mut() {
        *x = rng.random_range(-1.5..1.5);
    }
    let mut mu = vec![0.0; t];
    for s in 1..t {
        mu[s] = mu[s - 1] + rng.random_range(0.2..3.0);
    }
    let imputed = if t > 1 && n > 1 { vec![(n - 1, t - 1)] } else { Vec::new() };
    PatientJourney {
        id: format!("j{seed}"),
        r,
        mu,
        r_c: (0..g).filter(|k| k % 2 == 0).collect(),
        r_d: (0..g).filter(|k| k % 3 == 1).collect(),
        label: (seed % 2) as u8,
        imputed,
    }
}

/// Replaces every parameter with `U(-scale, scale)` draws so that no
/// weight sits at a special value such as zero or one.
pub fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params = model.params.map(&mut |_, t| {
        let mut out = Tensor::zeros(t.shape());
        for x in out.data_mut() {
            *x = rng.random_range(-scale..scale);
        }
        out
    });
}

pub fn random_model(cfg: ModelConfig, seed: u64) -> Model {
    let mut model = Model::new(cfg).expect("valid config");
    randomize(&mut model, seed, 0.6);
    model
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    t
}
