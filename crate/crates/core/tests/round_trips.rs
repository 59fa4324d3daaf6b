//! Persistence round trips, CLI exit codes and prefix consistency.

mod common;

use std::fs;
use std::process::Command;

use common::{random_journey, random_model, tiny_config};
use tattnet::data::{load_journeys, synthetic::generate_synthetic, synthetic::SyntheticConfig, write_journeys, NormStats};
use tattnet::model::{forward, ForwardOptions, Pooling};
use tattnet::{checkpoint, Tape, Variant};

#[test]
fn journeys_survive_a_write_and_read_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let cfg = SyntheticConfig { journeys: 40, n_features: 5, t_min: 2, t_max: 9, g_c: 6, g_d: 4, ..Default::default() };
    let mut journeys = generate_synthetic(&cfg, 17).unwrap();
    // Awkward reals that a lossy formatter would round.
    journeys[0].mu[0] = 0.1 + 0.2;
    journeys.push(random_journey(3, 4, 5, 2));
    journeys.push(random_journey(3, 1, 5, 4));
    write_journeys(&path, &journeys).unwrap();
    let back = load_journeys(&path).unwrap();
    assert_eq!(back.len(), journeys.len());
    for (a, b) in journeys.iter().zip(&back) {
        assert_eq!(a, b);
        assert!(a.r.data().iter().zip(b.r.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn statistics_and_checkpoints_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { journeys: 30, n_features: 4, t_min: 2, t_max: 6, ..Default::default() };
    let journeys = generate_synthetic(&cfg, 3).unwrap();
    let stats = NormStats::fit(&journeys).unwrap();
    let path = dir.path().join("stats.jsonl");
    stats.save(&path).unwrap();
    let back = NormStats::load(&path).unwrap();
    assert_eq!((&stats.mean, &stats.std), (&back.mean, &back.std));

    let model = random_model(tiny_config(3, 5, 4), 9);
    let path = dir.path().join("ckpt.jsonl");
    checkpoint::save(&model, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), model);
}

fn exit_code(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_tattnet")).args(args).output().unwrap();
    out.status.code().expect("exited normally")
}

#[test]
fn cli_exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["no-such-command"]), 1);
    assert_eq!(exit_code(&["train", "--out", out]), 1);

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(exit_code(&["train", "--data", missing.to_str().unwrap(), "--out", out]), 2);

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": \"a\", \"mu\": [0.0]\n").unwrap();
    assert_eq!(exit_code(&["train", "--data", broken.to_str().unwrap(), "--out", out]), 2);

    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\nbatch_size = 0\n").unwrap();
    let data = dir.path().join("data");
    let data_dir = data.to_str().unwrap();
    assert_eq!(exit_code(&["gen-data", "--out", data_dir]), 0);
    let journeys = data.join("journeys.jsonl");
    assert_eq!(
        exit_code(&["train", "--config", config.to_str().unwrap(), "--data", journeys.to_str().unwrap(), "--out", out]),
        1
    );
}

/// Without the stacked block nothing mixes visits backwards in time, so
/// the coupled representation of a prefix equals the leading columns of
/// the full journey's.
#[test]
fn prefixes_see_only_their_own_visits() {
    let cfg = Variant::NoStacked.apply(&tiny_config(3, 7, 4));
    for seed in 0..4 {
        let model = random_model(cfg.clone(), 100 + seed);
        let journey = random_journey(3, 7, 4, seed);
        let opts = ForwardOptions { pooling: Pooling::Last, ..ForwardOptions::default() };
        let run = |j: &tattnet::PatientJourney| {
            let mut tape = Tape::new();
            let params = model.params.bind(&mut tape, false);
            let out = forward(&mut tape, &model.config, &params, j, opts).unwrap();
            (tape.value(out.u).clone(), tape.value(out.y_hat).clone())
        };
        let (u_full, _) = run(&journey);
        for t in 1..=7 {
            let prefix = journey.truncated(t).unwrap();
            let (u, y) = run(&prefix);
            for row in 0..u.shape()[0] {
                for s in 0..t {
                    assert_eq!(u.at2(row, s).to_bits(), u_full.at2(row, s).to_bits(), "seed {seed}, t {t}");
                }
            }
            assert!((y.sum() - 1.0).abs() < 1e-12);
        }
    }
}
