//! Normalization, train/valid/test splitting and class weights.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::real;
use super::PatientJourney;
use crate::coupled::ClassWeights;
use crate::error::{Error, Result};

/// Per-feature standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsLine {
    feature: usize,
    mean: f64,
    std: f64,
}

impl NormStats {
    /// Population mean and standard deviation of every feature over all
    /// cells of `journeys`. A constant feature gets a scale of 1.
    pub fn fit(journeys: &[PatientJourney]) -> Result<Self> {
        let first = journeys.first().ok_or_else(|| Error::Data("cannot fit statistics on no journeys".into()))?;
        let n = first.n_features();
        let mut sum = vec![0.0; n];
        let mut count = 0usize;
        for j in journeys {
            check_width(j, n)?;
            for (f, s) in sum.iter_mut().enumerate() {
                *s += j.r.row(f).iter().sum::<f64>();
            }
            count += j.n_visits();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; n];
        for j in journeys {
            for (f, s) in sq.iter_mut().enumerate() {
                *s += j.r.row(f).iter().map(|x| (x - mean[f]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .enumerate()
            .map(|(f, s)| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    log::warn!("feature {f} has zero variance; centering only");
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Applies these statistics without refitting.
    pub fn apply(&self, journeys: &[PatientJourney]) -> Result<Vec<PatientJourney>> {
        journeys
            .iter()
            .map(|j| {
                check_width(j, self.n_features())?;
                let mut out = j.clone();
                let t = j.n_visits();
                for (k, x) in out.r.data_mut().iter_mut().enumerate() {
                    let f = k / t;
                    *x = (*x - self.mean[f]) / self.std[f];
                }
                Ok(out)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for f in 0..self.n_features() {
            writeln!(
                w,
                "{{\"feature\":{f},\"mean\":{},\"std\":{}}}",
                real(self.mean[f]),
                real(self.std[f])
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut stats = Self { mean: Vec::new(), std: Vec::new() };
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: k + 1, message };
            let s: StatsLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if s.feature != stats.mean.len() {
                return Err(parse_err(format!("expected feature {}, found {}", stats.mean.len(), s.feature)));
            }
            if !(s.mean.is_finite() && s.std.is_finite() && s.std > 0.0) {
                return Err(parse_err("statistics must be finite with positive scale".into()));
            }
            stats.mean.push(s.mean);
            stats.std.push(s.std);
        }
        if stats.mean.is_empty() {
            return Err(Error::Data(format!("{}: no feature statistics", path.display())));
        }
        Ok(stats)
    }
}

fn check_width(j: &PatientJourney, n: usize) -> Result<()> {
    if j.n_features() != n {
        return Err(Error::invariant(&j.id, "r", format!("{} features, expected {n}", j.n_features())));
    }
    Ok(())
}

/// Journey ids assigned to each subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Minimum dataset size accepted by [`split`].
pub const MIN_SPLIT: usize = 10;

/// Shuffles ids under `seed` and cuts them 75:10:15.
pub fn split(journeys: &[PatientJourney], seed: u64) -> Result<DatasetSplit> {
    let n = journeys.len();
    if n < MIN_SPLIT {
        return Err(Error::Data(format!("need at least {MIN_SPLIT} journeys to split, found {n}")));
    }
    let mut ids: Vec<String> = journeys.iter().map(|j| j.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.75 * n as f64).round() as usize;
    let n_valid = (0.10 * n as f64).round() as usize;
    let test = ids.split_off(n_train + n_valid);
    let valid = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, valid, test, seed })
}

impl DatasetSplit {
    pub fn subset(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown subset {other:?}; expected train, valid or test"))),
        }
    }

    /// Journeys whose ids are listed in `ids`, in that order.
    pub fn select(journeys: &[PatientJourney], ids: &[String]) -> Result<Vec<PatientJourney>> {
        let by_id: HashMap<&str, &PatientJourney> = journeys.iter().map(|j| (j.id.as_str(), j)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|j| (*j).clone())
                    .ok_or_else(|| Error::Data(format!("journey {id} listed in split but missing from data")))
            })
            .collect()
    }
}

/// Inverse-frequency class weights normalized to sum to 2.
pub fn class_weights(train: &[PatientJourney]) -> Result<ClassWeights> {
    let n = train.len();
    let pos = train.iter().filter(|j| j.label == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::Data(format!("training set has a single class ({pos} positives of {n})")));
    }
    let frac_pos = pos as f64 / n as f64;
    let frac_neg = 1.0 - frac_pos;
    ClassWeights::new(2.0 * frac_neg, 2.0 * frac_pos)
        .ok_or_else(|| Error::Data("degenerate class weights".into()))
}
