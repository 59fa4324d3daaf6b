//! Patient journeys, their file format, preparation and a synthetic source.

mod io;
mod prep;
pub mod synthetic;

pub(crate) use io::real;
pub use io::{journey_to_line, load_journeys, load_journeys_with, read_journeys, write_journeys};
pub use prep::{class_weights, split, DatasetSplit, NormStats, MIN_SPLIT};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One patient: a feature-by-visit matrix, visit timestamps, static codes
/// and a binary outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientJourney {
    pub id: String,
    /// `[n_features, n_visits]`, finite.
    pub r: Tensor,
    /// Visit times in hours, nondecreasing.
    pub mu: Vec<f64>,
    /// Set diagnosis-code indices, strictly increasing.
    pub r_c: Vec<usize>,
    /// Set procedure-code indices, strictly increasing.
    pub r_d: Vec<usize>,
    pub label: u8,
    /// Imputed `(feature, visit)` cells, sorted. Empty when fully observed.
    pub imputed: Vec<(usize, usize)>,
}

impl PatientJourney {
    pub fn n_features(&self) -> usize {
        self.r.shape()[0]
    }

    pub fn n_visits(&self) -> usize {
        self.r.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.id.as_str();
        if self.r.rank() != 2 {
            return Err(Error::invariant(id, "r", "must be a feature-by-visit matrix"));
        }
        let (n, t) = (self.n_features(), self.n_visits());
        if self.mu.len() != t {
            return Err(Error::invariant(id, "mu", format!("{} timestamps for {t} visits", self.mu.len())));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invariant(id, "mu", "non-finite timestamp"));
        }
        if let Some(k) = self.mu.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invariant(
                id,
                "mu",
                format!("timestamps decrease at visit {}: {} -> {}", k + 1, self.mu[k], self.mu[k + 1]),
            ));
        }
        if !self.r.is_finite() {
            return Err(Error::invariant(id, "r", "non-finite value"));
        }
        if self.label > 1 {
            return Err(Error::invariant(id, "label", format!("{} is not 0 or 1", self.label)));
        }
        for (field, codes) in [("r_c", &self.r_c), ("r_d", &self.r_d)] {
            if codes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invariant(id, field, "code indices must be strictly increasing"));
            }
        }
        if self.imputed.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invariant(id, "obs_mask", "imputed cells must be sorted and unique"));
        }
        if let Some(&(f, v)) = self.imputed.iter().find(|(f, v)| *f >= n || *v >= t) {
            return Err(Error::invariant(id, "obs_mask", format!("cell ({f}, {v}) outside {n}x{t}")));
        }
        Ok(())
    }

    /// `[n, T]` grid with 1 for observed and 0 for imputed cells, or `None`
    /// when nothing was imputed.
    pub fn obs_mask(&self) -> Option<Tensor> {
        if self.imputed.is_empty() {
            return None;
        }
        let mut m = Tensor::ones(self.r.shape());
        for &(f, v) in &self.imputed {
            m.set2(f, v, 0.0);
        }
        Some(m)
    }

    /// Features with at least one observed cell, or `None` when nothing was imputed.
    pub fn observed_features(&self) -> Option<Vec<bool>> {
        let mask = self.obs_mask()?;
        Some((0..self.n_features()).map(|f| mask.row(f).iter().any(|&x| x != 0.0)).collect())
    }

    /// The first `visits` visits of this journey.
    pub fn truncated(&self, visits: usize) -> Result<PatientJourney> {
        let (n, t) = (self.n_features(), self.n_visits());
        if visits == 0 || visits > t {
            return Err(Error::Data(format!("cannot truncate {t} visits to {visits}")));
        }
        let mut data = Vec::with_capacity(n * visits);
        for f in 0..n {
            data.extend_from_slice(&self.r.row(f)[..visits]);
        }
        Ok(PatientJourney {
            id: self.id.clone(),
            r: Tensor::new(&[n, visits], data)?,
            mu: self.mu[..visits].to_vec(),
            r_c: self.r_c.clone(),
            r_d: self.r_d.clone(),
            label: self.label,
            imputed: self.imputed.iter().copied().filter(|&(_, v)| v < visits).collect(),
        })
    }
}

/// Dense `[size, 1]` 0/1 column from a list of set indices.
pub fn dense_codes(id: &str, field: &'static str, codes: &[usize], size: usize) -> Result<Tensor> {
    let mut v = vec![0.0; size];
    for &c in codes {
        if c >= size {
            return Err(Error::invariant(id, field, format!("code {c} outside vocabulary of {size}")));
        }
        v[c] = 1.0;
    }
    Ok(Tensor::new(&[size, 1], v)?)
}

/// Last observation carried forward along each feature row. Cells marked
/// `None` are filled and reported as imputed; a row with no earlier
/// observation starts from `fallback[feature]`.
pub fn impute_locf(rows: &[Vec<Option<f64>>], fallback: &[f64]) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let mut imputed = Vec::new();
    let filled = rows
        .iter()
        .enumerate()
        .map(|(f, row)| {
            let mut last = fallback.get(f).copied().unwrap_or(0.0);
            row.iter()
                .enumerate()
                .map(|(v, cell)| match cell {
                    Some(x) => {
                        last = *x;
                        *x
                    }
                    None => {
                        imputed.push((f, v));
                        last
                    }
                })
                .collect()
        })
        .collect();
    (filled, imputed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn journey() -> PatientJourney {
        PatientJourney {
            id: "a".into(),
            r: Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            mu: vec![0.0, 1.0, 2.5],
            r_c: vec![1, 3],
            r_d: vec![],
            label: 1,
            imputed: vec![(1, 2)],
        }
    }

    #[test]
    fn valid_journey_passes() {
        journey().validate().unwrap();
    }

    #[test]
    fn decreasing_mu_names_id_and_field() {
        let mut j = journey();
        j.mu = vec![0.0, 2.0, 1.0];
        let err = j.validate().unwrap_err().to_string();
        assert!(err.contains("journey a") && err.contains("mu"), "{err}");
    }

    #[test]
    fn locf_imputation() {
        let rows = vec![vec![None, Some(2.0), None, None], vec![Some(1.0), None, Some(3.0), None]];
        let (filled, imputed) = impute_locf(&rows, &[9.0, 0.0]);
        assert_eq!(filled[0], vec![9.0, 2.0, 2.0, 2.0]);
        assert_eq!(filled[1], vec![1.0, 1.0, 3.0, 3.0]);
        assert_eq!(imputed, vec![(0, 0), (0, 2), (0, 3), (1, 1), (1, 3)]);
    }

    #[test]
    fn obs_mask_and_truncation() {
        let j = journey();
        let m = j.obs_mask().unwrap();
        assert_eq!(m.at2(1, 2), 0.0);
        assert_eq!(m.sum(), 5.0);
        let t = j.truncated(2).unwrap();
        assert_eq!(t.r.data(), &[1.0, 2.0, 4.0, 5.0]);
        assert!(t.imputed.is_empty());
        assert!(j.truncated(0).is_err());
    }

    #[test]
    fn dense_codes_checks_range() {
        let c = dense_codes("a", "r_c", &[0, 2], 3).unwrap();
        assert_eq!(c.data(), &[1.0, 0.0, 1.0]);
        assert!(dense_codes("a", "r_c", &[3], 3).is_err());
    }
}
