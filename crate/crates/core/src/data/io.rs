//! Journey files: one JSON object per line.
//!
//! ```text
//! {"id":"p1","label":0,"mu":[...],"r":[[...],...],"r_c":[3,17],"r_d":[],"obs_mask":[[2,0],[2,1]]}
//! ```
//!
//! `r` holds one array per feature, each with one entry per visit; `null`
//! entries are imputed on load. `r_c`/`r_d` list the set code indices and
//! `obs_mask` lists imputed `[feature, visit]` cells. Reals are written with
//! 17 significant digits so a write/read cycle is bit-exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{impute_locf, PatientJourney};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJourney {
    id: String,
    label: u8,
    mu: Vec<f64>,
    r: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    r_c: Vec<usize>,
    #[serde(default)]
    r_d: Vec<usize>,
    #[serde(default)]
    obs_mask: Vec<(usize, usize)>,
}

pub(crate) fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_reals(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&real(*x));
    }
    out.push(']');
}

fn push_indices(out: &mut String, xs: &[usize]) {
    out.push('[');
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{x}");
    }
    out.push(']');
}

/// Serializes one journey as a single line (no trailing newline).
pub fn journey_to_line(j: &PatientJourney) -> String {
    let mut out = String::with_capacity(64 + j.r.len() * 24);
    out.push_str("{\"id\":");
    out.push_str(&serde_json::to_string(&j.id).expect("string serializes"));
    let _ = write!(out, ",\"label\":{},\"mu\":", j.label);
    push_reals(&mut out, &j.mu);
    out.push_str(",\"r\":[");
    for f in 0..j.n_features() {
        if f > 0 {
            out.push(',');
        }
        push_reals(&mut out, j.r.row(f));
    }
    out.push_str("],\"r_c\":");
    push_indices(&mut out, &j.r_c);
    out.push_str(",\"r_d\":");
    push_indices(&mut out, &j.r_d);
    if !j.imputed.is_empty() {
        out.push_str(",\"obs_mask\":[");
        for (k, (f, v)) in j.imputed.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "[{f},{v}]");
        }
        out.push(']');
    }
    out.push('}');
    out
}

pub fn write_journeys(path: &Path, journeys: &[PatientJourney]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for j in journeys {
        writeln!(w, "{}", journey_to_line(j)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a journey file, imputing missing cells from zero.
pub fn load_journeys(path: &Path) -> Result<Vec<PatientJourney>> {
    load_journeys_with(path, &[])
}

/// Loads a journey file; a missing cell with no earlier observation in its
/// row is filled from `fallback[feature]` (0 past the end of `fallback`).
pub fn load_journeys_with(path: &Path, fallback: &[f64]) -> Result<Vec<PatientJourney>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_journeys(BufReader::new(file), path, fallback)
}

pub fn read_journeys(reader: impl BufRead, path: &Path, fallback: &[f64]) -> Result<Vec<PatientJourney>> {
    let mut journeys = Vec::new();
    let mut seen = HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message,
        };
        let raw: RawJourney = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let t = raw.mu.len();
        if t == 0 {
            return Err(Error::invariant(&raw.id, "mu", "journey has no visits"));
        }
        if raw.r.is_empty() {
            return Err(Error::invariant(&raw.id, "r", "journey has no features"));
        }
        if let Some(f) = raw.r.iter().position(|row| row.len() != t) {
            return Err(Error::invariant(
                &raw.id,
                "r",
                format!("feature {f} has {} values for {t} visits", raw.r[f].len()),
            ));
        }
        let (rows, mut imputed) = impute_locf(&raw.r, fallback);
        imputed.extend(raw.obs_mask);
        imputed.sort_unstable();
        imputed.dedup();
        let n = rows.len();
        let journey = PatientJourney {
            id: raw.id,
            r: Tensor::new(&[n, t], rows.concat())?,
            mu: raw.mu,
            r_c: raw.r_c,
            r_d: raw.r_d,
            label: raw.label,
            imputed,
        };
        journey.validate()?;
        if !seen.insert(journey.id.clone()) {
            return Err(Error::invariant(&journey.id, "id", "duplicate journey id"));
        }
        journeys.push(journey);
    }
    Ok(journeys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<PatientJourney>> {
        read_journeys(text.as_bytes(), Path::new("mem"), &[])
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(read("").unwrap().is_empty());
        assert!(read("\n\n").unwrap().is_empty());
    }

    #[test]
    fn nulls_are_imputed_and_masked() {
        let js = read(r#"{"id":"x","label":1,"mu":[0,1,2],"r":[[1,null,3],[null,2,2]],"r_c":[0],"r_d":[1]}"#).unwrap();
        let j = &js[0];
        assert_eq!(j.r.data(), &[1.0, 1.0, 3.0, 0.0, 2.0, 2.0]);
        assert_eq!(j.imputed, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn decreasing_mu_rejected_with_id() {
        let err = read(r#"{"id":"late","label":0,"mu":[0,2,1],"r":[[1,2,3]]}"#).unwrap_err();
        assert!(matches!(err, Error::Invariant { ref id, field: "mu", .. } if id == "late"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id":"d","label":0,"mu":[0],"r":[[1]]}"#;
        let err = read(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(err, Error::Invariant { field: "id", .. }));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = read("{\"id\":\"ok\",\"label\":0,\"mu\":[0],\"r\":[[1]]}\n{not json}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(read(r#"{"id":"r","label":0,"mu":[0,1],"r":[[1,2],[3]]}"#).is_err());
        assert!(read(r#"{"id":"r","label":3,"mu":[0],"r":[[1]]}"#).is_err());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let j = PatientJourney {
            id: "q\"uote".into(),
            r: Tensor::new(&[2, 2], vec![0.1 + 0.2, -1e-300, 1.0 / 3.0, 12345.678901234567]).unwrap(),
            mu: vec![0.0, std::f64::consts::PI],
            r_c: vec![0, 7],
            r_d: vec![3],
            label: 1,
            imputed: vec![(1, 0)],
        };
        let line = journey_to_line(&j);
        let back = read(&line).unwrap();
        assert_eq!(back, vec![j]);
    }
}
