//! Attention maps of one journey as CSV files.
//!
//! * `xi_head{m}.csv`: feature-by-feature attention of head `m`
//!   (`xi_block{b}_head{m}.csv` when several blocks are stacked)
//! * `alpha.csv`: short-term attention, feature by visit
//! * `p_visit{j}.csv`: long-term attention into visit `j`, feature by source
//!   visit; all zero for the first visit
//! * `beta.csv`: coupled attention, unit by visit
//!
//! Files for disabled modules are not written. Visits and features are
//! numbered from 1 in headers and file names.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::data::PatientJourney;
use crate::error::{Error, Result};
use crate::long_term::full_attention;
use crate::model::{forward, ForwardOptions, Model};
use crate::tensor::Tensor;

/// Attention maps of one forward pass, as plain tensors.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    /// `[n, n]` per head, block-major.
    pub xi: Vec<Tensor>,
    pub alpha: Option<Tensor>,
    /// `[n, T, T]`, `P[l, i, j]` for source `i` and target `j`.
    pub long: Option<Tensor>,
    pub beta: Option<Tensor>,
    pub y_hat: Tensor,
}

pub fn attention_maps(model: &Model, journey: &PatientJourney) -> Result<AttentionMaps> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, false);
    let out = forward(&mut tape, &model.config, &params, journey, ForwardOptions { obs_mask: true, ..ForwardOptions::default() })?;
    let (n, t) = (journey.n_features(), journey.n_visits());
    Ok(AttentionMaps {
        xi: out.xi.iter().map(|&v| tape.value(v).clone()).collect(),
        alpha: out.alpha.map(|v| tape.value(v).clone()),
        long: model
            .params
            .long
            .as_ref()
            .map(|_| full_attention(n, t, out.long.map(|v| tape.value(v)))),
        beta: out.beta.map(|v| tape.value(v).clone()),
        y_hat: tape.value(out.y_hat).clone(),
    })
}

fn matrix_csv(corner: &str, row_label: &str, col_label: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from(corner);
    for c in 0..cols {
        let _ = write!(out, ",{col_label}{}", c + 1);
    }
    out.push('\n');
    for r in 0..rows {
        let _ = write!(out, "{row_label}{}", r + 1);
        for c in 0..cols {
            let _ = write!(out, ",{}", at(r, c));
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes every attention map of `journey` into `out_dir` and returns the
/// written paths.
pub fn export_attention(model: &Model, journey: &PatientJourney, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = attention_maps(model, journey)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (n, t) = (journey.n_features(), journey.n_visits());
    let heads = model.config.heads;
    let mut written = Vec::new();
    for (k, xi) in maps.xi.iter().enumerate() {
        let name = if model.config.stacked_depth == 1 {
            format!("xi_head{}.csv", k + 1)
        } else {
            format!("xi_block{}_head{}.csv", k / heads + 1, k % heads + 1)
        };
        write(out_dir, &name, matrix_csv("query", "feature_", "key_feature_", n, n, |r, c| xi.at2(r, c)), &mut written)?;
    }
    if let Some(alpha) = &maps.alpha {
        write(out_dir, "alpha.csv", matrix_csv("feature", "feature_", "visit_", n, t, |r, c| alpha.at2(r, c)), &mut written)?;
    }
    if let Some(p) = &maps.long {
        for j in 0..t {
            let text = matrix_csv("feature", "feature_", "source_visit_", n, t, |l, i| p.at3(l, i, j));
            write(out_dir, &format!("p_visit{}.csv", j + 1), text, &mut written)?;
        }
    }
    if let Some(beta) = &maps.beta {
        let d_u = beta.shape()[0];
        write(out_dir, "beta.csv", matrix_csv("unit", "unit_", "visit_", d_u, t, |r, c| beta.at2(r, c)), &mut written)?;
    }
    Ok(written)
}

/// Parses a CSV written by [`export_attention`] back into its numeric body.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, line)| {
            line.split(',')
                .skip(1)
                .map(|x| {
                    x.parse::<f64>().map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: k + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        })
        .collect()
}
