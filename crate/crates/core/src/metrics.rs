//! Ranking metrics for binary scores.
//!
//! AUROC gives half credit to tied positive/negative pairs. AUPRC is average
//! precision; tied scores keep their input order.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Data("no scores to evaluate".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {i} is NaN")));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Data(format!("label {i} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Scores are checked NaN-free before sorting.
fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp(scores[b], scores[a]));
    order
}

/// Area under the ROC curve via the Mann-Whitney rank statistic.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp(scores[a], scores[b]));
    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let mid = (k + 1 + end) as f64 / 2.0;
        let tied_pos = order[k..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mid * tied_pos as f64;
        k = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the ROC curve by trapezoidal integration, one point per
/// distinct score.
pub fn auroc_trapezoid(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUROC needs both classes".into()));
    }
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let (tp0, fp0) = (tp, fp);
        let score = scores[order[k]];
        while k < order.len() && scores[order[k]] == score {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Average precision: mean over positives, in descending score order, of
/// the precision at each positive's rank.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Data("AUPRC needs at least one positive".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in descending(scores).iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// One evaluation of a scored subset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub auroc: f64,
    pub auprc: f64,
    pub n: usize,
    pub n_pos: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8], seed: u64) -> Result<Self> {
        Ok(Self {
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            n: scores.len(),
            n_pos: labels.iter().filter(|&&l| l == 1).count(),
            seed,
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "auroc={:.17e}\nauprc={:.17e}\nn={}\nn_pos={}\nseed={}\n",
            self.auroc, self.auprc, self.n, self.n_pos, self.seed
        )
    }
}

/// Mean and population standard deviation over repeated runs.
pub fn summarize(reports: &[MetricsReport]) -> String {
    let stats = |f: fn(&MetricsReport) -> f64| {
        let n = reports.len() as f64;
        let mean = reports.iter().map(f).sum::<f64>() / n;
        let var = reports.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (roc_mean, roc_std) = stats(|r| r.auroc);
    let (pr_mean, pr_std) = stats(|r| r.auprc);
    let mut out = String::new();
    let _ = writeln!(out, "repeats={}", reports.len());
    let _ = writeln!(out, "auroc_mean={roc_mean:.17e}\nauroc_std={roc_std:.17e}");
    let _ = writeln!(out, "auprc_mean={pr_mean:.17e}\nauprc_std={pr_std:.17e}");
    let seeds: Vec<String> = reports.iter().map(|r| r.seed.to_string()).collect();
    let _ = writeln!(out, "seeds={}", seeds.join(","));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [0, 0, 1, 1];
        assert_eq!(auroc(&s, &y).unwrap(), 0.75);
        assert_eq!(auroc_trapezoid(&s, &y).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &y).unwrap(), 0.5);
        assert_eq!(auroc_trapezoid(&[0.5; 4], &y).unwrap(), 0.5);
        assert_eq!(auprc(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1]).unwrap(), 0.25);
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn ties_keep_input_order_for_ap() {
        assert_eq!(auprc(&[0.5, 0.5], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auroc(&[], &[]).is_err());
        assert!(auroc(&[0.1], &[0, 1]).is_err());
        assert!(auroc(&[f64::NAN, 0.1], &[0, 1]).is_err());
    }

    #[test]
    fn report_keys() {
        let r = MetricsReport::compute(&[0.1, 0.9], &[0, 1], 4).unwrap();
        let text = r.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["auroc", "auprc", "n", "n_pos", "seed"]);
        assert!(summarize(&[r.clone(), r]).contains("auroc_std=0"));
    }
}
