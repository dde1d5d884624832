use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::knn_neighbors;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// One line of the metrics stream. Loss fields describe the minibatch of
/// `step`; model-quality fields are measured after that step's updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Updates completed so far.
    pub step: usize,
    pub phase: Phase,
    pub l_t: f64,
    pub l_dom: Option<f64>,
    pub l_prior: Option<f64>,
    pub l_cr: Option<f64>,
    /// Coding rate of the minibatch features, the value fed to `R̄`.
    pub batch_r: f64,
    /// `R̄` before this step's update.
    pub r_bar: Option<f64>,
    /// Coding rate, class-wise rate and `V_k` on the fixed training probe.
    pub r: f64,
    pub r_c: Option<f64>,
    pub v_k: f64,
    pub mixing_entropy: f64,
    /// `accuracy` or `pearson_r`.
    pub score: String,
    pub train_score: f64,
    pub val_score: Option<f64>,
    pub ood_score: Option<f64>,
}

/// Mean over samples of the Shannon entropy (nats) of the domain labels
/// among each sample's `k` nearest neighbors in feature space.
pub fn mixing_entropy(features: &Matrix, domains: &[usize], k: usize) -> Result<f64> {
    let n = features.rows();
    if domains.len() != n {
        return Err(Error::shape("mixing_entropy", format!("{n} rows, {} domain labels", domains.len())));
    }
    if n < 2 {
        return Err(Error::Degenerate("mixing entropy needs at least two samples".into()));
    }
    let nb = knn_neighbors(features, k)?;
    let width = domains.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    let mut counts = vec![0usize; width];
    for list in nb.iter() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &j in list {
            counts[domains[j]] += 1;
        }
        let m = list.len() as f64;
        total -= counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / m;
                p * p.ln()
            })
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Fraction of rows whose arg-max column (lowest index on ties) equals the
/// class id.
pub fn accuracy(logits: &Matrix, classes: &[usize]) -> Result<f64> {
    if logits.rows() != classes.len() || classes.is_empty() {
        return Err(Error::shape("accuracy", format!("{} rows, {} labels", logits.rows(), classes.len())));
    }
    let hits = classes
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / classes.len() as f64)
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("pearson_r", format!("{} vs {} values", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}
