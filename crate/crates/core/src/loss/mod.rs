//! Layer-local alignment losses between basal (`V`) and apical (`Vhat`)
//! voltage batches, the top-layer cross-entropy, and their closed-form
//! gradients with respect to `V`. Every alignment loss is nonnegative.

mod banded;
mod contrastive;

pub use banded::banded_reco;
pub use contrastive::{affinity, infonce, reco, AffinityMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;

/// Norm guard used by every cosine computation.
pub const NORM_EPS: f64 = 1e-12;

/// Loss value plus per-sample contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_sample: Vec<f64>,
}

/// Which alignment loss a layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlignLoss {
    Reco { lambda: f64 },
    InfoNce { temperature: f64 },
    Mse,
    BandedReco { cutoff: f64, lambda_low: f64, lambda_high: f64 },
}

impl AlignLoss {
    /// Evaluate on `[B, units]` voltages; `spatial` gives `(C, H, W)` for
    /// map-shaped populations and is required by the banded loss.
    pub fn eval(
        &self,
        v: &Tensor,
        vhat: &Tensor,
        spatial: Option<[usize; 3]>,
    ) -> Result<(LossValue, Tensor)> {
        match *self {
            AlignLoss::Reco { lambda } => reco(v, vhat, lambda),
            AlignLoss::InfoNce { temperature } => infonce(v, vhat, temperature),
            AlignLoss::Mse => mse_align(v, vhat),
            AlignLoss::BandedReco {
                cutoff,
                lambda_low,
                lambda_high,
            } => {
                let [c, h, w] = spatial.ok_or_else(|| {
                    Error::dim("banded alignment needs a spatial [C, H, W] population")
                })?;
                let b = v.rows();
                let maps = v.clone().reshape(&[b, c, h, w])?;
                let hat = vhat.clone().reshape(&[b, c, h, w])?;
                let (lv, g) = banded_reco(&maps, &hat, cutoff, lambda_low, lambda_high)?;
                Ok((lv, g.reshape(v.shape())?))
            }
        }
    }
}

pub(crate) fn check_pair(v: &Tensor, vhat: &Tensor, what: &str) -> Result<(usize, usize)> {
    if v.ndim() < 2 || v.shape() != vhat.shape() {
        return Err(Error::dim(format!(
            "{what}: basal {:?} and apical {:?} must be equal-shape batches",
            v.shape(),
            vhat.shape()
        )));
    }
    let (b, d) = (v.rows(), v.row_len());
    if b == 0 || d == 0 {
        return Err(Error::dim(format!("{what}: empty batch {:?}", v.shape())));
    }
    if !v.all_finite() || !vhat.all_finite() {
        return Err(Error::numeric(what, "non-finite voltage"));
    }
    Ok((b, d))
}

/// `(1/(B*D)) * sum (v - vhat)^2`.
pub fn mse_align(v: &Tensor, vhat: &Tensor) -> Result<(LossValue, Tensor)> {
    let (b, d) = check_pair(v, vhat, "mse_align")?;
    let scale = 1.0 / (b * d) as f64;
    let mut grad = Tensor::zeros(v.shape());
    let mut per_sample = vec![0.0; b];
    for k in 0..b {
        let (vr, hr) = (v.row(k), vhat.row(k));
        let g = grad.row_mut(k);
        let mut acc = 0.0;
        for j in 0..d {
            let diff = vr[j] - hr[j];
            acc += diff * diff;
            g[j] = 2.0 * scale * diff;
        }
        per_sample[k] = acc * scale;
    }
    Ok((
        LossValue {
            value: per_sample.iter().sum(),
            per_sample,
        },
        grad,
    ))
}

/// Mean softmax cross-entropy of `[B, C]` logits against class indices.
/// The gradient is `(softmax - onehot) / B`.
pub fn ce_top(logits: &Tensor, labels: &[usize]) -> Result<(LossValue, Tensor)> {
    if logits.ndim() != 2 || logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::dim(format!(
            "ce_top: logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if !logits.all_finite() {
        return Err(Error::numeric("ce_top", "non-finite logits"));
    }
    let (b, c) = (logits.rows(), logits.row_len());
    if let Some(bad) = labels.iter().find(|l| **l >= c) {
        return Err(Error::data(format!("label {bad} outside [0, {c})")));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut per_sample = vec![0.0; b];
    for k in 0..b {
        let row = logits.row(k);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = z.ln() + max;
        per_sample[k] = (log_z - row[labels[k]]) / b as f64;
        let g = grad.row_mut(k);
        for j in 0..c {
            g[j] = (row[j] - log_z).exp() / b as f64;
        }
        g[labels[k]] -= 1.0 / b as f64;
    }
    Ok((
        LossValue {
            value: per_sample.iter().sum(),
            per_sample,
        },
        grad,
    ))
}
