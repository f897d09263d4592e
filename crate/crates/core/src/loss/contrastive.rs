use super::{check_pair, LossValue, NORM_EPS};
use crate::error::{Error, Result};
use crate::math::{gemm, Tensor};

/// `B x B` cosine similarities `c[k][j] = cos(v_k, vhat_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub c: Tensor,
}

impl AffinityMatrix {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.c.data()[k * self.c.row_len() + j]
    }

    pub fn size(&self) -> usize {
        self.c.rows()
    }
}

/// Row-normalized copy of `x` plus the guarded row norms.
fn normalize_rows(x: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (b, d) = (x.rows(), x.row_len());
    let mut out = x.data().to_vec();
    let mut norms = vec![0.0; b];
    for k in 0..b {
        let row = &mut out[k * d..(k + 1) * d];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[k] = n;
        let inv = 1.0 / n.max(eps);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    (out, norms)
}

struct Normalized {
    b: usize,
    d: usize,
    vn: Vec<f64>,
    v_norms: Vec<f64>,
    hn: Vec<f64>,
    c: Vec<f64>,
}

fn normalized(v: &Tensor, vhat: &Tensor, eps: f64) -> Normalized {
    let (b, d) = (v.rows(), v.row_len());
    let (vn, v_norms) = normalize_rows(v, eps);
    let (hn, _) = normalize_rows(vhat, eps);
    let mut c = vec![0.0; b * b];
    gemm(b, d, b, 1.0, &vn, false, &hn, true, 0.0, &mut c);
    Normalized {
        b,
        d,
        vn,
        v_norms,
        hn,
        c,
    }
}

pub fn affinity(v: &Tensor, vhat: &Tensor, eps: f64) -> Result<AffinityMatrix> {
    let (b, _) = check_pair(v, vhat, "affinity")?;
    if !(eps > 0.0) {
        return Err(Error::config("affinity: eps must be positive"));
    }
    let n = normalized(v, vhat, eps);
    Ok(AffinityMatrix {
        c: Tensor::from_vec(&[b, b], n.c)?,
    })
}

/// Chain `dL/dC` (weights `g[k][j]`) through the cosine:
/// `grad_k = (1/|v_k|) * sum_j g_kj (hn_j - c_kj vn_k)`. Rows with a
/// (guarded) zero norm receive no gradient.
fn pull_back_through_cosine(n: &Normalized, g: &[f64]) -> Vec<f64> {
    let (b, d) = (n.b, n.d);
    let mut grad = vec![0.0; b * d];
    gemm(b, b, d, 1.0, g, false, &n.hn, false, 0.0, &mut grad);
    for k in 0..b {
        let row = &mut grad[k * d..(k + 1) * d];
        if n.v_norms[k] <= NORM_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let coef: f64 = (0..b).map(|j| g[k * b + j] * n.c[k * b + j]).sum();
        let inv = 1.0 / n.v_norms[k];
        let vn = &n.vn[k * d..(k + 1) * d];
        for (r, x) in row.iter_mut().zip(vn) {
            *r = inv * (*r - coef * x);
        }
    }
    grad
}

/// Relaxed contrastive loss
/// `sum_k (1 - c_kk)^2 + lambda * sum_k sum_{j != k} max(0, c_kj)^2`.
pub fn reco(v: &Tensor, vhat: &Tensor, lambda: f64) -> Result<(LossValue, Tensor)> {
    check_pair(v, vhat, "reco")?;
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("reco: lambda {lambda} must be >= 0")));
    }
    let n = normalized(v, vhat, NORM_EPS);
    let b = n.b;
    let mut g = vec![0.0; b * b];
    let mut per_sample = vec![0.0; b];
    for k in 0..b {
        for j in 0..b {
            let c = n.c[k * b + j];
            if j == k {
                per_sample[k] += (1.0 - c) * (1.0 - c);
                g[k * b + j] = -2.0 * (1.0 - c);
            } else if c > 0.0 {
                per_sample[k] += lambda * c * c;
                g[k * b + j] = 2.0 * lambda * c;
            }
        }
    }
    let grad = pull_back_through_cosine(&n, &g);
    Ok((
        LossValue {
            value: per_sample.iter().sum(),
            per_sample,
        },
        Tensor::from_vec(v.shape(), grad)?,
    ))
}

/// Symmetric InfoNCE over the rows and columns of `C / temperature`, with
/// matched pairs on the diagonal. The value is the mean of the row-wise and
/// column-wise per-sample cross-entropies.
pub fn infonce(v: &Tensor, vhat: &Tensor, temperature: f64) -> Result<(LossValue, Tensor)> {
    let (b, _) = check_pair(v, vhat, "infonce")?;
    if !(temperature > 0.0) {
        return Err(Error::config(format!(
            "infonce: temperature {temperature} must be positive"
        )));
    }
    if b < 2 {
        return Err(Error::data("infonce: a batch of one has no negatives"));
    }
    let n = normalized(v, vhat, NORM_EPS);
    let z: Vec<f64> = n.c.iter().map(|c| c / temperature).collect();
    let mut dz = vec![0.0; b * b];
    let mut per_sample = vec![0.0; b];
    let w = 0.5 / b as f64;
    // Rows: sample k against every apical j.
    for k in 0..b {
        let row = &z[k * b..(k + 1) * b];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        per_sample[k] += w * (lse - row[k]);
        for j in 0..b {
            dz[k * b + j] += w * ((row[j] - lse).exp() - if j == k { 1.0 } else { 0.0 });
        }
    }
    // Columns: apical j against every basal k.
    for j in 0..b {
        let max = (0..b).map(|k| z[k * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = (0..b).map(|k| (z[k * b + j] - max).exp()).sum::<f64>().ln() + max;
        per_sample[j] += w * (lse - z[j * b + j]);
        for k in 0..b {
            dz[k * b + j] += w * ((z[k * b + j] - lse).exp() - if j == k { 1.0 } else { 0.0 });
        }
    }
    let g: Vec<f64> = dz.iter().map(|x| x / temperature).collect();
    let grad = pull_back_through_cosine(&n, &g);
    Ok((
        LossValue {
            value: per_sample.iter().sum(),
            per_sample,
        },
        Tensor::from_vec(v.shape(), grad)?,
    ))
}
