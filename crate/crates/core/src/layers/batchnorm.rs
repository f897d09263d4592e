use crate::error::{Error, Result};
use crate::math::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel normalization of currents laid out `[B, C * P]` (channel-major
/// planes of `P` sites).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch statistics and normalized activations kept for the local backward.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache {
    pub x_hat: Tensor,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn plane(&self, x: &Tensor) -> Result<usize> {
        let c = self.channels();
        if c == 0 || x.row_len() % c != 0 {
            return Err(Error::dim(format!(
                "batch norm over {c} channels cannot split rows of {}",
                x.row_len()
            )));
        }
        Ok(x.row_len() / c)
    }

    /// Batch statistics of `x` per channel, over batch and sites.
    pub fn batch_stats(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let p = self.plane(x)?;
        let c = self.channels();
        let count = x.rows() * p;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..x.rows() {
            let row = x.row(b);
            for ch in 0..c {
                mean[ch] += row[ch * p..(ch + 1) * p].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..x.rows() {
            let row = x.row(b);
            for ch in 0..c {
                var[ch] += row[ch * p..(ch + 1) * p]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        Ok((mean, var, count))
    }

    /// Per-channel `(scale, shift)` so that `y = scale * x + shift`.
    fn affine(&self, mean: &[f64], inv_std: &[f64]) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let g = self.gamma.data()[c];
                (g * inv_std[c], self.beta.data()[c] - g * inv_std[c] * mean[c])
            })
            .collect()
    }

    /// Normalize the time-averaged current `mean_current` and apply the same
    /// per-channel affine map to every row of `currents` in place.
    pub fn normalize(
        &self,
        mode: BnMode,
        mean_current: &Tensor,
        currents: &mut Tensor,
    ) -> Result<(Tensor, Option<BnCache>)> {
        let p = self.plane(mean_current)?;
        if currents.len() % mean_current.len().max(1) != 0 {
            return Err(Error::dim("batch norm currents do not tile the mean current"));
        }
        let c = self.channels();
        let (mean, var, count) = match mode {
            BnMode::Train => self.batch_stats(mean_current)?,
            BnMode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
                0,
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let map = self.affine(&mean, &inv_std);
        let row = mean_current.row_len();
        for chunk in currents.data_mut().chunks_mut(row) {
            for ch in 0..c {
                let (s, t) = map[ch];
                chunk[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v = s * *v + t);
            }
        }
        let mut out = mean_current.clone();
        let mut x_hat = mean_current.clone();
        for b in 0..out.rows() {
            let (o, xh) = (out.row_mut(b), x_hat.row_mut(b));
            for ch in 0..c {
                let (s, t) = map[ch];
                for i in ch * p..(ch + 1) * p {
                    xh[i] = (xh[i] - mean[ch]) * inv_std[ch];
                    o[i] = s * o[i] + t;
                }
            }
        }
        let cache = (mode == BnMode::Train).then_some(BnCache {
            x_hat,
            mean,
            var,
            inv_std,
            count,
        });
        Ok((out, cache))
    }

    /// Pull `grad_out` (w.r.t. normalized output) back to the pre-norm input;
    /// returns `(grad_in, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        grad_out.check_same_shape(&cache.x_hat, "batch norm backward")?;
        let p = self.plane(grad_out)?;
        let c = self.channels();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for b in 0..grad_out.rows() {
            let (g, xh) = (grad_out.row(b), cache.x_hat.row(b));
            for ch in 0..c {
                for i in ch * p..(ch + 1) * p {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xh[i];
                }
            }
        }
        let n = cache.count as f64;
        let mut grad_in = grad_out.clone();
        for b in 0..grad_in.rows() {
            let xh = cache.x_hat.row(b);
            let gi = grad_in.row_mut(b);
            for ch in 0..c {
                let k = self.gamma.data()[ch] * cache.inv_std[ch] / n;
                for i in ch * p..(ch + 1) * p {
                    gi[i] = k * (n * gi[i] - sum_g[ch] - xh[i] * sum_gx[ch]);
                }
            }
        }
        Ok((
            grad_in,
            Tensor::from_vec(&[c], sum_gx)?,
            Tensor::from_vec(&[c], sum_g)?,
        ))
    }

    /// Fold one batch's statistics into the running estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        let n = cache.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (1.0 - m) * *rm + m * cache.mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (1.0 - m) * *rv + m * cache.var[c] * unbias;
        }
    }
}
