use crate::error::{Error, Result};
use crate::layers::linear_local_grad;
use crate::loss::{ce_top, mse_align, AlignLoss};
use crate::math::Tensor;
use crate::models::{rnn_unroll, RecurrentNet, RnnRecord};
use crate::optim::{adamw_step, clip_global, global_norm, OptimState};
use crate::parallel;

use super::TrainStepReport;

/// Loss between the readout `o_t` and the target `ŷ_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Readout {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RnnStepConfig {
    pub hidden: AlignLoss,
    pub readout: Readout,
    pub lr_w: f64,
    pub lr_theta: f64,
    pub clip: Option<f64>,
}

pub const RNN_PARAM_NAMES: [&str; 6] = ["w_ih", "w_hh", "w_ho", "theta_oh", "theta_hh", "theta_hi"];

/// Gradients `[W_ih, W_hh, W_ho, Θ_oh, Θ_hh, Θ_hi]` averaged over the
/// sequence, with `(align, align', readout, reconstruction)` loss means.
pub fn rnn_gradients(
    net: &RecurrentNet,
    rec: &RnnRecord,
    x: &Tensor,
    yhat: &Tensor,
    target_ids: Option<&[usize]>,
    hidden: AlignLoss,
    readout: Readout,
) -> Result<(Vec<Tensor>, [f64; 4])> {
    let n = rec.h.len();
    let b = x.shape()[1];
    let (din, dout) = (net.pair.inputs(), net.pair.outputs());
    if readout == Readout::CrossEntropy && target_ids.is_none_or(|ids| ids.len() != n * b) {
        return Err(Error::data("character readout needs one target id per element"));
    }
    let slab = |t: &Tensor, step: usize, d: usize| Tensor::from_vec(&[b, d], t.row(step).to_vec());
    let silent = Tensor::zeros(&[b, net.pair.hidden()]);
    let per_step = parallel::map_range(n, |t| -> Result<(Vec<Tensor>, [f64; 4])> {
        let (xt, yt) = (slab(x, t, din)?, slab(yhat, t, dout)?);
        let s_prev = if t > 0 { rec.s[t - 1].mean_over_time() } else { silent.clone() };
        let s_next = if t + 1 < n { rec.s_back[t + 1].mean_over_time() } else { silent.clone() };
        let (l1, g1) = hidden.eval(&rec.h[t], &rec.h_back[t], None)?;
        let (l2, g2) = hidden.eval(&rec.h_back[t], &rec.h[t], None)?;
        let (l3, go) = match readout {
            Readout::Mse => mse_align(&rec.o[t], &yt)?,
            Readout::CrossEntropy => ce_top(&rec.o[t], &target_ids.unwrap()[t * b..(t + 1) * b])?,
        };
        let (l4, gx) = mse_align(&rec.x_rec[t], &xt)?;
        Ok((
            vec![
                linear_local_grad(&g1, &xt)?,
                linear_local_grad(&g1, &s_prev)?,
                linear_local_grad(&go, &rec.h[t])?,
                linear_local_grad(&g2, &yt)?,
                linear_local_grad(&g2, &s_next)?,
                linear_local_grad(&gx, &rec.h_back[t])?,
            ],
            [l1.value, l2.value, l3.value, l4.value],
        ))
    });
    let mut grads: Vec<Tensor> = net.pair.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut losses = [0.0; 4];
    for r in per_step {
        let (g, l) = r?;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
        for (a, v) in losses.iter_mut().zip(l) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    grads.iter_mut().for_each(|g| g.scale(inv));
    losses.iter_mut().for_each(|l| *l *= inv);
    Ok((grads, losses))
}

/// One recurrent training transaction; on error nothing is modified.
pub fn train_step_rnn(
    net: &mut RecurrentNet,
    opt: &mut OptimState,
    x: &Tensor,
    yhat: &Tensor,
    target_ids: Option<&[usize]>,
    cfg: &RnnStepConfig,
) -> Result<TrainStepReport> {
    let rec = rnn_unroll(net, x, yhat)?;
    let (mut grads, losses) = rnn_gradients(net, &rec, x, yhat, target_ids, cfg.hidden, cfg.readout)?;
    let pre = clip_global(&mut grads, cfg.clip.unwrap_or(f64::INFINITY));
    let post = global_norm(&grads);
    let lrs = [cfg.lr_w, cfg.lr_w, cfg.lr_w, cfg.lr_theta, cfg.lr_theta, cfg.lr_theta];
    let names: Vec<String> = RNN_PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    let mut params = net.pair.params_mut();
    adamw_step(opt, &mut params, &grads, &lrs, &names)?;
    let mean_rate = |s: &[crate::neuron::SpikeTrain]| s.iter().map(|s| s.rate()).sum::<f64>() / s.len() as f64;
    Ok(TrainStepReport {
        type1: vec![losses[0]],
        type2: vec![losses[1]],
        top: losses[2],
        recon: losses[3],
        grad_norm_pre: pre,
        grad_norm_post: post,
        rates_fwd: vec![mean_rate(&rec.s)],
        rates_bwd: vec![mean_rate(&rec.s_back)],
    })
}

pub fn new_rnn_optimizer(net: &RecurrentNet, config: crate::optim::AdamWConfig) -> OptimState {
    OptimState::new(config, &net.pair.params())
}
