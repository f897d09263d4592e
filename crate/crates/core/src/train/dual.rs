use crate::error::{Error, Result};
use crate::layers::{local_grad, BnMode, LocalGrad};
use crate::loss::{ce_top, mse_align, AlignLoss};
use crate::math::Tensor;
use crate::models::{dual_pass, one_hot, DualPathNet, PassRecord};
use crate::optim::{adamw_step, clip_global, OptimState};
use crate::parallel;

use super::TrainStepReport;

/// Loss on the top Type 1 population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TopLoss {
    /// Cross-entropy of the top voltages against class labels.
    CrossEntropy,
    /// MSE between top basal and apical voltages.
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualStepConfig {
    pub hidden: AlignLoss,
    pub top: TopLoss,
    pub lr_w: f64,
    pub lr_theta: f64,
    pub clip: Option<f64>,
}

/// Local gradients of every layer pair plus the loss values that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DualGrads {
    pub w: Vec<LocalGrad>,
    pub theta: Vec<LocalGrad>,
    /// `L_i` for populations `2..L-1` (index 0 is population 2).
    pub type1: Vec<f64>,
    /// `L'_i` for populations `1..L-1`.
    pub type2: Vec<f64>,
    pub top: f64,
}

impl DualGrads {
    /// Flatten in the order of [`DualPathNet::trainable`].
    pub fn flatten(self) -> Vec<Tensor> {
        let mut out = vec![];
        for (w, t) in self.w.into_iter().zip(self.theta) {
            out.push(w.weight);
            out.push(t.weight);
            out.extend(w.bn.into_iter().flat_map(|(g, b)| [g, b]));
            out.extend(t.bn.into_iter().flat_map(|(g, b)| [g, b]));
        }
        out
    }
}

enum Job {
    Forward(usize),
    Backward(usize),
}

/// Layer-local gradients. Each job reads only its own layer's voltages and
/// presynaptic spike means, so jobs run independently.
pub fn dual_gradients(
    net: &DualPathNet,
    rec: &PassRecord,
    labels: Option<&[usize]>,
    hidden: AlignLoss,
    top: TopLoss,
) -> Result<DualGrads> {
    let n = net.layers.len();
    let pops = net.pops();
    let spatial = |p: usize| pops[p].is_map().then(|| pops[p].chw());
    let jobs: Vec<Job> = (0..n).map(Job::Forward).chain((0..n).map(Job::Backward)).collect();
    let results = parallel::map_range(jobs.len(), |j| -> Result<(f64, LocalGrad)> {
        match jobs[j] {
            Job::Forward(k) => {
                let u = k + 1;
                let (value, g) = if u < n {
                    let (l, g) = hidden.eval(rec.basal(u), rec.apical(u), spatial(u))?;
                    (l.value, g)
                } else {
                    match top {
                        TopLoss::CrossEntropy => {
                            let labels = labels.ok_or_else(|| Error::config("cross-entropy top loss needs labels"))?;
                            let (l, g) = ce_top(rec.basal(u), labels)?;
                            (l.value, g)
                        }
                        TopLoss::Mse => {
                            let (l, g) = mse_align(rec.basal(u), rec.apical(u))?;
                            (l.value, g)
                        }
                    }
                };
                let l = &net.layers[k];
                let bn = l.bn_forward.as_ref().zip(rec.forward.caches[k].as_ref());
                let pre = rec.forward.spikes[k].mean_over_time();
                Ok((value, local_grad(&l.forward, bn, &g, &pre)?))
            }
            Job::Backward(k) => {
                let (l, g) = hidden.eval(rec.basal_back(k), rec.apical_back(k), spatial(k))?;
                let layer = &net.layers[k];
                let bn = layer.bn_backward.as_ref().zip(rec.backward.caches[k].as_ref());
                let pre = rec.backward.spikes[k + 1].mean_over_time();
                Ok((l.value, local_grad(&layer.backward, bn, &g, &pre)?))
            }
        }
    });
    let mut w = vec![];
    let mut theta = vec![];
    let mut type1 = vec![];
    let mut type2 = vec![];
    let mut top_value = 0.0;
    for (job, r) in jobs.iter().zip(results) {
        let (value, g) = r?;
        match *job {
            Job::Forward(k) => {
                if k + 1 < n {
                    type1.push(value);
                } else {
                    top_value = value;
                }
                w.push(g);
            }
            Job::Backward(_) => {
                type2.push(value);
                theta.push(g);
            }
        }
    }
    Ok(DualGrads {
        w,
        theta,
        type1,
        type2,
        top: top_value,
    })
}

/// One training transaction: both passes, local gradients, clipping, AdamW
/// and running batch-norm statistics. On error nothing is modified.
pub fn train_step_dual(
    net: &mut DualPathNet,
    opt: &mut OptimState,
    x: &Tensor,
    target: &Tensor,
    labels: Option<&[usize]>,
    cfg: &DualStepConfig,
) -> Result<TrainStepReport> {
    let rec = dual_pass(net, x, target, BnMode::Train)?;
    let grads = dual_gradients(net, &rec, labels, cfg.hidden, cfg.top)?;
    let (type1, type2, top) = (grads.type1.clone(), grads.type2.clone(), grads.top);
    let mut flat = grads.flatten();
    let pre = clip_global(&mut flat, cfg.clip.unwrap_or(f64::INFINITY));
    let post = crate::optim::global_norm(&flat);
    let names = net.trainable_names();
    let lrs: Vec<f64> = names.iter().map(|(_, fb)| if *fb { cfg.lr_theta } else { cfg.lr_w }).collect();
    let names: Vec<String> = names.into_iter().map(|(n, _)| n).collect();
    adamw_step(opt, &mut net.trainable_mut(), &flat, &lrs, &names)?;
    for (k, l) in net.layers.iter_mut().enumerate() {
        if let (Some(bn), Some(c)) = (l.bn_forward.as_mut(), rec.forward.caches[k].as_ref()) {
            bn.update_running(c);
        }
        if let (Some(bn), Some(c)) = (l.bn_backward.as_mut(), rec.backward.caches[k].as_ref()) {
            bn.update_running(c);
        }
    }
    Ok(TrainStepReport {
        type1,
        type2,
        top,
        recon: 0.0,
        grad_norm_pre: pre,
        grad_norm_post: post,
        rates_fwd: rec.forward.spikes.iter().map(|s| s.rate()).collect(),
        rates_bwd: rec.backward.spikes.iter().map(|s| s.rate()).collect(),
    })
}

/// Classification step: the label code drives the top Type 2 layer and
/// cross-entropy trains the top feedforward weights.
pub fn train_step_classifier(
    net: &mut DualPathNet,
    opt: &mut OptimState,
    x: &Tensor,
    labels: &[usize],
    cfg: &DualStepConfig,
) -> Result<TrainStepReport> {
    let target = one_hot(labels, net.output_units())?;
    train_step_dual(net, opt, x, &target, Some(labels), &DualStepConfig { top: TopLoss::CrossEntropy, ..*cfg })
}

/// Reconstruction step: the image drives both the bottom Type 1 and the top
/// Type 2 layers; the top feedforward layer is trained by MSE.
pub fn train_step_autoencoder(
    net: &mut DualPathNet,
    opt: &mut OptimState,
    images: &Tensor,
    cfg: &DualStepConfig,
) -> Result<TrainStepReport> {
    train_step_dual(net, opt, images, images, None, &DualStepConfig { top: TopLoss::Mse, ..*cfg })
}

pub fn new_optimizer(net: &DualPathNet, config: crate::optim::AdamWConfig) -> OptimState {
    OptimState::new(config, &net.trainable())
}
