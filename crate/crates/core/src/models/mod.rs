//! Dual-path architectures, the two passes, target spike codes and the
//! spike-count classifier.

mod checkpoint;
mod rnn;

use serde::{Deserialize, Serialize};

pub use checkpoint::{BlockInfo, Checkpoint, CheckpointHeader, ModelSpec, CHECKPOINT_VERSION};
pub use rnn::{rnn_forward, rnn_unroll, RecurrentNet, RnnRecord};

use crate::error::{Error, Result};
use crate::layers::{propagate, BnCache, BnMode, LayerPair, Op, PopShape};
use crate::math::{Rng, Tensor};
use crate::neuron::{self, NeuronParams, SpikeTrain};

/// Kernel size of every convolutional stage.
pub const KERNEL: usize = 3;

/// Architecture descriptor; the feedback path is always the mirror image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Arch {
    Mlp { sizes: Vec<usize> },
    /// Stride-2 convolution stages followed by a linear head.
    Cnn { input: [usize; 3], channels: Vec<usize>, classes: usize },
    /// Stride-2 encoder and upsampling decoder back to the input shape.
    Autoencoder { input: [usize; 3], channels: Vec<usize> },
}

impl Arch {
    pub fn mnist_mlp() -> Self {
        Arch::Mlp {
            sizes: vec![784, 1024, 1024, 512, 256, 10],
        }
    }

    pub fn mnist_mlp_desk() -> Self {
        Arch::Mlp {
            sizes: vec![784, 256, 128, 10],
        }
    }

    pub fn cnn(input: [usize; 3], classes: usize) -> Self {
        Arch::Cnn {
            input,
            channels: vec![128, 128, 256, 256, 512],
            classes,
        }
    }

    pub fn cnn_desk(input: [usize; 3], classes: usize) -> Self {
        Arch::Cnn {
            input,
            channels: vec![32, 32, 64],
            classes,
        }
    }

    pub fn autoencoder(input: [usize; 3]) -> Self {
        Arch::Autoencoder {
            input,
            channels: vec![128, 256, 512],
        }
    }

    pub fn autoencoder_desk(input: [usize; 3]) -> Self {
        Arch::Autoencoder {
            input,
            channels: vec![16, 32, 64],
        }
    }

    /// Feedforward connections with their batch-norm flags `(fwd, bwd)`.
    pub fn connections(&self) -> Result<Vec<(Op, bool, bool)>> {
        let map = |[c, h, w]: [usize; 3]| PopShape::Map { c, h, w };
        match self {
            Arch::Mlp { sizes } => {
                if sizes.len() < 2 || sizes.contains(&0) {
                    return Err(Error::config(format!("mlp sizes {sizes:?} need >= 2 nonzero layers")));
                }
                Ok(sizes.windows(2).map(|p| (Op::linear(p[0], p[1]), false, false)).collect())
            }
            Arch::Cnn { input, channels, classes } => {
                if channels.is_empty() || *classes == 0 {
                    return Err(Error::config("cnn needs at least one stage and one class"));
                }
                let mut ops = vec![];
                let mut pop = map(*input);
                for &c in channels {
                    let op = Op::conv(pop, c, KERNEL, 2, KERNEL / 2)?;
                    pop = op.output;
                    ops.push((op, true, true));
                }
                ops.push((Op::linear(pop.units(), *classes), false, false));
                Ok(ops)
            }
            Arch::Autoencoder { input, channels } => {
                if channels.is_empty() {
                    return Err(Error::config("autoencoder needs at least one stage"));
                }
                let mut ops = vec![];
                let mut pop = map(*input);
                for &c in channels {
                    let op = Op::conv(pop, c, KERNEL, 2, KERNEL / 2)?;
                    pop = op.output;
                    ops.push((op, true, true));
                }
                let mut outs: Vec<usize> = channels.iter().rev().skip(1).copied().collect();
                outs.push(input[0]);
                let last = outs.len() - 1;
                for (i, c) in outs.into_iter().enumerate() {
                    let op = Op::upsample(pop, c, 2, KERNEL)?;
                    pop = op.output;
                    ops.push((op, i != last, true));
                }
                if pop != map(*input) {
                    return Err(Error::dim(format!(
                        "autoencoder output {pop:?} does not reproduce input {input:?}; use sides divisible by 2^{}",
                        channels.len()
                    )));
                }
                Ok(ops)
            }
        }
    }
}

/// Paired feedforward (Type 1) and feedback (Type 2) spiking networks.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPathNet {
    pub arch: Arch,
    pub layers: Vec<LayerPair>,
    pub neuron_fwd: NeuronParams,
    pub neuron_bwd: NeuronParams,
    pub steps: usize,
}

impl DualPathNet {
    pub fn new(arch: Arch, neuron_fwd: NeuronParams, neuron_bwd: NeuronParams, steps: usize, seed: u64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::config("T must be at least 1"));
        }
        neuron_fwd.validate()?;
        neuron_bwd.validate()?;
        let rng = Rng::new(seed);
        let layers = arch
            .connections()?
            .into_iter()
            .enumerate()
            .map(|(i, (op, bf, bb))| LayerPair::new(op, bf, bb, &rng, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            arch,
            layers,
            neuron_fwd,
            neuron_bwd,
            steps,
        })
    }

    /// Population shapes, bottom to top.
    pub fn pops(&self) -> Vec<PopShape> {
        let mut p = vec![self.layers[0].forward.input];
        p.extend(self.layers.iter().map(|l| l.forward.output));
        p
    }

    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn input_units(&self) -> usize {
        self.layers[0].forward.input.units()
    }

    pub fn output_units(&self) -> usize {
        self.layers[self.layers.len() - 1].forward.output.units()
    }

    /// Copy with every parameter rounded through `f32` (checkpoint precision).
    pub fn rounded_f32(&self) -> Self {
        let mut net = self.clone();
        for t in net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        net
    }

    /// Every stored tensor in declaration order with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), &l.w));
            out.push((format!("layer{i}.theta"), &l.theta));
            for (tag, bn) in [("bn_fwd", &l.bn_forward), ("bn_bwd", &l.bn_backward)] {
                if let Some(bn) = bn {
                    out.push((format!("layer{i}.{tag}.gamma"), &bn.gamma));
                    out.push((format!("layer{i}.{tag}.beta"), &bn.beta));
                    out.push((format!("layer{i}.{tag}.running_mean"), &bn.running_mean));
                    out.push((format!("layer{i}.{tag}.running_var"), &bn.running_var));
                }
            }
        }
        out
    }

    /// Optimizer-visible parameters: `(name, is_feedback)` in a fixed order.
    pub fn trainable_names(&self) -> Vec<(String, bool)> {
        let mut out = vec![];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), false));
            out.push((format!("layer{i}.theta"), true));
            if l.bn_forward.is_some() {
                out.push((format!("layer{i}.bn_fwd.gamma"), false));
                out.push((format!("layer{i}.bn_fwd.beta"), false));
            }
            if l.bn_backward.is_some() {
                out.push((format!("layer{i}.bn_bwd.gamma"), true));
                out.push((format!("layer{i}.bn_bwd.beta"), true));
            }
        }
        out
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = vec![];
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.theta);
            for bn in [&l.bn_forward, &l.bn_backward].into_iter().flatten() {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![];
        for l in self.layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.theta);
            for bn in [&mut l.bn_forward, &mut l.bn_backward].into_iter().flatten() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![];
        for l in self.layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.theta);
            for bn in [&mut l.bn_forward, &mut l.bn_backward].into_iter().flatten() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }
}

/// Voltages, spikes and batch-norm caches of one path, indexed by population.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    /// Time-averaged somatic voltage per population `[B, units]`.
    pub voltages: Vec<Tensor>,
    pub spikes: Vec<SpikeTrain>,
    /// Per connection; `caches[k]` belongs to the op writing into this path's
    /// population `k + 1` (forward) or `k` (backward).
    pub caches: Vec<Option<BnCache>>,
}

/// Both passes. The apical voltage of a Type 1 population is the basal
/// voltage of the same-layer Type 2 population and vice versa.
#[derive(Clone, Debug, PartialEq)]
pub struct PassRecord {
    pub forward: PathRecord,
    pub backward: PathRecord,
}

impl PassRecord {
    pub fn basal(&self, pop: usize) -> &Tensor {
        &self.forward.voltages[pop]
    }

    /// `v̂_i = v'_i`.
    pub fn apical(&self, pop: usize) -> &Tensor {
        &self.backward.voltages[pop]
    }

    pub fn basal_back(&self, pop: usize) -> &Tensor {
        &self.backward.voltages[pop]
    }

    /// `v̂'_i = v_i`.
    pub fn apical_back(&self, pop: usize) -> &Tensor {
        &self.forward.voltages[pop]
    }

    pub fn output_spikes(&self) -> &SpikeTrain {
        self.forward.spikes.last().expect("nonempty path")
    }

    /// `s'_1`, the feedback path's reconstruction of the input layer.
    pub fn reconstructed_input(&self) -> &SpikeTrain {
        &self.backward.spikes[0]
    }
}

fn check_batch(x: &Tensor, units: usize, what: &str) -> Result<usize> {
    if x.ndim() < 1 || x.row_len() != units || x.rows() == 0 {
        return Err(Error::dim(format!(
            "{what} {:?} does not provide [B, {units}] values",
            x.shape()
        )));
    }
    Ok(x.rows())
}

/// Feedforward path: `v_1 = x` held for `T` steps, then `v_{i+1} = W_i s_i`.
pub fn forward_pass(net: &DualPathNet, x: &Tensor, mode: BnMode) -> Result<PathRecord> {
    check_batch(x, net.input_units(), "input")?;
    let x = x.clone().reshape(&[x.rows(), net.input_units()])?;
    let mut spikes = vec![neuron::run_constant(&net.neuron_fwd, &x, net.steps)?];
    let mut voltages = vec![x];
    let mut caches = vec![];
    for l in &net.layers {
        let p = propagate(&l.forward, &l.w, l.bn_forward.as_ref(), mode, spikes.last().unwrap(), &net.neuron_fwd)?;
        voltages.push(p.voltage_mean);
        spikes.push(p.spikes);
        caches.push(p.bn_cache);
    }
    Ok(PathRecord { voltages, spikes, caches })
}

/// Feedback path: `v'_L = target` held for `T` steps, then `v'_i = Θ_i s'_{i+1}`.
pub fn backward_pass(net: &DualPathNet, target: &Tensor, mode: BnMode) -> Result<PathRecord> {
    check_batch(target, net.output_units(), "target")?;
    let target = target.clone().reshape(&[target.rows(), net.output_units()])?;
    let n = net.layers.len();
    let mut spikes = vec![None; n + 1];
    let mut voltages = vec![None; n + 1];
    let mut caches = vec![None; n];
    spikes[n] = Some(neuron::run_constant(&net.neuron_bwd, &target, net.steps)?);
    voltages[n] = Some(target);
    for k in (0..n).rev() {
        let l = &net.layers[k];
        let p = propagate(
            &l.backward,
            &l.theta,
            l.bn_backward.as_ref(),
            mode,
            spikes[k + 1].as_ref().unwrap(),
            &net.neuron_bwd,
        )?;
        voltages[k] = Some(p.voltage_mean);
        spikes[k] = Some(p.spikes);
        caches[k] = p.bn_cache;
    }
    Ok(PathRecord {
        voltages: voltages.into_iter().map(Option::unwrap).collect(),
        spikes: spikes.into_iter().map(Option::unwrap).collect(),
        caches,
    })
}

/// Run both passes. Neither reads the other's output.
pub fn dual_pass(net: &DualPathNet, x: &Tensor, target: &Tensor, mode: BnMode) -> Result<PassRecord> {
    Ok(PassRecord {
        forward: forward_pass(net, x, mode)?,
        backward: backward_pass(net, target, mode)?,
    })
}

/// One-hot class code repeated over `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelCode {
    pub classes: usize,
    pub class: usize,
    pub steps: usize,
}

impl LabelCode {
    /// Binary `[T, C]` code.
    pub fn spikes(&self) -> SpikeTrain {
        let mut t = Tensor::zeros(&[self.steps, self.classes]);
        for s in 0..self.steps {
            t.data_mut()[s * self.classes + self.class] = 1.0;
        }
        SpikeTrain::new(t).expect("one-hot code is binary")
    }
}

pub fn encode_label(class: usize, classes: usize, steps: usize) -> Result<LabelCode> {
    if class >= classes {
        return Err(Error::data(format!("label {class} outside 0..{classes}")));
    }
    if steps < 1 {
        return Err(Error::config("T must be at least 1"));
    }
    Ok(LabelCode { classes, class, steps })
}

/// `[B, C]` one-hot rows, the current delivered to the top Type 2 layer.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::data(format!("label {y} outside 0..{classes}")));
        }
        t.data_mut()[b * classes + y] = 1.0;
    }
    Ok(t)
}

/// Spike counts per class over time, `[B, C]`.
pub fn spike_counts(s: &SpikeTrain) -> Tensor {
    let mut c = s.mean_over_time();
    c.scale(s.steps() as f64);
    c
}

/// Predicted class per sample: the one-hot code with the highest cosine to
/// the spike counts, i.e. the count argmax, ties to the lowest index.
pub fn classify(s: &SpikeTrain) -> Vec<usize> {
    let counts = spike_counts(s);
    (0..counts.rows())
        .map(|b| {
            let row = counts.row(b);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::testing::random;
    use crate::math::cosine;

    fn small_mlp(sizes: Vec<usize>) -> DualPathNet {
        DualPathNet::new(Arch::Mlp { sizes }, NeuronParams::lif(0.2), NeuronParams::lif(0.1), 4, 7).unwrap()
    }

    #[test]
    fn label_codes() {
        let c = encode_label(0, 4, 2).unwrap();
        assert_eq!(c.spikes().tensor().data(), &[1., 0., 0., 0., 1., 0., 0., 0.]);
        assert_eq!(encode_label(0, 1, 3).unwrap().spikes().tensor().data(), &[1., 1., 1.]);
        for (j, cl, t) in [(2, 5, 3), (0, 2, 1), (9, 10, 4)] {
            let s = encode_label(j, cl, t).unwrap().spikes();
            for r in 0..t {
                assert_eq!(s.tensor().row(r).iter().sum::<f64>(), 1.0);
            }
        }
        assert!(matches!(encode_label(4, 4, 2), Err(Error::Data(_))));
    }

    #[test]
    fn classify_cases() {
        let code = encode_label(2, 4, 4).unwrap().spikes().into_tensor().reshape(&[4, 1, 4]).unwrap();
        assert_eq!(classify(&SpikeTrain::new(code).unwrap()), vec![2]);
        let mut t = Tensor::zeros(&[4, 1, 4]);
        for s in 0..3 {
            t.data_mut()[s * 4] = 1.0;
        }
        t.data_mut()[1] = 1.0;
        assert_eq!(classify(&SpikeTrain::new(t).unwrap()), vec![0]);
        assert_eq!(classify(&SpikeTrain::new(Tensor::zeros(&[4, 2, 3])).unwrap()), vec![0, 0]);
    }

    /// Cosine against one-hot codes by brute force, lowest index on ties.
    fn cosine_argmax(counts: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..counts.len() {
            let mut code = vec![0.0; counts.len()];
            code[j] = 1.0;
            let c = cosine(counts, &code, 1e-12);
            if c > best.1 + 1e-12 {
                best = (j, c);
            }
        }
        best.0
    }

    #[test]
    fn shift_invariance_by_enumeration() {
        for classes in 2..=4usize {
            let total = 5usize.pow(classes as u32);
            for code in 0..total {
                let counts: Vec<f64> = (0..classes).map(|j| ((code / 5usize.pow(j as u32)) % 5) as f64).collect();
                let best = cosine_argmax(&counts);
                let unique = counts.iter().enumerate().all(|(j, &c)| j == best || counts[best] >= c + 1.0);
                assert_eq!(best, argmax_counts(&counts));
                if !unique {
                    continue;
                }
                for shift in 1..=4 {
                    let shifted: Vec<f64> = counts.iter().map(|c| c + shift as f64).collect();
                    assert_eq!(cosine_argmax(&shifted), best);
                }
            }
        }
    }

    fn argmax_counts(counts: &[f64]) -> usize {
        let steps = 4;
        let b = 1;
        let mut t = Tensor::zeros(&[steps, b, counts.len()]);
        for (j, &c) in counts.iter().enumerate() {
            for s in 0..(c as usize).min(steps) {
                t.data_mut()[s * counts.len() + j] = 1.0;
            }
        }
        classify(&SpikeTrain::new(t).unwrap())[0]
    }

    #[test]
    fn zero_input_is_silent() {
        let net = small_mlp(vec![6, 5, 3]);
        let r = forward_pass(&net, &Tensor::zeros(&[2, 6]), BnMode::Train).unwrap();
        assert!(r.spikes.iter().all(|s| s.rate() == 0.0));
        assert!(r.voltages.iter().all(|v| v.max_abs() == 0.0));
    }

    #[test]
    fn identity_trace_with_if_neurons() {
        let mut net = DualPathNet::new(
            Arch::Mlp { sizes: vec![3, 3] },
            NeuronParams::integrate_and_fire(0.5),
            NeuronParams::integrate_and_fire(0.5),
            4,
            0,
        )
        .unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        (0..3).for_each(|i| eye.data_mut()[i * 4] = 1.0);
        net.layers[0].w = eye;
        let x = Tensor::from_rows(&[&[0.0, 0.7, 0.0]]);
        let r = forward_pass(&net, &x, BnMode::Train).unwrap();
        for t in 0..4 {
            assert_eq!(r.spikes[0].tensor().row(t), &[0.0, 1.0, 0.0]);
            assert_eq!(r.spikes[1].tensor().row(t), &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn output_train_shape() {
        let net = small_mlp(vec![8, 6, 10]);
        let mut rng = Rng::new(1);
        let r = forward_pass(&net, &random(&[5, 8], &mut rng), BnMode::Train).unwrap();
        assert_eq!(r.spikes.last().unwrap().tensor().shape(), &[4, 5, 10]);
    }

    #[test]
    fn backward_pass_cases() {
        let mut net = small_mlp(vec![8, 6, 4]);
        let target = one_hot(&[2, 0], 4).unwrap();
        let mut if_net = net.clone();
        if_net.neuron_bwd = NeuronParams::integrate_and_fire(0.5);
        let r = backward_pass(&if_net, &target, BnMode::Train).unwrap();
        let want = SpikeTrain::repeat(&target, 4).unwrap();
        assert_eq!(r.spikes[2], want);
        for l in net.layers.iter_mut() {
            l.theta.scale(0.0);
        }
        let r = backward_pass(&net, &target, BnMode::Train).unwrap();
        assert_eq!(r.voltages[0].max_abs() + r.voltages[1].max_abs(), 0.0);
    }

    #[test]
    fn passes_are_order_independent() {
        let net = DualPathNet::new(Arch::cnn_desk([1, 8, 8], 3), NeuronParams::lif(1.0), NeuronParams::lif(1.0), 2, 3).unwrap();
        let mut rng = Rng::new(4);
        let x = random(&[3, 64], &mut rng);
        let y = one_hot(&[0, 2, 1], 3).unwrap();
        let a = dual_pass(&net, &x, &y, BnMode::Train).unwrap();
        let b_back = backward_pass(&net, &y, BnMode::Train).unwrap();
        let b_fwd = forward_pass(&net, &x, BnMode::Train).unwrap();
        assert_eq!(a, PassRecord { forward: b_fwd, backward: b_back });
        assert_eq!(a.apical(1), a.basal_back(1));
        assert_eq!(a.apical_back(1), a.basal(1));
    }

    #[test]
    fn population_sizes_match_for_every_arch() {
        for arch in [
            Arch::mnist_mlp(),
            Arch::mnist_mlp_desk(),
            Arch::cnn_desk([1, 32, 32], 10),
            Arch::cnn([3, 32, 32], 10),
            Arch::autoencoder_desk([1, 32, 32]),
            Arch::autoencoder([3, 32, 32]),
        ] {
            for (op, _, _) in arch.connections().unwrap() {
                let inv = op.inverse().unwrap();
                assert_eq!(inv.input.units(), op.output.units());
                assert_eq!(inv.output.units(), op.input.units());
            }
        }
        assert!(Arch::autoencoder_desk([1, 28, 28]).connections().is_err());
    }

    #[test]
    fn every_message_is_binary() {
        let net = DualPathNet::new(Arch::autoencoder_desk([1, 8, 8]), NeuronParams::lif(0.4), NeuronParams::lif(0.4), 3, 1).unwrap();
        let mut rng = Rng::new(2);
        let x = random(&[2, 64], &mut rng);
        let r = dual_pass(&net, &x, &x, BnMode::Train).unwrap();
        for s in r.forward.spikes.iter().chain(&r.backward.spikes) {
            assert!(s.is_binary());
        }
    }

    #[test]
    fn transducer_depends_only_on_image() {
        let a = DualPathNet::new(Arch::autoencoder_desk([1, 8, 8]), NeuronParams::lif(0.4), NeuronParams::lif(0.4), 3, 1).unwrap();
        let b = DualPathNet::new(Arch::autoencoder_desk([1, 8, 8]), NeuronParams::lif(0.4), NeuronParams::lif(0.4), 3, 99).unwrap();
        let mut rng = Rng::new(2);
        let x = random(&[2, 64], &mut rng);
        let ra = backward_pass(&a, &x, BnMode::Train).unwrap();
        let rb = backward_pass(&b, &x, BnMode::Train).unwrap();
        assert_eq!(ra.spikes.last(), rb.spikes.last());
        assert_ne!(ra.spikes[0], rb.spikes[0]);
    }

    #[test]
    fn input_mismatch_is_rejected() {
        let net = small_mlp(vec![8, 6, 4]);
        assert!(matches!(forward_pass(&net, &Tensor::zeros(&[2, 7]), BnMode::Train), Err(Error::Dimension(_))));
        assert!(matches!(backward_pass(&net, &Tensor::zeros(&[2, 5]), BnMode::Train), Err(Error::Dimension(_))));
    }
}
