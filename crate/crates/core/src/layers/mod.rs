//! Layer pairs: a feedforward weight `W` and an independent feedback weight
//! `Θ` per layer, each with a forward evaluation and a local gradient rule.

mod batchnorm;
mod conv;
pub(crate) mod recurrent;

use serde::{Deserialize, Serialize};

pub use batchnorm::{BatchNormState, BnCache, BnMode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_weight_grad, upsample_forward, ConvGeometry};
pub use recurrent::{recurrent_step, RecurrentPair, RecurrentStep};

use crate::error::{Error, Result};
use crate::math::{cosine, gemm, init_uniform, matmul_tn, Rng, Tensor};
use crate::neuron::{self, NeuronParams, SpikeTrain};

/// Shape of one neuron population (per sample).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopShape {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

impl PopShape {
    pub fn units(&self) -> usize {
        match *self {
            PopShape::Flat(n) => n,
            PopShape::Map { c, h, w } => c * h * w,
        }
    }

    /// `[C, H, W]`, treating a flat population as `n` channels of 1x1.
    pub fn chw(&self) -> [usize; 3] {
        match *self {
            PopShape::Flat(n) => [n, 1, 1],
            PopShape::Map { c, h, w } => [c, h, w],
        }
    }

    pub fn is_map(&self) -> bool {
        matches!(self, PopShape::Map { .. })
    }
}

/// Connection type between two populations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    Linear,
    Conv { kernel: usize, stride: usize, pad: usize },
    /// Nearest upsampling by `factor` followed by a stride-1 convolution.
    Upsample { factor: usize, kernel: usize },
}

/// A connection with fixed input and output population shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Op {
    pub kind: OpKind,
    pub input: PopShape,
    pub output: PopShape,
}

impl Op {
    pub fn linear(inputs: usize, outputs: usize) -> Self {
        Op {
            kind: OpKind::Linear,
            input: PopShape::Flat(inputs),
            output: PopShape::Flat(outputs),
        }
    }

    pub fn conv(input: PopShape, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let [c, h, w] = input.chw();
        let g = ConvGeometry {
            in_channels: c,
            out_channels,
            height: h,
            width: w,
            kernel,
            stride,
            pad,
        };
        let (ho, wo) = g.out_hw()?;
        Ok(Op {
            kind: OpKind::Conv { kernel, stride, pad },
            input,
            output: PopShape::Map { c: out_channels, h: ho, w: wo },
        })
    }

    pub fn upsample(input: PopShape, out_channels: usize, factor: usize, kernel: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::config("upsample factor must be at least 1"));
        }
        if kernel % 2 == 0 {
            return Err(Error::config("upsample convolution needs an odd kernel"));
        }
        let [_, h, w] = input.chw();
        Ok(Op {
            kind: OpKind::Upsample { factor, kernel },
            input,
            output: PopShape::Map {
                c: out_channels,
                h: h * factor,
                w: w * factor,
            },
        })
    }

    /// The mirrored connection from this op's output back to its input shape.
    pub fn inverse(&self) -> Result<Op> {
        let inv = match self.kind {
            OpKind::Linear => Op::linear(self.output.units(), self.input.units()),
            OpKind::Conv { kernel, stride, .. } if stride > 1 => {
                Op::upsample(self.output, self.input.chw()[0], stride, kernel)?
            }
            OpKind::Conv { kernel, stride, pad } => Op::conv(self.output, self.input.chw()[0], kernel, stride, pad)?,
            OpKind::Upsample { factor, kernel } => Op::conv(self.output, self.input.chw()[0], kernel, factor, kernel / 2)?,
        };
        if inv.output != self.input {
            return Err(Error::dim(format!(
                "{:?} has no shape-preserving inverse: {:?} maps back to {:?}",
                self.kind, self.input, inv.output
            )));
        }
        Ok(inv)
    }

    fn geometry(&self) -> ConvGeometry {
        let [ci, h, w] = self.input.chw();
        let co = self.output.chw()[0];
        match self.kind {
            OpKind::Conv { kernel, stride, pad } => ConvGeometry {
                in_channels: ci,
                out_channels: co,
                height: h,
                width: w,
                kernel,
                stride,
                pad,
            },
            OpKind::Upsample { factor, kernel } => ConvGeometry {
                in_channels: ci,
                out_channels: co,
                height: h * factor,
                width: w * factor,
                kernel,
                stride: 1,
                pad: kernel / 2,
            },
            OpKind::Linear => ConvGeometry {
                in_channels: self.input.units(),
                out_channels: self.output.units(),
                height: 1,
                width: 1,
                kernel: 1,
                stride: 1,
                pad: 0,
            },
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            OpKind::Linear => vec![self.output.units(), self.input.units()],
            _ => self.geometry().weight_shape().to_vec(),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            OpKind::Linear => self.input.units(),
            _ => self.geometry().patch_len(),
        }
    }

    pub fn init_weights(&self, rng: &mut Rng) -> Result<Tensor> {
        init_uniform(rng, self.fan_in(), &self.weight_shape())
    }

    fn upsampled(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            OpKind::Upsample { factor, .. } => {
                let [c, h, w] = self.input.chw();
                let data = conv::upsample_planes(input.data(), input.rows() * c, h, w, factor);
                Tensor::from_vec(&[input.rows(), c * h * w * factor * factor], data)
            }
            _ => Ok(input.clone()),
        }
    }

    /// Currents `[N, out_units]` from inputs `[N, in_units]` (any leading dims
    /// are flattened into `N`).
    pub fn apply(&self, w: &Tensor, input: &Tensor) -> Result<Tensor> {
        let n_in = self.input.units();
        if n_in == 0 || input.len() % n_in != 0 {
            return Err(Error::dim(format!(
                "input of {} values does not hold whole {n_in}-unit samples",
                input.len()
            )));
        }
        if w.shape() != self.weight_shape() {
            return Err(Error::dim(format!(
                "weight {:?} does not match connection {:?}",
                w.shape(),
                self.weight_shape()
            )));
        }
        let rows = input.len() / n_in;
        match self.kind {
            OpKind::Linear => {
                let n_out = self.output.units();
                let mut out = vec![0.0; rows * n_out];
                gemm(rows, n_in, n_out, 1.0, input.data(), false, w.data(), true, 0.0, &mut out);
                Tensor::from_vec(&[rows, n_out], out)
            }
            _ => {
                let flat = Tensor::from_vec(&[rows, n_in], input.data().to_vec())?;
                conv2d(&self.geometry(), w, &self.upsampled(&flat)?)
            }
        }
    }

    /// Sum over the batch of `grad_out ⊗ input` under this connection's
    /// weight sharing.
    pub fn weight_grad(&self, grad_out: &Tensor, input_mean: &Tensor) -> Result<Tensor> {
        if grad_out.rows() != input_mean.rows() {
            return Err(Error::dim(format!(
                "gradient batch {} differs from presynaptic batch {}",
                grad_out.rows(),
                input_mean.rows()
            )));
        }
        if grad_out.row_len() != self.output.units() || input_mean.row_len() != self.input.units() {
            return Err(Error::dim(format!(
                "local gradient shapes {:?} / {:?} do not match {:?} -> {:?}",
                grad_out.shape(),
                input_mean.shape(),
                self.input,
                self.output
            )));
        }
        match self.kind {
            OpKind::Linear => linear_local_grad(grad_out, input_mean),
            _ => conv2d_weight_grad(&self.geometry(), grad_out, &self.upsampled(input_mean)?),
        }
    }
}

/// Result of driving one population through a connection.
#[derive(Clone, Debug)]
pub struct Propagated {
    /// Time-averaged somatic voltage `[B, units]` (after normalization).
    pub voltage_mean: Tensor,
    pub spikes: SpikeTrain,
    pub bn_cache: Option<BnCache>,
}

/// Drive the spikes `[T, B, in]` through `op`, optional batch norm, and neurons.
pub fn propagate(
    op: &Op,
    w: &Tensor,
    bn: Option<&BatchNormState>,
    mode: BnMode,
    input: &SpikeTrain,
    neuron: &NeuronParams,
) -> Result<Propagated> {
    let steps = input.steps();
    let t = input.tensor();
    let batch = t.len() / (steps * op.input.units()).max(1);
    let mut currents = op.apply(w, t)?.reshape(&[steps, batch, op.output.units()])?;
    let mean = currents.mean_over_leading();
    let (voltage_mean, bn_cache) = match bn {
        Some(bn) => bn.normalize(mode, &mean, &mut currents)?,
        None => (mean, None),
    };
    let spikes = neuron::run(neuron, &currents)?;
    Ok(Propagated {
        voltage_mean,
        spikes,
        bn_cache,
    })
}

/// Gradients for one connection: the weight plus optional `(gamma, beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGrad {
    pub weight: Tensor,
    pub bn: Option<(Tensor, Tensor)>,
}

/// Local gradient of a loss on the (normalized) voltage mean with respect to
/// the connection's parameters. Nothing propagates past the connection.
pub fn local_grad(
    op: &Op,
    bn: Option<(&BatchNormState, &BnCache)>,
    grad_v: &Tensor,
    input_mean: &Tensor,
) -> Result<LocalGrad> {
    match bn {
        Some((state, cache)) => {
            let (g_in, g_gamma, g_beta) = state.backward(cache, grad_v)?;
            Ok(LocalGrad {
                weight: op.weight_grad(&g_in, input_mean)?,
                bn: Some((g_gamma, g_beta)),
            })
        }
        None => Ok(LocalGrad {
            weight: op.weight_grad(grad_v, input_mean)?,
            bn: None,
        }),
    }
}

/// One layer of the dual-path network: `W` maps the lower population up,
/// `Θ` maps the upper population down.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPair {
    pub forward: Op,
    pub backward: Op,
    pub w: Tensor,
    pub theta: Tensor,
    pub bn_forward: Option<BatchNormState>,
    pub bn_backward: Option<BatchNormState>,
}

impl LayerPair {
    /// Draw `W` and `Θ` from separate streams of `rng`.
    pub fn new(forward: Op, bn_forward: bool, bn_backward: bool, rng: &Rng, index: u64) -> Result<Self> {
        let backward = forward.inverse()?;
        let w = forward.init_weights(&mut rng.split(2 * index))?;
        let theta = backward.init_weights(&mut rng.split(2 * index + 1))?;
        Ok(Self {
            forward,
            backward,
            w,
            theta,
            bn_forward: bn_forward.then(|| BatchNormState::new(forward.output.chw()[0])),
            bn_backward: bn_backward.then(|| BatchNormState::new(backward.output.chw()[0])),
        })
    }

    /// Cosine between `W` and the adjoint layout of `Θ`.
    pub fn weight_alignment(&self) -> Result<f64> {
        match self.forward.kind {
            OpKind::Linear => weight_alignment(&self.w, &self.theta),
            _ => {
                let adj = conv_adjoint(&self.theta)?;
                if adj.shape() != self.w.shape() {
                    return Err(Error::dim("mirrored kernels do not line up"));
                }
                Ok(cosine(self.w.data(), adj.data(), 0.0).clamp(-1.0, 1.0))
            }
        }
    }
}

/// `[A, B, k, k]` kernel to `[B, A, k, k]` with spatially flipped taps.
fn conv_adjoint(k: &Tensor) -> Result<Tensor> {
    if k.ndim() != 4 {
        return Err(Error::dim("kernel must be 4-dimensional"));
    }
    let [a, b, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let mut out = vec![0.0; k.len()];
    for i in 0..a {
        for j in 0..b {
            for y in 0..kh {
                for x in 0..kw {
                    out[((j * a + i) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                        k.data()[((i * b + j) * kh + y) * kw + x];
                }
            }
        }
    }
    Tensor::from_vec(&[b, a, kh, kw], out)
}

/// `voltage_mean` and output spikes of `W` applied to `[T, B, in]` spikes.
pub fn linear_forward(w: &Tensor, spikes: &SpikeTrain, neuron: &NeuronParams) -> Result<(Tensor, SpikeTrain)> {
    if w.ndim() != 2 {
        return Err(Error::dim("linear weight must be 2-dimensional"));
    }
    let op = Op::linear(w.shape()[1], w.shape()[0]);
    let p = propagate(&op, w, None, BnMode::Eval, spikes, neuron)?;
    Ok((p.voltage_mean, p.spikes))
}

/// `Σ_k gradV[k] ⊗ in[k]`.
pub fn linear_local_grad(grad_v: &Tensor, in_spikes_mean: &Tensor) -> Result<Tensor> {
    if grad_v.rows() != in_spikes_mean.rows() {
        return Err(Error::dim(format!(
            "gradient batch {} differs from presynaptic batch {}",
            grad_v.rows(),
            in_spikes_mean.rows()
        )));
    }
    matmul_tn(grad_v, in_spikes_mean)
}

/// Convolution stage on `[T, B, C*H*W]` spikes with optional batch norm.
pub fn conv_forward(
    w: &Tensor,
    spikes: &SpikeTrain,
    input: PopShape,
    stride: usize,
    pad: usize,
    bn: Option<&BatchNormState>,
    mode: BnMode,
    neuron: &NeuronParams,
) -> Result<Propagated> {
    if w.ndim() != 4 {
        return Err(Error::dim("conv weight must be [outC, inC, k, k]"));
    }
    let op = Op::conv(input, w.shape()[0], w.shape()[2], stride, pad)?;
    propagate(&op, w, bn, mode, spikes, neuron)
}

/// Local conv gradient, pulled back through batch norm first when present.
pub fn conv_local_grad(
    op: &Op,
    grad_v: &Tensor,
    in_spikes_mean: &Tensor,
    bn: Option<(&BatchNormState, &BnCache)>,
) -> Result<LocalGrad> {
    if matches!(op.kind, OpKind::Linear) {
        return Err(Error::dim("conv_local_grad needs a convolutional connection"));
    }
    local_grad(op, bn, grad_v, in_spikes_mean)
}

/// Cosine between `vec(W)` and `vec(Θᵀ)` for a linear pair.
pub fn weight_alignment(w: &Tensor, theta: &Tensor) -> Result<f64> {
    if w.ndim() != 2 || theta.ndim() != 2 || w.shape()[0] != theta.shape()[1] || w.shape()[1] != theta.shape()[0] {
        return Err(Error::dim(format!(
            "weights {:?} and {:?} are not transpose-compatible",
            w.shape(),
            theta.shape()
        )));
    }
    let tt = theta.transpose()?;
    Ok(cosine(w.data(), tt.data(), 0.0).clamp(-1.0, 1.0))
}
