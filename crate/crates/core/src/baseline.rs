//! Reference multilayer perceptron trained by ordinary backpropagation
//! (ReLU hidden units, softmax cross-entropy). Used only as an accuracy
//! yardstick; it shares weights between the forward and backward sweeps and
//! propagates a global error, so none of the biological constraints hold.

use crate::data::{batches, ImageDataset};
use crate::error::{Error, Result};
use crate::loss::ce_top;
use crate::math::{matmul_nt, matmul_tn, Rng, Tensor};
use crate::models::{Checkpoint, ModelSpec};
use crate::optim::{adamw_step, clip_global, global_norm, AdamWConfig, OptimState};

#[derive(Clone, Debug, PartialEq)]
pub struct AnnMlp {
    pub sizes: Vec<usize>,
    /// `weights[k]` is `[sizes[k+1], sizes[k]]`.
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Pre-activations and activations of one forward sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnCache {
    /// `acts[0]` is the input, `acts[k]` the ReLU output of layer `k`.
    pub acts: Vec<Tensor>,
    pub logits: Tensor,
}

impl AnnMlp {
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(format!("ANN sizes {sizes:?} need at least two positive entries")));
        }
        let root = Rng::new(seed);
        let mut weights = vec![];
        let mut biases = vec![];
        for k in 0..sizes.len() - 1 {
            let mut rng = root.split(k as u64);
            let bound = 1.0 / (sizes[k] as f64).sqrt();
            let mut draw = |n: usize| (0..n).map(|_| rng.uniform(-bound, bound)).collect::<Vec<_>>();
            weights.push(Tensor::from_vec(&[sizes[k + 1], sizes[k]], draw(sizes[k + 1] * sizes[k]))?);
            biases.push(Tensor::from_vec(&[sizes[k + 1]], draw(sizes[k + 1]))?);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.weights.len()).flat_map(|k| [format!("w{k}"), format!("b{k}")]).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn rounded_f32(&self) -> Self {
        let mut net = self.clone();
        for t in net.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        net
    }

    pub fn forward(&self, x: &Tensor) -> Result<AnnCache> {
        if x.ndim() != 2 || x.row_len() != self.sizes[0] {
            return Err(Error::dim(format!("ANN input {:?} is not [B, {}]", x.shape(), self.sizes[0])));
        }
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = matmul_nt(acts.last().unwrap(), w)?;
            let n = z.row_len();
            for (i, v) in z.data_mut().iter_mut().enumerate() {
                *v += b.data()[i % n];
                if k < last {
                    *v = v.max(0.0);
                }
            }
            if k == last {
                return Ok(AnnCache { acts, logits: z });
            }
            acts.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Mean cross-entropy and its gradients in [`AnnMlp::params`] order.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let cache = self.forward(x)?;
        let (loss, mut delta) = ce_top(&cache.logits, labels)?;
        let depth = self.weights.len();
        let mut grads = vec![Tensor::zeros(&[0]); 2 * depth];
        for k in (0..depth).rev() {
            let input = &cache.acts[k];
            grads[2 * k] = matmul_tn(&delta, input)?;
            grads[2 * k + 1] = delta.mean_over_leading();
            grads[2 * k + 1].scale(delta.rows() as f64);
            if k > 0 {
                let mut back = Tensor::zeros(input.shape());
                let (b, n_out, n_in) = (delta.rows(), delta.row_len(), input.row_len());
                crate::math::gemm(
                    b,
                    n_out,
                    n_in,
                    1.0,
                    delta.data(),
                    false,
                    self.weights[k].data(),
                    false,
                    0.0,
                    back.data_mut(),
                );
                for (g, a) in back.data_mut().iter_mut().zip(input.data()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok((loss.value, grads))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?.logits;
        Ok((0..logits.rows())
            .map(|k| {
                let r = logits.row(k);
                (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best })
            })
            .collect())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::Ann { sizes: self.sizes.clone() }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::new(self.spec(), seed, self.param_names().into_iter().zip(self.params()).collect())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelSpec::Ann { sizes } = &ck.header.spec else {
            return Err(Error::data("checkpoint does not hold an ANN"));
        };
        let mut net = AnnMlp::new(sizes, ck.header.seed)?;
        let names = net.param_names();
        ck.restore_into(&names, net.params_mut())?;
        Ok(net)
    }
}

pub fn new_ann_optimizer(net: &AnnMlp, config: AdamWConfig) -> OptimState {
    OptimState::new(config, &net.params())
}

/// One backpropagation step; returns `(loss, pre-clip gradient norm)`.
pub fn train_step_ann(
    net: &mut AnnMlp,
    opt: &mut OptimState,
    x: &Tensor,
    labels: &[usize],
    lr: f64,
    clip: Option<f64>,
) -> Result<(f64, f64)> {
    let (loss, mut grads) = net.loss_and_grads(x, labels)?;
    let pre = clip_global(&mut grads, clip.unwrap_or(f64::INFINITY));
    debug_assert!(global_norm(&grads) <= pre + 1e-12);
    let lrs = vec![lr; grads.len()];
    let names = net.param_names();
    adamw_step(opt, &mut net.params_mut(), &grads, &lrs, &names)?;
    Ok((loss, pre))
}

pub fn ann_accuracy(net: &AnnMlp, ds: &ImageDataset, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::data("evaluation split is empty"));
    }
    let mut hits = 0;
    for idx in batches(ds.len(), batch, None) {
        let (x, labels) = ds.gather(&idx);
        hits += net.predict(&x)?.iter().zip(&labels).filter(|(p, y)| p == y).count();
    }
    Ok(hits as f64 / ds.len() as f64)
}
