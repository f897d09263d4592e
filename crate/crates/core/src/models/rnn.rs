use crate::error::{Error, Result};
use crate::layers::recurrent::{backward_half, forward_half};
use crate::layers::RecurrentPair;
use crate::math::{Rng, Tensor};
use crate::neuron::{NeuronParams, SpikeTrain};

/// Single-layer recurrent dual-path model. Every sequence element is
/// simulated for `steps` time steps from rest.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentNet {
    pub pair: RecurrentPair,
    pub neuron_fwd: NeuronParams,
    pub neuron_bwd: NeuronParams,
    pub steps: usize,
}

impl RecurrentNet {
    pub fn new(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        neuron_fwd: NeuronParams,
        neuron_bwd: NeuronParams,
        steps: usize,
        seed: u64,
    ) -> Result<Self> {
        if steps < 1 {
            return Err(Error::config("T must be at least 1"));
        }
        if inputs == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::config("recurrent sizes must be positive"));
        }
        neuron_fwd.validate()?;
        neuron_bwd.validate()?;
        Ok(Self {
            pair: RecurrentPair::new(inputs, hidden, outputs, &Rng::new(seed))?,
            neuron_fwd,
            neuron_bwd,
            steps,
        })
    }

    pub fn rounded_f32(&self) -> Self {
        let mut net = self.clone();
        for t in net.pair.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        net
    }

    fn silent(&self, batch: usize) -> SpikeTrain {
        SpikeTrain::new(Tensor::zeros(&[self.steps, batch, self.pair.hidden()])).expect("zeros are binary")
    }
}

/// Per-element records of both sweeps, indexed by sequence position.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnRecord {
    pub h: Vec<Tensor>,
    pub o: Vec<Tensor>,
    pub s: Vec<SpikeTrain>,
    pub h_back: Vec<Tensor>,
    pub x_rec: Vec<Tensor>,
    pub s_back: Vec<SpikeTrain>,
}

fn slab(x: &Tensor, t: usize, width: usize, what: &str) -> Result<Tensor> {
    if x.ndim() != 3 || x.shape()[2] != width {
        return Err(Error::dim(format!("{what} {:?} is not [N, B, {width}]", x.shape())));
    }
    Tensor::from_vec(&[x.shape()[1], width], x.row(t).to_vec())
}

fn seq_len(x: &Tensor) -> Result<usize> {
    match x.shape().first() {
        Some(&n) if n > 0 && x.ndim() == 3 && x.shape()[1] > 0 => Ok(n),
        _ => Err(Error::dim(format!("sequence {:?} must be a nonempty [N, B, D]", x.shape()))),
    }
}

/// Forward sweep only: `(h̄_t, o_t, s_t)` for every element.
pub fn rnn_forward(net: &RecurrentNet, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<SpikeTrain>)> {
    let n = seq_len(x)?;
    let mut prev = net.silent(x.shape()[1]);
    let (mut h, mut o, mut s) = (vec![], vec![], vec![]);
    for t in 0..n {
        let (ht, ot, st) = forward_half(&net.pair, &slab(x, t, net.pair.inputs(), "input")?, &prev, &net.neuron_fwd)?;
        prev = st.clone();
        h.push(ht);
        o.push(ot);
        s.push(st);
    }
    Ok((h, o, s))
}

/// Both sweeps: forward over `t = 1..N` from `s_0 = 0`, feedback over
/// `t = N..1` from `s'_{N+1} = 0`.
pub fn rnn_unroll(net: &RecurrentNet, x: &Tensor, yhat: &Tensor) -> Result<RnnRecord> {
    let n = seq_len(x)?;
    if seq_len(yhat)? != n || yhat.shape()[1] != x.shape()[1] {
        return Err(Error::dim(format!(
            "targets {:?} do not pair with inputs {:?}",
            yhat.shape(),
            x.shape()
        )));
    }
    let (h, o, s) = rnn_forward(net, x)?;
    let mut next = net.silent(x.shape()[1]);
    let mut back = Vec::with_capacity(n);
    for t in (0..n).rev() {
        let (hb, xr, sb) = backward_half(&net.pair, &slab(yhat, t, net.pair.outputs(), "target")?, &next, &net.neuron_bwd)?;
        next = sb.clone();
        back.push((hb, xr, sb));
    }
    back.reverse();
    let mut h_back = vec![];
    let mut x_rec = vec![];
    let mut s_back = vec![];
    for (hb, xr, sb) in back {
        h_back.push(hb);
        x_rec.push(xr);
        s_back.push(sb);
    }
    Ok(RnnRecord {
        h,
        o,
        s,
        h_back,
        x_rec,
        s_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::testing::random;
    use crate::math::matmul_nt;

    fn net(seed: u64) -> RecurrentNet {
        RecurrentNet::new(3, 8, 2, NeuronParams::lif(0.2), NeuronParams::lif(0.2), 4, seed).unwrap()
    }

    #[test]
    fn single_element_sees_zero_boundaries() {
        let net = net(1);
        let mut rng = Rng::new(2);
        let x = random(&[1, 4, 3], &mut rng);
        let y = random(&[1, 4, 2], &mut rng);
        let r = rnn_unroll(&net, &x, &y).unwrap();
        let x1 = Tensor::from_vec(&[4, 3], x.data().to_vec()).unwrap();
        let y1 = Tensor::from_vec(&[4, 2], y.data().to_vec()).unwrap();
        assert!(r.h[0].max_abs_diff(&matmul_nt(&x1, &net.pair.w_ih).unwrap()) < 1e-15);
        assert!(r.h_back[0].max_abs_diff(&matmul_nt(&y1, &net.pair.theta_oh).unwrap()) < 1e-15);
    }

    #[test]
    fn zero_sequences_give_zero_records() {
        let net = net(3);
        let r = rnn_unroll(&net, &Tensor::zeros(&[5, 2, 3]), &Tensor::zeros(&[5, 2, 2])).unwrap();
        for t in 0..5 {
            assert_eq!(r.h[t].max_abs() + r.o[t].max_abs() + r.h_back[t].max_abs() + r.x_rec[t].max_abs(), 0.0);
            assert_eq!(r.s[t].rate() + r.s_back[t].rate(), 0.0);
        }
    }

    #[test]
    fn paper_sequence_length() {
        let net = RecurrentNet::new(4, 300, 4, NeuronParams::lif(0.5), NeuronParams::lif(0.5), 4, 0).unwrap();
        let mut rng = Rng::new(5);
        let r = rnn_unroll(&net, &random(&[32, 2, 4], &mut rng), &random(&[32, 2, 4], &mut rng)).unwrap();
        assert_eq!(r.h.len(), 32);
        assert_eq!(r.s_back[31].tensor().shape(), &[4, 2, 300]);
    }

    #[test]
    fn recurrence_carries_memory_forward_only() {
        let net = net(4);
        let mut rng = Rng::new(6);
        let x = random(&[4, 2, 3], &mut rng);
        let y = random(&[4, 2, 2], &mut rng);
        let base = rnn_unroll(&net, &x, &y).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(3).iter_mut().for_each(|v| *v += 5.0);
        let moved = rnn_unroll(&net, &x2, &y).unwrap();
        assert_eq!(base.h[..3], moved.h[..3]);
        assert_eq!(base.h_back, moved.h_back);
    }

    #[test]
    fn empty_or_mismatched_sequences_fail() {
        let net = net(0);
        assert!(rnn_unroll(&net, &Tensor::zeros(&[0, 2, 3]), &Tensor::zeros(&[0, 2, 2])).is_err());
        assert!(rnn_unroll(&net, &Tensor::zeros(&[3, 2, 3]), &Tensor::zeros(&[2, 2, 2])).is_err());
    }
}
