use crate::error::{Error, Result};
use crate::math::{gemm, init_uniform, matmul_nt, Rng, Tensor};
use crate::neuron::{self, NeuronParams, SpikeTrain};

/// Single-layer recurrent dual-path cell. Feedforward: `W_ih, W_hh, W_ho`;
/// feedback: `Θ_oh, Θ_hh, Θ_hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentPair {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub w_ho: Tensor,
    pub theta_oh: Tensor,
    pub theta_hh: Tensor,
    pub theta_hi: Tensor,
}

impl RecurrentPair {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &Rng) -> Result<Self> {
        let draw = |stream: u64, fan_in: usize, shape: &[usize]| init_uniform(&mut rng.split(stream), fan_in, shape);
        Ok(Self {
            w_ih: draw(0, inputs, &[hidden, inputs])?,
            w_hh: draw(1, hidden, &[hidden, hidden])?,
            w_ho: draw(2, hidden, &[outputs, hidden])?,
            theta_oh: draw(3, outputs, &[hidden, outputs])?,
            theta_hh: draw(4, hidden, &[hidden, hidden])?,
            theta_hi: draw(5, hidden, &[inputs, hidden])?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.w_ho.shape()[0]
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [&self.w_ih, &self.w_hh, &self.w_ho, &self.theta_oh, &self.theta_hh, &self.theta_hi]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.w_ho,
            &mut self.theta_oh,
            &mut self.theta_hh,
            &mut self.theta_hi,
        ]
    }
}

/// Hidden currents `a x + b s[τ]` for every simulation step `τ`.
fn drive(a: &Tensor, x: &Tensor, b: &Tensor, s: &SpikeTrain) -> Result<Tensor> {
    let steps = s.steps();
    let batch = x.rows();
    let hidden = a.rows();
    let base = matmul_nt(x, a)?;
    if s.tensor().len() != steps * batch * b.row_len() {
        return Err(Error::dim(format!(
            "recurrent spikes {:?} do not match batch {batch} x {}",
            s.tensor().shape(),
            b.row_len()
        )));
    }
    let mut out = Vec::with_capacity(steps * batch * hidden);
    for _ in 0..steps {
        out.extend_from_slice(base.data());
    }
    gemm(
        steps * batch,
        b.row_len(),
        hidden,
        1.0,
        s.tensor().data(),
        false,
        b.data(),
        true,
        1.0,
        &mut out,
    );
    Tensor::from_vec(&[steps, batch, hidden], out)
}

/// Feedforward half at one sequence element: `(h̄_t, o_t, s_t)`.
pub fn forward_half(
    pair: &RecurrentPair,
    x_t: &Tensor,
    s_prev: &SpikeTrain,
    neuron: &NeuronParams,
) -> Result<(Tensor, Tensor, SpikeTrain)> {
    let cur = drive(&pair.w_ih, x_t, &pair.w_hh, s_prev)?;
    let h = cur.mean_over_leading();
    let o = matmul_nt(&h, &pair.w_ho)?;
    Ok((h, o, neuron::run(neuron, &cur)?))
}

/// Feedback half at one sequence element: `(h̄'_t, x̂_t, s'_t)`.
pub fn backward_half(
    pair: &RecurrentPair,
    yhat_t: &Tensor,
    s_next: &SpikeTrain,
    neuron: &NeuronParams,
) -> Result<(Tensor, Tensor, SpikeTrain)> {
    let cur = drive(&pair.theta_oh, yhat_t, &pair.theta_hh, s_next)?;
    let h = cur.mean_over_leading();
    let x_rec = matmul_nt(&h, &pair.theta_hi)?;
    Ok((h, x_rec, neuron::run(neuron, &cur)?))
}

/// Both halves at one element. The apical voltage of each population is the
/// basal voltage of the other (`ĥ_t = h'_t`, `ĥ'_t = h_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentStep {
    pub h: Tensor,
    pub o: Tensor,
    pub s: SpikeTrain,
    pub h_back: Tensor,
    pub x_rec: Tensor,
    pub s_back: SpikeTrain,
}

pub fn recurrent_step(
    pair: &RecurrentPair,
    x_t: &Tensor,
    s_prev: &SpikeTrain,
    yhat_t: &Tensor,
    s_next: &SpikeTrain,
    neuron_fwd: &NeuronParams,
    neuron_bwd: &NeuronParams,
) -> Result<RecurrentStep> {
    let (h, o, s) = forward_half(pair, x_t, s_prev, neuron_fwd)?;
    let (h_back, x_rec, s_back) = backward_half(pair, yhat_t, s_next, neuron_bwd)?;
    Ok(RecurrentStep {
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

    fn silent(steps: usize, batch: usize, hidden: usize) -> SpikeTrain {
        SpikeTrain::new(Tensor::zeros(&[steps, batch, hidden])).unwrap()
    }

    #[test]
    fn zero_weights_are_silent() {
        let mut pair = RecurrentPair::new(3, 5, 2, &Rng::new(0)).unwrap();
        pair.params_mut().into_iter().for_each(|p| p.scale(0.0));
        let mut rng = Rng::new(1);
        let x = random(&[4, 3], &mut rng);
        let y = random(&[4, 2], &mut rng);
        let n = NeuronParams::lif(0.2);
        let st = recurrent_step(&pair, &x, &silent(4, 4, 5), &y, &silent(4, 4, 5), &n, &n).unwrap();
        assert_eq!(st.h.max_abs() + st.o.max_abs() + st.h_back.max_abs() + st.x_rec.max_abs(), 0.0);
        assert_eq!(st.s.rate() + st.s_back.rate(), 0.0);
    }

    #[test]
    fn without_recurrence_forward_is_memoryless() {
        let mut pair = RecurrentPair::new(3, 6, 2, &Rng::new(2)).unwrap();
        pair.w_hh.scale(0.0);
        let mut rng = Rng::new(3);
        let x = random(&[2, 3], &mut rng);
        let n = NeuronParams::lif(0.2);
        let busy = SpikeTrain::new(Tensor::full(&[4, 2, 6], 1.0)).unwrap();
        let (h1, o1, _) = forward_half(&pair, &x, &busy, &n).unwrap();
        let (h0, o0, _) = forward_half(&pair, &x, &silent(4, 2, 6), &n).unwrap();
        assert_eq!(h1, h0);
        assert_eq!(o1, o0);
        assert!(h0.max_abs_diff(&matmul_nt(&x, &pair.w_ih).unwrap()) < 1e-15);
    }

    #[test]
    fn recurrent_drive_adds_spike_current() {
        let mut pair = RecurrentPair::new(1, 2, 1, &Rng::new(4)).unwrap();
        pair.w_ih = Tensor::zeros(&[2, 1]);
        pair.w_hh = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let x = Tensor::zeros(&[1, 1]);
        let mut s = Tensor::zeros(&[2, 1, 2]);
        s.data_mut()[0] = 1.0;
        s.data_mut()[3] = 1.0;
        let (h, _, _) = forward_half(&pair, &x, &SpikeTrain::new(s).unwrap(), &NeuronParams::lif(0.2)).unwrap();
        assert_eq!(h.data(), &[0.5, 1.0]);
    }

    #[test]
    fn paper_hidden_size() {
        let pair = RecurrentPair::new(62, 300, 62, &Rng::new(0)).unwrap();
        assert_eq!(pair.hidden(), 300);
        assert_eq!(pair.theta_hi.shape(), &[62, 300]);
    }
}
