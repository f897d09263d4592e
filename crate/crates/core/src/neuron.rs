//! Discrete-time integrate-and-fire dynamics.
//!
//! LIF: `H = U + (I - (U - U_reset)) / tau`; IF: `H = U + I`. A unit spikes
//! when `H >= U_thr` and its potential then resets to `U_reset`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronVariant {
    Lif,
    If,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau: f64,
    pub u_thr: f64,
    pub u_reset: f64,
    pub variant: NeuronVariant,
}

impl NeuronParams {
    pub fn lif(u_thr: f64) -> Self {
        Self {
            tau: 2.0,
            u_thr,
            u_reset: 0.0,
            variant: NeuronVariant::Lif,
        }
    }

    pub fn integrate_and_fire(u_thr: f64) -> Self {
        Self {
            variant: NeuronVariant::If,
            ..Self::lif(u_thr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == NeuronVariant::Lif && !(self.tau >= 1.0) {
            return Err(Error::config(format!("neuron tau {} must be >= 1", self.tau)));
        }
        if !(self.u_thr > self.u_reset) {
            return Err(Error::config(format!(
                "threshold {} must exceed reset potential {}",
                self.u_thr, self.u_reset
            )));
        }
        Ok(())
    }

    #[inline]
    fn charge(&self, u: f64, current: f64) -> f64 {
        match self.variant {
            NeuronVariant::Lif => u + (current - (u - self.u_reset)) / self.tau,
            NeuronVariant::If => u + current,
        }
    }

    /// One update of a single unit: returns `(spike, next potential)`.
    #[inline]
    pub fn update(&self, u: f64, current: f64) -> (f64, f64) {
        let h = self.charge(u, current);
        if h >= self.u_thr {
            (1.0, self.u_reset)
        } else {
            (0.0, h)
        }
    }
}

/// Per-unit membrane potentials after the previous step.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub u: Tensor,
}

impl NeuronState {
    pub fn at_rest(params: &NeuronParams, shape: &[usize]) -> Self {
        Self {
            u: Tensor::full(shape, params.u_reset),
        }
    }
}

/// Binary `[T, ...]` spike tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain(Tensor);

impl SpikeTrain {
    pub fn new(bits: Tensor) -> Result<Self> {
        if bits.ndim() < 2 {
            return Err(Error::dim("spike train needs a leading time axis"));
        }
        if let Some(v) = bits.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::data(format!("spike train holds non-binary value {v}")));
        }
        Ok(Self(bits))
    }

    /// `steps` copies of a binary code `[B, units]` (or any shape).
    pub fn repeat(code: &Tensor, steps: usize) -> Result<Self> {
        let mut shape = vec![steps];
        shape.extend_from_slice(code.shape());
        let mut data = Vec::with_capacity(steps * code.len());
        for _ in 0..steps {
            data.extend_from_slice(code.data());
        }
        Self::new(Tensor::from_vec(&shape, data)?)
    }

    pub fn steps(&self) -> usize {
        self.0.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.data().iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Time-averaged spikes (firing rate per unit).
    pub fn mean_over_time(&self) -> Tensor {
        self.0.mean_over_leading()
    }

    pub fn rate(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.0.sum() / self.0.len() as f64
        }
    }
}

/// Single step for a whole population.
pub fn step(
    params: &NeuronParams,
    state: &NeuronState,
    current: &Tensor,
) -> Result<(NeuronState, Tensor)> {
    state.u.check_same_shape(current, "neuron step")?;
    let mut u = state.u.clone();
    let mut spikes = Tensor::zeros(current.shape());
    for ((u, s), i) in u
        .data_mut()
        .iter_mut()
        .zip(spikes.data_mut())
        .zip(current.data())
    {
        let (spike, next) = params.update(*u, *i);
        *s = spike;
        *u = next;
    }
    Ok((NeuronState { u }, spikes))
}

const RUN_CHUNK: usize = 4096;

/// Simulate `T` steps from rest over a `[T, ...]` current tensor.
pub fn run(params: &NeuronParams, currents: &Tensor) -> Result<SpikeTrain> {
    if currents.ndim() < 2 || currents.rows() == 0 {
        return Err(Error::dim(format!(
            "neuron run needs a [T, ...] current with T >= 1, got {:?}",
            currents.shape()
        )));
    }
    let steps = currents.rows();
    let n = currents.row_len();
    let chunks = n.div_ceil(RUN_CHUNK);
    let cur = currents.data();
    let parts = parallel::map_range(chunks, |c| {
        let lo = c * RUN_CHUNK;
        let hi = (lo + RUN_CHUNK).min(n);
        let mut u = vec![params.u_reset; hi - lo];
        let mut out = vec![0.0; steps * (hi - lo)];
        for t in 0..steps {
            let row = &cur[t * n + lo..t * n + hi];
            let dst = &mut out[t * (hi - lo)..(t + 1) * (hi - lo)];
            for ((u, s), i) in u.iter_mut().zip(dst.iter_mut()).zip(row) {
                let (spike, next) = params.update(*u, *i);
                *s = spike;
                *u = next;
            }
        }
        out
    });
    let mut data = vec![0.0; steps * n];
    for (c, part) in parts.into_iter().enumerate() {
        let lo = c * RUN_CHUNK;
        let w = part.len() / steps;
        for t in 0..steps {
            data[t * n + lo..t * n + lo + w].copy_from_slice(&part[t * w..(t + 1) * w]);
        }
    }
    SpikeTrain::new(Tensor::from_vec(currents.shape(), data)?)
}

/// Simulate `steps` steps of a constant current `[...]`.
pub fn run_constant(params: &NeuronParams, current: &Tensor, steps: usize) -> Result<SpikeTrain> {
    let mut shape = vec![steps];
    shape.extend_from_slice(current.shape());
    let mut data = Vec::with_capacity(steps * current.len());
    for _ in 0..steps {
        data.extend_from_slice(current.data());
    }
    run(params, &Tensor::from_vec(&shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn quiescent_without_input() {
        let p = NeuronParams::lif(1.0);
        let s = run(&p, &column(&[0.0; 10])).unwrap();
        assert_eq!(s.tensor().sum(), 0.0);
        let (st, sp) = step(&p, &NeuronState::at_rest(&p, &[3]), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(sp.sum(), 0.0);
        assert!(st.u.data().iter().all(|u| *u == 0.0));
    }

    #[test]
    fn lif_tau_two_constant_drive_spikes_every_step() {
        // H = U + (I - U)/2 with U = 0 after each reset: H = 1 = threshold.
        let p = NeuronParams::lif(1.0);
        let mut st = NeuronState::at_rest(&p, &[1]);
        for _ in 0..5 {
            let (next, sp) = step(&p, &st, &Tensor::full(&[1], 2.0)).unwrap();
            assert_eq!(sp.data(), &[1.0]);
            assert_eq!(next.u.data(), &[0.0]);
            st = next;
        }
    }

    #[test]
    fn strong_input_fires_and_resets() {
        let p = NeuronParams::lif(0.2);
        let (st, sp) = step(&p, &NeuronState::at_rest(&p, &[1]), &Tensor::full(&[1], 5.0)).unwrap();
        assert_eq!(sp.data(), &[1.0]);
        assert_eq!(st.u.data(), &[p.u_reset]);
    }

    #[test]
    fn alternating_drive() {
        let p = NeuronParams::lif(1.0);
        let s = run(&p, &column(&[2.0, 0.0, 2.0, 0.0])).unwrap();
        assert_eq!(s.tensor().data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn paper_length_shape() {
        let p = NeuronParams::lif(0.2);
        let s = run_constant(&p, &Tensor::full(&[7], 0.3), 4).unwrap();
        assert_eq!(s.tensor().shape(), &[4, 7]);
    }

    #[test]
    fn subthreshold_current_never_fires() {
        // LIF converges to I from below, so I < thr can never reach it.
        let p = NeuronParams::lif(1.0);
        let s = run_constant(&p, &Tensor::full(&[5], 0.99), 50).unwrap();
        assert_eq!(s.tensor().sum(), 0.0);
    }

    #[test]
    fn if_variant_integrates_without_leak() {
        let p = NeuronParams::integrate_and_fire(1.0);
        let s = run_constant(&p, &Tensor::full(&[1], 0.4), 6).unwrap();
        assert_eq!(s.tensor().data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let p = NeuronParams::lif(1.0);
        assert!(matches!(
            step(&p, &NeuronState::at_rest(&p, &[2]), &Tensor::zeros(&[3])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(run(&p, &Tensor::zeros(&[0, 3])), Err(Error::Dimension(_))));
        assert!(NeuronParams { tau: 0.5, ..p }.validate().is_err());
        assert!(NeuronParams { u_thr: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn chunked_run_matches_stepwise() {
        let p = NeuronParams::lif(0.3);
        let mut rng = Rng::new(4);
        let n = RUN_CHUNK + 37;
        let cur = Tensor::from_vec(&[3, n], (0..3 * n).map(|_| rng.uniform(-1.0, 1.5)).collect()).unwrap();
        let s = run(&p, &cur).unwrap();
        let mut st = NeuronState::at_rest(&p, &[n]);
        for t in 0..3 {
            let i = Tensor::from_vec(&[n], cur.row(t).to_vec()).unwrap();
            let (next, sp) = step(&p, &st, &i).unwrap();
            assert_eq!(sp.data(), s.tensor().row(t));
            st = next;
        }
    }

    proptest! {
        #[test]
        fn output_is_binary_and_resets(cur in proptest::collection::vec(-3.0f64..3.0, 4 * 6),
                                       thr in 0.05f64..2.0, lif in any::<bool>()) {
            let p = if lif { NeuronParams::lif(thr) } else { NeuronParams::integrate_and_fire(thr) };
            let cur = Tensor::from_vec(&[4, 6], cur).unwrap();
            let s = run(&p, &cur).unwrap();
            prop_assert!(s.is_binary());
            let mut st = NeuronState::at_rest(&p, &[6]);
            for t in 0..4 {
                let i = Tensor::from_vec(&[6], cur.row(t).to_vec()).unwrap();
                let (next, sp) = step(&p, &st, &i).unwrap();
                for j in 0..6 {
                    if sp.data()[j] == 1.0 {
                        prop_assert_eq!(next.u.data()[j], p.u_reset);
                    }
                }
                st = next;
            }
        }

        #[test]
        fn raising_drive_never_delays_first_spike(base in proptest::collection::vec(-1.0f64..2.0, 8),
                                                  bump in 0.0f64..2.0) {
            let p = NeuronParams::lif(0.5);
            let first = |c: &[f64]| {
                let s = run(&p, &column(c)).unwrap();
                s.tensor().data().iter().position(|v| *v == 1.0)
            };
            let raised: Vec<f64> = base.iter().map(|v| v + bump).collect();
            if let Some(t0) = first(&base) {
                let t1 = first(&raised);
                prop_assert!(t1.is_some() && t1.unwrap() <= t0);
            }
        }

        #[test]
        fn lif_approaches_constant_current(i in 0.1f64..0.9) {
            let p = NeuronParams::lif(1.0);
            let mut u = 0.0;
            let mut prev = f64::INFINITY;
            for _ in 0..20 {
                let (s, next) = p.update(u, i);
                prop_assert_eq!(s, 0.0);
                let gap = (next - i).abs();
                prop_assert!(gap < prev);
                prev = gap;
                u = next;
            }
        }
    }
}
