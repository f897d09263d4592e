use super::{reco, LossValue};
use crate::error::{Error, Result};
use crate::math::{BandSplitter, Tensor};
use crate::parallel;

/// ReCo computed separately on the low and high frequency bands of
/// `[B, C, H, W]` voltage maps, each band flattened per sample. The band
/// projection is linear and self-adjoint, so the gradient maps back as
/// `low(g_low) + high(g_high) = low(g_low - g_high) + g_high`.
pub fn banded_reco(
    v_maps: &Tensor,
    vhat_maps: &Tensor,
    cutoff: f64,
    lambda_low: f64,
    lambda_high: f64,
) -> Result<(LossValue, Tensor)> {
    if v_maps.ndim() != 4 || v_maps.shape() != vhat_maps.shape() {
        return Err(Error::dim(format!(
            "banded_reco needs equal [B, C, H, W] maps, got {:?} and {:?}",
            v_maps.shape(),
            vhat_maps.shape()
        )));
    }
    let (b, c, h, w) = (
        v_maps.shape()[0],
        v_maps.shape()[1],
        v_maps.shape()[2],
        v_maps.shape()[3],
    );
    let splitter = BandSplitter::new(h, w, cutoff)?;
    let plane = h * w;
    let planes = b * c;
    let split_all = |x: &Tensor| -> (Tensor, Tensor) {
        let parts = parallel::map_range(planes, |p| splitter.split(&x.data()[p * plane..(p + 1) * plane]));
        let mut low = Vec::with_capacity(x.len());
        let mut high = Vec::with_capacity(x.len());
        for (l, hi) in parts {
            low.extend(l);
            high.extend(hi);
        }
        (
            Tensor::from_vec(&[b, c * plane], low).expect("band plane sizes"),
            Tensor::from_vec(&[b, c * plane], high).expect("band plane sizes"),
        )
    };
    let (v_low, v_high) = split_all(v_maps);
    let (h_low, h_high) = split_all(vhat_maps);
    let (l_low, g_low) = reco(&v_low, &h_low, lambda_low)?;
    let (l_high, g_high) = reco(&v_high, &h_high, lambda_high)?;

    let gl = g_low.data();
    let gh = g_high.data();
    let pulled = parallel::map_range(planes, |p| {
        let r = p * plane..(p + 1) * plane;
        let diff: Vec<f64> = gl[r.clone()].iter().zip(&gh[r.clone()]).map(|(a, b)| a - b).collect();
        let low = splitter.low(&diff);
        low.iter().zip(&gh[r]).map(|(l, h)| l + h).collect::<Vec<f64>>()
    });
    let grad = Tensor::from_vec(v_maps.shape(), pulled.into_iter().flatten().collect())?;
    let per_sample = l_low
        .per_sample
        .iter()
        .zip(&l_high.per_sample)
        .map(|(a, b)| a + b)
        .collect();
    Ok((
        LossValue {
            value: l_low.value + l_high.value,
            per_sample,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::math::Rng;

    #[test]
    fn self_alignment_without_repulsion_is_zero() {
        let mut rng = Rng::new(3);
        let v = random(&[3, 2, 4, 4], &mut rng);
        let (l, g) = banded_reco(&v, &v, 0.5, 0.0, 0.0).unwrap();
        assert!(l.value < 1e-18, "{}", l.value);
        assert!(g.max_abs() < 1e-9);
    }

    #[test]
    fn constant_maps_have_no_high_band_term() {
        let mut v = Tensor::zeros(&[2, 1, 8, 8]);
        v.data_mut()[..64].iter_mut().for_each(|x| *x = 2.0);
        v.data_mut()[64..].iter_mut().for_each(|x| *x = -1.0);
        let mut vh = Tensor::zeros(&[2, 1, 8, 8]);
        vh.data_mut().iter_mut().for_each(|x| *x = 0.5);
        let (a, ga) = banded_reco(&v, &vh, 0.5, 0.1, 10.0).unwrap();
        let (b, gb) = banded_reco(&v, &vh, 0.5, 0.1, 0.0).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(ga, gb);
        let (low_only, _) = reco(
            &v.clone().reshape(&[2, 64]).unwrap(),
            &vh.clone().reshape(&[2, 64]).unwrap(),
            0.1,
        )
        .unwrap();
        // An all-zero band still carries the fixed diagonal term of 1 per sample.
        assert!((a.value - low_only.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = Rng::new(5);
        let v = random(&[2, 1, 8, 8], &mut rng);
        let vh = random(&[2, 1, 8, 8], &mut rng);
        let f = |x: &Tensor| banded_reco(x, &vh, 0.5, 0.005, 0.05).unwrap().0.value;
        let (_, g) = banded_reco(&v, &vh, 0.5, 0.005, 0.05).unwrap();
        let num = numeric_grad(&v, 1e-5, f);
        assert!(rel_err(&g, &num) < 1e-4);
    }

    #[test]
    fn non_spatial_input_rejected() {
        let v = Tensor::zeros(&[2, 16]);
        assert!(matches!(
            banded_reco(&v, &v, 0.5, 0.1, 0.1),
            Err(Error::Dimension(_))
        ));
    }
}
