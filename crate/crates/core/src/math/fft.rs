use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Tensor;
use crate::error::{Error, Result};

/// Unnormalized 2D spectrum on a power-of-two grid. `src_height`/`src_width`
/// remember the pre-padding extent so the inverse can crop.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub height: usize,
    pub width: usize,
    pub src_height: usize,
    pub src_width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            src_height: height,
            src_width: width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.re[i], self.im[i])
    }
}

/// Forward and inverse transforms of one length.
#[derive(Clone)]
struct Line {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Line({})", self.forward.len())
    }
}

impl Line {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// In-place unscaled transform of split real/imaginary parts.
    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let mut buf: Vec<Complex<f64>> = re.iter().zip(im.iter()).map(|(&r, &i)| Complex::new(r, i)).collect();
        if inverse {
            self.inverse.process(&mut buf);
        } else {
            self.forward.process(&mut buf);
        }
        for ((r, i), c) in re.iter_mut().zip(im.iter_mut()).zip(buf) {
            *r = c.re;
            *i = c.im;
        }
    }
}

/// Row/column plan for a padded `height x width` grid.
#[derive(Clone, Debug)]
struct Plan2 {
    height: usize,
    width: usize,
    rows: Line,
    cols: Line,
}

impl Plan2 {
    fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: Line::new(width),
            cols: Line::new(height),
        }
    }

    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        for y in 0..h {
            self.rows
                .run(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
        }
        let mut cr = vec![0.0; h];
        let mut ci = vec![0.0; h];
        for x in 0..w {
            for y in 0..h {
                cr[y] = re[y * w + x];
                ci[y] = im[y * w + x];
            }
            self.cols.run(&mut cr, &mut ci, inverse);
            for y in 0..h {
                re[y * w + x] = cr[y];
                im[y * w + x] = ci[y];
            }
        }
        if inverse {
            let s = 1.0 / (h * w) as f64;
            re.iter_mut().for_each(|v| *v *= s);
            im.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    if image.ndim() != 2 || image.is_empty() {
        return Err(Error::dim(format!(
            "fft2 needs a non-empty H x W image, got shape {:?}",
            image.shape()
        )));
    }
    Ok((image.shape()[0], image.shape()[1]))
}

fn pad_plane(src: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for y in 0..h {
        out[y * pw..y * pw + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
    out
}

fn crop_plane(src: &[f64], pw: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&src[y * pw..y * pw + w]);
    }
    out
}

/// Forward DFT of a real image, zero-padded up to power-of-two extents.
pub fn fft2(image: &Tensor) -> Result<ComplexSpectrum> {
    let (h, w) = image_dims(image)?;
    let (ph, pw) = (h.next_power_of_two(), w.next_power_of_two());
    let plan = Plan2::new(ph, pw);
    let mut re = pad_plane(image.data(), h, w, ph, pw);
    let mut im = vec![0.0; ph * pw];
    plan.run(&mut re, &mut im, false);
    Ok(ComplexSpectrum {
        height: ph,
        width: pw,
        src_height: h,
        src_width: w,
        re,
        im,
    })
}

/// Inverse DFT returning cropped real and imaginary planes.
pub fn ifft2_complex(spec: &ComplexSpectrum) -> Result<(Tensor, Tensor)> {
    let (ph, pw) = (spec.height, spec.width);
    if !ph.is_power_of_two() || !pw.is_power_of_two() || ph == 0 || pw == 0 {
        return Err(Error::dim(format!(
            "internal spectrum shape {ph}x{pw} is not a power of two"
        )));
    }
    if spec.re.len() != ph * pw || spec.im.len() != ph * pw {
        return Err(Error::dim("spectrum planes do not match their shape"));
    }
    let plan = Plan2::new(ph, pw);
    let mut re = spec.re.clone();
    let mut im = spec.im.clone();
    plan.run(&mut re, &mut im, true);
    let (h, w) = (spec.src_height, spec.src_width);
    Ok((
        Tensor::from_vec(&[h, w], crop_plane(&re, pw, h, w))?,
        Tensor::from_vec(&[h, w], crop_plane(&im, pw, h, w))?,
    ))
}

/// Inverse DFT, real part only.
pub fn ifft2(spec: &ComplexSpectrum) -> Result<Tensor> {
    Ok(ifft2_complex(spec)?.0)
}

/// Reusable low/high frequency splitter for planes of one size. The low band
/// is the disk of radius `cutoff * min(PH, PW) / 2` around zero frequency in
/// centered coordinates on the padded grid; the boundary belongs to the low band.
#[derive(Clone, Debug)]
pub struct BandSplitter {
    height: usize,
    width: usize,
    plan: Plan2,
    low_mask: Vec<bool>,
}

impl BandSplitter {
    pub fn new(height: usize, width: usize, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::config(format!(
                "cutoff ratio {cutoff} must lie in (0, 1)"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::dim("band split needs a non-empty plane"));
        }
        let (ph, pw) = (height.next_power_of_two(), width.next_power_of_two());
        let radius = cutoff * ph.min(pw) as f64 / 2.0;
        let centered = |u: usize, n: usize| -> f64 {
            if u < n / 2 {
                u as f64
            } else {
                u as f64 - n as f64
            }
        };
        let mut low_mask = vec![false; ph * pw];
        for v in 0..ph {
            for u in 0..pw {
                let (fy, fx) = (centered(v, ph), centered(u, pw));
                low_mask[v * pw + u] = (fy * fy + fx * fx).sqrt() <= radius + 1e-12;
            }
        }
        Ok(Self {
            height,
            width,
            plan: Plan2::new(ph, pw),
            low_mask,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Low-pass projection of one plane. The operator is real and symmetric,
    /// so it is also its own adjoint.
    pub fn low(&self, plane: &[f64]) -> Vec<f64> {
        debug_assert_eq!(plane.len(), self.plane_len());
        let (ph, pw) = (self.plan.height, self.plan.width);
        let mut re = pad_plane(plane, self.height, self.width, ph, pw);
        let mut im = vec![0.0; ph * pw];
        self.plan.run(&mut re, &mut im, false);
        for (i, keep) in self.low_mask.iter().enumerate() {
            if !keep {
                re[i] = 0.0;
                im[i] = 0.0;
            }
        }
        self.plan.run(&mut re, &mut im, true);
        crop_plane(&re, pw, self.height, self.width)
    }

    /// `(low, high)` with `high = plane - low`. Band entries below `1e-12`
    /// of the plane's peak magnitude are rounding residue and are zeroed, so
    /// a band that is empty in exact arithmetic comes out exactly zero.
    pub fn split(&self, plane: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut low = self.low(plane);
        let floor = 1e-12 * plane.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut high: Vec<f64> = plane.iter().zip(&low).map(|(x, l)| x - l).collect();
        for v in low.iter_mut().chain(high.iter_mut()) {
            if v.abs() <= floor {
                *v = 0.0;
            }
        }
        (low, high)
    }

    pub fn low_mask(&self) -> &[bool] {
        &self.low_mask
    }
}

/// Split an `H x W` image into low and high frequency parts.
pub fn band_split(image: &Tensor, cutoff_ratio: f64) -> Result<(Tensor, Tensor)> {
    let (h, w) = image_dims(image)?;
    let splitter = BandSplitter::new(h, w, cutoff_ratio)?;
    let (low, high) = splitter.split(image.data());
    Ok((Tensor::from_vec(&[h, w], low)?, Tensor::from_vec(&[h, w], high)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use std::f64::consts::PI;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(&[h, w], (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct O(N^2) DFT used as an independent oracle.
    fn direct_dft(img: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for v in 0..h {
            for u in 0..w {
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * PI * ((v * y) as f64 / h as f64 + (u * x) as f64 / w as f64);
                        let p = img.data()[y * w + x];
                        re[v * w + u] += p * ang.cos();
                        im[v * w + u] += p * ang.sin();
                    }
                }
            }
        }
        (re, im)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let img = Tensor::full(&[4, 4], 2.5);
        let s = fft2(&img).unwrap();
        assert!((s.re[0] - 16.0 * 2.5).abs() < 1e-12);
        for i in 1..16 {
            assert!(s.re[i].abs() < 1e-12 && s.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut img = Tensor::zeros(&[4, 4]);
        img.data_mut()[0] = 1.0;
        let s = fft2(&img).unwrap();
        let (re, im) = direct_dft(&img);
        for i in 0..16 {
            assert!((s.re[i] - 1.0).abs() < 1e-12 && s.im[i].abs() < 1e-12);
            assert!((re[i] - 1.0).abs() < 1e-12 && im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let img = random_image(8, 4, 11);
        let s = fft2(&img).unwrap();
        let (re, im) = direct_dft(&img);
        for i in 0..32 {
            assert!((s.re[i] - re[i]).abs() < 1e-10);
            assert!((s.im[i] - im[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_of_zero_and_dc() {
        let z = ComplexSpectrum::zeros(4, 4);
        assert_eq!(ifft2(&z).unwrap().max_abs(), 0.0);
        let mut dc = ComplexSpectrum::zeros(4, 4);
        dc.re[0] = 16.0;
        let img = ifft2(&dc).unwrap();
        assert!(img.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn roundtrip_random_sizes() {
        for (h, w, seed) in [(8, 8, 1), (16, 16, 2), (64, 64, 3), (28, 28, 4), (5, 12, 5)] {
            let img = random_image(h, w, seed);
            let (re, im) = ifft2_complex(&fft2(&img).unwrap()).unwrap();
            assert!(re.max_abs_diff(&img) < 1e-10, "{h}x{w}");
            assert!(im.max_abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_holds() {
        let img = random_image(16, 8, 9);
        let s = fft2(&img).unwrap();
        let spatial = img.sq_norm();
        let freq: f64 = s.re.iter().zip(&s.im).map(|(r, i)| r * r + i * i).sum::<f64>() / 128.0;
        assert!((spatial - freq).abs() / spatial < 1e-9);
    }

    #[test]
    fn empty_image_is_rejected() {
        assert!(matches!(fft2(&Tensor::zeros(&[0, 4])), Err(Error::Dimension(_))));
    }

    #[test]
    fn band_split_constant_and_partition() {
        let img = Tensor::full(&[8, 8], 0.7);
        for cutoff in [0.1, 0.5, 0.9] {
            let (low, high) = band_split(&img, cutoff).unwrap();
            assert!(low.max_abs_diff(&img) < 1e-9);
            assert!(high.max_abs() < 1e-9);
        }
        let img = random_image(28, 28, 7);
        let (low, high) = band_split(&img, 0.6).unwrap();
        let mut sum = low.clone();
        sum.add_assign(&high).unwrap();
        assert!(sum.max_abs_diff(&img) < 1e-9);
    }

    #[test]
    fn checkerboard_is_high_band() {
        let data = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let img = Tensor::from_vec(&[8, 8], data).unwrap();
        // Oracle: the direct DFT puts all energy at the Nyquist bin (4, 4).
        let (re, im) = direct_dft(&img);
        let nyq = re[4 * 8 + 4].powi(2) + im[4 * 8 + 4].powi(2);
        let total: f64 = re.iter().zip(&im).map(|(r, i)| r * r + i * i).sum();
        assert!((nyq - total).abs() < 1e-9 * total);
        let (low, high) = band_split(&img, 0.5).unwrap();
        assert!(low.sq_norm() < 1e-6 * high.sq_norm());
    }

    #[test]
    fn band_split_rejects_bad_cutoff() {
        let img = Tensor::zeros(&[4, 4]);
        for c in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(band_split(&img, c), Err(Error::Config(_))));
        }
    }

    #[test]
    fn low_pass_is_symmetric() {
        let sp = BandSplitter::new(6, 10, 0.6).unwrap();
        let a = random_image(6, 10, 21);
        let b = random_image(6, 10, 22);
        let la = sp.low(a.data());
        let lb = sp.low(b.data());
        let ab: f64 = la.iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let ba: f64 = lb.iter().zip(a.data()).map(|(x, y)| x * y).sum();
        assert!((ab - ba).abs() < 1e-10);
    }
}
