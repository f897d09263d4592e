use crate::error::{Error, Result};
use crate::math::{gemm, Tensor};
use crate::parallel;

/// Square-kernel convolution geometry on `[C, H, W]` maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        let out = |n: usize| -> Result<usize> {
            let span = n + 2 * self.pad;
            if self.kernel == 0 || self.stride == 0 || span < self.kernel {
                return Err(Error::dim(format!(
                    "conv geometry k={} stride={} pad={} does not fit extent {n}",
                    self.kernel, self.stride, self.pad
                )));
            }
            Ok((span - self.kernel) / self.stride + 1)
        };
        Ok((out(self.height)?, out(self.width)?))
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Samples per gemm block: about 4096 output sites, independent of threads.
    fn block(&self, sites: usize) -> usize {
        (4096 / sites.max(1)).max(1)
    }
}

/// Unfold samples `[n, C*H*W]` into columns `[C*k*k, n*Ho*Wo]`.
fn im2col(g: &ConvGeometry, input: &[f64], n: usize, ho: usize, wo: usize) -> Vec<f64> {
    let sites = ho * wo;
    let cols_w = n * sites;
    let mut cols = vec![0.0; g.patch_len() * cols_w];
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    for s in 0..n {
        let img = &input[s * g.in_len()..(s + 1) * g.in_len()];
        for c in 0..g.in_channels {
            let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
            for dy in 0..k {
                for dx in 0..k {
                    let row = (c * k + dy) * k + dx;
                    let dst = &mut cols[row * cols_w + s * sites..row * cols_w + (s + 1) * sites];
                    for oy in 0..ho {
                        let y = (oy * g.stride + dy) as isize - g.pad as isize;
                        if y < 0 || y >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let x = (ox * g.stride + dx) as isize - g.pad as isize;
                            if x >= 0 && x < w {
                                dst[oy * wo + ox] = plane[(y * w + x) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Cross-correlation of `[N, Ci*H*W]` inputs with `[Co, Ci, k, k]` weights,
/// returning `[N, Co*Ho*Wo]`.
pub fn conv2d(g: &ConvGeometry, w: &Tensor, input: &Tensor) -> Result<Tensor> {
    if w.shape() != g.weight_shape() {
        return Err(Error::dim(format!(
            "conv weight {:?} does not match geometry {:?}",
            w.shape(),
            g.weight_shape()
        )));
    }
    if input.row_len() != g.in_len() {
        return Err(Error::dim(format!(
            "conv input rows hold {} values, geometry expects {}",
            input.row_len(),
            g.in_len()
        )));
    }
    let (ho, wo) = g.out_hw()?;
    let sites = ho * wo;
    let n = input.rows();
    let out_len = g.out_channels * sites;
    let block = g.block(sites);
    let blocks = n.div_ceil(block);
    let parts = parallel::map_range(blocks, |bi| {
        let s0 = bi * block;
        let nb = block.min(n - s0);
        let cols = im2col(g, &input.data()[s0 * g.in_len()..(s0 + nb) * g.in_len()], nb, ho, wo);
        let mut out = vec![0.0; g.out_channels * nb * sites];
        gemm(
            g.out_channels,
            g.patch_len(),
            nb * sites,
            1.0,
            w.data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        // [Co, nb*sites] -> [nb, Co, sites]
        let mut arranged = vec![0.0; nb * out_len];
        for co in 0..g.out_channels {
            for s in 0..nb {
                let src = &out[co * nb * sites + s * sites..co * nb * sites + (s + 1) * sites];
                arranged[s * out_len + co * sites..s * out_len + (co + 1) * sites].copy_from_slice(src);
            }
        }
        arranged
    });
    Tensor::from_vec(&[n, out_len], parts.into_iter().flatten().collect())
}

/// `dL/dW[o][i][dy][dx] = sum_b sum_{y,x} g[b][o][y][x] * in[b][i][y*s+dy-p][x*s+dx-p]`.
pub fn conv2d_weight_grad(g: &ConvGeometry, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    let (ho, wo) = g.out_hw()?;
    let sites = ho * wo;
    let n = input.rows();
    if input.row_len() != g.in_len() || grad_out.rows() != n || grad_out.row_len() != g.out_channels * sites {
        return Err(Error::dim(format!(
            "conv gradient: output grad {:?} / input {:?} inconsistent with geometry",
            grad_out.shape(),
            input.shape()
        )));
    }
    let out_len = g.out_channels * sites;
    let block = g.block(sites);
    let blocks = n.div_ceil(block);
    let parts = parallel::map_range(blocks, |bi| {
        let s0 = bi * block;
        let nb = block.min(n - s0);
        let cols = im2col(g, &input.data()[s0 * g.in_len()..(s0 + nb) * g.in_len()], nb, ho, wo);
        let mut gathered = vec![0.0; g.out_channels * nb * sites];
        for s in 0..nb {
            let src = grad_out.row(s0 + s);
            for co in 0..g.out_channels {
                gathered[co * nb * sites + s * sites..co * nb * sites + (s + 1) * sites]
                    .copy_from_slice(&src[co * sites..(co + 1) * sites]);
            }
        }
        let mut gw = vec![0.0; g.out_channels * g.patch_len()];
        gemm(
            g.out_channels,
            nb * sites,
            g.patch_len(),
            1.0,
            &gathered,
            false,
            &cols,
            true,
            0.0,
            &mut gw,
        );
        gw
    });
    let _ = out_len;
    let mut total = vec![0.0; g.out_channels * g.patch_len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Tensor::from_vec(&g.weight_shape(), total)
}

/// Nearest-neighbour upsampling of the trailing `[H, W]` axes.
pub fn upsample_forward(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::config("upsample factor must be at least 1"));
    }
    if x.ndim() < 2 {
        return Err(Error::dim("upsample needs trailing [H, W] axes"));
    }
    let nd = x.ndim();
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let planes = x.len() / (h * w).max(1);
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = h * factor;
    shape[nd - 1] = w * factor;
    Tensor::from_vec(&shape, upsample_planes(x.data(), planes, h, w, factor))
}

pub(crate) fn upsample_planes(data: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (fh, fw) = (h * factor, w * factor);
    let mut out = vec![0.0; planes * fh * fw];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * fh * fw..(p + 1) * fh * fw];
        for y in 0..fh {
            for x in 0..fw {
                dst[y * fw + x] = src[(y / factor) * w + x / factor];
            }
        }
    }
    out
}
