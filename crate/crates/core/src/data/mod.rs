//! Dataset ingestion, normalization, batching and light augmentation.

mod cifar;
mod idx;
mod series;
mod text;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use cifar::load_cifar_bin;
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use series::{last_value_mse, series_splits, series_windows, synthetic_sines, SequenceDataset, SeriesSplits};
pub use text::{char_windows, collapse_whitespace, unigram_accuracy, CharDataset};

use crate::error::{Error, Result};
use crate::math::{Rng, Tensor};

/// Images `[N, C, H, W]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// Per-channel normalization statistics (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_EPS: f64 = 1e-8;

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.rows() != labels.len() {
            return Err(Error::data(format!(
                "images {:?} do not pair with {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::data(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn chw(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn sample_len(&self) -> usize {
        self.images.row_len()
    }

    pub fn take(&self, n: usize) -> ImageDataset {
        let n = n.min(self.len());
        let [c, h, w] = self.chw();
        ImageDataset {
            images: Tensor::from_vec(&[n, c, h, w], self.images.data()[..n * c * h * w].to_vec()).expect("prefix"),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    pub fn stats(&self) -> NormStats {
        let [c, h, w] = self.chw();
        let p = h * w;
        let count = (self.len() * p) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for n in 0..self.len() {
            let img = self.images.row(n);
            for ch in 0..c {
                mean[ch] += img[ch * p..(ch + 1) * p].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for n in 0..self.len() {
            let img = self.images.row(n);
            for ch in 0..c {
                var[ch] += img[ch * p..(ch + 1) * p].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        NormStats {
            mean,
            std: var.into_iter().map(|v| (v / count).sqrt()).collect(),
        }
    }

    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        let [c, h, w] = self.chw();
        if stats.mean.len() != c {
            return Err(Error::data(format!("{} channel stats for {c}-channel images", stats.mean.len())));
        }
        let p = h * w;
        for n in 0..self.len() {
            let img = self.images.row_mut(n);
            for ch in 0..c {
                let (m, s) = (stats.mean[ch], stats.std[ch].max(STD_EPS));
                img[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(())
    }

    /// Zero-pad every image symmetrically to `height x width`.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<ImageDataset> {
        let [c, h, w] = self.chw();
        if height < h || width < w {
            return Err(Error::config(format!("cannot pad {h}x{w} images to {height}x{width}")));
        }
        let (oy, ox) = ((height - h) / 2, (width - w) / 2);
        let mut out = Tensor::zeros(&[self.len(), c, height, width]);
        for n in 0..self.len() {
            let src = self.images.row(n).to_vec();
            let dst = out.row_mut(n);
            for ch in 0..c {
                for y in 0..h {
                    let d = (ch * height + y + oy) * width + ox;
                    dst[d..d + w].copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
                }
            }
        }
        ImageDataset::new(out, self.labels.clone(), self.classes)
    }

    /// `[B, C*H*W]` inputs and labels for the given sample indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.images.row(i));
        }
        (
            Tensor::from_vec(&[idx.len(), n], data).expect("gathered rows"),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Consecutive index batches, shuffled by `rng` when given; the final
/// partial batch is kept.
pub fn batches(n: usize, batch: usize, rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Augment {
    None,
    Crop { pad: usize },
    CropFlip { pad: usize },
}

/// Reflect-pad, random crop back to size, optional horizontal flip.
pub fn augment(images: &Tensor, chw: [usize; 3], mode: Augment, rng: &mut Rng) -> Tensor {
    let (pad, flip) = match mode {
        Augment::None => return images.clone(),
        Augment::Crop { pad } => (pad, false),
        Augment::CropFlip { pad } => (pad, true),
    };
    let [c, h, w] = chw;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
            if n == 1 {
                return 0;
            }
        }
        i as usize
    };
    let mut out = images.clone();
    for b in 0..images.rows() {
        let dy = rng.below(2 * pad + 1) as isize - pad as isize;
        let dx = rng.below(2 * pad + 1) as isize - pad as isize;
        let mirror = flip && rng.coin();
        let src = images.row(b);
        let dst = out.row_mut(b);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = if mirror { w - 1 - x } else { x };
                    let yy = reflect(y as isize + dy, h);
                    let xx = reflect(sx as isize + dx, w);
                    dst[(ch * h + y) * w + x] = src[(ch * h + yy) * w + xx];
                }
            }
        }
    }
    out
}

/// Dataset root: `$BSD_DATA_ROOT`, else `data/` under the working directory.
pub fn data_root() -> PathBuf {
    std::env::var_os("BSD_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// MNIST-style IDX split (`train` or `t10k`) from a directory.
pub fn load_mnist_dir(dir: &Path, split: &str) -> Result<ImageDataset> {
    let images = dir.join(format!("{split}-images-idx3-ubyte"));
    let labels = dir.join(format!("{split}-labels-idx1-ubyte"));
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file missing; run scripts/fetch_mnist.sh"),
            ));
        }
    }
    load_idx(&images, &labels)
}
