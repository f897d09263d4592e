use std::fs;
use std::path::PathBuf;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::math::Tensor;

const RECORD: usize = 3073;
const PIXELS: usize = 3072;

/// CIFAR-10 binary batches: records of one label byte plus 3x32x32 pixels.
pub fn load_cifar_bin(paths: &[PathBuf]) -> Result<ImageDataset> {
    let mut pixels = vec![];
    let mut labels = vec![];
    for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Format {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % RECORD) as u64,
                msg: format!("length {} is not a multiple of {RECORD}", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    let n = labels.len();
    debug_assert_eq!(pixels.len(), n * PIXELS);
    ImageDataset::new(Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, 10)
}
