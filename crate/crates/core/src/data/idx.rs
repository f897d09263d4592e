use std::fs;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::math::Tensor;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(path, at, format!("header truncated: need {} bytes, file has {}", at + 4, bytes.len())))
}

/// `(count, rows, cols, pixels)` from an IDX3 unsigned-byte image file.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 2051 {
        return Err(format_err(path, 0, format!("image magic {magic} (expected 2051)")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let h = be_u32(bytes, 8, path)? as usize;
    let w = be_u32(bytes, 12, path)? as usize;
    let want = 16 + n * h * w;
    if bytes.len() != want {
        return Err(format_err(
            path,
            bytes.len().min(want),
            format!("expected {want} bytes for {n}x{h}x{w} images, found {}", bytes.len()),
        ));
    }
    Ok((n, h, w, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != 2049 {
        return Err(format_err(path, 0, format!("label magic {magic} (expected 2049)")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(format_err(
            path,
            bytes.len().min(8 + n),
            format!("expected {} bytes for {n} labels, found {}", 8 + n, bytes.len()),
        ));
    }
    Ok(bytes[8..].to_vec())
}

/// Load an IDX image/label pair with pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let (n, h, w, pixels) = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(format_err(
            labels_path,
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    let images = Tensor::from_vec(&[n, 1, h, w], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    ImageDataset::new(images, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, h: u32, w: u32, fill: u8) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for d in [n, h, w] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, (n * h * w) as usize));
        b
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 1];
        b.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        b.extend_from_slice(ls);
        b
    }

    #[test]
    fn header_decode() {
        let b = images(10000, 28, 28, 0);
        assert_eq!(&b[..4], &[0, 0, 8, 3]);
        let (n, h, w, _) = parse_idx_images(&b, Path::new("t")).unwrap();
        assert_eq!((n, h, w), (10000, 28, 28));
    }

    #[test]
    fn scaling_and_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, images(2, 2, 2, 255)).unwrap();
        fs::write(&lp, labels(&[3, 7])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
        assert_eq!(ds.labels, vec![3, 7]);
        fs::write(&lp, labels(&[3])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_names_lengths() {
        let mut b = images(3, 4, 4, 1);
        b.truncate(30);
        let err = parse_idx_images(&b, Path::new("t")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("64") && msg.contains("30"), "{msg}");
        assert!(matches!(parse_idx_labels(&images(1, 1, 1, 0), Path::new("t")), Err(Error::Format { offset: 0, .. })));
    }
}
