//! IDX files (big endian): magic 2051 for `u8` image tensors, 2049 for `u8` labels.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::nn::Shape;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: (at + 4) as u64,
            actual: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            format!("bad IDX magic number: expected {expected}, found {magic}"),
        ));
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Returns `(rows, cols, pixels)` with one `rows * cols` block per image.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    check_len(&bytes, 16 + count * rows * cols, path)?;
    Ok((rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    check_len(&bytes, 8 + count, path)?;
    Ok(bytes[8..].to_vec())
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]` by `/ 255`
/// and stable indices follow file order. The class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    let per_image = rows * cols;
    let count = pixels.len().checked_div(per_image).unwrap_or(0);
    if count != labels.len() {
        return Err(Error::format(
            labels_path,
            format!(
                "image count {count} in {} does not match label count {}",
                images_path.display(),
                labels.len()
            ),
        ));
    }
    let images = pixels
        .chunks_exact(per_image.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| p as f32 / 255.0).collect())
        .collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_parts(name, Shape::new(1, rows, cols), class_count, images, labels)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::shape("IDX image", rows * cols, img.len()));
        }
        out.extend_from_slice(img);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        let a: Vec<u8> = (0..6).map(|v| v * 40).collect();
        let b: Vec<u8> = vec![255, 0, 1, 2, 3, 128];
        write_idx_images(&ip, 2, 3, &[a.clone(), b.clone()]).unwrap();
        write_idx_labels(&lp, &[4, 1]).unwrap();
        let data = load_idx(&ip, &lp).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.shape(), Shape::new(1, 2, 3));
        assert_eq!(data.labels(), vec![4, 1]);
        assert_eq!(data.indices(), vec![0, 1]);
        for (ex, raw) in data.examples().iter().zip([a, b]) {
            let expected: Vec<f32> = raw.iter().map(|&p| p as f32 / 255.0).collect();
            assert_eq!(ex.pixels, expected);
        }
    }

    #[test]
    fn magic_mismatch_reports_both_values() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&ip, 1, 1, &[vec![1]]).unwrap();
        write_idx_labels(&lp, &[0]).unwrap();
        let err = load_idx(&lp, &ip).unwrap_err().to_string();
        assert!(err.contains("expected 2051") && err.contains("found 2049"), "{err}");
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        write_idx_images(&ip, 2, 2, &[vec![1, 2, 3, 4], vec![5, 6, 7, 8]]).unwrap();
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 3]).unwrap();
        match read_idx_images(&ip).unwrap_err() {
            Error::Truncated {
                expected, actual, ..
            } => assert_eq!((expected, actual), (24, 21)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&ip, 1, 2, &[vec![1, 2], vec![3, 4]]).unwrap();
        write_idx_labels(&lp, &[0, 1, 1]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("image count 2") && err.contains("label count 3"), "{err}");
    }
}
