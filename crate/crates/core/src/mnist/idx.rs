//! IDX containers as used by MNIST: a big-endian magic number whose low byte
//! is the dimension count, big-endian u32 dimension sizes, then raw u8 data in
//! row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxDataset {
    pub rows: usize,
    pub cols: usize,
    /// `len * rows * cols` pixels, row-major per image.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.images[i * size..(i + 1) * size]
    }

    /// Pixels of image `i` scaled to `[0, 1]`.
    pub fn normalized(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header_len = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header_len as u64,
            actual: bytes.len() as u64,
        });
    }
    let found = read_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            actual: found,
        });
    }
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header_len as u64,
            actual: bytes.len() as u64,
        });
    }
    let sizes: Vec<usize> = (0..dims).map(|d| read_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header_len as u64 + sizes.iter().map(|&s| s as u64).product::<u64>();
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Consistency(format!(
            "{}: {} trailing bytes after {} declared",
            path.display(),
            bytes.len() as u64 - expected,
            expected
        )));
    }
    Ok(sizes)
}

/// Parses an image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let dims = header(bytes, path, IMAGES_MAGIC, 3)?;
    Ok((dims[0], dims[1], dims[2], bytes[16..].to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    header(bytes, path, LABELS_MAGIC, 1)?;
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Consistency(format!(
            "{}: label {} at index {pos} is outside 0..=9",
            path.display(),
            labels[pos]
        )));
    }
    Ok(labels)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let img_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, rows, cols, images) = parse_images(&img_bytes, images_path)?;
    let labels = parse_labels(&lbl_bytes, labels_path)?;
    if n != labels.len() {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Ok(IdxDataset {
        rows,
        cols,
        images,
        labels,
    })
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// The four standard MNIST files and the SHA-256 of their uncompressed contents.
pub const MNIST_FILES: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileCheck {
    Ok,
    Missing,
    Mismatch { actual: String },
}

/// Checks every standard MNIST file in `dir` against its known digest.
pub fn verify_mnist_dir(dir: &Path) -> Vec<(&'static str, FileCheck)> {
    MNIST_FILES
        .iter()
        .map(|&(name, digest)| {
            let status = match std::fs::read(dir.join(name)) {
                Err(_) => FileCheck::Missing,
                Ok(bytes) => {
                    let actual = crate::seed::sha256_hex(&bytes);
                    if actual == digest {
                        FileCheck::Ok
                    } else {
                        FileCheck::Mismatch { actual }
                    }
                }
            };
            (name, status)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_files_parse_as_empty() {
        let p = Path::new("mem");
        let (n, r, c, px) = parse_images(&encode_images(28, 28, &[]), p).unwrap();
        assert_eq!((n, r, c, px.len()), (0, 28, 28, 0));
        assert!(parse_labels(&encode_labels(&[]), p).unwrap().is_empty());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_labels(&[1, 2]);
        bytes.push(0);
        assert!(matches!(parse_labels(&bytes, Path::new("x")), Err(Error::Consistency(_))));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let bytes = encode_labels(&[1, 12]);
        assert!(matches!(parse_labels(&bytes, Path::new("x")), Err(Error::Consistency(_))));
    }
}
