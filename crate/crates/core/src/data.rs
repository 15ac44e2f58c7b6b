//! MNIST (IDX) and CIFAR-10 (binary) loaders and quaternion pixel encodings.
//!
//! Pixels are kept as bytes and encoded into quaternions on demand, one batch
//! at a time. Bytes are scaled by 1/255 before encoding.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{QvnnError, Result};
use crate::quat::{QTensor, Quaternion, I, J, K, R};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 1024;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;
/// Trailing samples of a training set held out for selecting λ.
pub const VALIDATION_SIZE: usize = 5_000;

/// `g ↦ g + 0i + 0j + 0k`.
pub fn encode_gray(g: f64) -> Quaternion {
    Quaternion::new(g, 0.0, 0.0, 0.0)
}

pub fn decode_gray(q: Quaternion) -> f64 {
    q.r
}

/// `(r, g, b) ↦ 0 + ri + gj + bk`.
pub fn encode_rgb(r: f64, g: f64, b: f64) -> Quaternion {
    Quaternion::new(0.0, r, g, b)
}

pub fn decode_rgb(q: Quaternion) -> (f64, f64, f64) {
    (q.i, q.j, q.k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// One byte per pixel, encoded into the real part.
    Gray,
    /// Three byte planes per image, encoded into the i, j, k parts.
    Rgb,
}

impl Encoding {
    fn byte_planes(self) -> usize {
        match self {
            Encoding::Gray => 1,
            Encoding::Rgb => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled images. Each sample is one quaternion channel of `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    encoding: Encoding,
    height: usize,
    width: usize,
    classes: usize,
    /// `[N, planes, height, width]` raw bytes.
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        encoding: Encoding,
        height: usize,
        width: usize,
        classes: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per = encoding.byte_planes() * height * width;
        if pixels.len() != per * labels.len() {
            return Err(QvnnError::Data(format!(
                "{} pixel bytes for {} images of {per} bytes",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some((n, l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(QvnnError::Data(format!(
                "label {l} of sample {n} outside {classes} classes"
            )));
        }
        Ok(Dataset {
            encoding,
            height,
            width,
            classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-sample quaternion shape `[1, height, width]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        [1, self.height, self.width]
    }

    fn bytes_per_image(&self) -> usize {
        self.encoding.byte_planes() * self.height * self.width
    }

    /// Encoded images `[indices.len(), 1, height, width]` and their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(QTensor, Vec<usize>)> {
        let hw = self.height * self.width;
        let per = self.bytes_per_image();
        let mut x = QTensor::zeros(&[indices.len(), 1, self.height, self.width]);
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &n) in indices.iter().enumerate() {
            if n >= self.len() {
                return Err(QvnnError::Index(format!(
                    "sample {n} of a dataset with {} samples",
                    self.len()
                )));
            }
            let src = &self.pixels[n * per..(n + 1) * per];
            let dst = slot * hw..(slot + 1) * hw;
            match self.encoding {
                Encoding::Gray => scale_into(&mut x.plane_mut(R)[dst], src),
                Encoding::Rgb => {
                    for (plane, comp) in [I, J, K].into_iter().enumerate() {
                        scale_into(&mut x.plane_mut(comp)[dst.clone()], &src[plane * hw..(plane + 1) * hw]);
                    }
                }
            }
            labels.push(self.labels[n]);
        }
        Ok((x, labels))
    }

    /// The whole dataset encoded as one tensor.
    pub fn images(&self) -> Result<QTensor> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.batch(&all)?.0)
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let per = self.bytes_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &n in indices {
            if n >= self.len() {
                return Err(QvnnError::Index(format!(
                    "sample {n} of a dataset with {} samples",
                    self.len()
                )));
            }
            pixels.extend_from_slice(&self.pixels[n * per..(n + 1) * per]);
            labels.push(self.labels[n]);
        }
        Ok(Dataset {
            pixels,
            labels,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            encoding: self.encoding,
            height: self.height,
            width: self.width,
            classes: self.classes,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// First `n` samples (all of them when `n ≥ len`).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.bytes_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_header()
        }
    }

    /// Splits off the last `tail` samples: `(training part, held-out part)`.
    pub fn split_tail(&self, tail: usize) -> Result<(Dataset, Dataset)> {
        if tail >= self.len() {
            return Err(QvnnError::Contract(format!(
                "cannot hold out {tail} of {} samples",
                self.len()
            )));
        }
        let head = self.len() - tail;
        let cut = head * self.bytes_per_image();
        Ok((
            Dataset {
                pixels: self.pixels[..cut].to_vec(),
                labels: self.labels[..head].to_vec(),
                ..self.clone_header()
            },
            Dataset {
                pixels: self.pixels[cut..].to_vec(),
                labels: self.labels[head..].to_vec(),
                ..self.clone_header()
            },
        ))
    }
}

fn scale_into(dst: &mut [f64], src: &[u8]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s as f64 / 255.0;
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn need(what: &str, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(QvnnError::Truncated {
            what: what.into(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(QvnnError::Format(format!(
            "{what}: expected {expected} bytes, found {} (trailing data)",
            bytes.len()
        )));
    }
    Ok(())
}

fn check_magic(what: &str, bytes: &[u8], expected: u32) -> Result<()> {
    if bytes.len() < 4 {
        return Err(QvnnError::Truncated {
            what: what.into(),
            expected: 4,
            actual: bytes.len(),
        });
    }
    let found = read_u32_be(bytes, 0);
    if found != expected {
        return Err(QvnnError::WrongMagic {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(what: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(what, bytes, IDX_IMAGES_MAGIC)?;
    if bytes.len() < 16 {
        return Err(QvnnError::Truncated {
            what: what.into(),
            expected: 16,
            actual: bytes.len(),
        });
    }
    let n = read_u32_be(bytes, 4) as usize;
    let rows = read_u32_be(bytes, 8) as usize;
    let cols = read_u32_be(bytes, 12) as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| QvnnError::Format(format!("{what}: dimensions {n}x{rows}x{cols} overflow")))?;
    need(what, bytes, expected)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(what: &str, bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(what, bytes, IDX_LABELS_MAGIC)?;
    if bytes.len() < 8 {
        return Err(QvnnError::Truncated {
            what: what.into(),
            expected: 8,
            actual: bytes.len(),
        });
    }
    let n = read_u32_be(bytes, 4) as usize;
    need(what, bytes, n + 8)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        QvnnError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Loads an MNIST image/label IDX pair.
pub fn load_mnist_files(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&images.display().to_string(), &read(images)?)?;
    let labels_v = parse_idx_labels(&labels.display().to_string(), &read(labels)?)?;
    if labels_v.len() != n {
        return Err(QvnnError::Format(format!(
            "image-label count mismatch: {n} images, {} labels",
            labels_v.len()
        )));
    }
    Dataset::new(Encoding::Gray, rows, cols, 10, pixels, labels_v)
}

/// Loads the MNIST training or test set from the standard IDX file names.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_files(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Parses CIFAR-10 binary records (label byte, then 1024 R, G, B bytes each).
/// With `expected_records`, the file must hold exactly that many.
pub fn parse_cifar_records(what: &str, bytes: &[u8], expected_records: Option<usize>) -> Result<Dataset> {
    if let Some(n) = expected_records {
        need(what, bytes, n * CIFAR_RECORD_BYTES)?;
    } else if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(QvnnError::Format(format!(
            "{what}: {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let mut pixels = Vec::with_capacity(bytes.len());
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    for (n, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if record[0] >= 10 {
            return Err(QvnnError::Format(format!(
                "{what}: record {n} has label byte {}",
                record[0]
            )));
        }
        labels.push(record[0] as usize);
        pixels.extend_from_slice(&record[1..]);
    }
    Dataset::new(Encoding::Rgb, 32, 32, 10, pixels, labels)
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the CIFAR-10 training batches (`data_batch_1..5.bin`) or the test
/// batch (`test_batch.bin`). Each file must hold 10,000 records.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let dir = cifar_dir(dir);
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|n| format!("data_batch_{n}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let path = dir.join(&file);
        let part = parse_cifar_records(&path.display().to_string(), &read(&path)?, Some(CIFAR_BATCH_RECORDS))?;
        pixels.extend_from_slice(&part.pixels);
        labels.extend_from_slice(&part.labels);
    }
    Dataset::new(Encoding::Rgb, 32, 32, 10, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend((0..n * rows * cols).map(|p| (p % 256) as u8));
        v
    }

    #[test]
    fn encodings() {
        assert_eq!(encode_gray(0.5), Quaternion::new(0.5, 0.0, 0.0, 0.0));
        assert_eq!(encode_gray(0.0), Quaternion::ZERO);
        assert_eq!(encode_gray(1.0), Quaternion::ONE);
        assert_eq!(encode_rgb(0.2, 0.4, 0.6), Quaternion::new(0.0, 0.2, 0.4, 0.6));
        assert_eq!(encode_rgb(0.0, 0.0, 0.0), Quaternion::ZERO);
        assert_eq!(decode_rgb(encode_rgb(0.1, 0.7, 0.3)), (0.1, 0.7, 0.3));
        assert_eq!(decode_gray(encode_gray(0.25)), 0.25);
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let bytes = idx_images(3, 2, 2);
        let (n, r, c, px) = parse_idx_images("img", &bytes).unwrap();
        assert_eq!((n, r, c, px.len()), (3, 2, 2, 12));
        let err = parse_idx_images("img", &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, QvnnError::Truncated { expected: 28, actual: 27, .. }), "{err}");
        let mut labels = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(0);
        let err = parse_idx_labels("lbl", &labels).unwrap_err();
        assert!(err.to_string().contains("wrong magic"));
    }

    #[test]
    fn rgb_batches_have_a_zero_real_plane() {
        let mut bytes = Vec::new();
        for n in 0..3u8 {
            bytes.push(n);
            bytes.extend((0..3072).map(|p| (p % 251) as u8));
        }
        let ds = parse_cifar_records("cifar", &bytes, None).unwrap();
        assert_eq!(ds.len(), 3);
        let x = ds.images().unwrap();
        assert!(x.plane(R).iter().all(|&v| v == 0.0));
        assert_eq!(x.get(1), encode_rgb(1.0 / 255.0, (1025 % 251) as f64 / 255.0, (2049 % 251) as f64 / 255.0));
        assert!(parse_cifar_records("cifar", &bytes[..100], None).is_err());
        assert!(matches!(
            parse_cifar_records("cifar", &bytes, Some(4)),
            Err(QvnnError::Truncated { .. })
        ));
    }

    #[test]
    fn splits_and_subsets() {
        let ds = Dataset::new(Encoding::Gray, 1, 2, 10, (0..20).collect(), (0..10).collect()).unwrap();
        let (train, val) = ds.split_tail(3).unwrap();
        assert_eq!((train.len(), val.len()), (7, 3));
        assert_eq!(val.labels(), &[7, 8, 9]);
        assert_eq!(ds.take(4).labels(), &[0, 1, 2, 3]);
        let (x, l) = ds.batch(&[9, 0]).unwrap();
        assert_eq!(l, vec![9, 0]);
        assert_eq!(x.get(0), encode_gray(18.0 / 255.0));
        assert!(Dataset::new(Encoding::Gray, 1, 1, 2, vec![0], vec![2]).is_err());
    }
}
