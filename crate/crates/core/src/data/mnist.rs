use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{rng_for, LabeledDataset, Provenance, Stream, Targets, RNG_NAME};
use crate::error::{Error, Result};
use crate::loss::NUM_CLASSES;

/// IDX data-type byte for unsigned bytes, the only type MNIST uses.
pub const IDX_UNSIGNED_BYTE: u8 = 0x08;

/// A decoded IDX file: dimension sizes and the raw unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub type_byte: u8,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Parse an in-memory IDX image.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, reason: String| Error::Format { offset, reason };
        if bytes.len() < 4 {
            return Err(fail(bytes.len(), "truncated magic number".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(fail(0, format!("bad magic prefix {:#04x} {:#04x}", bytes[0], bytes[1])));
        }
        let type_byte = bytes[2];
        if type_byte != IDX_UNSIGNED_BYTE {
            return Err(fail(2, format!("unsupported data type {type_byte:#04x}")));
        }
        let ndim = bytes[3] as usize;
        if ndim == 0 {
            return Err(fail(3, "zero dimensions".into()));
        }
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(fail(bytes.len(), format!("truncated header: {ndim} dimensions declared")));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fail(4, "dimension product overflows".into()))?;
        let payload = &bytes[header..];
        if payload.len() < count {
            return Err(fail(
                bytes.len(),
                format!("truncated payload: expected {count} bytes, found {}", payload.len()),
            ));
        }
        if payload.len() > count {
            return Err(fail(header + count, "trailing bytes after payload".into()));
        }
        Ok(IdxTensor {
            type_byte,
            dims,
            data: payload.to_vec(),
        })
    }

    /// Encode back to IDX bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, self.type_byte, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend((d as u32).to_be_bytes());
        }
        out.extend(&self.data);
        out
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|&b| b as f64)
    }
}

/// Read and decode an IDX file.
pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    IdxTensor::parse(&bytes)
}

/// Flatten images to `[0, 1]` pixels plus a trailing bias feature of 1.
pub fn featurize_mnist(images: &IdxTensor, labels: &IdxTensor) -> Result<LabeledDataset> {
    if images.dims.len() < 2 || labels.dims.len() != 1 {
        return Err(Error::invalid("expected an image tensor and a 1-D label tensor"));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::invalid(format!(
            "cardinality mismatch: {n} images, {} labels",
            labels.dims[0]
        )));
    }
    let pixels: usize = images.dims[1..].iter().product();
    let dim = pixels + 1;
    let mut features = Vec::with_capacity(n * dim);
    for img in images.data.chunks_exact(pixels) {
        features.extend(img.iter().map(|&b| b as f64 / 255.0));
        features.push(1.0);
    }
    if let Some(bad) = labels.data.iter().find(|&&c| c as usize >= NUM_CLASSES) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let mut provenance = Provenance {
        source: "mnist-idx".into(),
        ..Default::default()
    };
    provenance.params.insert("pixel_scale".into(), "1/255".into());
    provenance.params.insert("bias_feature".into(), "1".into());
    LabeledDataset::new(
        dim,
        features,
        Targets::Class(labels.data.clone()),
        Some(vec![false; n]),
        provenance,
    )
}

/// Relabel `ceil(p N)` uniformly chosen points to `(y + 1) mod 10`.
pub fn flip_labels(data: &LabeledDataset, p: f64, seed: u64) -> Result<LabeledDataset> {
    let Targets::Class(labels) = data.targets() else {
        return Err(Error::invalid("label flips need a classification dataset"));
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("flip fraction {p} outside [0, 1]")));
    }
    let n = data.len();
    let count = ceil_count(p, n);
    let mut rng = rng_for(seed, Stream::Contaminate);
    let mut labels = labels.clone();
    let mut mask = data
        .outlier_mask()
        .map_or_else(|| vec![false; n], <[bool]>::to_vec);
    for i in index::sample(&mut rng, n, count) {
        labels[i] = (labels[i] + 1) % NUM_CLASSES as u8;
        mask[i] = true;
    }
    let mut provenance = data.provenance().clone();
    provenance.rng = Some(RNG_NAME.into());
    provenance.seeds.push(seed);
    provenance.params.insert("flip_fraction".into(), p.to_string());
    provenance.params.insert("flipped".into(), count.to_string());
    LabeledDataset::new(
        data.dim(),
        data.features().to_vec(),
        Targets::Class(labels),
        Some(mask),
        provenance,
    )
}

/// `ceil(p n)` for a decimal fraction, robust to binary rounding of `p`.
pub(crate) fn ceil_count(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Paths of the four MNIST IDX files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        MnistFiles {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn missing(&self) -> Vec<&Path> {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .into_iter()
            .map(PathBuf::as_path)
            .filter(|p| !p.is_file())
            .collect()
    }
}

/// Load featurized train/test splits, keeping the first `n_train`/`n_test`
/// points of each file.
pub fn load_mnist(files: &MnistFiles, n_train: usize, n_test: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = featurize_mnist(&read_idx(&files.train_images)?, &read_idx(&files.train_labels)?)?;
    let test = featurize_mnist(&read_idx(&files.test_images)?, &read_idx(&files.test_labels)?)?;
    if train.len() < n_train || test.len() < n_test {
        return Err(Error::invalid(format!(
            "requested {n_train}/{n_test} points, files hold {}/{}",
            train.len(),
            test.len()
        )));
    }
    Ok((train.truncated(n_train), test.truncated(n_test)))
}
