//! Datasets: synthetic regression with contamination, MNIST ingestion with
//! label flips, and a CSV exchange format.

mod csv_io;
mod mnist;
mod regression;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{read_csv, write_csv, TargetKind};
pub use mnist::{
    featurize_mnist, flip_labels, load_mnist, read_idx, IdxTensor, MnistFiles, IDX_UNSIGNED_BYTE,
};
pub use regression::{contaminate_regression, generate_regression, LEVERAGE_MEAN, VERTICAL_SHIFT};

/// Random stream used by each consumer of a seed, so the same seed drives
/// data generation, contamination and solvers without correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Generate = 1,
    Contaminate = 2,
    Subsample = 3,
    Solver = 4,
}

/// ChaCha20 keyed by `seed` on the given stream.
pub fn rng_for(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Name and version of the generator behind [`rng_for`], recorded in
/// provenance.
pub const RNG_NAME: &str = "chacha20/rand_chacha-0.9";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<u8>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Targets::Real(_))
    }
}

/// Where a dataset came from: generator name, seed and parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub rng: Option<String>,
    pub seeds: Vec<u64>,
    pub params: BTreeMap<String, String>,
    /// Generating weights, when the data was synthesized from a known model.
    pub true_weights: Option<Vec<f64>>,
}

/// An immutable labeled collection with an optional ground-truth outlier mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    targets: Targets,
    outlier_mask: Option<Vec<bool>>,
    provenance: Provenance,
}

impl LabeledDataset {
    /// Build from row-major features (`len * dim` values).
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        targets: Targets,
        outlier_mask: Option<Vec<bool>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if features.len() != dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * targets.len(),
                got: features.len(),
            });
        }
        if let Some(m) = &outlier_mask {
            if m.len() != targets.len() {
                return Err(Error::DimensionMismatch {
                    expected: targets.len(),
                    got: m.len(),
                });
            }
        }
        if let Targets::Class(c) = &targets {
            if let Some(bad) = c.iter().find(|&&c| c as usize >= crate::loss::NUM_CLASSES) {
                return Err(Error::invalid(format!("class label {bad} out of range")));
            }
        }
        Ok(LabeledDataset {
            dim,
            features,
            targets,
            outlier_mask,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Real target, or the class index as a real.
    pub fn target(&self, i: usize) -> f64 {
        match &self.targets {
            Targets::Real(v) => v[i],
            Targets::Class(v) => v[i] as f64,
        }
    }

    /// Class index; panics on a regression dataset.
    pub fn class(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Class(v) => v[i] as usize,
            Targets::Real(_) => panic!("class() on a regression dataset"),
        }
    }

    pub fn outlier_mask(&self) -> Option<&[bool]> {
        self.outlier_mask.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Keep the first `n` points.
    pub fn truncated(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let targets = match &self.targets {
            Targets::Real(v) => Targets::Real(v[..n].to_vec()),
            Targets::Class(v) => Targets::Class(v[..n].to_vec()),
        };
        let mut provenance = self.provenance.clone();
        provenance.params.insert("truncated_to".into(), n.to_string());
        LabeledDataset {
            dim: self.dim,
            features: self.features[..n * self.dim].to_vec(),
            targets,
            outlier_mask: self.outlier_mask.as_ref().map(|m| m[..n].to_vec()),
            provenance,
        }
    }

    /// Points whose mask entry is `false` (inliers), as a new dataset.
    pub fn select(&self, keep: &[bool]) -> Result<LabeledDataset> {
        if keep.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: keep.len(),
            });
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        let features = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let targets = match &self.targets {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(idx.iter().map(|&i| v[i]).collect()),
        };
        let mask = self
            .outlier_mask
            .as_ref()
            .map(|m| idx.iter().map(|&i| m[i]).collect());
        LabeledDataset::new(self.dim, features, targets, mask, self.provenance.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_checks_shapes() {
        assert!(LabeledDataset::new(2, vec![0.0; 3], Targets::Real(vec![0.0; 2]), None, Provenance::default()).is_err());
        assert!(LabeledDataset::new(1, vec![0.0; 2], Targets::Real(vec![0.0; 2]), Some(vec![false]), Provenance::default()).is_err());
        assert!(LabeledDataset::new(1, vec![0.0], Targets::Class(vec![10]), None, Provenance::default()).is_err());
        let d = LabeledDataset::new(2, vec![1.0, 2.0, 3.0, 4.0], Targets::Real(vec![5.0, 6.0]), None, Provenance::default()).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.select(&[false, true]).unwrap().row(0), &[3.0, 4.0]);
    }

    #[test]
    fn streams_are_distinct() {
        use rand::Rng;
        let a: u64 = rng_for(5, Stream::Generate).random();
        let b: u64 = rng_for(5, Stream::Solver).random();
        assert_ne!(a, b);
        assert_eq!(a, rng_for(5, Stream::Generate).random::<u64>());
    }
}
