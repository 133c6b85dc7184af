use rand::seq::index;
use rand_distr::{Distribution, Normal};

use super::{rng_for, LabeledDataset, Provenance, Stream, Targets, RNG_NAME};
use crate::error::{Error, Result};

/// Standard deviation of the clean features (variance 100).
const FEATURE_SD: f64 = 10.0;
/// Mean of the corrupted first feature of a bad leverage point.
pub const LEVERAGE_MEAN: f64 = 100.0;
/// Standard deviation of the corrupted first feature (variance 100).
const LEVERAGE_SD: f64 = 10.0;
/// Shift added to the response of a vertical outlier.
pub const VERTICAL_SHIFT: f64 = 1000.0;

/// `x_ij ~ N(0, 100)`, `y_i = sum_j x_ij + N(0, 1)`.
pub fn generate_regression(d: usize, n: usize, seed: u64) -> Result<LabeledDataset> {
    if d == 0 || n == 0 {
        return Err(Error::invalid("regression data needs d >= 1 and N >= 1"));
    }
    let mut rng = rng_for(seed, Stream::Generate);
    let feature = Normal::new(0.0, FEATURE_SD).expect("valid normal");
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| feature.sample(&mut rng)));
        let signal: f64 = features[start..].iter().sum();
        y.push(signal + noise.sample(&mut rng));
    }
    let mut provenance = Provenance {
        source: "synthetic-regression".into(),
        rng: Some(RNG_NAME.into()),
        seeds: vec![seed],
        true_weights: Some(vec![1.0; d]),
        ..Default::default()
    };
    provenance.params.insert("d".into(), d.to_string());
    provenance.params.insert("N".into(), n.to_string());
    LabeledDataset::new(d, features, Targets::Real(y), Some(vec![false; n]), provenance)
}

/// Corrupt 40% of a clean regression dataset.
///
/// `floor(0.2 N)` points become bad leverage points (first feature redrawn
/// from `N(100, 100)`) and a disjoint `ceil(0.2 N)` become vertical outliers
/// (`y += 1000`).
pub fn contaminate_regression(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let n = data.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "contamination needs N >= 5 for nonzero outlier counts, got {n}"
        )));
    }
    let Targets::Real(y) = data.targets() else {
        return Err(Error::invalid("contamination needs a regression dataset"));
    };
    if data.outlier_mask().is_some_and(|m| m.iter().any(|&b| b)) {
        return Err(Error::invalid("dataset is already contaminated"));
    }
    let n_leverage = n / 5;
    let n_vertical = n.div_ceil(5);
    let mut rng = rng_for(seed, Stream::Contaminate);
    let chosen = index::sample(&mut rng, n, n_leverage + n_vertical).into_vec();
    let (leverage, vertical) = chosen.split_at(n_leverage);

    let dim = data.dim();
    let mut features = data.features().to_vec();
    let mut y = y.clone();
    let mut mask = vec![false; n];
    let draw = Normal::new(LEVERAGE_MEAN, LEVERAGE_SD).expect("valid normal");
    for &i in leverage {
        features[i * dim] = draw.sample(&mut rng);
        mask[i] = true;
    }
    for &i in vertical {
        y[i] += VERTICAL_SHIFT;
        mask[i] = true;
    }
    let mut provenance = data.provenance().clone();
    provenance.seeds.push(seed);
    provenance.params.insert("leverage_points".into(), n_leverage.to_string());
    provenance.params.insert("vertical_outliers".into(), n_vertical.to_string());
    LabeledDataset::new(dim, features, Targets::Real(y), Some(mask), provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn feature_and_noise_scales() {
        let data = generate_regression(5, 1000, 17).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = (0..1000).map(|i| data.row(i)[j]).collect();
            let v = sample_var(&col);
            assert!((80.0..=120.0).contains(&v), "feature {j} variance {v}");
        }
        let resid: Vec<f64> = (0..1000)
            .map(|i| data.target(i) - data.row(i).iter().sum::<f64>())
            .collect();
        let sd = sample_var(&resid).sqrt();
        assert!((0.9..=1.1).contains(&sd), "noise sd {sd}");
        assert_eq!(data.provenance().true_weights.as_deref(), Some(&[1.0; 5][..]));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_regression(3, 50, 9).unwrap();
        let b = generate_regression(3, 50, 9).unwrap();
        let bytes = |d: &LabeledDataset| {
            d.features()
                .iter()
                .chain((0..d.len()).map(|i| d.target(i)).collect::<Vec<_>>().iter())
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<u8>>()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&generate_regression(3, 50, 10).unwrap()));
    }

    fn split(clean: &LabeledDataset, dirty: &LabeledDataset) -> (Vec<usize>, Vec<usize>) {
        let lev = (0..clean.len()).filter(|&i| clean.row(i)[0] != dirty.row(i)[0]).collect();
        let ver = (0..clean.len()).filter(|&i| clean.target(i) != dirty.target(i)).collect();
        (lev, ver)
    }

    #[test]
    fn contamination_counts_are_exact() {
        let clean = generate_regression(4, 1000, 1).unwrap();
        let dirty = contaminate_regression(&clean, 2).unwrap();
        let (lev, ver) = split(&clean, &dirty);
        assert_eq!(lev.len(), 200);
        assert_eq!(ver.len(), 200);
        assert!(lev.iter().all(|i| !ver.contains(i)));
        let mask = dirty.outlier_mask().unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 400);
        for &i in &ver {
            assert_eq!(dirty.target(i), clean.target(i) + 1000.0);
            assert_eq!(dirty.row(i), clean.row(i));
        }
        for &i in lev.iter().chain(&ver) {
            assert!(mask[i]);
        }
    }

    #[test]
    fn contamination_small_n() {
        let clean = generate_regression(2, 5, 1).unwrap();
        let dirty = contaminate_regression(&clean, 3).unwrap();
        let (lev, ver) = split(&clean, &dirty);
        assert_eq!((lev.len(), ver.len()), (1, 1));
        assert_eq!(dirty.outlier_mask().unwrap().iter().filter(|&&b| b).count(), 2);
        let n7 = contaminate_regression(&generate_regression(2, 7, 1).unwrap(), 3).unwrap();
        assert_eq!(n7.outlier_mask().unwrap().iter().filter(|&&b| b).count(), 1 + 2);
        assert!(contaminate_regression(&generate_regression(2, 4, 1).unwrap(), 3).is_err());
        assert!(contaminate_regression(&dirty, 4).is_err());
    }
}
