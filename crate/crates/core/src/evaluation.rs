//! Outlier flagging, confusion rates, test accuracy and inlier refits.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::{predict_class, AbsRegression, LossModel};
use crate::par;
use crate::ssgd::trimmed_subgradient;
use crate::trimmed::TrimSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub predicted_mask: Vec<bool>,
    /// Absent without ground truth or when it has no outliers.
    pub tpr: Option<f64>,
    /// Absent without ground truth.
    pub fpr: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Flag the `N - q` points with the largest losses. Among equal losses the
/// higher index is flagged first.
pub fn flag_outliers(losses: &[f64], q: usize) -> Result<Vec<bool>> {
    let n = losses.len();
    if q == 0 || q > n {
        return Err(Error::invalid(format!("q = {q} outside 1..={n}")));
    }
    if let Some(index) = losses.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite { index, what: "loss" });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(b.cmp(&a)));
    let mut mask = vec![false; n];
    for &i in &idx[..n - q] {
        mask[i] = true;
    }
    Ok(mask)
}

/// True and false positive rates in percent.
pub fn confusion_rates(predicted: &[bool], truth: &[bool]) -> Result<(Option<f64>, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let tpr = (tp + fneg > 0).then(|| 100.0 * tp as f64 / (tp + fneg) as f64);
    let fpr = if fp + tn > 0 {
        100.0 * fp as f64 / (fp + tn) as f64
    } else {
        0.0
    };
    Ok((tpr, fpr))
}

/// Percentage of points whose predicted class matches the label.
pub fn test_accuracy(w: &[f64], test: &LabeledDataset) -> Result<f64> {
    if test.targets().is_real() {
        return Err(Error::invalid("test accuracy needs class labels"));
    }
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let hits = par::map_range(test.len(), |i| predict_class(w, test.row(i)).map(|c| c == test.class(i)));
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Flag outliers from the final losses and score them against the
/// dataset's ground truth, if any.
pub fn outlier_report(losses: &[f64], q: usize, truth: Option<&[bool]>) -> Result<OutlierReport> {
    let predicted_mask = flag_outliers(losses, q)?;
    let (tpr, fpr) = match truth {
        Some(t) => {
            let (tpr, fpr) = confusion_rates(&predicted_mask, t)?;
            (tpr, Some(fpr))
        }
        None => (None, None),
    };
    Ok(OutlierReport {
        predicted_mask,
        tpr,
        fpr,
        accuracy: None,
    })
}

/// Full-batch subgradient descent on the mean absolute loss of the inliers,
/// step `0.1 / sqrt(k)`, started from `w`. Returns the best iterate seen.
pub fn refit_inliers(data: &LabeledDataset, inlier_mask: &[bool], w: &[f64], budget: usize) -> Result<Vec<f64>> {
    if inlier_mask.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: inlier_mask.len(),
        });
    }
    let inliers = data.select(inlier_mask)?;
    if inliers.len() < data.dim() {
        return Err(Error::invalid(format!(
            "{} inliers cannot determine {} weights",
            inliers.len(),
            data.dim()
        )));
    }
    let model = AbsRegression::new(&inliers)?;
    let n = inliers.len();
    let all: Vec<usize> = (0..n).collect();
    let trim = TrimSpec::new(n, n)?;

    let mut current = w.to_vec();
    let mut best = current.clone();
    let mut best_obj = f64::INFINITY;
    for k in 0..=budget {
        let (g, obj) = trimmed_subgradient(&model, &current, &all, trim)?;
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&current);
        }
        if k == budget {
            break;
        }
        let step = 0.1 / ((k + 1) as f64).sqrt();
        for (wi, gi) in current.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
    }
    Ok(best)
}

/// Mean absolute loss over the points with `mask[i]` set.
pub fn masked_mean_abs_loss(data: &LabeledDataset, mask: &[bool], w: &[f64]) -> Result<f64> {
    let model = AbsRegression::new(data)?;
    let idx: Vec<usize> = (0..data.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::invalid("mask selects no points"));
    }
    Ok(model.losses(w, &idx)?.iter().sum::<f64>() / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, Targets};
    use proptest::prelude::*;

    fn flagged(mask: &[bool]) -> Vec<usize> {
        (0..mask.len()).filter(|&i| mask[i]).collect()
    }

    #[test]
    fn flag_examples() {
        assert_eq!(flagged(&flag_outliers(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap()), vec![3, 4]);
        assert!(flagged(&flag_outliers(&[1.0, 2.0, 3.0], 3).unwrap()).is_empty());
        assert_eq!(flagged(&flag_outliers(&[1.0, 2.0, 2.0, 3.0], 2).unwrap()), vec![2, 3]);
        assert!(flag_outliers(&[1.0], 0).is_err());
    }

    #[test]
    fn rate_examples() {
        let truth: Vec<bool> = (0..1000).map(|i| i % 5 < 2).collect();
        assert_eq!(confusion_rates(&truth, &truth).unwrap(), (Some(100.0), 0.0));
        assert_eq!(confusion_rates(&vec![false; 1000], &truth).unwrap(), (Some(0.0), 0.0));
        let none = vec![false; 8];
        let pred = [true, false, true, false, false, false, false, false];
        assert_eq!(confusion_rates(&pred, &none).unwrap(), (None, 25.0));
        assert!(confusion_rates(&pred[..3], &none).is_err());
    }

    fn class_data(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> LabeledDataset {
        let dim = rows[0].len();
        LabeledDataset::new(dim, rows.concat(), Targets::Class(labels), None, Provenance::default()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![1.0, i as f64]).collect();
        let data = class_data(rows, labels.clone());
        let zero = vec![0.0; 20];
        let acc = test_accuracy(&zero, &data).unwrap();
        assert_eq!(acc, 10.0);
        assert_eq!(acc + (100.0 - acc), 100.0);

        // One-hot rows with the identity classifier.
        let rows: Vec<Vec<f64>> = labels.iter().map(|&c| (0..10).map(|j| f64::from(j == c)).collect()).collect();
        let data = class_data(rows, labels);
        let mut w = vec![0.0; 100];
        for c in 0..10 {
            w[c * 10 + c] = 1.0;
        }
        assert_eq!(test_accuracy(&w, &data).unwrap(), 100.0);
    }

    #[test]
    fn refit_recovers_noiseless_generator() {
        let d = 3;
        let n = 60;
        let mut feats = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let x = [((i * 7) % 11) as f64 - 5.0, ((i * 3) % 13) as f64 - 6.0, ((i * 5) % 7) as f64 - 3.0];
            ys.push(x.iter().sum::<f64>());
            feats.extend_from_slice(&x);
        }
        // Corrupt the last ten points; the refit only sees the rest.
        for y in &mut ys[n - 10..] {
            *y += 1000.0;
        }
        let data = LabeledDataset::new(d, feats, Targets::Real(ys), None, Provenance::default()).unwrap();
        let mask: Vec<bool> = (0..n).map(|i| i < n - 10).collect();
        let start = vec![0.0; d];
        let w = refit_inliers(&data, &mask, &start, 20000).unwrap();
        assert!(w.iter().all(|v| (v - 1.0).abs() <= 1e-2), "{w:?}");
        assert!(masked_mean_abs_loss(&data, &mask, &w).unwrap() <= masked_mean_abs_loss(&data, &mask, &start).unwrap());
        assert_eq!(refit_inliers(&data, &mask, &start, 0).unwrap(), start);
        let few: Vec<bool> = (0..n).map(|i| i < 2).collect();
        assert!(refit_inliers(&data, &few, &start, 10).is_err());
    }

    proptest! {
        #[test]
        fn flags_exactly_n_minus_q(losses in prop::collection::vec(-1e3f64..1e3, 1..60), frac in 0.0f64..1.0) {
            let n = losses.len();
            let q = 1 + ((n - 1) as f64 * frac) as usize;
            let mask = flag_outliers(&losses, q).unwrap();
            prop_assert_eq!(mask.iter().filter(|&&b| b).count(), n - q);
            // Invariant under a strictly increasing transform.
            let warped: Vec<f64> = losses.iter().map(|v| (v / 100.0).exp() + 3.0 * v).collect();
            prop_assert_eq!(flag_outliers(&warped, q).unwrap(), mask.clone());
            let truth: Vec<bool> = losses.iter().map(|v| *v > 0.0).collect();
            let (tpr, fpr) = confusion_rates(&mask, &truth).unwrap();
            prop_assert!((0.0..=100.0).contains(&fpr));
            if let Some(t) = tpr {
                prop_assert!((0.0..=100.0).contains(&t));
            }
        }
    }
}
