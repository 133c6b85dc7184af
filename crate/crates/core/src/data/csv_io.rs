//! CSV dataset exchange: header row, features `x1..xd`, then `y`, then an
//! optional `outlier` column holding 0/1.

use std::path::Path;

use super::{LabeledDataset, Provenance, Targets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Real,
    Class,
}

pub fn write_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if data.outlier_mask().is_some() {
        header.push("outlier".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(match data.targets() {
            Targets::Real(y) => format!("{:?}", y[i]),
            Targets::Class(c) => c[i].to_string(),
        });
        if let Some(m) = data.outlier_mask() {
            rec.push(if m[i] { "1" } else { "0" }.into());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>, kind: TargetKind) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let has_mask = header.iter().next_back() == Some("outlier");
    let ncols = header.len();
    let dim = ncols
        .checked_sub(if has_mask { 2 } else { 1 })
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::invalid("CSV needs at least one feature column and y"))?;

    let mut features = Vec::new();
    let mut real = Vec::new();
    let mut class = Vec::new();
    let mut mask = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec[j].trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("{}: row {} column {}: not a number", path.display(), row + 1, j + 1))
            })
        };
        for j in 0..dim {
            features.push(field(j)?);
        }
        let y = field(dim)?;
        match kind {
            TargetKind::Real => real.push(y),
            TargetKind::Class => {
                if y.fract() != 0.0 || !(0.0..=255.0).contains(&y) {
                    return Err(Error::invalid(format!("row {}: class label {y} is not an index", row + 1)));
                }
                class.push(y as u8);
            }
        }
        if has_mask {
            mask.push(field(dim + 1)? != 0.0);
        }
    }
    let targets = match kind {
        TargetKind::Real => Targets::Real(real),
        TargetKind::Class => Targets::Class(class),
    };
    let provenance = Provenance {
        source: format!("csv:{}", path.display()),
        ..Default::default()
    };
    LabeledDataset::new(dim, features, targets, has_mask.then_some(mask), provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{contaminate_regression, generate_regression};

    #[test]
    fn round_trip_regression() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = contaminate_regression(&generate_regression(3, 20, 5).unwrap(), 6).unwrap();
        write_csv(&d, &path).unwrap();
        let back = read_csv(&path, TargetKind::Real).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.targets(), d.targets());
        assert_eq!(back.outlier_mask(), d.outlier_mask());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,x3,y,outlier\n"));
    }

    #[test]
    fn class_targets_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "x1,y\n0.5,3\n1.0,9\n").unwrap();
        let d = read_csv(&path, TargetKind::Class).unwrap();
        assert_eq!(d.class(1), 9);
        assert!(d.outlier_mask().is_none());
        std::fs::write(&path, "x1,y\n0.5,3.5\n").unwrap();
        assert!(read_csv(&path, TargetKind::Class).is_err());
        std::fs::write(&path, "x1,y\nabc,3\n").unwrap();
        assert!(read_csv(&path, TargetKind::Real).is_err());
    }
}
