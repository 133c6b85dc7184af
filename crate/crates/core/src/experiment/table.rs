//! Result tables and their CSV/JSON reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ExperimentKind;

/// Schema tag written into JSON reports.
pub const SCHEMA: &str = "trimfit-report/1";

pub const CSV_HEADER: [&str; 13] = [
    "method", "d", "N", "p", "q", "trial", "seed", "tpr", "fpr", "accuracy", "time_s", "iters", "final_obj",
];

const SUMMARY_HEADER: [&str; 9] = ["method", "d", "N", "p", "q", "metric", "count", "p25", "p50"];

/// One completed run. Rates and accuracy are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub q: usize,
    pub trial: usize,
    pub seed: u64,
    /// Absent when the data has no outliers.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// Test accuracy, for classification data.
    pub accuracy: Option<f64>,
    pub time_s: f64,
    pub iters: usize,
    pub final_obj: f64,
}

impl ResultRow {
    fn record(&self, with_timing: bool) -> Vec<String> {
        vec![
            self.method.clone(),
            self.d.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.q.to_string(),
            self.trial.to_string(),
            self.seed.to_string(),
            opt(self.tpr),
            opt(self.fpr),
            opt(self.accuracy),
            if with_timing { self.time_s.to_string() } else { String::new() },
            self.iters.to_string(),
            self.final_obj.to_string(),
        ]
    }

    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "tpr" => self.tpr,
            "fpr" => self.fpr,
            "accuracy" => self.accuracy,
            "time_s" => Some(self.time_s),
            "iters" => Some(self.iters as f64),
            "final_obj" => Some(self.final_obj),
            _ => None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

const METRICS: [&str; 6] = ["tpr", "fpr", "accuracy", "time_s", "iters", "final_obj"];

/// Quartiles of one metric over the trials of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub q: usize,
    pub metric: String,
    /// Trials with a value for this metric.
    pub count: usize,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub rows: Vec<ResultRow>,
}

/// Percentile of sorted data with linear interpolation between order
/// statistics.
pub fn percentile(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&pct) {
        return None;
    }
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

impl ResultTable {
    /// Copy with every timing value zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> ResultTable {
        let mut t = self.clone();
        for row in &mut t.rows {
            row.time_s = 0.0;
        }
        t
    }

    /// Quartile summaries per configuration and metric, configurations in
    /// order of first appearance. Metrics no row has are skipped.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: Vec<(&ResultRow, Vec<&ResultRow>)> = Vec::new();
        let mut index: BTreeMap<(String, usize, usize, u64, usize), usize> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.method.clone(), row.d, row.n, row.p.to_bits(), row.q);
            let g = *index.entry(key).or_insert_with(|| {
                groups.push((row, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(row);
        }
        let mut out = Vec::new();
        for (head, rows) in groups {
            for metric in METRICS {
                let mut values: Vec<f64> = rows.iter().filter_map(|r| r.metric(metric)).collect();
                if values.is_empty() {
                    continue;
                }
                values.sort_by(f64::total_cmp);
                let q = |pct| percentile(&values, pct).unwrap_or(f64::NAN);
                out.push(SummaryRow {
                    method: head.method.clone(),
                    d: head.d,
                    n: head.n,
                    p: head.p,
                    q: head.q,
                    metric: metric.to_string(),
                    count: values.len(),
                    p25: q(25.0),
                    p50: q(50.0),
                    p75: q(75.0),
                });
            }
        }
        out
    }

    /// Raw rows as CSV; `with_timing = false` blanks the `time_s` column.
    pub fn to_csv(&self, with_timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.record(with_timing))?;
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = SUMMARY_HEADER.to_vec();
        header.push("p75");
        w.write_record(&header)?;
        for s in self.summary() {
            w.write_record([
                s.method,
                s.d.to_string(),
                s.n.to_string(),
                s.p.to_string(),
                s.q.to_string(),
                s.metric,
                s.count.to_string(),
                s.p25.to_string(),
                s.p50.to_string(),
                s.p75.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Report<'a> {
            schema: &'static str,
            kind: ExperimentKind,
            base_seed: u64,
            columns: [&'static str; 13],
            rows: &'a [ResultRow],
            summary: Vec<SummaryRow>,
        }
        let report = Report {
            schema: SCHEMA,
            kind: self.kind,
            base_seed: self.base_seed,
            columns: CSV_HEADER,
            rows: &self.rows,
            summary: self.summary(),
        };
        Ok(serde_json::to_string_pretty(&report)?)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv is not UTF-8: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// `<dir>/<stem>_summary.csv` next to `path`.
fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_summary.csv"))
}

/// Write `table` to `path`. CSV reports put the raw rows in `path` and the
/// quartile summary in a sibling `<stem>_summary.csv`; JSON reports hold
/// both. Returns the files written.
pub fn emit_report(table: &ResultTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::invalid("cannot report an empty table"));
    }
    let path = path.as_ref();
    let write = |p: &Path, text: String| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    match format {
        ReportFormat::Csv => {
            let summary = summary_path(path);
            write(path, table.to_csv(true)?)?;
            write(&summary, table.summary_csv()?)?;
            Ok(vec![path.to_path_buf(), summary])
        }
        ReportFormat::Json => {
            write(path, table.to_json()?)?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, tpr: Option<f64>) -> ResultRow {
        ResultRow {
            method: "SMS".into(),
            d: 5,
            n: 500,
            p: 0.4,
            q: 300,
            trial,
            seed: 10 + trial as u64,
            tpr,
            fpr: Some(0.0),
            accuracy: None,
            time_s: 0.25,
            iters: 100 + trial,
            final_obj: 0.5,
        }
    }

    fn table(rows: Vec<ResultRow>) -> ResultTable {
        ResultTable {
            kind: ExperimentKind::RegressionGrid,
            base_seed: 10,
            rows,
        }
    }

    #[test]
    fn one_row_csv_has_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let files = emit_report(&table(vec![row(0, Some(100.0))]), ReportFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "method,d,N,p,q,trial,seed,tpr,fpr,accuracy,time_s,iters,final_obj");
        assert_eq!(lines[1], "SMS,5,500,0.4,300,0,10,100,0,,0.25,100,0.5");
        assert_eq!(files[1], dir.path().join("out_summary.csv"));
        assert!(files[1].is_file());
    }

    #[test]
    fn reemitting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(vec![row(0, Some(100.0)), row(1, None)]);
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let a = dir.path().join("a.out");
            let b = dir.path().join("b.out");
            emit_report(&t, format, &a).unwrap();
            emit_report(&t, format, &b).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    #[test]
    fn median_of_three() {
        let t = table(vec![row(0, Some(1.0)), row(1, Some(2.0)), row(2, Some(3.0))]);
        let s = t.summary();
        let tpr = s.iter().find(|s| s.metric == "tpr").unwrap();
        assert_eq!((tpr.count, tpr.p25, tpr.p50, tpr.p75), (3, 1.5, 2.0, 2.5));
        assert!(s.iter().all(|s| s.metric != "accuracy"));
    }

    #[test]
    fn blank_tpr_is_skipped() {
        let t = table(vec![row(0, None), row(1, Some(50.0))]);
        let tpr = t.summary().into_iter().find(|s| s.metric == "tpr").unwrap();
        assert_eq!((tpr.count, tpr.p50), (1, 50.0));
        assert!(t.to_csv(true).unwrap().lines().nth(1).unwrap().contains(",0,10,,0,,"));
    }

    #[test]
    fn json_carries_schema_and_summary() {
        let t = table(vec![row(0, Some(100.0))]);
        let v: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["rows"][0]["N"], 500);
        assert_eq!(v["summary"][0]["metric"], "tpr");
    }

    #[test]
    fn empty_table_and_bad_path() {
        assert!(emit_report(&table(vec![]), ReportFormat::Json, "x.json").is_err());
        let err = emit_report(&table(vec![row(0, None)]), ReportFormat::Csv, "/nonexistent/dir/x.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&[4.0], 75.0), Some(4.0));
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 25.0), Some(1.75));
    }
}
