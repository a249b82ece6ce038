//! Evaluation metrics and error forensics: macro-F1, confusion matrix,
//! most frequent error types, description-grouped loss statistics with a
//! one-sided Welch test, and report export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::HistogramBucket;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sample {which} has {n} values; at least 2 are required")]
    SampleTooSmall { which: &'static str, n: usize },
    #[error("both samples have zero variance")]
    DegenerateSamples,
    #[error("group {0:?} is empty")]
    EmptyGroup(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn check_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(AnalysisError::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    match truth.iter().chain(pred).find(|&&l| l >= k) {
        Some(&label) => Err(AnalysisError::LabelOutOfRange { label, k }),
        None => Ok(()),
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn off_diagonal(&self) -> u64 {
        self.total() - (0..self.k).map(|i| self.counts[i][i]).sum::<u64>()
    }

    /// F1 per class; a class never predicted and never present scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let actual: u64 = self.counts[c].iter().sum();
                let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
                let denom = (actual + predicted) as f64;
                // 2PR/(P+R) simplifies to 2TP/(actual + predicted)
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        self.per_class_f1().iter().sum::<f64>() / self.k as f64
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_labels(truth, pred, k)?;
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(pred) {
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

pub fn macro_f1(truth: &[usize], pred: &[usize], k: usize) -> Result<f64> {
    Ok(confusion(truth, pred, k)?.macro_f1())
}

/// One off-diagonal confusion cell: items of class `actual` predicted as
/// `predicted`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorType {
    pub predicted: usize,
    pub actual: usize,
    pub count: u64,
}

/// The `k` most frequent nonzero off-diagonal cells, by descending count
/// then ascending `(predicted, actual)`.
pub fn top_error_types(cm: &ConfusionMatrix, k: usize) -> Vec<ErrorType> {
    let mut cells: Vec<ErrorType> = (0..cm.k)
        .flat_map(|actual| (0..cm.k).map(move |predicted| (actual, predicted)))
        .filter(|(a, p)| a != p && cm.counts[*a][*p] > 0)
        .map(|(actual, predicted)| ErrorType {
            predicted,
            actual,
            count: cm.counts[actual][predicted],
        })
        .collect();
    cells.sort_by(|a, b| b.count.cmp(&a.count).then((a.predicted, a.actual).cmp(&(b.predicted, b.actual))));
    cells.truncate(k);
    cells
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// `P(T_ν ≥ t)`.
pub fn t_upper_tail(t: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    if t >= 0.0 {
        dist.sf(t)
    } else {
        1.0 - dist.sf(-t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// `P(T_dof ≥ t)`, the one-sided p-value for `mean1 > mean2`.
    #[serde(rename = "p")]
    pub p_one_sided: f64,
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom; unbiased (`n − 1`) variances.
pub fn welch_t(x1: &[f64], x2: &[f64]) -> Result<WelchResult> {
    for (which, x) in [("x1", x1), ("x2", x2)] {
        if x.len() < 2 {
            return Err(AnalysisError::SampleTooSmall { which, n: x.len() });
        }
    }
    let (m1, v1) = mean_var(x1);
    let (m2, v2) = mean_var(x2);
    if v1 == 0.0 && v2 == 0.0 {
        return Err(AnalysisError::DegenerateSamples);
    }
    let (n1, n2) = (x1.len() as f64, x2.len() as f64);
    let (s1, s2) = (v1 / n1, v2 / n2);
    let t = (m1 - m2) / (s1 + s2).sqrt();
    let dof = (s1 + s2).powi(2) / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
    Ok(WelchResult {
        t,
        dof,
        p_one_sided: t_upper_tail(t, dof),
        mean1: m1,
        mean2: m2,
        var1: v1,
        var2: v2,
        n1: x1.len(),
        n2: x2.len(),
    })
}

/// Pooled-variance Student t statistic and its `n1 + n2 − 2` degrees of freedom.
pub fn student_t(x1: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
    for (which, x) in [("x1", x1), ("x2", x2)] {
        if x.len() < 2 {
            return Err(AnalysisError::SampleTooSmall { which, n: x.len() });
        }
    }
    let (m1, v1) = mean_var(x1);
    let (m2, v2) = mean_var(x2);
    let (n1, n2) = (x1.len() as f64, x2.len() as f64);
    let dof = n1 + n2 - 2.0;
    let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / dof;
    if pooled == 0.0 {
        return Err(AnalysisError::DegenerateSamples);
    }
    Ok(((m1 - m2) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), dof))
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot summary of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl GroupStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(GroupStats {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLossStats {
    pub desc: GroupStats,
    pub nodesc: GroupStats,
    /// Group 1 is the no-description group, so `t > 0` when those losses are higher.
    pub welch: WelchResult,
}

pub fn group_loss_stats(losses: &[f64], has_description: &[bool]) -> Result<GroupLossStats> {
    if losses.len() != has_description.len() {
        return Err(AnalysisError::LengthMismatch {
            left: losses.len(),
            right: has_description.len(),
        });
    }
    let pick = |flag: bool| -> Vec<f64> {
        losses
            .iter()
            .zip(has_description)
            .filter(|(_, &h)| h == flag)
            .map(|(l, _)| *l)
            .collect()
    };
    let desc = pick(true);
    let nodesc = pick(false);
    let desc_stats = GroupStats::from_values(&desc).ok_or(AnalysisError::EmptyGroup("description"))?;
    let nodesc_stats = GroupStats::from_values(&nodesc).ok_or(AnalysisError::EmptyGroup("no_description"))?;
    Ok(GroupLossStats {
        desc: desc_stats,
        nodesc: nodesc_stats,
        welch: welch_t(&nodesc, &desc)?,
    })
}

/// Contents of `report.json`. CSV file names are relative to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion_csv: String,
    pub top_errors: Vec<ErrorType>,
    pub group_stats: Option<GroupLossStats>,
    pub histogram: Vec<HistogramBucket>,
}

impl Default for Report {
    fn default() -> Self {
        Report {
            macro_f1: 0.0,
            per_class_f1: Vec::new(),
            confusion_csv: CONFUSION_CSV.into(),
            top_errors: Vec::new(),
            group_stats: None,
            histogram: Vec::new(),
        }
    }
}

pub const REPORT_JSON: &str = "report.json";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const TOP_ERRORS_CSV: &str = "top_errors.csv";
pub const GROUP_STATS_CSV: &str = "group_stats.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| AnalysisError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let err = |source| AnalysisError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json` and the four CSV tables into `dir`; returns the
/// written paths.
pub fn export_report(dir: &Path, report: &Report, cm: &ConfusionMatrix) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| AnalysisError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let path = dir.join(&report.confusion_csv);
    let header: Vec<String> = std::iter::once("true".to_string())
        .chain((0..cm.k).map(|c| format!("pred_{c}")))
        .collect();
    let rows: Vec<Vec<String>> = cm
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(u64::to_string)).collect())
        .collect();
    write_rows(&path, &header, &rows)?;
    written.push(path);

    let path = dir.join(TOP_ERRORS_CSV);
    let rows: Vec<Vec<String>> = report
        .top_errors
        .iter()
        .map(|e| vec![e.predicted.to_string(), e.actual.to_string(), e.count.to_string()])
        .collect();
    write_rows(&path, &["predicted".into(), "actual".into(), "count".into()], &rows)?;
    written.push(path);

    let path = dir.join(GROUP_STATS_CSV);
    let header: Vec<String> = ["group", "count", "mean", "min", "q1", "median", "q3", "max"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .group_stats
        .iter()
        .flat_map(|g| [("description", g.desc), ("no_description", g.nodesc)])
        .map(|(name, s)| {
            vec![
                name.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
            ]
        })
        .collect();
    write_rows(&path, &header, &rows)?;
    written.push(path);

    let path = dir.join(HISTOGRAM_CSV);
    let rows: Vec<Vec<String>> = report
        .histogram
        .iter()
        .map(|b| vec![b.start.to_string(), b.end.to_string(), b.count.to_string()])
        .collect();
    write_rows(&path, &["start".into(), "end".into(), "count".into()], &rows)?;
    written.push(path);

    let path = dir.join(REPORT_JSON);
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, json).map_err(|source| AnalysisError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(written)
}

/// Reads back what [`export_report`] wrote.
pub fn load_report(dir: &Path) -> Result<(Report, ConfusionMatrix)> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|source| AnalysisError::Io {
        path: path.clone(),
        source,
    })?;
    let report: Report = serde_json::from_str(&text).map_err(|source| AnalysisError::Json { path, source })?;

    let path = dir.join(&report.confusion_csv);
    let mut reader = csv::Reader::from_path(&path).map_err(|source| AnalysisError::Csv {
        path: path.clone(),
        source,
    })?;
    let mut counts = Vec::new();
    for rec in reader.deserialize::<Vec<u64>>() {
        let row = rec.map_err(|source| AnalysisError::Csv {
            path: path.clone(),
            source,
        })?;
        counts.push(row[1..].to_vec());
    }
    let cm = ConfusionMatrix { k: counts.len(), counts };
    Ok((report, cm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[1, 0, 0, 1], 2).unwrap(), 0.0);
        let f = macro_f1(&[0, 0, 1, 2], &[0, 1, 1, 1], 3).unwrap();
        assert!((f - (2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!((f - 0.3889).abs() < 1e-4);
        assert!(matches!(
            macro_f1(&[0, 3], &[0, 0], 3),
            Err(AnalysisError::LabelOutOfRange { label: 3, k: 3 })
        ));
        assert!(macro_f1(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(confusion(&[], &[], 2).unwrap(), ConfusionMatrix::zeros(2));
        let cm = confusion(&[0, 0, 1, 2, 2, 2], &[1, 0, 1, 0, 2, 2], 3).unwrap();
        let rows: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![2, 1, 3]);
    }

    #[test]
    fn top_error_examples() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert!(top_error_types(&cm, 5).is_empty());
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 0], 3).unwrap();
        assert_eq!(
            top_error_types(&cm, 5),
            vec![ErrorType {
                predicted: 0,
                actual: 2,
                count: 1
            }]
        );
    }

    #[test]
    fn welch_fixed_example_against_oracle() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        // frozen from tests/data/gen_welch_oracle.py
        assert!((r.t - -1.7320508075688772).abs() < 1e-9);
        assert!((r.dof - 4.411764705882353).abs() < 1e-9);
        assert!((r.p_one_sided - 0.9242097475773481).abs() < 1e-9);
    }

    #[test]
    fn welch_degenerate_cases() {
        let x = [0.5, 1.5, 2.0, 7.0];
        let r = welch_t(&x, &x).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_one_sided - 0.5).abs() < 1e-12);
        assert!(matches!(welch_t(&[1.0], &x), Err(AnalysisError::SampleTooSmall { which: "x1", n: 1 })));
        assert!(matches!(welch_t(&[1.0, 1.0], &[2.0, 2.0]), Err(AnalysisError::DegenerateSamples)));
    }

    #[test]
    fn welch_equal_sizes_and_variances_reduce_to_student() {
        let x1 = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x2 = [0.0, 3.0, 1.0, 2.0, 4.0]; // same variance as x1
        let w = welch_t(&x1, &x2).unwrap();
        let (t, dof) = student_t(&x1, &x2).unwrap();
        assert!((w.t - t).abs() < 1e-12);
        assert!((w.dof - dof).abs() < 1e-12);
    }

    #[test]
    fn separated_groups_are_significant() {
        let desc: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let nodesc: Vec<f64> = (0..12).map(|i| 1.1 + 0.1 * i as f64 + 0.05 * (i % 3) as f64).collect();
        let losses: Vec<f64> = desc.iter().chain(&nodesc).copied().collect();
        let flags: Vec<bool> = (0..24).map(|i| i < 12).collect();
        let s = group_loss_stats(&losses, &flags).unwrap();
        assert!(s.welch.t > 0.0 && s.welch.p_one_sided < 0.05);
        assert_eq!(s.desc.count, 12);
        assert_eq!(s.nodesc.count, 12);

        let same = group_loss_stats(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], &[true, true, true, false, false, false]).unwrap();
        assert_eq!(same.welch.t, 0.0);
        assert_eq!(same.desc, same.nodesc);

        assert!(matches!(
            group_loss_stats(&[1.0, 2.0], &[true, true]),
            Err(AnalysisError::EmptyGroup("no_description"))
        ));
    }

    #[test]
    fn type7_quantiles() {
        let s = GroupStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(GroupStats::from_values(&[5.0]).unwrap().q3, 5.0);
        assert!(GroupStats::from_values(&[]).is_none());
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = [0, 1, 2, 2, 1, 0, 2];
        let pred = [0, 2, 2, 1, 1, 0, 0];
        let cm = confusion(&truth, &pred, 3).unwrap();
        let losses = [0.1, 0.9, 0.2, 1.5, 0.4, 0.3, 2.0];
        let flags = [true, false, true, false, true, true, false];
        let report = Report {
            macro_f1: cm.macro_f1(),
            per_class_f1: cm.per_class_f1(),
            top_errors: top_error_types(&cm, 5),
            group_stats: Some(group_loss_stats(&losses, &flags).unwrap()),
            histogram: crate::data::text_length_histogram(&[3, 4, 9], 2).unwrap(),
            ..Default::default()
        };
        let files = export_report(dir.path(), &report, &cm).unwrap();
        assert_eq!(files.len(), 5);
        let (r2, cm2) = load_report(dir.path()).unwrap();
        assert_eq!(r2, report);
        assert_eq!(cm2, cm);
        let lines = fs::read_to_string(dir.path().join(CONFUSION_CSV)).unwrap();
        assert_eq!(lines.lines().count(), 1 + 3);
        assert_eq!(lines.lines().next().unwrap().split(',').count(), 1 + 3);

        let empty = tempfile::tempdir().unwrap();
        export_report(empty.path(), &Report::default(), &ConfusionMatrix::zeros(0)).unwrap();
        let (r3, _) = load_report(empty.path()).unwrap();
        assert_eq!(r3, Report::default());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
            (1usize..=6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 0..=50)))
        }

        proptest! {
            #[test]
            fn macro_f1_invariances((k, pairs) in labels(), shift in 0usize..6, rot in 0usize..50) {
                let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let f = macro_f1(&truth, &pred, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&f));

                let r = rot % truth.len().max(1);
                let mut t2 = truth.clone();
                let mut p2 = pred.clone();
                t2.rotate_left(r);
                p2.rotate_left(r);
                prop_assert!((macro_f1(&t2, &p2, k).unwrap() - f).abs() < 1e-12);

                let relabel = |v: &[usize]| v.iter().map(|l| (l + shift) % k).collect::<Vec<_>>();
                prop_assert!((macro_f1(&relabel(&truth), &relabel(&pred), k).unwrap() - f).abs() < 1e-12);
            }

            #[test]
            fn top_errors_mass(counts in prop::collection::vec(0u64..20, 25), k in 1usize..30) {
                let cm = ConfusionMatrix { k: 5, counts: counts.chunks(5).map(<[u64]>::to_vec).collect() };
                let top = top_error_types(&cm, k);
                let mass: u64 = top.iter().map(|e| e.count).sum();
                prop_assert!(mass <= cm.off_diagonal());
                if k >= 20 {
                    prop_assert_eq!(mass, cm.off_diagonal());
                }
            }

            #[test]
            fn welch_antisymmetry(
                x1 in prop::collection::vec(-10.0f64..10.0, 2..30),
                x2 in prop::collection::vec(-10.0f64..10.0, 2..30),
            ) {
                let a = welch_t(&x1, &x2).unwrap();
                let b = welch_t(&x2, &x1).unwrap();
                prop_assert_eq!(a.t, -b.t);
                prop_assert!((a.p_one_sided - (1.0 - b.p_one_sided)).abs() < 1e-12);
                prop_assert!(a.dof > 0.0 && (0.0..=1.0).contains(&a.p_one_sided));
            }

            #[test]
            fn p_decreases_with_t(dof in 1.0f64..300.0, t in 0.0f64..8.0, dt in 0.01f64..2.0) {
                prop_assert!(t_upper_tail(t + dt, dof) <= t_upper_tail(t, dof));
            }
        }
    }
}
