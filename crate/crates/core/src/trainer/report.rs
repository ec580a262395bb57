use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Mode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub epochs: usize,
    pub train_seconds: f64,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub train_images: usize,
    pub test_images: usize,
    pub epochs: Vec<EpochMetrics>,
    pub totals: Totals,
    pub corpus_bytes: u64,
    pub system: String,
}

impl ExperimentReport {
    pub fn new(
        mode: Mode,
        seed: u64,
        train_images: usize,
        test_images: usize,
        epochs: Vec<EpochMetrics>,
        corpus_bytes: u64,
    ) -> Self {
        let last = epochs.last();
        let totals = Totals {
            epochs: epochs.len(),
            train_seconds: epochs.iter().map(|e| e.wall_seconds).sum(),
            final_train_loss: last.map_or(f64::NAN, |e| e.train_loss),
            final_test_accuracy: last.map_or(0.0, |e| e.test_accuracy),
        };
        ExperimentReport {
            mode,
            seed,
            train_images,
            test_images,
            epochs,
            totals,
            corpus_bytes,
            system: system_descriptor(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc,wall_seconds\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy, e.wall_seconds
            )
            .unwrap();
        }
        out
    }
}

/// CPU model, logical core count and memory, best effort.
pub fn system_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mem = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("MemTotal"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|kb| kb.parse::<u64>().ok())
    });
    match mem {
        Some(kb) => format!("{cpu}, {cores} threads, {} GB", (kb as f64 / 1_048_576.0).round()),
        None => format!("{cpu}, {cores} threads"),
    }
}

fn csv_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Write the JSON report at `path` and the per-epoch CSV beside it (`.csv` extension).
pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let csv = csv_path(path);
    if csv == path {
        return Err(Error::param(format!(
            "report path {} must not itself end in .csv",
            path.display()
        )));
    }
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(csv)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Side-by-side raw vs canny comparison in the layout of an accuracy / time / size table.
pub fn compare_reports(reports: &[ExperimentReport]) -> String {
    let modes = [Mode::Raw, Mode::Canny];
    let cols: Vec<Vec<&ExperimentReport>> = modes
        .iter()
        .map(|m| reports.iter().filter(|r| r.mode == *m).collect())
        .collect();
    let rows = cols.iter().map(Vec::len).max().unwrap_or(0);
    let cell = |col: &[&ExperimentReport], i: usize, f: &dyn Fn(&ExperimentReport) -> String| {
        col.get(i).map_or_else(|| "-".to_string(), |r| f(r))
    };
    let mut out = String::new();
    writeln!(out, "{:<28}{:>16}{:>16}", "", "Raw", "CANNY").unwrap();
    let mut section = |title: &str, f: &dyn Fn(&ExperimentReport) -> String| {
        for i in 0..rows.max(1) {
            let label = if i == 0 { title } else { "" };
            writeln!(
                out,
                "{:<28}{:>16}{:>16}",
                label,
                cell(&cols[0], i, f),
                cell(&cols[1], i, f)
            )
            .unwrap();
        }
    };
    section("Accuracy (per run)", &|r| {
        format!("{:.2}%", 100.0 * r.totals.final_test_accuracy)
    });
    section("Training time (seconds)", &|r| format!("{:.0}s", r.totals.train_seconds));
    section("Image size (megabytes)", &|r| {
        format!("{:.1} MB", r.corpus_bytes as f64 / 1e6)
    });
    let mean_acc = |col: &[&ExperimentReport]| {
        if col.is_empty() {
            "-".to_string()
        } else {
            let m = col.iter().map(|r| r.totals.final_test_accuracy).sum::<f64>() / col.len() as f64;
            format!("{:.2}%", 100.0 * m)
        }
    };
    writeln!(out, "{:<28}{:>16}{:>16}", "Mean accuracy", mean_acc(&cols[0]), mean_acc(&cols[1])).unwrap();
    let first = reports.first();
    let epochs = first.map_or("-".into(), |r| r.totals.epochs.to_string());
    let images = first.map_or("-".into(), |r| format!("{} images", r.train_images + r.test_images));
    writeln!(out, "{:<28}{:>16}", "Epoch number", epochs).unwrap();
    writeln!(out, "{:<28}{:>16}", "Image numbers", images).unwrap();
    if let Some(r) = first {
        writeln!(out, "{:<28}{}", "System", r.system).unwrap();
    }
    let raw_bytes = cols[0].first().map(|r| r.corpus_bytes);
    let canny_bytes = cols[1].first().map(|r| r.corpus_bytes);
    if let (Some(raw), Some(canny)) = (raw_bytes, canny_bytes) {
        if raw > 0 {
            writeln!(out, "{:<28}{:.3}", "Canny / raw size ratio", canny as f64 / raw as f64).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(n: usize) -> Vec<EpochMetrics> {
        (1..=n)
            .map(|e| EpochMetrics {
                epoch: e,
                train_loss: 1.0 / e as f64,
                train_accuracy: 0.5 + 0.05 * e as f64,
                test_accuracy: 0.5 + 0.04 * e as f64,
                wall_seconds: 10.0 + e as f64 * 0.1,
            })
            .collect()
    }

    #[test]
    fn csv_rows_and_totals() {
        let r = ExperimentReport::new(Mode::Raw, 42, 80, 20, metrics(5), 1234);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "epoch,train_loss,train_acc,test_acc,wall_seconds");
        let col_sum: f64 = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap())
            .sum();
        assert_eq!(col_sum, r.totals.train_seconds);
        assert_eq!(r.totals.epochs, 5);
        assert_eq!(r.totals.final_test_accuracy, r.epochs[4].test_accuracy);
    }

    #[test]
    fn raw_and_canny_share_schema() {
        let a = serde_json::to_value(ExperimentReport::new(Mode::Raw, 1, 8, 2, metrics(2), 10)).unwrap();
        let b = serde_json::to_value(ExperimentReport::new(Mode::Canny, 1, 8, 2, metrics(2), 5)).unwrap();
        let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
        assert_eq!(a["mode"], "raw");
        assert_eq!(b["mode"], "canny");
        for k in ["mode", "epochs", "totals", "corpus_bytes", "system"] {
            assert!(a.get(k).is_some(), "missing {k}");
        }
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let r = ExperimentReport::new(Mode::Canny, 3, 8, 2, metrics(3), 99);
        let path = dir.path().join("run.json");
        let csv = write_report(&r, &path).unwrap();
        assert_eq!(csv, dir.path().join("run.csv"));
        assert_eq!(read_report(&path).unwrap(), r);
        assert!(write_report(&r, dir.path().join("missing/x.json")).is_err());
    }

    #[test]
    fn comparison_table_lists_both_modes() {
        let raw = ExperimentReport::new(Mode::Raw, 1, 80, 20, metrics(5), 334_000_000);
        let canny = ExperimentReport::new(Mode::Canny, 1, 80, 20, metrics(5), 139_000_000);
        let table = compare_reports(&[raw, canny]);
        assert!(table.contains("Raw") && table.contains("CANNY"));
        assert!(table.contains("334.0 MB") && table.contains("139.0 MB"));
        assert!(table.contains("70.00%"));
        assert!(table.contains("0.416"));
    }
}
