//! Report files: CSV tables, loss curves and an aligned text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{DissectRow, EvalRow, SigRow};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const OOS_FILE: &str = "table_oos.csv";
pub const SIG_FILE: &str = "table_sig.csv";
pub const DISSECT_FILE: &str = "table_dissect.csv";
pub const CURVES_FILE: &str = "loss_curves.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosRecord {
    pub model: String,
    pub ins_r2: f64,
    pub vld_r2: f64,
    pub test_r2: f64,
}

impl From<&EvalRow> for OosRecord {
    fn from(r: &EvalRow) -> Self {
        OosRecord {
            model: r.model.clone(),
            ins_r2: r.ins_r2,
            vld_r2: r.vld_r2,
            test_r2: r.test_r2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: String,
    pub epoch: usize,
    pub loss: f64,
}

/// A training-loss series, or a constant least-squares reference line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub model: String,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub oos: Vec<EvalRow>,
    pub significance: Vec<SigRow>,
    pub dissect: Vec<DissectRow>,
    pub curves: Vec<LossCurve>,
    /// Benchmark OLS training losses drawn as flat lines.
    pub references: Vec<(String, f64)>,
}

impl Report {
    /// Curve points with each reference repeated at every epoch of the
    /// longest curve.
    pub fn curve_points(&self) -> Vec<CurvePoint> {
        let epochs = self.curves.iter().map(|c| c.losses.len()).max().unwrap_or(0);
        let mut out = Vec::new();
        for c in &self.curves {
            for (e, &loss) in c.losses.iter().enumerate() {
                out.push(CurvePoint {
                    model: c.model.clone(),
                    epoch: e + 1,
                    loss,
                });
            }
        }
        for (name, loss) in &self.references {
            for e in 0..epochs.max(1) {
                out.push(CurvePoint {
                    model: name.clone(),
                    epoch: e + 1,
                    loss: *loss,
                });
            }
        }
        out
    }
}

fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn summary_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Out-of-sample fit (VLD and Test relative to the historical average)");
    let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>10}", "model", "INS R2", "VLD R2", "Test R2");
    for r in &report.oos {
        let _ = writeln!(s, "{:<20} {:>10.4} {:>10.4} {:>10.4}", r.model, r.ins_r2, r.vld_r2, r.test_r2);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Significant anomaly alphas (|t| > 1.96)");
    let _ = writeln!(s, "{:<20} {:>9} {:>9} {:>9} {:>9}", "model", "anomalies", "INS Sig.", "VLD Sig.", "Test Sig.");
    for r in &report.significance {
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>9} {:>9} {:>9}",
            r.model, r.anomalies, r.ins_sig, r.vld_sig, r.test_sig
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Held-out portfolios");
    let _ = writeln!(s, "{:<16} {:<20} {:>10} {:>10}", "set", "model", "VLD R2", "Test R2");
    for r in &report.dissect {
        let _ = writeln!(s, "{:<16} {:<20} {:>10.4} {:>10.4}", r.set, r.model, r.vld_r2, r.test_r2);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Final training loss");
    for c in &report.curves {
        if let Some(l) = c.losses.last() {
            let _ = writeln!(s, "{:<20} {:>14.8}", c.model, l);
        }
    }
    for (name, l) in &report.references {
        let _ = writeln!(s, "{:<20} {:>14.8}", format!("{name} (OLS)"), l);
    }
    s
}

/// Writes the five report files into `dir`, creating it if needed.
pub fn render_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let oos: Vec<OosRecord> = report.oos.iter().map(OosRecord::from).collect();
    let paths: Vec<PathBuf> = [OOS_FILE, SIG_FILE, DISSECT_FILE, CURVES_FILE, SUMMARY_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_table(&paths[0], &["model", "ins_r2", "vld_r2", "test_r2"], &oos)?;
    write_table(
        &paths[1],
        &["model", "anomalies", "ins_sig", "vld_sig", "test_sig"],
        &report.significance,
    )?;
    write_table(&paths[2], &["set", "model", "vld_r2", "test_r2"], &report.dissect)?;
    write_table(&paths[3], &["model", "epoch", "loss"], &report.curve_points())?;
    std::fs::write(&paths[4], summary_text(report)).map_err(|e| Error::io(&paths[4], e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        Report {
            oos: vec![EvalRow {
                model: "CAPM+DL".into(),
                ins_r2: 0.91,
                vld_r2: 0.1234567890123,
                test_r2: -0.05,
                vld_alpha: vec![0.001],
                test_alpha: vec![0.002],
                vld_baseline_alpha: vec![0.003],
                test_baseline_alpha: vec![0.004],
            }],
            significance: vec![SigRow {
                model: "CAPM".into(),
                anomalies: 200,
                ins_sig: 11,
                vld_sig: 9,
                test_sig: 10,
            }],
            dissect: vec![DissectRow {
                set: "holdout".into(),
                model: "CAPM+DL".into(),
                vld_r2: 0.2,
                test_r2: 1.0 / 3.0,
            }],
            curves: vec![LossCurve {
                model: "CAPM+DL".into(),
                losses: vec![0.003, 0.002, 0.0015],
            }],
            references: vec![("CAPM".into(), 0.0025)],
        }
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        render_report(&Report::default(), dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join(OOS_FILE)).unwrap(), "model,ins_r2,vld_r2,test_r2\n");
        assert_eq!(std::fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap(), "model,epoch,loss\n");
        assert_eq!(
            std::fs::read_to_string(dir.path().join(SIG_FILE)).unwrap(),
            "model,anomalies,ins_sig,vld_sig,test_sig\n"
        );
        assert!(dir.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample();
        render_report(&report, dir.path()).unwrap();
        let oos: Vec<OosRecord> = read_table(dir.path().join(OOS_FILE)).unwrap();
        assert_eq!(oos, vec![OosRecord::from(&report.oos[0])]);
        let sig: Vec<SigRow> = read_table(dir.path().join(SIG_FILE)).unwrap();
        assert_eq!(sig, report.significance);
        let dissect: Vec<DissectRow> = read_table(dir.path().join(DISSECT_FILE)).unwrap();
        assert_eq!(dissect, report.dissect);
        let curves: Vec<CurvePoint> = read_table(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(curves, report.curve_points());
    }

    #[test]
    fn reference_lines_are_flat() {
        let points = sample().curve_points();
        let capm: Vec<&CurvePoint> = points.iter().filter(|p| p.model == "CAPM").collect();
        assert_eq!(capm.len(), 3);
        assert!(capm.iter().all(|p| p.loss == 0.0025));
    }
}
