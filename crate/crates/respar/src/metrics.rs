//! Per-epoch metrics CSV and the run summary printed by `report`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};
use crate::runtime::speedup_ratio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Loss of a full serial forward pass over the training set.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub max_violation: f64,
    pub beta: f64,
    pub lr: f64,
    pub epoch_seconds: f64,
}

pub const HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "test_accuracy",
    "max_violation",
    "beta",
    "lr",
    "epoch_seconds",
];

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> HarnessResult<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> HarnessResult<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(HarnessError::Data(format!(
            "unexpected metrics header {header:?}"
        )));
    }
    let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

pub fn save_metrics(path: &Path, rows: &[MetricsRow]) -> HarnessResult<()> {
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_metrics(std::io::BufWriter::new(f), rows)
}

pub fn load_metrics(path: &Path) -> HarnessResult<Vec<MetricsRow>> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_metrics(std::io::BufReader::new(f))
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub epochs: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Training-loop wall time; evaluation passes are not included.
    pub train_seconds: f64,
    pub speedup: Option<f64>,
}

impl Summary {
    pub fn from_rows(rows: &[MetricsRow]) -> HarnessResult<Self> {
        let last = rows
            .last()
            .ok_or_else(|| HarnessError::Data("no metrics rows".into()))?;
        Ok(Self {
            epochs: rows.len(),
            train_loss: last.train_loss,
            test_accuracy: last.test_accuracy,
            train_seconds: rows.iter().map(|r| r.epoch_seconds).sum(),
            speedup: None,
        })
    }

    /// Adds the speedup against a serial reference run of equal length.
    pub fn with_reference(mut self, serial: &Summary) -> HarnessResult<Self> {
        if serial.epochs != self.epochs {
            return Err(HarnessError::Data(format!(
                "reference covers {} epochs, run covers {}",
                serial.epochs, self.epochs
            )));
        }
        self.speedup = Some(speedup_ratio(serial.train_seconds, self.train_seconds)?);
        Ok(self)
    }

    pub fn table_header() -> &'static str {
        "epochs  train loss  test acc.  runtime (s)  speedup"
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let speedup = self
            .speedup
            .map_or_else(|| "-".to_string(), |s| format!("{s:.2}"));
        write!(
            f,
            "{:>6}  {:>10.1e}  {:>8.1}%  {:>11.2}  {:>7}",
            self.epochs,
            self.train_loss,
            100.0 * self.test_accuracy,
            self.train_seconds,
            speedup
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricsRow> {
        (0..3)
            .map(|e| MetricsRow {
                epoch: e,
                train_loss: 1.0 / (e as f64 + 3.0),
                test_accuracy: 0.1 * e as f64 + 1.0 / 7.0,
                max_violation: 1e-300 * e as f64,
                beta: 10f64.powi(e as i32),
                lr: 0.1,
                epoch_seconds: std::f64::consts::PI * e as f64,
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .starts_with("epoch,train_loss,test_accuracy,max_violation,beta,lr,epoch_seconds\n"));
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows());
    }

    #[test]
    fn empty_file_keeps_header() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert!(read_metrics(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_metrics("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn summary_uses_last_row_and_total_time() {
        let s = Summary::from_rows(&rows()).unwrap();
        assert_eq!(s.epochs, 3);
        assert_eq!(s.train_loss, 0.2);
        assert!((s.train_seconds - 3.0 * std::f64::consts::PI).abs() < 1e-12);
        let serial = Summary {
            train_seconds: 2.0 * s.train_seconds,
            ..s.clone()
        };
        assert!((s.clone().with_reference(&serial).unwrap().speedup.unwrap() - 2.0).abs() < 1e-12);
        let short = Summary {
            epochs: 2,
            ..serial
        };
        assert!(s.with_reference(&short).is_err());
        assert!(Summary::from_rows(&[]).is_err());
    }
}
