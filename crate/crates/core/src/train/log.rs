use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,precision,recall,f1,lr";

/// Metrics for one completed epoch. Optional cells are left empty in the
/// CSV (for example accuracy on a regression task).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    /// Not written to the CSV, which must be reproducible byte for byte.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub rows: Vec<EpochRow>,
}

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v:?}");
    }
}

impl EpochLog {
    pub fn push(&mut self, row: EpochRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.epoch < row.epoch));
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.epoch);
            cell(&mut out, Some(r.train_loss));
            cell(&mut out, Some(r.val_loss));
            cell(&mut out, r.train_acc);
            cell(&mut out, r.val_acc);
            cell(&mut out, r.precision);
            cell(&mut out, r.recall);
            cell(&mut out, r.f1);
            cell(&mut out, Some(r.lr));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}
