use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backtest::{BacktestReport, Performance};
use super::ic_stats::IcStats;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSummary {
    #[serde(with = "crate::stats::nan_as_null")]
    pub mean: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub std: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub ir: f64,
    pub days: usize,
    pub skipped_days: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub performance: Performance,
    pub final_equity: f64,
    pub periods: usize,
    pub total_turnover: f64,
    pub total_commission: f64,
    pub ruined: bool,
}

/// Evaluation of one factor over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub factor: String,
    pub split: String,
    pub ic: IcSummary,
    pub backtest: Option<BacktestSummary>,
}

impl EvalReport {
    pub fn new(factor: impl Into<String>, split: impl Into<String>, ic: &IcStats, bt: Option<&BacktestReport>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            factor: factor.into(),
            split: split.into(),
            ic: IcSummary {
                mean: ic.mean,
                std: ic.std,
                ir: ic.ir,
                days: ic.daily.len(),
                skipped_days: ic.skipped.len(),
            },
            backtest: bt.map(|b| BacktestSummary {
                performance: b.performance.clone(),
                final_equity: b.final_equity(),
                periods: b.periods.len(),
                total_turnover: b.total_turnover,
                total_commission: b.total_commission,
                ruined: b.ruined,
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Parse(format!("report schema {} unsupported", r.schema_version)));
        }
        Ok(r)
    }
}

/// Square matrix with a header row and column of names.
pub fn write_distance_csv(path: impl AsRef<Path>, names: &[String], matrix: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let n = names.len();
    if matrix.len() != n * n {
        return Err(Error::Shape(format!("{} entries for {n} names", matrix.len())));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(matrix[i * n..(i + 1) * n].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
