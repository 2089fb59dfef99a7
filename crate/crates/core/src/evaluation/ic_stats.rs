use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ic::exact_spearman;
use crate::market::{forward_return, FactorMatrix, PricePanel};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcDay {
    pub day: usize,
    pub ic: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSkip {
    pub day: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcStats {
    pub daily: Vec<IcDay>,
    pub skipped: Vec<IcSkip>,
    pub mean: f64,
    /// Sample standard deviation of the daily series.
    pub std: f64,
    /// `mean / std`; 0 when the series is flat.
    pub ir: f64,
}

impl IcStats {
    pub fn series(&self) -> Vec<f64> {
        self.daily.iter().map(|d| d.ic).collect()
    }
}

/// Daily exact Spearman of `factor` against `horizon`-day forward returns.
/// Only days whose label resolves inside `days` are scored.
pub fn ic_stats(factor: &FactorMatrix, panel: &PricePanel, days: Range<usize>, horizon: usize) -> Result<IcStats> {
    if factor.n_days() != panel.n_days() || factor.n_symbols() != panel.n_symbols() {
        return Err(invalid("factor and panel axes differ"));
    }
    if days.end > panel.n_days() {
        return Err(invalid(format!("day range ends at {} beyond {} panel days", days.end, panel.n_days())));
    }
    let mut daily = Vec::new();
    let mut skipped = Vec::new();
    for day in days.start..days.end.saturating_sub(horizon) {
        let rets = forward_return(panel, day, horizon)?;
        let (x, y): (Vec<f64>, Vec<f64>) = rets
            .iter()
            .enumerate()
            .filter_map(|(s, r)| Some((factor.get(day, s)?, (*r)?)))
            .unzip();
        if x.len() < 3 {
            skipped.push(IcSkip {
                day,
                reason: format!("{} valid symbols", x.len()),
            });
            continue;
        }
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            skipped.push(IcSkip {
                day,
                reason: "constant cross-section".into(),
            });
            continue;
        }
        daily.push(IcDay {
            day,
            ic: exact_spearman(&x, &y)?,
            n: x.len(),
        });
    }
    let series: Vec<f64> = daily.iter().map(|d| d.ic).collect();
    let mean = stats::mean(&series);
    let std = if series.len() > 1 { stats::std_sample(&series) } else { 0.0 };
    let ir = if std > 0.0 { mean / std } else { 0.0 };
    Ok(IcStats {
        daily,
        skipped,
        mean,
        std,
        ir,
    })
}
