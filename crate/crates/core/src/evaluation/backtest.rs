use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{forward_return, FactorMatrix, PricePanel};
use crate::stats;

pub const DEFAULT_COMMISSION: f64 = 0.003;
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BacktestMode {
    /// Long the top quantile, short the bottom quantile, equal weights.
    LongShort,
    /// Long the top quantile against an equal-weight benchmark of all valid names.
    LongMinusBenchmark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Holding period and rebalance spacing in days.
    pub horizon: usize,
    /// Fraction of valid names in each leg.
    pub quantile: f64,
    /// Charged on traded notional, both buys and sells.
    pub commission: f64,
    pub mode: BacktestMode,
    pub initial_equity: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            quantile: 0.2,
            commission: DEFAULT_COMMISSION,
            mode: BacktestMode::LongShort,
            initial_equity: 1.0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(invalid("horizon must be at least 1"));
        }
        if !(self.quantile > 0.0 && self.quantile <= 0.5) {
            return Err(invalid("quantile must lie in (0, 0.5]"));
        }
        if !(0.0..1.0).contains(&self.commission) {
            return Err(invalid("commission must lie in [0, 1)"));
        }
        if !(self.initial_equity > 0.0) {
            return Err(invalid("initial equity must be positive"));
        }
        Ok(())
    }

    pub fn periods_per_year(&self) -> f64 {
        TRADING_DAYS_PER_YEAR / self.horizon as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub day: usize,
    pub date: NaiveDate,
    /// Portfolio return before costs.
    pub gross_return: f64,
    /// Sum of absolute weight changes at the rebalance.
    pub turnover: f64,
    /// `commission * turnover * equity_before`.
    pub commission_paid: f64,
    pub net_return: f64,
    pub equity_before: f64,
    pub equity_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    #[serde(with = "crate::stats::nan_as_null")]
    pub cumulative_return: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub annualized_return: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub max_drawdown: f64,
    #[serde(with = "crate::stats::nan_as_null")]
    pub sharpe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub initial_equity: f64,
    pub periods: Vec<Period>,
    pub skipped_days: Vec<usize>,
    pub performance: Performance,
    pub total_turnover: f64,
    pub total_commission: f64,
    /// Equity hit zero and trading stopped.
    pub ruined: bool,
}

impl BacktestReport {
    pub fn final_equity(&self) -> f64 {
        self.periods.last().map_or(self.initial_equity, |p| p.equity_after)
    }

    pub fn equity_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_equity)
            .chain(self.periods.iter().map(|p| p.equity_after))
            .collect()
    }

    pub fn write_equity_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "gross_return", "turnover", "commission", "net_return", "equity"])
            ?;
        for p in &self.periods {
            w.write_record([
                p.date.to_string(),
                p.gross_return.to_string(),
                p.turnover.to_string(),
                p.commission_paid.to_string(),
                p.net_return.to_string(),
                p.equity_after.to_string(),
            ])
            ?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Metrics of a sequence of per-period net returns compounded from 1.
/// Sharpe uses the sample standard deviation and is 0 for a flat series.
pub fn performance(returns: &[f64], periods_per_year: f64) -> Performance {
    let mut equity = 1.0;
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for r in returns {
        equity *= 1.0 + r;
        peak = peak.max(equity);
        mdd = mdd.max(1.0 - equity / peak);
    }
    let n = returns.len();
    let annualized = if n > 0 && equity > 0.0 {
        equity.powf(periods_per_year / n as f64) - 1.0
    } else if n > 0 {
        -1.0
    } else {
        0.0
    };
    let sd = if n > 1 { stats::std_sample(returns) } else { 0.0 };
    let sharpe = if sd > 0.0 { stats::mean(returns) / sd * periods_per_year.sqrt() } else { 0.0 };
    Performance {
        cumulative_return: equity - 1.0,
        annualized_return: annualized,
        max_drawdown: mdd.clamp(0.0, 1.0),
        sharpe,
    }
}

/// Quantile portfolio rebalanced every `horizon` days inside `days`; each
/// holding period must end inside the range. Costs are charged at the
/// rebalance on the change in target weights (no drift between rebalances).
pub fn backtest(factor: &FactorMatrix, panel: &PricePanel, days: Range<usize>, cfg: &BacktestConfig) -> Result<BacktestReport> {
    cfg.validate()?;
    if factor.n_days() != panel.n_days() || factor.n_symbols() != panel.n_symbols() {
        return Err(invalid("factor and panel axes differ"));
    }
    if days.end > panel.n_days() {
        return Err(invalid("backtest range beyond the panel"));
    }
    let ns = panel.n_symbols();
    let mut weights = vec![0.0; ns];
    let mut equity = cfg.initial_equity;
    let mut periods = Vec::new();
    let mut skipped = Vec::new();
    let mut ruined = false;
    let mut day = days.start;
    while day + cfg.horizon < days.end {
        let rets = forward_return(panel, day, cfg.horizon)?;
        let mut names: Vec<(usize, f64, f64)> = (0..ns)
            .filter_map(|s| Some((s, factor.get(day, s)?, rets[s]?)))
            .collect();
        let leg = (cfg.quantile * names.len() as f64).floor() as usize;
        if leg < 1 {
            debug!("backtest: day {day} has {} names, skipped", names.len());
            skipped.push(day);
            day += cfg.horizon;
            continue;
        }
        // descending by factor, ties by symbol index
        names.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut target = vec![0.0; ns];
        for &(s, _, _) in &names[..leg] {
            target[s] = 1.0 / leg as f64;
        }
        let gross = match cfg.mode {
            BacktestMode::LongShort => {
                for &(s, _, _) in &names[names.len() - leg..] {
                    target[s] = -1.0 / leg as f64;
                }
                names.iter().map(|&(s, _, r)| target[s] * r).sum::<f64>()
            }
            BacktestMode::LongMinusBenchmark => {
                let bench = names.iter().map(|n| n.2).sum::<f64>() / names.len() as f64;
                names.iter().map(|&(s, _, r)| target[s] * r).sum::<f64>() - bench
            }
        };
        let turnover: f64 = weights.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        let commission_paid = cfg.commission * turnover * equity;
        let equity_before = equity;
        let mut after = equity_before * (1.0 + gross) - commission_paid;
        if after <= 0.0 {
            after = 0.0;
            ruined = true;
        }
        periods.push(Period {
            day,
            date: panel.dates()[day],
            gross_return: gross,
            turnover,
            commission_paid,
            net_return: after / equity_before - 1.0,
            equity_before,
            equity_after: after,
        });
        equity = after;
        weights = target;
        if ruined {
            break;
        }
        day += cfg.horizon;
    }
    let net: Vec<f64> = periods.iter().map(|p| p.net_return).collect();
    Ok(BacktestReport {
        config: cfg.clone(),
        initial_equity: cfg.initial_equity,
        total_turnover: periods.iter().map(|p| p.turnover).sum(),
        total_commission: periods.iter().map(|p| p.commission_paid).sum(),
        performance: performance(&net, cfg.periods_per_year()),
        periods,
        skipped_days: skipped,
        ruined,
    })
}
