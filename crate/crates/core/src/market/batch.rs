use serde::{Deserialize, Serialize};

use super::panel::{Field, PricePanel};
use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_LOOKBACK: usize = 30;
pub const DEFAULT_HORIZON: usize = 5;
pub const N_CHANNELS: usize = 5;

/// Standard deviations below this are treated as 1 so constant channels map to zero.
pub const STD_CLAMP: f64 = 1e-8;

/// Close-to-close return over `horizon` days from `day`; `None` where either
/// endpoint is masked.
pub fn forward_return(panel: &PricePanel, day: usize, horizon: usize) -> Result<Vec<Option<f64>>> {
    if horizon < 1 {
        return Err(invalid("horizon must be at least 1"));
    }
    if day + horizon >= panel.n_days() {
        return Err(Error::HorizonOutOfRange { day, horizon });
    }
    Ok((0..panel.n_symbols())
        .map(|s| {
            (panel.is_valid(day, s) && panel.is_valid(day + horizon, s)).then(|| {
                panel.get(Field::Close, day + horizon, s) / panel.get(Field::Close, day, s) - 1.0
            })
        })
        .collect())
}

/// Contiguous train → valid → test day counts starting at the first panel day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_days: usize,
    pub valid_days: usize,
    pub test_days: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitSpec {
    pub fn new(train_days: usize, valid_days: usize, test_days: usize) -> Result<Self> {
        let s = Self {
            train_days,
            valid_days,
            test_days,
        };
        s.validate()?;
        Ok(s)
    }

    /// 250 / 30 / 90 trading days.
    pub fn standard() -> Self {
        Self {
            train_days: 250,
            valid_days: 30,
            test_days: 90,
        }
    }

    /// Train and valid as given, test takes the remaining days of the panel.
    pub fn fill(n_days: usize, train_days: usize, valid_days: usize) -> Result<Self> {
        let used = train_days + valid_days;
        if used >= n_days {
            return Err(Error::PanelTooShort {
                needed: used + 1,
                have: n_days,
            });
        }
        Self::new(train_days, valid_days, n_days - used)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_days == 0 || self.valid_days == 0 || self.test_days == 0 {
            return Err(invalid("split day counts must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train_days + self.valid_days + self.test_days
    }

    /// Half-open day range of a split.
    pub fn range(&self, kind: SplitKind) -> std::ops::Range<usize> {
        match kind {
            SplitKind::Train => 0..self.train_days,
            SplitKind::Valid => self.train_days..self.train_days + self.valid_days,
            SplitKind::Test => self.train_days + self.valid_days..self.total(),
        }
    }
}

/// Per (symbol, channel) time-series mean and std, fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    n_symbols: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    fitted: Vec<bool>,
}

impl Standardizer {
    /// Fits on unmasked cells of days `days`.
    pub fn fit(panel: &PricePanel, days: std::ops::Range<usize>) -> Self {
        let ns = panel.n_symbols();
        let mut mean = vec![0.0; ns * N_CHANNELS];
        let mut std = vec![1.0; ns * N_CHANNELS];
        let mut fitted = vec![false; ns];
        for s in 0..ns {
            let valid: Vec<usize> = days.clone().filter(|&d| panel.is_valid(d, s)).collect();
            if valid.is_empty() {
                continue;
            }
            fitted[s] = true;
            for (c, field) in Field::OHLCV.iter().enumerate() {
                let xs: Vec<f64> = valid.iter().map(|&d| panel.get(*field, d, s)).collect();
                let m = crate::stats::mean(&xs);
                let sd = crate::stats::std_pop(&xs);
                mean[s * N_CHANNELS + c] = m;
                std[s * N_CHANNELS + c] = if sd < STD_CLAMP { 1.0 } else { sd };
            }
        }
        Self {
            n_symbols: ns,
            mean,
            std,
            fitted,
        }
    }

    pub fn is_fitted(&self, sym: usize) -> bool {
        self.fitted[sym]
    }

    pub fn mean(&self, sym: usize, channel: usize) -> f64 {
        self.mean[sym * N_CHANNELS + channel]
    }

    pub fn std(&self, sym: usize, channel: usize) -> f64 {
        self.std[sym * N_CHANNELS + channel]
    }

    #[inline]
    pub fn apply(&self, sym: usize, channel: usize, x: f64) -> f64 {
        (x - self.mean(sym, channel)) / self.std(sym, channel)
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }
}

/// All tradable symbols of one day: an `n x 5 x m` window tensor and forward returns.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub day: usize,
    pub date: chrono::NaiveDate,
    /// Panel symbol indices of the tensor rows.
    pub symbols: Vec<usize>,
    /// `[n, 5, m]`, channel order OHLCV, oldest day first.
    pub tensor: Tensor,
    pub returns: Vec<f64>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.tensor.shape()[2]
    }

    /// Rows restricted to the given positions.
    pub fn select(&self, rows: &[usize]) -> WindowBatch {
        let width = self.tensor.cols();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&self.tensor.data()[r * width..(r + 1) * width]);
        }
        let mut shape = self.tensor.shape().to_vec();
        shape[0] = rows.len();
        WindowBatch {
            day: self.day,
            date: self.date,
            symbols: rows.iter().map(|&r| self.symbols[r]).collect(),
            tensor: Tensor::new(shape, data).expect("row selection keeps shape"),
            returns: rows.iter().map(|&r| self.returns[r]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedDay {
    pub day: usize,
    pub split: SplitKind,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct BatchSet {
    pub split: SplitSpec,
    pub lookback: usize,
    pub horizon: usize,
    pub train: Vec<WindowBatch>,
    pub valid: Vec<WindowBatch>,
    pub test: Vec<WindowBatch>,
    pub standardizer: Standardizer,
    pub skipped: Vec<SkippedDay>,
}

impl BatchSet {
    pub fn get(&self, kind: SplitKind) -> &[WindowBatch] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }
}

/// Days of `range` that can carry a batch: a full lookback window ending on the
/// day, and the label resolving inside the range.
pub fn eligible_days(range: std::ops::Range<usize>, lookback: usize, horizon: usize) -> std::ops::Range<usize> {
    let first = range.start.max(lookback.saturating_sub(1));
    let last_excl = range.end.saturating_sub(horizon);
    first..last_excl.max(first)
}

/// Groups each eligible trading day's fully observed symbols into one batch per day.
///
/// A batch dated `t` reads window days `t-m+1..=t` and the return from `t` to
/// `t+horizon`; the label day must lie inside the same split.
pub fn make_batches(panel: &PricePanel, split: SplitSpec, lookback: usize, horizon: usize) -> Result<BatchSet> {
    split.validate()?;
    if lookback < 1 || horizon < 1 {
        return Err(invalid("lookback and horizon must be at least 1"));
    }
    if split.total() > panel.n_days() {
        return Err(Error::PanelTooShort {
            needed: split.total(),
            have: panel.n_days(),
        });
    }
    if split.train_days < lookback + horizon {
        return Err(Error::PanelTooShort {
            needed: lookback + horizon,
            have: split.train_days,
        });
    }
    let standardizer = Standardizer::fit(panel, split.range(SplitKind::Train));
    let mut skipped = Vec::new();
    let mut build = |kind: SplitKind| -> Vec<WindowBatch> {
        let mut out = Vec::new();
        for day in eligible_days(split.range(kind), lookback, horizon) {
            match build_day(panel, &standardizer, day, lookback, horizon) {
                Some(b) => out.push(b),
                None => skipped.push(SkippedDay {
                    day,
                    split: kind,
                    reason: "no fully observed symbols".into(),
                }),
            }
        }
        out
    };
    let train = build(SplitKind::Train);
    let valid = build(SplitKind::Valid);
    let test = build(SplitKind::Test);
    Ok(BatchSet {
        split,
        lookback,
        horizon,
        train,
        valid,
        test,
        standardizer,
        skipped,
    })
}

fn build_day(
    panel: &PricePanel,
    standardizer: &Standardizer,
    day: usize,
    lookback: usize,
    horizon: usize,
) -> Option<WindowBatch> {
    let start = day + 1 - lookback;
    let width = N_CHANNELS * lookback;
    let mut symbols = Vec::new();
    let mut data = Vec::new();
    let mut returns = Vec::new();
    for s in 0..panel.n_symbols() {
        if !standardizer.is_fitted(s)
            || !(start..=day).all(|d| panel.is_valid(d, s))
            || !panel.is_valid(day + horizon, s)
        {
            continue;
        }
        symbols.push(s);
        for (c, field) in Field::OHLCV.iter().enumerate() {
            for d in start..=day {
                data.push(standardizer.apply(s, c, panel.get(*field, d, s)));
            }
        }
        returns.push(panel.get(Field::Close, day + horizon, s) / panel.get(Field::Close, day, s) - 1.0);
    }
    if symbols.is_empty() {
        return None;
    }
    debug_assert_eq!(data.len(), symbols.len() * width);
    let n = symbols.len();
    Some(WindowBatch {
        day,
        date: panel.dates()[day],
        symbols,
        tensor: Tensor::new(vec![n, N_CHANNELS, lookback], data).ok()?,
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::panel::Bar;
    use chrono::NaiveDate;

    pub(crate) fn toy_panel(n_days: usize, n_syms: usize, f: impl Fn(usize, usize) -> f64) -> PricePanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = (0..n_days).map(|d| start + chrono::Days::new(d as u64)).collect();
        let symbols = (0..n_syms).map(|s| format!("S{s:02}")).collect();
        let mut bars = Vec::new();
        for d in 0..n_days {
            for s in 0..n_syms {
                let c = f(d, s);
                bars.push(Some(Bar {
                    open: c,
                    high: c * 1.01,
                    low: c * 0.99,
                    close: c,
                    volume: 1000.0 + d as f64,
                    adj_close: c,
                }));
            }
        }
        PricePanel::from_bars(dates, symbols, bars).unwrap().0
    }

    #[test]
    fn forward_return_examples() {
        let p = toy_panel(10, 2, |d, s| if s == 0 { 100.0 + 2.0 * d as f64 } else { 50.0 });
        let r = forward_return(&p, 0, 5).unwrap();
        assert!((r[0].unwrap() - 0.10).abs() < 1e-15);
        assert_eq!(r[1], Some(0.0));
        assert!(matches!(forward_return(&p, 5, 5), Err(Error::HorizonOutOfRange { .. })));
        assert!(forward_return(&p, 0, 0).is_err());
    }

    #[test]
    fn forward_return_matches_independent_loop() {
        let p = toy_panel(20, 10, |d, s| 10.0 + ((d * 7 + s * 13) % 11) as f64);
        for day in 0..15 {
            let r = forward_return(&p, day, 5).unwrap();
            for s in 0..10 {
                let expected = p.get(Field::Close, day + 5, s) / p.get(Field::Close, day, s) - 1.0;
                assert_eq!(r[s].unwrap(), expected);
            }
        }
    }

    #[test]
    fn window_arithmetic_on_300_day_panel() {
        let p = toy_panel(300, 3, |d, s| 10.0 + (d as f64 * 0.1).sin() + s as f64);
        let split = SplitSpec::fill(300, 250, 30).unwrap();
        let b = make_batches(&p, split, 30, 5).unwrap();
        assert_eq!(b.train.first().unwrap().day, 29);
        assert_eq!(b.train.last().unwrap().day, 244);
        assert_eq!(b.train.len(), 216);
        assert_eq!(b.valid.first().unwrap().day, 250);
        assert_eq!(b.valid.last().unwrap().day, 274);
        assert_eq!(b.test.first().unwrap().day, 280);
        assert_eq!(b.test.last().unwrap().day, 294);
        for batch in &b.train {
            assert!(batch.day + 5 < 250);
            assert_eq!(batch.tensor.shape(), &[3, 5, 30]);
        }
    }

    #[test]
    fn constant_panel_standardizes_to_zero() {
        let p = {
            let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
            let dates = (0..60).map(|d| start + chrono::Days::new(d)).collect();
            let bars = vec![
                Some(Bar {
                    open: 42.0,
                    high: 42.0,
                    low: 42.0,
                    close: 42.0,
                    volume: 7.0,
                    adj_close: 42.0
                });
                120
            ];
            PricePanel::from_bars(dates, vec!["A".into(), "B".into()], bars).unwrap().0
        };
        let b = make_batches(&p, SplitSpec::new(40, 10, 10).unwrap(), 10, 2).unwrap();
        for batch in b.train.iter().chain(&b.test) {
            assert!(batch.tensor.data().iter().all(|&v| v == 0.0));
            assert!(batch.returns.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn masked_symbol_leaves_batch() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates: Vec<_> = (0..40).map(|d| start + chrono::Days::new(d)).collect();
        let mut bars = Vec::new();
        for d in 0..40 {
            for s in 0..4 {
                let c = 10.0 + s as f64 + d as f64 * 0.01;
                bars.push(if s == 2 && d == 15 {
                    None
                } else {
                    Some(Bar {
                        open: c,
                        high: c,
                        low: c,
                        close: c,
                        volume: 1.0,
                        adj_close: c,
                    })
                });
            }
        }
        let syms = (0..4).map(|s| format!("S{s}")).collect();
        let p = PricePanel::from_bars(dates, syms, bars).unwrap().0;
        let b = make_batches(&p, SplitSpec::new(30, 5, 5).unwrap(), 5, 2).unwrap();
        for batch in &b.train {
            let touches = batch.day >= 15 && batch.day < 20 || batch.day + 2 == 15;
            assert_eq!(batch.len(), if touches { 3 } else { 4 }, "day {}", batch.day);
            if touches {
                assert!(!batch.symbols.contains(&2));
            }
        }
    }

    #[test]
    fn too_short_panel_errors() {
        let p = toy_panel(50, 2, |_, _| 10.0);
        assert!(matches!(
            make_batches(&p, SplitSpec::new(40, 10, 10).unwrap(), 5, 2),
            Err(Error::PanelTooShort { .. })
        ));
        assert!(SplitSpec::new(0, 1, 1).is_err());
    }
}
