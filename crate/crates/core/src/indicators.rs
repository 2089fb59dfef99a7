//! Technical indicators used as prior knowledge for pre-training and as the
//! human-expert factor pool.
//!
//! Every indicator masks its warm-up period and any cell whose window touches a
//! masked panel cell. Denominators with magnitude below `1e-12` mask the cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{FactorMatrix, Field, PricePanel};

const DIV_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndicatorKind {
    Ma,
    Ema,
    Macd,
    Pvt,
    Top10,
    Dc,
    Boll,
    Rsi,
}

impl IndicatorKind {
    /// Indicators expressed in price units (they scale with prices).
    pub fn is_price_level(self) -> bool {
        matches!(self, IndicatorKind::Ma | IndicatorKind::Ema)
    }
}

/// An indicator together with its window parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IndicatorSpec {
    /// N-term trailing mean of close.
    Ma { n: usize },
    /// Exponential mean of close with decay (N-1)/(N+1).
    Ema { n: usize },
    /// EMA_fast - EMA_slow of close.
    Macd { fast: usize, slow: usize },
    /// Price-volume trend, zero on the first observed day.
    Pvt,
    /// MA10 relative to the cross-sectional 90th percentile of MA10, minus one.
    Top10,
    /// Adjusted close over the mid of the adjusted high/low channel.
    Dc { n: usize },
    /// Lower Bollinger band over close.
    Boll { n: usize },
    /// Wilder relative strength, scaled to [0, 1].
    Rsi { n: usize },
}

impl IndicatorSpec {
    pub fn kind(&self) -> IndicatorKind {
        match self {
            IndicatorSpec::Ma { .. } => IndicatorKind::Ma,
            IndicatorSpec::Ema { .. } => IndicatorKind::Ema,
            IndicatorSpec::Macd { .. } => IndicatorKind::Macd,
            IndicatorSpec::Pvt => IndicatorKind::Pvt,
            IndicatorSpec::Top10 => IndicatorKind::Top10,
            IndicatorSpec::Dc { .. } => IndicatorKind::Dc,
            IndicatorSpec::Boll { .. } => IndicatorKind::Boll,
            IndicatorSpec::Rsi { .. } => IndicatorKind::Rsi,
        }
    }

    /// Number of trailing days (including today) needed for a value.
    pub fn warmup(&self) -> usize {
        match *self {
            IndicatorSpec::Ma { n } | IndicatorSpec::Ema { n } | IndicatorSpec::Dc { n } | IndicatorSpec::Boll { n } => n,
            IndicatorSpec::Macd { slow, .. } => slow,
            IndicatorSpec::Pvt => 1,
            IndicatorSpec::Top10 => 10,
            IndicatorSpec::Rsi { n } => n + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            IndicatorSpec::Ma { n }
            | IndicatorSpec::Ema { n }
            | IndicatorSpec::Dc { n }
            | IndicatorSpec::Boll { n }
            | IndicatorSpec::Rsi { n } => {
                if n < 1 {
                    return Err(invalid(format!("{self}: window must be at least 1")));
                }
            }
            IndicatorSpec::Macd { fast, slow } => {
                if fast < 1 || fast >= slow {
                    return Err(invalid(format!("{self}: MACD needs 1 <= fast < slow")));
                }
            }
            IndicatorSpec::Pvt | IndicatorSpec::Top10 => {}
        }
        Ok(())
    }

    /// The default prior-knowledge pool.
    pub fn prior_knowledge_pool() -> Vec<IndicatorSpec> {
        vec![
            IndicatorSpec::Ma { n: 10 },
            IndicatorSpec::Ema { n: 10 },
            IndicatorSpec::Macd { fast: 12, slow: 26 },
            IndicatorSpec::Pvt,
            IndicatorSpec::Top10,
            IndicatorSpec::Dc { n: 20 },
            IndicatorSpec::Boll { n: 20 },
            IndicatorSpec::Rsi { n: 14 },
        ]
    }
}

impl fmt::Display for IndicatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndicatorSpec::Ma { n } => write!(f, "ma:{n}"),
            IndicatorSpec::Ema { n } => write!(f, "ema:{n}"),
            IndicatorSpec::Macd { fast, slow } => write!(f, "macd:{fast}:{slow}"),
            IndicatorSpec::Pvt => write!(f, "pvt"),
            IndicatorSpec::Top10 => write!(f, "top10"),
            IndicatorSpec::Dc { n } => write!(f, "dc:{n}"),
            IndicatorSpec::Boll { n } => write!(f, "boll:{n}"),
            IndicatorSpec::Rsi { n } => write!(f, "rsi:{n}"),
        }
    }
}

impl FromStr for IndicatorSpec {
    type Err = Error;

    /// Parses `ma:10`, `macd:12:26`, `pvt`, `dc` (window 20 by default), ...
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, default: Option<usize>| -> Result<usize> {
            match parts.get(i) {
                Some(p) => p
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad window `{p}` in indicator `{s}`"))),
                None => default.ok_or_else(|| Error::Parse(format!("indicator `{s}` needs a window"))),
            }
        };
        let spec = match parts[0].to_ascii_lowercase().as_str() {
            "ma" => IndicatorSpec::Ma { n: num(1, None)? },
            "ema" => IndicatorSpec::Ema { n: num(1, None)? },
            "macd" => IndicatorSpec::Macd {
                fast: num(1, Some(12))?,
                slow: num(2, Some(26))?,
            },
            "pvt" => IndicatorSpec::Pvt,
            "top10" => IndicatorSpec::Top10,
            "dc" => IndicatorSpec::Dc { n: num(1, Some(20))? },
            "boll" => IndicatorSpec::Boll { n: num(1, Some(20))? },
            "rsi" => IndicatorSpec::Rsi { n: num(1, Some(14))? },
            other => return Err(Error::Parse(format!("unknown indicator kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-symbol series of one field with validity.
fn series(panel: &PricePanel, field: Field, sym: usize) -> Vec<Option<f64>> {
    (0..panel.n_days())
        .map(|d| panel.is_valid(d, sym).then(|| panel.get(field, d, sym)))
        .collect()
}

/// Trailing `n`-term mean; `None` unless all `n` terms are present.
fn rolling_mean(xs: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; xs.len()];
    for t in n.saturating_sub(1)..xs.len() {
        let window = &xs[t + 1 - n..=t];
        if window.iter().all(|v| v.is_some()) {
            out[t] = Some(window.iter().map(|v| v.unwrap()).sum::<f64>() / n as f64);
        }
    }
    out
}

/// Trailing `n`-term population standard deviation.
fn rolling_std(xs: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; xs.len()];
    for t in n.saturating_sub(1)..xs.len() {
        let window = &xs[t + 1 - n..=t];
        if window.iter().all(|v| v.is_some()) {
            let vals: Vec<f64> = window.iter().map(|v| v.unwrap()).collect();
            out[t] = Some(crate::stats::std_pop(&vals));
        }
    }
    out
}

/// EMA with weights proportional to ((n-1)/(n+1))^k, truncated at the start of
/// the current observed run and renormalized to sum to one. Masked for the
/// first `n - 1` days of each run.
fn ema(xs: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    let decay = (n as f64 - 1.0) / (n as f64 + 1.0);
    let mut out = vec![None; xs.len()];
    let (mut num, mut den, mut run) = (0.0, 0.0, 0usize);
    for (t, x) in xs.iter().enumerate() {
        match x {
            Some(v) => {
                num = v + decay * num;
                den = 1.0 + decay * den;
                run += 1;
                if run >= n {
                    out[t] = Some(num / den);
                }
            }
            None => {
                num = 0.0;
                den = 0.0;
                run = 0;
            }
        }
    }
    out
}

fn pvt(close: &[Option<f64>], volume: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    let mut acc: Option<f64> = None;
    for t in 0..close.len() {
        acc = match (close[t], volume[t], acc) {
            (Some(c), Some(v), Some(prev)) => {
                let c0 = close[t - 1].expect("previous close present while run continues");
                Some(prev + v * (c - c0) / c0)
            }
            (Some(_), Some(_), None) => Some(0.0),
            _ => None,
        };
        out[t] = acc;
    }
    out
}

/// Wilder RSI scaled to [0, 1]: avg_gain / (avg_gain + avg_loss).
fn rsi(close: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    let (mut gain, mut loss, mut count) = (0.0, 0.0, 0usize);
    for t in 1..close.len() {
        let (Some(c1), Some(c0)) = (close[t], close[t - 1]) else {
            gain = 0.0;
            loss = 0.0;
            count = 0;
            continue;
        };
        let ch = c1 - c0;
        let (g, l) = (ch.max(0.0), (-ch).max(0.0));
        count += 1;
        if count <= n {
            gain += g / n as f64;
            loss += l / n as f64;
        } else {
            gain = (gain * (n as f64 - 1.0) + g) / n as f64;
            loss = (loss * (n as f64 - 1.0) + l) / n as f64;
        }
        if count >= n {
            let den = gain + loss;
            out[t] = (den.abs() >= DIV_GUARD).then(|| gain / den);
        }
    }
    out
}

fn guarded_div(a: f64, b: f64) -> Option<f64> {
    (b.abs() >= DIV_GUARD).then(|| a / b)
}

/// Computes an indicator over the whole panel.
pub fn compute_indicator(spec: &IndicatorSpec, panel: &PricePanel) -> Result<FactorMatrix> {
    spec.validate()?;
    if spec.warmup() > panel.n_days() {
        return Err(invalid(format!(
            "{spec}: window of {} days exceeds {} days of history",
            spec.warmup(),
            panel.n_days()
        )));
    }
    let mut out = FactorMatrix::empty_like(panel);
    let ns = panel.n_symbols();

    if let IndicatorSpec::Top10 = spec {
        let ma10: Vec<Vec<Option<f64>>> = (0..ns)
            .map(|s| rolling_mean(&series(panel, Field::Close, s), 10))
            .collect();
        for d in 0..panel.n_days() {
            let row: Vec<f64> = (0..ns).filter_map(|s| ma10[s][d]).collect();
            if row.is_empty() {
                continue;
            }
            let q90 = crate::stats::quantile(&row, 0.9);
            for (s, ma) in ma10.iter().enumerate() {
                if let Some(v) = ma[d].and_then(|m| guarded_div(m, q90)) {
                    out.set(d, s, v - 1.0);
                }
            }
        }
        return Ok(out);
    }

    for s in 0..ns {
        let close = series(panel, Field::Close, s);
        let values: Vec<Option<f64>> = match *spec {
            IndicatorSpec::Ma { n } => rolling_mean(&close, n),
            IndicatorSpec::Ema { n } => ema(&close, n),
            IndicatorSpec::Macd { fast, slow } => {
                let f = ema(&close, fast);
                let sl = ema(&close, slow);
                f.iter().zip(&sl).map(|(a, b)| Some((*a)? - (*b)?)).collect()
            }
            IndicatorSpec::Pvt => pvt(&close, &series(panel, Field::Volume, s)),
            IndicatorSpec::Dc { n } => {
                let adj = series(panel, Field::AdjClose, s);
                let ratio: Vec<Option<f64>> = adj.iter().zip(&close).map(|(a, c)| guarded_div((*a)?, (*c)?)).collect();
                let adjusted = |field: Field| -> Vec<Option<f64>> {
                    series(panel, field, s)
                        .iter()
                        .zip(&ratio)
                        .map(|(x, r)| Some((*x)? * (*r)?))
                        .collect()
                };
                let h = rolling_mean(&adjusted(Field::High), n);
                let l = rolling_mean(&adjusted(Field::Low), n);
                (0..panel.n_days())
                    .map(|t| guarded_div(adj[t]?, 0.5 * (h[t]? + l[t]?)))
                    .collect()
            }
            IndicatorSpec::Boll { n } => {
                let mean = rolling_mean(&close, n);
                let sd = rolling_std(&close, n);
                (0..panel.n_days())
                    .map(|t| guarded_div(mean[t]? - sd[t]?, close[t]?))
                    .collect()
            }
            IndicatorSpec::Rsi { n } => rsi(&close, n),
            IndicatorSpec::Top10 => unreachable!("handled above"),
        };
        for (d, v) in values.into_iter().enumerate() {
            if let Some(v) = v {
                out.set(d, s, v);
            }
        }
    }
    Ok(out)
}

/// Turns indicator values into binary buy (1) / no-buy (0) labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionRule {
    /// 1 when value > threshold; a value exactly at the threshold is 0.
    Threshold { threshold: f64 },
    /// 1 when close > value; only for price-level indicators.
    CloseAbove,
    /// 1 when value > previous day's value.
    Rising,
}

impl DecisionRule {
    pub fn default_for(kind: IndicatorKind) -> DecisionRule {
        match kind {
            IndicatorKind::Ma | IndicatorKind::Ema => DecisionRule::CloseAbove,
            IndicatorKind::Macd | IndicatorKind::Top10 => DecisionRule::Threshold { threshold: 0.0 },
            IndicatorKind::Pvt => DecisionRule::Rising,
            IndicatorKind::Dc | IndicatorKind::Boll => DecisionRule::Threshold { threshold: 1.0 },
            IndicatorKind::Rsi => DecisionRule::Threshold { threshold: 0.5 },
        }
    }

    pub fn check(&self, kind: IndicatorKind) -> Result<()> {
        match self {
            DecisionRule::CloseAbove if !kind.is_price_level() => Err(invalid(format!(
                "close-above rule is undefined for {kind:?}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Labels every unmasked cell with 0/1; masked cells stay masked.
pub fn indicator_to_decision(
    kind: IndicatorKind,
    values: &FactorMatrix,
    rule: DecisionRule,
    panel: &PricePanel,
) -> Result<FactorMatrix> {
    rule.check(kind)?;
    if values.n_days() != panel.n_days() || values.n_symbols() != panel.n_symbols() {
        return Err(Error::Shape("decision values must share the panel axes".into()));
    }
    let mut out = FactorMatrix::masked(values.dates().to_vec(), values.symbols().to_vec());
    for d in 0..values.n_days() {
        for s in 0..values.n_symbols() {
            let Some(v) = values.get(d, s) else { continue };
            let label = match rule {
                DecisionRule::Threshold { threshold } => Some(v > threshold),
                DecisionRule::CloseAbove => panel
                    .is_valid(d, s)
                    .then(|| panel.get(Field::Close, d, s) > v),
                DecisionRule::Rising => d
                    .checked_sub(1)
                    .and_then(|p| values.get(p, s))
                    .map(|prev| v > prev),
            };
            if let Some(l) = label {
                out.set(d, s, if l { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{business_days, Bar};

    fn panel_from_closes(closes: &[&[f64]], volumes: Option<&[&[f64]]>) -> PricePanel {
        let n_days = closes[0].len();
        let ns = closes.len();
        let mut bars = Vec::new();
        for d in 0..n_days {
            for s in 0..ns {
                let c = closes[s][d];
                bars.push(Some(Bar {
                    open: c,
                    high: c * 1.02,
                    low: c * 0.97,
                    close: c,
                    volume: volumes.map_or(100.0, |v| v[s][d]),
                    adj_close: c,
                }));
            }
        }
        let syms = (0..ns).map(|s| format!("S{s}")).collect();
        PricePanel::from_bars(business_days(n_days), syms, bars).unwrap().0
    }

    #[test]
    fn ma_two_terms() {
        let p = panel_from_closes(&[&[2.0, 4.0]], None);
        let f = compute_indicator(&IndicatorSpec::Ma { n: 2 }, &p).unwrap();
        assert_eq!(f.get(0, 0), None);
        assert_eq!(f.get(1, 0), Some(3.0));
    }

    #[test]
    fn macd_constant_is_zero() {
        let p = panel_from_closes(&[&[7.0; 40]], None);
        let f = compute_indicator(&IndicatorSpec::Macd { fast: 3, slow: 8 }, &p).unwrap();
        for d in 0..40 {
            match f.get(d, 0) {
                Some(v) => {
                    assert!(d >= 7);
                    assert!(v.abs() < 1e-12);
                }
                None => assert!(d < 7),
            }
        }
    }

    #[test]
    fn pvt_hand_recursion() {
        let p = panel_from_closes(&[&[10.0, 11.0]], Some(&[&[50.0, 100.0]]));
        let f = compute_indicator(&IndicatorSpec::Pvt, &p).unwrap();
        assert_eq!(f.get(0, 0), Some(0.0));
        assert!((f.get(1, 0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ema_renormalized_weights() {
        let p = panel_from_closes(&[&[1.0, 2.0, 3.0]], None);
        let f = compute_indicator(&IndicatorSpec::Ema { n: 3 }, &p).unwrap();
        // decay 0.5: (3 + 0.5*2 + 0.25*1) / 1.75
        assert!((f.get(2, 0).unwrap() - 4.25 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn rsi_extremes() {
        let up: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let down: Vec<f64> = (0..20).map(|i| 30.0 - i as f64).collect();
        let p = panel_from_closes(&[&up, &down], None);
        let f = compute_indicator(&IndicatorSpec::Rsi { n: 5 }, &p).unwrap();
        assert_eq!(f.get(4, 0), None);
        assert_eq!(f.get(5, 0), Some(1.0));
        assert_eq!(f.get(19, 1), Some(0.0));
        // flat series has no gains or losses: masked by the division guard
        let flat = panel_from_closes(&[&[5.0; 10]], None);
        let g = compute_indicator(&IndicatorSpec::Rsi { n: 3 }, &flat).unwrap();
        assert_eq!(g.valid_count(), 0);
    }

    #[test]
    fn top10_uses_cross_sectional_90th_percentile() {
        let closes: Vec<Vec<f64>> = (0..11).map(|s| vec![10.0 + s as f64; 12]).collect();
        let refs: Vec<&[f64]> = closes.iter().map(|v| v.as_slice()).collect();
        let p = panel_from_closes(&refs, None);
        let f = compute_indicator(&IndicatorSpec::Top10, &p).unwrap();
        // MA10 values 10..=20, 90th pct = 19
        assert!((f.get(11, 10).unwrap() - (20.0 / 19.0 - 1.0)).abs() < 1e-12);
        assert!((f.get(11, 9).unwrap()).abs() < 1e-12);
        assert_eq!(f.get(8, 0), None);
    }

    #[test]
    fn errors_on_bad_specs() {
        let p = panel_from_closes(&[&[1.0, 2.0, 3.0]], None);
        assert!(compute_indicator(&IndicatorSpec::Ma { n: 5 }, &p).is_err());
        assert!(compute_indicator(&IndicatorSpec::Macd { fast: 5, slow: 3 }, &p).is_err());
        assert!(compute_indicator(&IndicatorSpec::Ma { n: 0 }, &p).is_err());
        assert!("foo:3".parse::<IndicatorSpec>().is_err());
        assert_eq!("macd:12:26".parse::<IndicatorSpec>().unwrap(), IndicatorSpec::Macd { fast: 12, slow: 26 });
        assert_eq!("dc".parse::<IndicatorSpec>().unwrap(), IndicatorSpec::Dc { n: 20 });
    }

    #[test]
    fn macd_sign_decisions_match_hand_labels() {
        let p = panel_from_closes(&[&[1.0, 1.0, 1.0, 1.0]], None);
        let dates = p.dates().to_vec();
        let vals = FactorMatrix::from_values(dates, p.symbols().to_vec(), vec![0.5, -0.2, 0.0, 3.0]).unwrap();
        let dec = indicator_to_decision(
            IndicatorKind::Macd,
            &vals,
            DecisionRule::default_for(IndicatorKind::Macd),
            &p,
        )
        .unwrap();
        let labels: Vec<f64> = (0..4).map(|d| dec.get(d, 0).unwrap()).collect();
        assert_eq!(labels, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn decisions_propagate_masks_and_reject_undefined_rules() {
        let p = panel_from_closes(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]], None);
        let mut vals = FactorMatrix::from_values(p.dates().to_vec(), p.symbols().to_vec(), vec![1.0; 6]).unwrap();
        for d in 0..3 {
            vals.unset(d, 1);
        }
        let dec = indicator_to_decision(IndicatorKind::Ma, &vals, DecisionRule::CloseAbove, &p).unwrap();
        assert!((0..3).all(|d| dec.get(d, 1).is_none()));
        assert_eq!(dec.get(0, 0), Some(0.0));
        assert_eq!(dec.get(1, 0), Some(1.0));
        assert!(indicator_to_decision(IndicatorKind::Rsi, &vals, DecisionRule::CloseAbove, &p).is_err());
    }
}
