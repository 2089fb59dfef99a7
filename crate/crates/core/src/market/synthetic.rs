//! Synthetic OHLCV markets with a planted, observable alpha.
//!
//! Mechanism:
//!
//! 1. Log-volume follows an independent AR(1) per symbol with common base level,
//!    so volume is exogenous to prices.
//! 2. The hidden factor on day `t` is the trailing `window`-day mean of volume.
//! 3. Its cross-sectional ranks are mapped to normal scores `s_t` (rank-preserving).
//! 4. Daily log returns are `r_{t+1} = market_t + daily_vol * (c * s_t + sqrt(1 - c^2) * e_{t+1})`.
//!    The mixing weight `c` is solved from the measured autocorrelation of `s` so
//!    that the Pearson correlation between `s_t` and the `horizon`-day forward log
//!    return equals `2 sin(pi * rho / 6)`, the bivariate-normal Pearson value for
//!    Spearman `rho`.
//!
//! Everything is driven by one ChaCha stream, so a seed fully determines the panel.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::factor::FactorMatrix;
use super::panel::{Bar, PricePanel};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSpec {
    /// Target mean daily Spearman between hidden factor and forward returns, in [0, 1).
    pub target_spearman: f64,
    /// Trailing window of the volume mean that defines the hidden factor.
    pub window: usize,
    /// Forward-return horizon the target applies to.
    pub horizon: usize,
    /// AR(1) coefficient of log-volume.
    pub persistence: f64,
    /// Daily idiosyncratic return volatility.
    pub daily_vol: f64,
    /// Daily volatility of the common market return.
    pub market_vol: f64,
}

impl Default for AlphaSpec {
    fn default() -> Self {
        Self {
            target_spearman: 0.3,
            window: 5,
            horizon: 5,
            persistence: 0.9,
            daily_vol: 0.02,
            market_vol: 0.01,
        }
    }
}

impl AlphaSpec {
    pub fn with_target(target_spearman: f64) -> Self {
        Self {
            target_spearman,
            ..Self::default()
        }
    }

    /// The hidden factor as an expression-tree string, for GP checks.
    pub fn expression(&self) -> String {
        format!("(ts_mean volume {})", self.window)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticMarket {
    pub panel: PricePanel,
    pub hidden: FactorMatrix,
    /// Solved mixing weight of the signal in return innovations.
    pub mixing: f64,
}

/// Weekday calendar starting at 2015-01-05.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_synthetic_market(
    n_symbols: usize,
    n_days: usize,
    seed: u64,
    spec: &AlphaSpec,
) -> Result<SyntheticMarket> {
    if n_symbols < 2 {
        return Err(invalid("need at least 2 symbols"));
    }
    if spec.window < 1 || spec.horizon < 1 {
        return Err(invalid("window and horizon must be at least 1"));
    }
    if n_days <= spec.window + spec.horizon {
        return Err(invalid(format!(
            "n_days must exceed window + horizon = {}",
            spec.window + spec.horizon
        )));
    }
    if !(0.0..1.0).contains(&spec.target_spearman) {
        return Err(invalid("target Spearman must lie in [0, 1)"));
    }
    if !(0.0..1.0).contains(&spec.persistence) {
        return Err(invalid("persistence must lie in [0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = n_symbols;
    let idx = |d: usize, s: usize| d * ns + s;

    // exogenous volume
    let phi = spec.persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let mut logv = vec![0.0; n_days * ns];
    for s in 0..ns {
        logv[idx(0, s)] = normal(&mut rng);
    }
    for d in 1..n_days {
        for s in 0..ns {
            logv[idx(d, s)] = phi * logv[idx(d - 1, s)] + innov * normal(&mut rng);
        }
    }
    let volume: Vec<f64> = logv.iter().map(|v| 1e6 * (0.5 * v).exp()).collect();

    // hidden factor and its normal scores
    let dates = business_days(n_days);
    let symbols: Vec<String> = (0..ns).map(|s| format!("SYN{s:04}")).collect();
    let mut hidden = FactorMatrix::masked(dates.clone(), symbols.clone());
    let mut score = vec![0.0; n_days * ns];
    let mut has_score = vec![false; n_days];
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for d in spec.window - 1..n_days {
        let row: Vec<f64> = (0..ns)
            .map(|s| (d + 1 - spec.window..=d).map(|k| volume[idx(k, s)]).sum::<f64>() / spec.window as f64)
            .collect();
        for (s, v) in row.iter().enumerate() {
            hidden.set(d, s, *v);
        }
        let ranks = crate::stats::average_ranks(&row);
        for s in 0..ns {
            score[idx(d, s)] = std_normal.inverse_cdf((ranks[s] - 0.5) / ns as f64);
        }
        has_score[d] = true;
    }

    let mixing = solve_mixing(&score, &has_score, ns, spec)?;
    let resid = (1.0 - mixing * mixing).sqrt();

    // prices
    let mut bars = Vec::with_capacity(n_days * ns);
    let mut prev_close: Vec<f64> = (0..ns).map(|_| 100.0 * (0.3 * normal(&mut rng)).exp()).collect();
    for d in 0..n_days {
        let market = if d == 0 { 0.0 } else { spec.market_vol * normal(&mut rng) };
        for s in 0..ns {
            let signal = if d > 0 && has_score[d - 1] { score[idx(d - 1, s)] } else { 0.0 };
            let r = if d == 0 {
                0.0
            } else {
                market + spec.daily_vol * (mixing * signal + resid * normal(&mut rng))
            };
            let close = prev_close[s] * r.exp();
            let open = prev_close[s] * (0.25 * spec.daily_vol * normal(&mut rng)).exp();
            let up = (0.5 * spec.daily_vol * normal(&mut rng)).abs();
            let down = (0.5 * spec.daily_vol * normal(&mut rng)).abs();
            let high = open.max(close) * up.exp();
            let low = open.min(close) * (-down).exp();
            bars.push(Some(Bar {
                open,
                high,
                low,
                close,
                volume: volume[idx(d, s)],
                adj_close: close,
            }));
            prev_close[s] = close;
        }
    }
    let (panel, invalid_cells) = PricePanel::from_bars(dates, symbols, bars)?;
    debug_assert_eq!(invalid_cells, 0);
    Ok(SyntheticMarket {
        panel,
        hidden,
        mixing,
    })
}

fn solve_mixing(score: &[f64], has_score: &[bool], ns: usize, spec: &AlphaSpec) -> Result<f64> {
    let rho = spec.target_spearman;
    if rho == 0.0 {
        return Ok(0.0);
    }
    let h = spec.horizon;
    let n_days = has_score.len();
    // lag autocorrelation of normal scores, averaged over days
    let mut acf = vec![0.0; h];
    for (lag, slot) in acf.iter_mut().enumerate() {
        let mut total = 0.0;
        let mut count = 0usize;
        for d in 0..n_days.saturating_sub(lag) {
            if !(has_score[d] && has_score[d + lag]) {
                continue;
            }
            let a = &score[d * ns..(d + 1) * ns];
            let b = &score[(d + lag) * ns..(d + lag + 1) * ns];
            let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let den: f64 = a.iter().map(|x| x * x).sum();
            total += num / den;
            count += 1;
        }
        *slot = if count > 0 { total / count as f64 } else { 0.0 };
    }
    let s1: f64 = acf.iter().sum();
    let s2: f64 = h as f64 + 2.0 * (1..h).map(|l| (h - l) as f64 * acf[l]).sum::<f64>();
    let r = 2.0 * (std::f64::consts::PI * rho / 6.0).sin();
    let denom = s1 * s1 - r * r * (s2 - h as f64);
    let c2 = r * r * h as f64 / denom;
    if denom <= 0.0 || !(0.0..1.0).contains(&c2) {
        return Err(invalid(format!(
            "target Spearman {rho} is unreachable with window {} and horizon {h}",
            spec.window
        )));
    }
    Ok(c2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::batch::forward_return;

    fn mean_daily_spearman(m: &SyntheticMarket, horizon: usize) -> f64 {
        let p = &m.panel;
        let mut ics = Vec::new();
        for d in 0..p.n_days() - horizon {
            let r = forward_return(p, d, horizon).unwrap();
            let pairs: Vec<(f64, f64)> = (0..p.n_symbols())
                .filter_map(|s| Some((m.hidden.get(d, s)?, r[s]?)))
                .collect();
            if pairs.len() < 3 {
                continue;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let rx = crate::stats::average_ranks(&x);
            let ry = crate::stats::average_ranks(&y);
            ics.push(crate::stats::pearson(&rx, &ry).unwrap_or(0.0));
        }
        crate::stats::mean(&ics)
    }

    #[test]
    fn zero_target_has_no_signal() {
        let m = generate_synthetic_market(200, 500, 11, &AlphaSpec::with_target(0.0)).unwrap();
        assert_eq!(m.mixing, 0.0);
        let ic = mean_daily_spearman(&m, 5);
        assert!(ic.abs() < 0.05, "ic {ic}");
    }

    #[test]
    fn planted_target_is_recovered() {
        let m = generate_synthetic_market(200, 500, 3, &AlphaSpec::with_target(0.3)).unwrap();
        let ic = mean_daily_spearman(&m, 5);
        assert!((ic - 0.3).abs() < 0.05, "ic {ic}");
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_synthetic_market(20, 80, 9, &AlphaSpec::default()).unwrap();
        let b = generate_synthetic_market(20, 80, 9, &AlphaSpec::default()).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.hidden, b.hidden);
        let c = generate_synthetic_market(20, 80, 10, &AlphaSpec::default()).unwrap();
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_synthetic_market(1, 100, 0, &AlphaSpec::default()).is_err());
        assert!(generate_synthetic_market(10, 8, 0, &AlphaSpec::default()).is_err());
        assert!(generate_synthetic_market(10, 100, 0, &AlphaSpec::with_target(1.0)).is_err());
        assert!(generate_synthetic_market(10, 100, 0, &AlphaSpec::with_target(-0.1)).is_err());
    }
}
