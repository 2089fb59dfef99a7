use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{load_summary, load_timing, run_pipeline};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: String,
    pub network: String,
    pub data_hash: String,
    pub factors: usize,
    pub mean_test_ic: f64,
    pub best_test_ic: f64,
    pub combined_test_ic: Option<f64>,
    pub diversity: Option<f64>,
    pub annualized_return: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub sharpe: Option<f64>,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Aligned plain-text table. Backtest columns refer to the combined factor.
    pub fn to_text(&self) -> String {
        let header = [
            "scheme", "network", "factors", "mean IC", "best IC", "comb IC", "diversity", "ann ret", "max DD", "sharpe", "time s",
        ];
        let rows: Vec<[String; 11]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.scheme.clone(),
                    r.network.clone(),
                    r.factors.to_string(),
                    format!("{:.4}", r.mean_test_ic),
                    format!("{:.4}", r.best_test_ic),
                    opt(r.combined_test_ic, 4),
                    opt(r.diversity, 4),
                    opt(r.annualized_return, 4),
                    opt(r.max_drawdown, 4),
                    opt(r.sharpe, 3),
                    opt(r.wall_seconds, 1),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let line = |cells: Vec<&str>, s: &mut String| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        };
        line(header.to_vec(), &mut s);
        for r in &rows {
            line(r.iter().map(String::as_str).collect(), &mut s);
        }
        s
    }
}

/// Tabulates finished runs; all must share the same data hash.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let s = load_summary(dir)?;
        let bt = s.combined.as_ref().and_then(|c| c.backtest.as_ref());
        rows.push(ComparisonRow {
            scheme: s.scheme.to_string(),
            network: s.network.clone().unwrap_or_else(|| "-".into()),
            data_hash: s.data_hash.clone(),
            factors: s.factors.len(),
            mean_test_ic: s.mean_test_ic,
            best_test_ic: s.best_test_ic,
            combined_test_ic: s.combined.as_ref().map(|c| c.ic.mean),
            diversity: s.diversity,
            annualized_return: bt.map(|b| b.performance.annualized_return),
            max_drawdown: bt.map(|b| b.performance.max_drawdown),
            sharpe: bt.map(|b| b.performance.sharpe),
            wall_seconds: load_timing(dir).map(|t| t.wall_seconds),
        });
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().find(|r| r.data_hash != first.data_hash) {
            return Err(Error::Config(format!(
                "runs use different data: {} ({}) vs {} ({})",
                first.scheme, first.data_hash, bad.scheme, bad.data_hash
            )));
        }
    }
    Ok(Comparison { rows })
}

/// Runs each config under `root/<index>-<scheme>` and tabulates the results.
pub fn compare_schemes(configs: &[ExperimentConfig], root: impl AsRef<Path>) -> Result<Comparison> {
    let mut dirs = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let dir = root.as_ref().join(format!("{i}-{}", cfg.scheme));
        run_pipeline(cfg, &dir)?;
        dirs.push(dir);
    }
    compare_runs(&dirs)
}
