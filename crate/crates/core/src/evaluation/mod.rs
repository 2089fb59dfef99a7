//! Downstream evaluation of factor values: IC statistics, diversity,
//! IC-weighted combination and quantile backtests.

mod backtest;
mod combination;
mod diversity;
mod ic_stats;
mod report;

pub use backtest::{
    backtest, performance, BacktestConfig, BacktestMode, BacktestReport, Performance, Period, DEFAULT_COMMISSION,
    TRADING_DAYS_PER_YEAR,
};
pub use combination::{
    combine_factors, covariance, optimal_combination, top_by_weight, Combination, FactorSet, MAX_CONDITION, RIDGE_SCALE,
};
pub use diversity::{
    cross_entropy, diversity_score, CrossSection, kmeans, log_softmax, Diversity, KMeans, DEFAULT_CLUSTERS, KMEANS_RESTARTS,
};
pub use ic_stats::{ic_stats, IcDay, IcSkip, IcStats};
pub use report::{write_distance_csv, EvalReport, REPORT_SCHEMA_VERSION};
