//! OHLCV panels, forward returns, per-day window batches and synthetic markets.

mod batch;
mod factor;
mod panel;
mod synthetic;

pub use batch::{
    eligible_days, forward_return, make_batches, BatchSet, SkippedDay, SplitKind, SplitSpec, Standardizer,
    WindowBatch, DEFAULT_HORIZON, DEFAULT_LOOKBACK, N_CHANNELS, STD_CLAMP,
};
pub use factor::FactorMatrix;
pub use panel::{load_panel, Bar, Field, LoadOptions, LoadReport, PricePanel};
pub use synthetic::{business_days, generate_synthetic_market, AlphaSpec, SyntheticMarket};
