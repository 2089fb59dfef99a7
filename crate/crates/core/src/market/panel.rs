use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};

/// Price and volume fields of a panel cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Open,
    High,
    Low,
    Close,
    Volume,
    AdjClose,
}

impl Field {
    /// The five network input channels, in tensor order.
    pub const OHLCV: [Field; 5] = [
        Field::Open,
        Field::High,
        Field::Low,
        Field::Close,
        Field::Volume,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub adj_close: f64,
}

impl Bar {
    pub fn is_valid(&self) -> bool {
        let prices = [self.open, self.high, self.low, self.close, self.adj_close];
        prices.iter().all(|p| p.is_finite() && *p > 0.0)
            && self.volume.is_finite()
            && self.volume >= 0.0
            && self.high >= self.open.max(self.close)
            && self.open.min(self.close) >= self.low
    }
}

/// Aligned dates x symbols OHLCV panel with a tradability mask.
///
/// Values are stored row-major by date. Masked cells keep whatever values were
/// supplied but must never be read as data.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    open: Vec<f64>,
    high: Vec<f64>,
    low: Vec<f64>,
    close: Vec<f64>,
    volume: Vec<f64>,
    adj_close: Vec<f64>,
    mask: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    /// Rows that violated price ordering or positivity and were masked.
    pub invalid_masked: usize,
    /// (date, symbol) cells absent from the file.
    pub missing_cells: usize,
    pub adj_close_defaulted: bool,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub delimiter: u8,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

impl PricePanel {
    /// Builds a panel from per-cell bars (row-major by date, `None` = missing).
    /// Invalid bars are masked; the number masked is returned alongside.
    pub fn from_bars(
        dates: Vec<NaiveDate>,
        symbols: Vec<String>,
        bars: Vec<Option<Bar>>,
    ) -> Result<(Self, usize)> {
        if dates.is_empty() || symbols.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "dates must be strictly increasing".into(),
            ));
        }
        let unique: BTreeSet<&String> = symbols.iter().collect();
        if unique.len() != symbols.len() {
            return Err(Error::InvalidArgument("symbols must be unique".into()));
        }
        let cells = dates.len() * symbols.len();
        if bars.len() != cells {
            return Err(Error::Shape(format!(
                "expected {cells} cells, got {}",
                bars.len()
            )));
        }
        let mut panel = PricePanel {
            dates,
            symbols,
            open: vec![f64::NAN; cells],
            high: vec![f64::NAN; cells],
            low: vec![f64::NAN; cells],
            close: vec![f64::NAN; cells],
            volume: vec![f64::NAN; cells],
            adj_close: vec![f64::NAN; cells],
            mask: vec![false; cells],
        };
        let mut invalid = 0;
        for (k, bar) in bars.into_iter().enumerate() {
            let Some(b) = bar else { continue };
            panel.open[k] = b.open;
            panel.high[k] = b.high;
            panel.low[k] = b.low;
            panel.close[k] = b.close;
            panel.volume[k] = b.volume;
            panel.adj_close[k] = b.adj_close;
            if b.is_valid() {
                panel.mask[k] = true;
            } else {
                invalid += 1;
            }
        }
        if !panel.mask.iter().any(|&m| m) {
            return Err(Error::EmptyPanel);
        }
        Ok((panel, invalid))
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    #[inline]
    pub fn index(&self, day: usize, sym: usize) -> usize {
        day * self.symbols.len() + sym
    }

    #[inline]
    pub fn is_valid(&self, day: usize, sym: usize) -> bool {
        self.mask[self.index(day, sym)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major values of one field.
    pub fn field(&self, field: Field) -> &[f64] {
        match field {
            Field::Open => &self.open,
            Field::High => &self.high,
            Field::Low => &self.low,
            Field::Close => &self.close,
            Field::Volume => &self.volume,
            Field::AdjClose => &self.adj_close,
        }
    }

    #[inline]
    pub fn get(&self, field: Field, day: usize, sym: usize) -> f64 {
        self.field(field)[self.index(day, sym)]
    }

    pub fn bar(&self, day: usize, sym: usize) -> Option<Bar> {
        let k = self.index(day, sym);
        self.mask[k].then(|| Bar {
            open: self.open[k],
            high: self.high[k],
            low: self.low[k],
            close: self.close[k],
            volume: self.volume[k],
            adj_close: self.adj_close[k],
        })
    }

    pub fn unmasked_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Returns a copy with every price field multiplied by `c` (volume untouched).
    pub fn scale_prices(&self, c: f64) -> Self {
        let mut p = self.clone();
        for v in [
            &mut p.open,
            &mut p.high,
            &mut p.low,
            &mut p.close,
            &mut p.adj_close,
        ] {
            v.iter_mut().for_each(|x| *x *= c);
        }
        p
    }

    /// Returns the sub-panel of days `[start, end)`.
    pub fn slice_days(&self, start: usize, end: usize) -> Self {
        let n = self.symbols.len();
        let r = start * n..end * n;
        PricePanel {
            dates: self.dates[start..end].to_vec(),
            symbols: self.symbols.clone(),
            open: self.open[r.clone()].to_vec(),
            high: self.high[r.clone()].to_vec(),
            low: self.low[r.clone()].to_vec(),
            close: self.close[r.clone()].to_vec(),
            volume: self.volume[r.clone()].to_vec(),
            adj_close: self.adj_close[r.clone()].to_vec(),
            mask: self.mask[r].to_vec(),
        }
    }

    /// Writes the panel in the canonical CSV schema; masked cells are omitted.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "date",
            "symbol",
            "open",
            "high",
            "low",
            "close",
            "volume",
            "adj_close",
        ])?;
        for (d, date) in self.dates.iter().enumerate() {
            let ds = date.format("%Y-%m-%d").to_string();
            for (s, sym) in self.symbols.iter().enumerate() {
                if let Some(b) = self.bar(d, s) {
                    w.write_record([
                        ds.as_str(),
                        sym.as_str(),
                        &b.open.to_string(),
                        &b.high.to_string(),
                        &b.low.to_string(),
                        &b.close.to_string(),
                        &b.volume.to_string(),
                        &b.adj_close.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Parse(format!("bad date `{s}`: {e}")))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad {what} `{s}`: {e}")))
}

/// Loads a panel from `date,symbol,open,high,low,close,volume[,adj_close]` CSV.
///
/// Rows that violate the price-ordering invariants are masked and counted in the
/// report. A missing `adj_close` column defaults every adj_close to close.
pub fn load_panel(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(PricePanel, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = ["date", "symbol", "open", "high", "low", "close", "volume"];
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name).ok_or_else(|| Error::Parse(format!("missing column `{name}`")))?;
    }
    let adj_idx = col("adj_close");

    let mut rows: Vec<(NaiveDate, String, Bar)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date = parse_date(field(idx[0]))?;
        let symbol = field(idx[1]).to_string();
        let close = parse_f64(field(idx[5]), "close")?;
        let bar = Bar {
            open: parse_f64(field(idx[2]), "open")?,
            high: parse_f64(field(idx[3]), "high")?,
            low: parse_f64(field(idx[4]), "low")?,
            close,
            volume: parse_f64(field(idx[6]), "volume")?,
            adj_close: match adj_idx {
                Some(i) => parse_f64(field(i), "adj_close")?,
                None => close,
            },
        };
        rows.push((date, symbol, bar));
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel);
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect::<BTreeSet<_>>().into_iter().collect();
    let symbols: Vec<String> = rows
        .iter()
        .map(|r| r.1.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let date_ix: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let sym_ix: HashMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let n_rows = rows.len();
    let mut bars: Vec<Option<Bar>> = vec![None; dates.len() * symbols.len()];
    for (date, symbol, bar) in &rows {
        let k = date_ix[date] * symbols.len() + sym_ix[symbol.as_str()];
        if bars[k].is_some() {
            return Err(Error::DuplicateRow {
                date: date.to_string(),
                symbol: symbol.clone(),
            });
        }
        bars[k] = Some(*bar);
    }
    let missing = bars.iter().filter(|b| b.is_none()).count();
    let (panel, invalid) = PricePanel::from_bars(dates, symbols, bars)?;
    if invalid > 0 {
        warn!("{}: masked {invalid} rows violating price invariants", path.display());
    }
    Ok((
        panel,
        LoadReport {
            rows: n_rows,
            invalid_masked: invalid,
            missing_cells: missing,
            adj_close_defaulted: adj_idx.is_none(),
        },
    ))
}
