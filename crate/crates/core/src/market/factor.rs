use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;

use super::panel::{parse_date, PricePanel};
use crate::error::{Error, Result};

/// Dates x symbols factor values with a validity mask.
///
/// Any factor producer (indicator, network, expression tree) emits one of these.
#[derive(Clone, Debug)]
pub struct FactorMatrix {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PartialEq for FactorMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.symbols == other.symbols
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

impl FactorMatrix {
    /// All-masked matrix on the panel's axes.
    pub fn empty_like(panel: &PricePanel) -> Self {
        Self::masked(panel.dates().to_vec(), panel.symbols().to_vec())
    }

    pub fn masked(dates: Vec<NaiveDate>, symbols: Vec<String>) -> Self {
        let n = dates.len() * symbols.len();
        Self {
            dates,
            symbols,
            values: vec![f64::NAN; n],
            mask: vec![false; n],
        }
    }

    /// Builds from values; non-finite entries are masked.
    pub fn from_values(dates: Vec<NaiveDate>, symbols: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != dates.len() * symbols.len() {
            return Err(Error::Shape(format!(
                "{} values for {}x{} factor",
                values.len(),
                dates.len(),
                symbols.len()
            )));
        }
        let mask = values.iter().map(|v| v.is_finite()).collect();
        Ok(Self {
            dates,
            symbols,
            values,
            mask,
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, day: usize, sym: usize) -> Option<f64> {
        let k = day * self.symbols.len() + sym;
        self.mask[k].then(|| self.values[k])
    }

    /// Sets a cell; non-finite values mask it.
    #[inline]
    pub fn set(&mut self, day: usize, sym: usize, value: f64) {
        let k = day * self.symbols.len() + sym;
        self.values[k] = value;
        self.mask[k] = value.is_finite();
    }

    #[inline]
    pub fn unset(&mut self, day: usize, sym: usize) {
        let k = day * self.symbols.len() + sym;
        self.values[k] = f64::NAN;
        self.mask[k] = false;
    }

    /// Valid (symbol, value) pairs for one day.
    pub fn row(&self, day: usize) -> Vec<(usize, f64)> {
        (0..self.symbols.len())
            .filter_map(|s| self.get(day, s).map(|v| (s, v)))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_axes(&self, other: &FactorMatrix) -> bool {
        self.dates == other.dates && self.symbols == other.symbols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self::masked(self.dates.clone(), self.symbols.clone());
        for k in 0..self.values.len() {
            if self.mask[k] {
                let v = f(self.values[k]);
                out.values[k] = v;
                out.mask[k] = v.is_finite();
            }
        }
        out
    }

    /// Writes `date,symbol,value`, omitting masked cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "symbol", "value"])?;
        for (d, date) in self.dates.iter().enumerate() {
            let ds = date.format("%Y-%m-%d").to_string();
            for (s, sym) in self.symbols.iter().enumerate() {
                if let Some(v) = self.get(d, s) {
                    w.write_record([ds.as_str(), sym.as_str(), &v.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads `date,symbol,value` onto the given axes. Rows outside the axes are
    /// an error; absent cells stay masked.
    pub fn read_csv(path: impl AsRef<Path>, dates: &[NaiveDate], symbols: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let mut out = Self::masked(dates.to_vec(), symbols.to_vec());
        let date_ix: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let sym_ix: HashMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Parse(format!("short factor row in {}", path.display())));
            }
            let date = parse_date(&rec[0])?;
            let d = *date_ix
                .get(&date)
                .ok_or_else(|| Error::Parse(format!("date {date} not on panel axis")))?;
            let s = *sym_ix
                .get(&rec[1])
                .ok_or_else(|| Error::Parse(format!("symbol {} not on panel axis", &rec[1])))?;
            let v: f64 = rec[2]
                .parse()
                .map_err(|e| Error::Parse(format!("bad factor value `{}`: {e}", &rec[2])))?;
            out.set(d, s, v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_skips_masked() {
        let dates = vec![
            NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
            NaiveDate::from_ymd_opt(2024, 1, 3).unwrap(),
        ];
        let syms = vec!["A".to_string(), "B".to_string()];
        let f = FactorMatrix::from_values(dates.clone(), syms.clone(), vec![0.1, f64::NAN, 1.0 / 3.0, -2.5e-17])
            .unwrap();
        assert_eq!(f.valid_count(), 3);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        f.write_csv(tmp.path()).unwrap();
        let text = std::fs::read_to_string(tmp.path()).unwrap();
        assert_eq!(text.lines().count(), 4);
        let g = FactorMatrix::read_csv(tmp.path(), &dates, &syms).unwrap();
        assert_eq!(f, g);
    }
}
