use std::ops::Range;

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ic_stats::ic_stats;
use crate::error::{invalid, Error, Result};
use crate::market::{FactorMatrix, PricePanel};
use crate::stats;

/// Condition numbers above this trigger the ridge term.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge `eps = RIDGE_SCALE * trace / dim`.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Named factors with their mean daily IC vector and IC-series covariance.
#[derive(Clone, Debug)]
pub struct FactorSet {
    pub names: Vec<String>,
    pub factors: Vec<FactorMatrix>,
    pub ic_vector: Vec<f64>,
    /// Row-major `k x k` sample covariance over days where every factor has an IC.
    pub ic_cov: Vec<f64>,
    pub common_days: usize,
}

impl FactorSet {
    pub fn build(names: Vec<String>, factors: Vec<FactorMatrix>, panel: &PricePanel, days: Range<usize>, horizon: usize) -> Result<Self> {
        if names.len() != factors.len() || factors.is_empty() {
            return Err(invalid("need one name per factor and at least one factor"));
        }
        let all: Vec<_> = factors
            .iter()
            .map(|f| ic_stats(f, panel, days.clone(), horizon))
            .collect::<Result<_>>()?;
        let k = factors.len();
        // days on which every factor has an IC
        let mut by_day: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for st in &all {
            for d in &st.daily {
                by_day.entry(d.day).or_default().push(d.ic);
            }
        }
        let rows: Vec<Vec<f64>> = by_day.into_values().filter(|v| v.len() == k).collect();
        if rows.len() < 2 {
            return Err(invalid(format!("only {} days where all {k} factors have an IC", rows.len())));
        }
        let ic_vector: Vec<f64> = (0..k).map(|j| stats::mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
        let ic_cov = covariance(&rows);
        Ok(Self {
            names,
            factors,
            ic_vector,
            ic_cov,
            common_days: rows.len(),
        })
    }

    /// A set with given statistics and no factor values, for pure weight math.
    pub fn from_moments(ic_vector: Vec<f64>, ic_cov: Vec<f64>) -> Result<Self> {
        let k = ic_vector.len();
        if ic_cov.len() != k * k || k == 0 {
            return Err(Error::Shape(format!("{k} ICs with {} covariance entries", ic_cov.len())));
        }
        Ok(Self {
            names: (0..k).map(|i| format!("f{i}")).collect(),
            factors: Vec::new(),
            ic_vector,
            ic_cov,
            common_days: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.ic_vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ic_vector.is_empty()
    }

    /// Restriction to the listed members.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let k = self.len();
        Self {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            factors: if self.factors.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.factors[i].clone()).collect()
            },
            ic_vector: idx.iter().map(|&i| self.ic_vector[i]).collect(),
            ic_cov: idx.iter().flat_map(|&i| idx.iter().map(move |&j| (i, j))).map(|(i, j)| self.ic_cov[i * k + j]).collect(),
            common_days: self.common_days,
        }
    }
}

/// Sample covariance of the columns of `rows`.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let c = rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / (n as f64 - 1.0);
            cov[i * k + j] = c;
            cov[j * k + i] = c;
        }
    }
    cov
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub weights: Vec<f64>,
    /// `weights . ic_vector = (1/lambda) IC' S^-1 IC`.
    pub ic_star: f64,
    /// Ridge added to the diagonal, if any.
    pub ridge: Option<f64>,
}

/// Maximizes `v'IC - lambda/2 v'Sv`. A ridge `eps I` is added only when the
/// Cholesky factorization fails or the condition number exceeds 1e12.
pub fn optimal_combination(fs: &FactorSet, lambda: f64) -> Result<Combination> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda must be positive"));
    }
    let k = fs.len();
    let sigma = DMatrix::from_row_slice(k, k, &fs.ic_cov);
    let ic = DVector::from_column_slice(&fs.ic_vector);
    if sigma.iter().chain(ic.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("IC moments".into()));
    }
    let well_posed = |m: &DMatrix<f64>| {
        let eig = m.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        lo > 0.0 && hi / lo <= MAX_CONDITION
    };
    let (chol, ridge) = match sigma.clone().cholesky().filter(|_| well_posed(&sigma)) {
        Some(c) => (c, None),
        None => {
            let eps = RIDGE_SCALE * sigma.trace() / k as f64;
            if !(eps > 0.0) {
                return Err(Error::Singular("IC covariance has zero trace".into()));
            }
            let ridged = &sigma + DMatrix::identity(k, k) * eps;
            info!("IC covariance ill-conditioned; ridge {eps:.3e} added");
            let c = ridged
                .cholesky()
                .ok_or_else(|| Error::Singular("IC covariance not positive definite after ridge".into()))?;
            (c, Some(eps))
        }
    };
    let weights = chol.solve(&ic) / lambda;
    let ic_star = weights.dot(&ic);
    Ok(Combination {
        weights: weights.iter().copied().collect(),
        ic_star,
        ridge,
    })
}

/// Per-day weighted sum of z-scored cross-sections over cells where every factor is valid.
pub fn combine_factors(factors: &[FactorMatrix], weights: &[f64]) -> Result<FactorMatrix> {
    let first = factors.first().ok_or_else(|| invalid("no factors to combine"))?;
    if weights.len() != factors.len() || factors.iter().any(|f| !f.same_axes(first)) {
        return Err(invalid("factors and weights must align"));
    }
    let mut out = FactorMatrix::masked(first.dates().to_vec(), first.symbols().to_vec());
    for d in 0..first.n_days() {
        let syms: Vec<usize> = (0..first.n_symbols())
            .filter(|&s| factors.iter().all(|f| f.get(d, s).is_some()))
            .collect();
        if syms.len() < 2 {
            continue;
        }
        let mut acc = vec![0.0; syms.len()];
        for (f, &w) in factors.iter().zip(weights) {
            let xs: Vec<f64> = syms.iter().map(|&s| f.get(d, s).expect("filtered")).collect();
            for (a, z) in acc.iter_mut().zip(stats::zscore(&xs)) {
                *a += w * z;
            }
        }
        for (&s, v) in syms.iter().zip(acc) {
            out.set(d, s, v);
        }
    }
    Ok(out)
}

/// Top `k` member indices by absolute weight, ties to the lower index.
pub fn top_by_weight(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
