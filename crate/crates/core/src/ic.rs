//! Differentiable rank-IC surrogate and the exact Spearman oracle.
//!
//! `g(x) = 1 / (1 + exp(-p (x - mean) / (2 std)))` squashes a cross-section into
//! (0, 1) while preserving order; the Pearson correlation of `g(x)` and `g(y)`
//! then behaves like a rank correlation but has a gradient.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NetGradients, NetworkGraph};
use crate::error::{invalid, Result};
use crate::market::WindowBatch;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    /// Sharpness of the logistic.
    pub p: f64,
    /// Inputs with population std below this are treated as constant.
    pub eps: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { p: 1.83, eps: 1e-12 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.eps > 0.0) {
            return Err(invalid("kernel p and eps must be positive"));
        }
        Ok(())
    }
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Standardized scores `(x - mean) / std` or `None` for (near) constant input.
fn standardize(x: &[f64], eps: f64) -> Option<(Vec<f64>, f64)> {
    let m = stats::mean(x);
    let sd = stats::std_pop(x);
    (sd >= eps).then(|| (x.iter().map(|v| (v - m) / sd).collect(), sd))
}

pub fn kernel_g(x: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() < 2 {
        return Err(invalid("kernel needs at least 2 values"));
    }
    Ok(match standardize(x, params.eps) {
        Some((z, _)) => z.iter().map(|v| logistic(params.p * v / 2.0)).collect(),
        None => vec![0.5; x.len()],
    })
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(invalid("correlation needs at least 3 values"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

/// Pearson correlation of `g(x)` and `g(y)`. Degenerate sides give 0.
pub fn diff_ic(x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
    Ok(diff_ic_grad(x, y, params)?.0)
}

/// `diff_ic` and its gradient with respect to `x`.
pub fn diff_ic_grad(x: &[f64], y: &[f64], params: &KernelParams) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    check_pair(x, y)?;
    let n = x.len();
    let zero = || (0.0, vec![0.0; n]);
    let Some((zy, _)) = standardize(y, params.eps) else {
        warn!("constant returns in a cross-section of {n}; IC taken as 0");
        return Ok(zero());
    };
    let Some((zx, sx)) = standardize(x, params.eps) else {
        return Ok(zero());
    };
    let half_p = params.p / 2.0;
    let s: Vec<f64> = zx.iter().map(|v| logistic(half_p * v)).collect();
    let t: Vec<f64> = zy.iter().map(|v| logistic(half_p * v)).collect();
    let (ms, mt) = (stats::mean(&s), stats::mean(&t));
    let sc: Vec<f64> = s.iter().map(|v| v - ms).collect();
    let tc: Vec<f64> = t.iter().map(|v| v - mt).collect();
    let ns = sc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = tc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ns == 0.0 || nt == 0.0 {
        return Ok(zero());
    }
    let corr = sc.iter().zip(&tc).map(|(a, b)| a * b).sum::<f64>() / (ns * nt);

    // d corr / d z_i through the logistic
    let b: Vec<f64> = (0..n)
        .map(|i| {
            let dcorr_ds = tc[i] / (ns * nt) - corr * sc[i] / (ns * ns);
            dcorr_ds * half_p * s[i] * (1.0 - s[i])
        })
        .collect();
    // z = (x - mean)/std with population std:
    // dL/dx_j = (b_j - mean(b)) / std - z_j * mean(b . z) / std
    let mb = stats::mean(&b);
    let bz = b.iter().zip(&zx).map(|(u, v)| u * v).sum::<f64>() / n as f64;
    let grad = (0..n).map(|j| (b[j] - mb - zx[j] * bz) / sx).collect();
    Ok((corr.clamp(-1.0, 1.0), grad))
}

/// Pearson correlation of average ranks. Constant input gives 0.
pub fn exact_spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let rx = stats::average_ranks(x);
    let ry = stats::average_ranks(y);
    Ok(stats::pearson(&rx, &ry).unwrap_or_else(|| {
        warn!("constant input to Spearman over {} values; taken as 0", x.len());
        0.0
    }))
}

/// Loss, per-day surrogate ICs and accumulated parameter gradients.
#[derive(Clone, Debug)]
pub struct IcLoss {
    pub loss: f64,
    pub ics: Vec<f64>,
    pub grads: NetGradients,
}

/// `-mean_q diff_ic(net(batch), returns)` and its gradient over the network.
pub fn ic_loss(batches: &[&WindowBatch], net: &NetworkGraph, params: &KernelParams) -> Result<IcLoss> {
    if batches.is_empty() {
        return Err(invalid("IC loss needs at least one batch"));
    }
    let q = batches.len() as f64;
    let mut total: Option<NetGradients> = None;
    let mut ics = Vec::with_capacity(batches.len());
    for batch in batches {
        if batch.len() < 3 {
            return Err(invalid(format!("batch on day {} has fewer than 3 symbols", batch.day)));
        }
        let fwd = net.forward(&batch.tensor)?;
        let (ic, d_ic) = diff_ic_grad(fwd.output(), &batch.returns, params)?;
        ics.push(ic);
        let seed: Vec<f64> = d_ic.iter().map(|g| -g / q).collect();
        let grads = fwd.backward(net, &seed)?;
        match &mut total {
            Some(t) => t.accumulate(&grads),
            None => total = Some(grads),
        }
    }
    let loss = -stats::mean(&ics);
    if !loss.is_finite() {
        return Err(crate::Error::NonFinite("IC loss".into()));
    }
    Ok(IcLoss {
        loss,
        ics,
        grads: total.expect("at least one batch"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..a.len() {
            num += (a[i] - ma) * (b[i] - mb);
            da += (a[i] - ma).powi(2);
            db += (b[i] - mb).powi(2);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn kernel_values() {
        let p = KernelParams::default();
        let x = [1.0, 2.0, 3.0];
        let g = kernel_g(&x, &p).unwrap();
        assert!((g[1] - 0.5).abs() < 1e-15);
        // mean 0, population std 1, first entry at mean + 2 std
        let g = kernel_g(&[2.0, -0.5, -0.5, -0.5, -0.5], &p).unwrap();
        assert!((g[0] - 1.0 / (1.0 + (-1.83f64).exp())).abs() < 1e-15);
        assert!((g[0] - 0.8617).abs() < 1e-4);
        assert_eq!(kernel_g(&[4.0; 5], &p).unwrap(), vec![0.5; 5]);
        assert!(kernel_g(&[1.0], &p).is_err());
    }

    #[test]
    fn self_and_anti_correlation() {
        let p = KernelParams::default();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((diff_ic(&x, &x, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((diff_ic(&x, &neg, &p).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(diff_ic(&x, &[0.01; 50], &p).unwrap(), 0.0);
    }

    #[test]
    fn matches_two_pass_oracle_and_spearman() {
        let p = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.random_range(-1.0..1.0)).collect();
        let oracle = two_pass_pearson(&kernel_g(&x, &p).unwrap(), &kernel_g(&y, &p).unwrap());
        let v = diff_ic(&x, &y, &p).unwrap();
        assert!((v - oracle).abs() < 1e-10);
        assert!((v - exact_spearman(&x, &y).unwrap()).abs() < 0.05);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-0.1..0.1)).collect();
        let (_, g) = diff_ic_grad(&x, &y, &p).unwrap();
        let h = 1e-6;
        for j in 0..12 {
            let mut a = x.clone();
            a[j] += h;
            let mut b = x.clone();
            b[j] -= h;
            let fd = (diff_ic(&a, &y, &p).unwrap() - diff_ic(&b, &y, &p).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn affine_invariance_and_sign_symmetry() {
        let p = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = diff_ic(&x, &y, &p).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.5 * v - 2.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.01 * v + 7.0).collect();
        assert!((diff_ic(&xs, &ys, &p).unwrap() - base).abs() < 1e-10);
        let yn: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((diff_ic(&x, &yn, &p).unwrap() + base).abs() < 1e-12);
    }

    #[test]
    fn spearman_hand_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((exact_spearman(&x, &[2.0, 3.0, 9.0, 10.0, 11.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(exact_spearman(&x, &[1.0; 5]).unwrap(), 0.0);
        // ranks of y: [1, 2, 3.5, 5, 3.5]; centered dot 8, norms sqrt(10) and sqrt(9.5)
        let rho = exact_spearman(&x, &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
        assert!((rho - 8.0 / 95f64.sqrt()).abs() < 1e-12);
    }
}
