#![allow(dead_code)]

use factorlab::autodiff::{NetworkGraph, Tensor};
use factorlab::ic::{ic_loss, KernelParams};
use factorlab::market::{business_days, WindowBatch, N_CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Relative error with an absolute floor so near-zero gradients compare sensibly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Day with `n` symbols of standard-normal windows and returns correlated
/// with the last close.
pub fn random_batch(n: usize, m: usize, day: usize, seed: u64) -> WindowBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * N_CHANNELS * m).map(|_| rng.sample(StandardNormal)).collect();
    let tensor = Tensor::new(vec![n, N_CHANNELS, m], data).unwrap();
    let returns = (0..n)
        .map(|i| {
            let last_close = tensor.data()[i * N_CHANNELS * m + 3 * m + m - 1];
            0.3 * last_close + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    WindowBatch {
        day,
        date: business_days(day + 1)[day],
        symbols: (0..n).collect(),
        tensor,
        returns,
    }
}

pub fn loss_of(net: &NetworkGraph, batches: &[WindowBatch], kernel: &KernelParams) -> f64 {
    let refs: Vec<&WindowBatch> = batches.iter().collect();
    ic_loss(&refs, net, kernel).unwrap().loss
}

/// Largest relative error between analytic and central-difference gradients
/// of the IC loss over every parameter entry.
pub fn max_ic_grad_error(net: &NetworkGraph, batches: &[WindowBatch], kernel: &KernelParams, h: f64) -> f64 {
    let refs: Vec<&WindowBatch> = batches.iter().collect();
    let analytic = ic_loss(&refs, net, kernel).unwrap().grads;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (pi, g) in analytic.params.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params()[pi].value.data()[k];
            probe.params_mut()[pi].value.data_mut()[k] = orig + h;
            let up = loss_of(&probe, batches, kernel);
            probe.params_mut()[pi].value.data_mut()[k] = orig - h;
            let down = loss_of(&probe, batches, kernel);
            probe.params_mut()[pi].value.data_mut()[k] = orig;
            worst = worst.max(rel_err(g.data()[k], (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Maximizes `v'a - lambda/2 v'Sv` by cyclic coordinate ascent and returns
/// `(v, v'a)`. Independent of any factorization.
pub fn coordinate_ascent(a: &[f64], cov: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let k = a.len();
    let mut v = vec![0.0; k];
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for i in 0..k {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| cov[i * k + j] * v[j]).sum();
            let next = (a[i] / lambda - off) / cov[i * k + i];
            moved = moved.max((next - v[i]).abs());
            v[i] = next;
        }
        if moved < 1e-16 {
            break;
        }
    }
    let ic = v.iter().zip(a).map(|(x, y)| x * y).sum();
    (v, ic)
}

/// Lowest-inertia two-way partition of `points` by enumeration. Labels are
/// normalized so point 0 is in cluster 0.
pub fn best_two_partition(points: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for mask in 1u32..(1 << n) - 1 {
        if mask & 1 == 1 {
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let mut inertia = 0.0;
        for c in 0..2 {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            let dim = points[0].len();
            let centre: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            inertia += members.iter().map(|p| p.iter().zip(&centre).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sum::<f64>();
        }
        if inertia < best.1 {
            best = (labels, inertia);
        }
    }
    best
}

/// Cluster labels renumbered by first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
