use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::market::FactorMatrix;
use crate::stats;

pub const DEFAULT_CLUSTERS: usize = 3;
pub const KMEANS_RESTARTS: usize = 50;
const KMEANS_MAX_ITER: usize = 300;

/// Log-softmax of a cross-section, shifted by its maximum for stability.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

/// Cross-entropy `sum softmax(a) * log(1 / softmax(b))`.
pub fn cross_entropy(a: &[f64], b: &[f64]) -> f64 {
    let la = log_softmax(a);
    let lb = log_softmax(b);
    -la.iter().zip(&lb).map(|(x, y)| x.exp() * y).sum::<f64>()
}

/// How each day's cross-section is prepared before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSection {
    /// Factor values as they are.
    Raw,
    /// Standardized to zero mean and unit variance, so factors on different
    /// scales are comparable.
    #[default]
    ZScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    /// Mean distance between cluster medoids.
    pub score: f64,
    /// Day-averaged asymmetric cross-entropy, row-major `k x k`.
    pub raw: Vec<f64>,
    /// `(raw + raw') / 2`.
    pub symmetric: Vec<f64>,
    pub assignment: Vec<usize>,
    pub medoids: Vec<usize>,
    pub days_used: usize,
}

/// Averages per-day cross-entropy over days where at least two symbols are
/// valid for every factor, clusters the rows of the symmetrized matrix, and
/// scores the mean pairwise distance between cluster medoids.
pub fn diversity_score(
    factors: &[FactorMatrix],
    days: std::ops::Range<usize>,
    k: usize,
    prep: CrossSection,
    seed: u64,
) -> Result<Diversity> {
    let n = factors.len();
    if k == 0 || k > n {
        return Err(invalid(format!("{k} clusters for {n} factors")));
    }
    if factors.iter().any(|f| !f.same_axes(&factors[0])) {
        return Err(invalid("factors must share axes"));
    }
    let mut raw = vec![0.0; n * n];
    let mut used = 0;
    for d in days {
        let syms: Vec<usize> = (0..factors[0].n_symbols())
            .filter(|&s| factors.iter().all(|f| f.get(d, s).is_some()))
            .collect();
        if syms.len() < 2 {
            continue;
        }
        let logp: Vec<Vec<f64>> = factors
            .iter()
            .map(|f| {
                let xs: Vec<f64> = syms.iter().map(|&s| f.get(d, s).expect("filtered")).collect();
                match prep {
                    CrossSection::Raw => log_softmax(&xs),
                    CrossSection::ZScore => log_softmax(&stats::zscore(&xs)),
                }
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                raw[i * n + j] -= logp[i].iter().zip(&logp[j]).map(|(a, b)| a.exp() * b).sum::<f64>();
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(invalid("no day with a common cross-section"));
    }
    raw.iter_mut().for_each(|v| *v /= used as f64);
    let symmetric: Vec<f64> = (0..n * n).map(|ij| (raw[ij] + raw[(ij % n) * n + ij / n]) / 2.0).collect();
    let points: Vec<Vec<f64>> = symmetric.chunks(n).map(<[f64]>::to_vec).collect();
    let assignment = kmeans(&points, k, KMEANS_RESTARTS, seed)?.assignment;
    let medoids = medoids(&symmetric, n, &assignment, k);
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..medoids.len() {
        for b in a + 1..medoids.len() {
            total += symmetric[medoids[a] * n + medoids[b]];
            pairs += 1;
        }
    }
    Ok(Diversity {
        score: if pairs > 0 { total / pairs as f64 } else { 0.0 },
        raw,
        symmetric,
        assignment,
        medoids,
        days_used: used,
    })
}

/// Member of each cluster with the smallest summed distance to its cluster mates.
fn medoids(dist: &[f64], n: usize, assignment: &[usize], k: usize) -> Vec<usize> {
    (0..k)
        .filter_map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            members.iter().copied().min_by(|&a, &b| {
                let sa: f64 = members.iter().map(|&m| dist[a * n + m]).sum();
                let sb: f64 = members.iter().map(|&m| dist[b * n + m]).sum();
                sa.total_cmp(&sb)
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centers.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            d.iter()
                .position(|&w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeans {
    let k = centers.len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..k)
                    .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                    .expect("k >= 1")
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            // an emptied cluster keeps its previous center
            if !members.is_empty() {
                for (dim, v) in center.iter_mut().enumerate() {
                    *v = members.iter().map(|p| p[dim]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    let inertia = points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
    KMeans {
        assignment,
        centers,
        inertia,
    }
}

/// k-means++ seeding with `restarts` independent runs; the lowest inertia wins,
/// ties to the earliest restart. Cluster labels are renumbered by first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() || restarts == 0 {
        return Err(invalid(format!("k-means with k={k} over {} points", points.len())));
    }
    let runs: Vec<KMeans> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            lloyd(points, plus_plus_init(points, k, &mut rng))
        })
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("restarts >= 1");
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for a in best.assignment.iter_mut() {
        if relabel[*a] == usize::MAX {
            relabel[*a] = next;
            next += 1;
        }
        *a = relabel[*a];
    }
    let mut centers = vec![Vec::new(); k];
    for (old, &new) in relabel.iter().enumerate() {
        if new != usize::MAX {
            centers[new] = best.centers[old].clone();
        }
    }
    best.centers = centers.into_iter().filter(|c| !c.is_empty()).collect();
    Ok(best)
}
