//! k-means on diffusion coordinates: k-means++ seeding, Lloyd iterations
//! polished by Hartigan single-point transfers, best of several seeded
//! restarts.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest search space the exhaustive oracle accepts.
pub const ORACLE_MAX_ASSIGNMENTS: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 2,
            seed: 0,
            restarts: 10,
            max_iter: 300,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    /// Labels in `[0, k)`, renumbered in order of first appearance.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Seed of the winning restart.
    pub seed: u64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= k <= n (k = {k}, n = {n})"
        )));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinates of sample {i}")));
        }
    }
    Ok(dim)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a center
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (l, p) in labels.iter_mut().zip(points) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *l = best;
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn inertia_of(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// Refills empty clusters with the point farthest from the centroid of the
/// currently largest cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], k: usize, dim: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        let centroid = &means(points, labels, k, dim)[largest];
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let d = sq_dist(p, centroid);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        labels[far.unwrap()] = empty;
    }
}

/// Hartigan transfers: move single points between clusters while that
/// lowers the inertia. Every stable state is also a Lloyd fixed point.
fn hartigan_refine(points: &[Vec<f64>], labels: &mut [usize], k: usize, dim: usize, max_passes: usize) -> usize {
    let mut centroids = means(points, labels, k, dim);
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut moves = 0;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best = a;
            let mut best_gain = 0.0;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let gain = removal - nb / (nb + 1.0) * sq_dist(p, &centroids[b]);
                if gain > best_gain * (1.0 + 1e-12) + 1e-12 * removal {
                    best_gain = gain;
                    best = b;
                }
            }
            if best != a {
                let nb = counts[best] as f64;
                for d in 0..dim {
                    centroids[a][d] = (na * centroids[a][d] - p[d]) / (na - 1.0);
                    centroids[best][d] = (nb * centroids[best][d] + p[d]) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[best] += 1;
                labels[i] = best;
                moves += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    moves
}

fn canonicalize(labels: &mut [usize], centroids: &mut Vec<Vec<f64>>, k: usize) {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for l in labels.iter() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
    }
    for slot in map.iter_mut().filter(|m| **m == usize::MAX) {
        *slot = next;
        next += 1;
    }
    for l in labels.iter_mut() {
        *l = map[*l];
    }
    let mut reordered = vec![Vec::new(); k];
    for (old, c) in centroids.drain(..).enumerate() {
        reordered[map[old]] = c;
    }
    *centroids = reordered;
}

fn single_run(points: &[Vec<f64>], dim: usize, params: &KMeansParams, seed: u64) -> ClusterResult {
    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    assign(points, &centroids, &mut labels);
    repair_empty(points, &mut labels, k, dim);

    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let updated = means(points, &labels, k, dim);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = updated;
        let inertia = inertia_of(points, &labels, &centroids);
        debug_assert!(
            inertia <= previous * (1.0 + 1e-12) + 1e-300,
            "inertia increased: {previous} -> {inertia}"
        );
        previous = inertia;

        let mut next = labels.clone();
        assign(points, &centroids, &mut next);
        repair_empty(points, &mut next, k, dim);
        let unchanged = next == labels;
        labels = next;
        if unchanged || shift < params.tol {
            break;
        }
    }
    hartigan_refine(points, &mut labels, k, dim, params.max_iter);
    centroids = means(points, &labels, k, dim);
    let inertia = inertia_of(points, &labels, &centroids);
    debug_assert!(inertia <= previous * (1.0 + 1e-12) + 1e-300);
    canonicalize(&mut labels, &mut centroids, k);
    ClusterResult {
        k,
        labels,
        centroids,
        inertia,
        seed,
        iterations,
    }
}

/// Best of `params.restarts` seeded runs; restart `r` uses seed
/// `params.seed + r`, and ties in inertia go to the smaller seed.
pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> Result<ClusterResult> {
    let dim = validate(points, params.k)?;
    if params.restarts == 0 || params.max_iter == 0 {
        return Err(Error::InvalidArgument("restarts and max_iter must be positive".into()));
    }
    let runs: Vec<ClusterResult> = (0..params.restarts as u64)
        .into_par_iter()
        .map(|r| single_run(points, dim, params, params.seed.wrapping_add(r)))
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia).then(a.seed.cmp(&b.seed)))
        .unwrap();
    Ok(best)
}

/// Exact minimum inertia by enumerating all `k^n` label assignments.
pub fn kmeans_oracle(points: &[Vec<f64>], k: usize) -> Result<f64> {
    let dim = validate(points, k)?;
    let n = points.len();
    if (k as f64).powi(n as i32) > ORACLE_MAX_ASSIGNMENTS {
        return Err(Error::InvalidArgument(format!(
            "{k}^{n} assignments exceed the oracle limit"
        )));
    }
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let centroids = means(points, &labels, k, dim);
        best = best.min(inertia_of(points, &labels, &centroids));
        // odometer over base-k digits
        let mut pos = 0;
        while pos < n {
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }
    Ok(best)
}
