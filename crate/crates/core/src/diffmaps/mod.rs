//! Diffusion Maps on a precomputed distance matrix.
//!
//! Pipeline: bandwidth `h` from neighborhood-size stability, heat kernel
//! `A = exp(-d²/4h)`, density debiasing `Â = A/(p pᵀ)`, symmetric conjugate
//! `Ŝ` of the Markov matrix, eigenpairs of `Ŝ`, and finally eigenfunctions
//! of the Markov matrix rescaled by the stationary vector.

mod eigen;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::DistanceMatrix;

pub use eigen::JACOBI_MAX_N;

/// Default number of retained eigenpairs (the trivial one plus ten).
pub const DEFAULT_M: usize = 11;
/// Default neighbor count for the bandwidth heuristic.
pub const DEFAULT_N_MIN: usize = 10;
/// Gap below which `λ_0` is treated as repeated.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Dense symmetric matrix in row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from a full row-major buffer; rejects asymmetric input.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::InvalidArgument(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Smallest `h` such that every sample has at least `n_min` other samples
/// within `√(2h)`, floored at `1e-8 · median(d²)/2` so duplicate samples do
/// not collapse the kernel. Falls back to `h = 1` when every distance is zero.
pub fn bandwidth_nss(dm: &DistanceMatrix, n_min: usize) -> Result<f64> {
    let n = dm.n();
    if n_min == 0 || n_min >= n {
        return Err(Error::InvalidArgument(format!(
            "n_min must satisfy 1 <= n_min < n (n_min = {n_min}, n = {n})"
        )));
    }
    let mut radius: f64 = 0.0;
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| dm.get(i, j)));
        row.sort_by(f64::total_cmp);
        radius = radius.max(row[n_min - 1]);
    }
    let h_nss = radius * radius / 2.0;

    let mut sq: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| dm.get(i, j).powi(2))
        .collect();
    let med = median(&mut sq);
    if med == 0.0 && h_nss == 0.0 {
        log::warn!("all pairwise distances vanish; using bandwidth h = 1");
        return Ok(1.0);
    }
    let floor = 1e-8 * med / 2.0;
    if h_nss < floor {
        log::warn!("bandwidth {h_nss:e} raised to duplicate-sample floor {floor:e}");
    }
    Ok(h_nss.max(floor))
}

/// Heat kernel `A_ij = exp(-d_ij² / 4h)`.
pub fn build_kernel(dm: &DistanceMatrix, h: f64) -> Result<SymMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    let n = dm.n();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d = dm.get(i, j);
            (-(d * d) / (4.0 * h)).exp()
        })
        .collect();
    Ok(SymMatrix { n, data })
}

/// `Â_ij = A_ij / (p_i p_j)` with `p = A·1`.
pub fn density_normalize(a: &SymMatrix) -> Result<SymMatrix> {
    let p = a.row_sums();
    if let Some(i) = p.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Singular(format!("kernel row {i} sums to {}", p[i])));
    }
    let n = a.n;
    let data = (0..n * n).map(|idx| a.data[idx] / (p[idx / n] * p[idx % n])).collect();
    Ok(SymMatrix { n, data })
}

/// Symmetric conjugate `Ŝ_ij = Â_ij / √(r_i r_j)` of the Markov matrix
/// `S = diag(r)⁻¹ Â`; returns `Ŝ` together with the row sums `r`.
pub fn symmetrize_transition(ahat: &SymMatrix) -> (SymMatrix, Vec<f64>) {
    let r = ahat.row_sums();
    let n = ahat.n;
    let data = (0..n * n)
        .map(|idx| ahat.data[idx] / (r[idx / n] * r[idx % n]).sqrt())
        .collect();
    (SymMatrix { n, data }, r)
}

/// Row-stochastic Markov matrix `S_ij = Â_ij / r_i`, row-major.
pub fn markov_matrix(ahat: &SymMatrix) -> Vec<f64> {
    let r = ahat.row_sums();
    let n = ahat.n;
    (0..n * n).map(|idx| ahat.data[idx] / r[idx / n]).collect()
}

/// Top-`m` eigenpairs of a symmetric matrix in descending eigenvalue order.
/// Each eigenvector has unit 2-norm and its first non-negligible entry is
/// positive.
pub fn eigensolve_symmetric(s: &SymMatrix, m: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.n;
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "requested {m} eigenpairs of a {n}x{n} matrix"
        )));
    }
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let raw = if n <= JACOBI_MAX_N {
        eigen::jacobi(s)?
    } else {
        eigen::householder_ql(s)?
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw.values[b].total_cmp(&raw.values[a]).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let mut v: Vec<f64> = (0..n).map(|i| raw.vectors[i * n + k]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        orient(&mut v);
        values.push(raw.values[k]);
        vectors.push(v);
    }
    Ok((values, vectors))
}

/// Flips `v` so that its first entry above roundoff is positive.
fn orient(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tiny = 1e-12 * scale;
    if let Some(first) = v.iter().find(|x| x.abs() > tiny) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Tuning of the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    pub n_min: usize,
    /// Retained eigenpairs, including the trivial one.
    pub m: usize,
    /// Manual bandwidth; when absent the neighborhood heuristic is used.
    pub h: Option<f64>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            n_min: DEFAULT_N_MIN,
            m: DEFAULT_M,
            h: None,
        }
    }
}

/// Diffusion coordinates of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEmbedding {
    pub h: f64,
    pub n_min: usize,
    /// `λ_0 ≥ λ_1 ≥ …`.
    pub eigvals: Vec<f64>,
    /// Row-major `n × m`: `eigfuncs[i * m + k] = χ^(k)_i`.
    pub eigfuncs: Vec<f64>,
    /// Row-major `n × m`: `coords[i * m + k] = λ_k χ^(k)_i`.
    pub coords: Vec<f64>,
    /// Largest `‖Ŝv − λv‖_∞` over the retained pairs.
    pub max_residual: f64,
    n: usize,
    m: usize,
}

impl DiffusionEmbedding {
    pub fn compute(dm: &DistanceMatrix, params: &DiffusionParams) -> Result<Self> {
        let n = dm.n();
        if n == 0 {
            return Err(Error::InvalidArgument("empty distance matrix".into()));
        }
        if params.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let m = params.m.min(n);
        if m < params.m {
            log::warn!("only {n} samples; keeping {m} eigenpairs instead of {}", params.m);
        }
        let n_min = params.n_min.clamp(1, n.saturating_sub(1).max(1));
        if n == 1 {
            let h = params.h.unwrap_or(1.0);
            return Ok(DiffusionEmbedding {
                h,
                n_min,
                eigvals: vec![1.0],
                eigfuncs: vec![1.0],
                coords: vec![1.0],
                max_residual: 0.0,
                n,
                m: 1,
            });
        }
        if n_min != params.n_min {
            log::warn!("n_min = {} adjusted to {n_min} for {n} samples", params.n_min);
        }
        let h = match params.h {
            Some(h) => h,
            None => bandwidth_nss(dm, n_min)?,
        };
        let a = build_kernel(dm, h)?;
        let ahat = density_normalize(&a)?;
        let (s, _) = symmetrize_transition(&ahat);
        // one extra pair so the gap below λ_0 is always visible
        let (vals, vecs) = eigensolve_symmetric(&s, m.max(2))?;
        let gap = vals[0] - vals[1];
        if gap < DEGENERACY_GAP {
            return Err(Error::DegenerateTopEigenvalue { gap });
        }
        let max_residual = residual(&s, &vals[..m], &vecs[..m]);
        let (eigfuncs, coords) = diffusion_coordinates(&vals[..m], &vecs[..m])?;
        Ok(DiffusionEmbedding {
            h,
            n_min,
            eigvals: vals[..m].to_vec(),
            eigfuncs,
            coords,
            max_residual,
            n,
            m,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eigfunc(&self, i: usize, k: usize) -> f64 {
        self.eigfuncs[i * self.m + k]
    }

    pub fn coord(&self, i: usize, k: usize) -> f64 {
        self.coords[i * self.m + k]
    }

    /// Reassembles from stored arrays (eigfuncs recovered as coords/λ).
    pub fn from_parts(h: f64, n_min: usize, eigvals: Vec<f64>, coords: Vec<f64>) -> Result<Self> {
        let m = eigvals.len();
        if m == 0 || coords.len() / m * m != coords.len() {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: coords.len(),
            });
        }
        let n = coords.len() / m;
        let eigfuncs = coords
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let l = eigvals[idx % m];
                if l == 0.0 {
                    0.0
                } else {
                    c / l
                }
            })
            .collect();
        Ok(DiffusionEmbedding {
            h,
            n_min,
            eigvals,
            eigfuncs,
            coords,
            max_residual: f64::NAN,
            n,
            m,
        })
    }
}

fn residual(s: &SymMatrix, vals: &[f64], vecs: &[Vec<f64>]) -> f64 {
    let n = s.n;
    let mut worst: f64 = 0.0;
    for (l, v) in vals.iter().zip(vecs) {
        for i in 0..n {
            let sv: f64 = s.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
            worst = worst.max((sv - l * v[i]).abs());
        }
    }
    worst
}

/// Turns eigenvectors of `Ŝ` into Markov eigenfunctions
/// `χ^(k) = χ̂^(k) / χ̂^(0)`, normalized to unit sup-norm with a positive first
/// nonzero entry. Returns row-major `(eigfuncs, coords)`.
pub fn diffusion_coordinates(vals: &[f64], vecs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = vals.len();
    if m == 0 || vecs.len() != m {
        return Err(Error::InvalidArgument("no eigenpairs to convert".into()));
    }
    let n = vecs[0].len();
    let base = &vecs[0];
    if let Some(i) = base.iter().position(|&v| v == 0.0) {
        return Err(Error::Singular(format!(
            "stationary eigenvector vanishes at sample {i}"
        )));
    }
    let mut eigfuncs = vec![0.0; n * m];
    let mut coords = vec![0.0; n * m];
    for k in 0..m {
        let mut chi: Vec<f64> = vecs[k].iter().zip(base).map(|(v, b)| v / b).collect();
        let sup = chi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if sup > 0.0 {
            chi.iter_mut().for_each(|x| *x /= sup);
        }
        orient(&mut chi);
        for i in 0..n {
            eigfuncs[i * m + k] = chi[i];
            coords[i * m + k] = vals[k] * chi[i];
        }
    }
    Ok((eigfuncs, coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dm(n: usize, entries: &[(usize, usize, f64)]) -> DistanceMatrix {
        let mut data = vec![0.0; n * n];
        for &(i, j, d) in entries {
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
        DistanceMatrix::from_parts(n, data, (0..n).collect()).unwrap()
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    #[test]
    fn bandwidth_examples() {
        let line = dm(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]);
        assert_eq!(bandwidth_nss(&line, 1).unwrap(), 0.5);
        assert_eq!(bandwidth_nss(&line, 2).unwrap(), 2.0);
        assert!(bandwidth_nss(&line, 3).is_err());
        assert!(bandwidth_nss(&line, 0).is_err());

        let dup = dm(
            4,
            &[
                (0, 1, 0.0),
                (2, 3, 0.0),
                (0, 2, 3.0),
                (0, 3, 3.0),
                (1, 2, 3.0),
                (1, 3, 3.0),
            ],
        );
        let h = bandwidth_nss(&dup, 1).unwrap();
        assert!(h > 0.0);
        assert_eq!(h, 1e-8 * 9.0 / 2.0);

        let all_same = dm(3, &[]);
        assert_eq!(bandwidth_nss(&all_same, 1).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_guarantees_neighbors() {
        let points = random_points(30, 2, 5);
        let d = DistanceMatrix::euclidean(&points);
        for n_min in [1, 3, 10, 29] {
            let h = bandwidth_nss(&d, n_min).unwrap();
            let r = (2.0 * h).sqrt();
            for i in 0..30 {
                let count = (0..30).filter(|&j| j != i && d.get(i, j) <= r * (1.0 + 1e-12)).count();
                assert!(count >= n_min);
            }
            // minimality: some sample is short of neighbors at a slightly smaller radius
            let rs = r * (1.0 - 1e-9);
            assert!((0..30).any(|i| (0..30).filter(|&j| j != i && d.get(i, j) <= rs).count() < n_min));
        }
    }

    #[test]
    fn kernel_examples() {
        let d = dm(2, &[(0, 1, 2.0)]);
        let a = build_kernel(&d, 1.0).unwrap();
        assert_eq!(a.get(0, 0), 1.0);
        assert!((a.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.367879).abs() < 1e-6);
        let wider = build_kernel(&d, 2.0).unwrap();
        assert!(wider.get(0, 1) > a.get(0, 1));
        assert!(build_kernel(&d, 0.0).is_err());
        assert!(build_kernel(&d, -1.0).is_err());
    }

    #[test]
    fn normalization_examples() {
        let one = SymMatrix::from_row_major(1, vec![1.0]).unwrap();
        assert_eq!(density_normalize(&one).unwrap().as_slice(), &[1.0]);
        let (s1, _) = symmetrize_transition(&one);
        assert_eq!(s1.as_slice(), &[1.0]);

        let a = 0.3;
        let uniform = SymMatrix::from_row_major(4, vec![a; 16]).unwrap();
        let ahat = density_normalize(&uniform).unwrap();
        for &v in ahat.as_slice() {
            assert!((v - 1.0 / (16.0 * a)).abs() < 1e-15);
        }

        let ones = SymMatrix::from_row_major(2, vec![1.0; 4]).unwrap();
        let (s, r) = symmetrize_transition(&ones);
        assert_eq!(s.as_slice(), &[0.5; 4]);
        assert_eq!(r, vec![2.0, 2.0]);
        let (vals, _) = eigensolve_symmetric(&s, 2).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-15 && vals[1].abs() < 1e-15);
    }

    #[test]
    fn eigensolver_examples() {
        let swap = SymMatrix::from_row_major(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (vals, vecs) = eigensolve_symmetric(&swap, 2).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-15 && (vals[1] + 1.0).abs() < 1e-15);
        assert!(vecs[0][0] > 0.0 && vecs[1][0] > 0.0);

        let mut id = SymMatrix::zeros(5);
        for i in 0..5 {
            id.set(i, i, 1.0);
        }
        let (vals, _) = eigensolve_symmetric(&id, 5).unwrap();
        assert!(vals.iter().all(|&v| v == 1.0));
        assert!(eigensolve_symmetric(&id, 6).is_err());
    }

    #[test]
    fn large_matrices_use_ql_and_match_jacobi() {
        // n just above the switch-over, from a kernel so the spectrum is realistic
        let n = JACOBI_MAX_N + 8;
        let d = DistanceMatrix::euclidean(&random_points(n, 2, 11));
        let a = build_kernel(&d, 0.01).unwrap();
        let (s, _) = symmetrize_transition(&density_normalize(&a).unwrap());
        let (vals, vecs) = eigensolve_symmetric(&s, 5).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-10);
        assert!(residual(&s, &vals, &vecs) < 1e-9);
        let jac = eigen::jacobi(&s).unwrap();
        let mut jv = jac.values.clone();
        jv.sort_by(|a, b| b.total_cmp(a));
        for k in 0..5 {
            assert!((jv[k] - vals[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn embedding_invariants() {
        let d = DistanceMatrix::euclidean(&random_points(60, 3, 2));
        let e = DiffusionEmbedding::compute(&d, &DiffusionParams::default()).unwrap();
        assert_eq!(e.m(), 11);
        assert!((e.eigvals[0] - 1.0).abs() < 1e-8);
        assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
        assert!(e.eigvals.iter().all(|l| l.abs() <= 1.0 + 1e-8));
        for i in 0..60 {
            assert!((e.eigfunc(i, 0) - 1.0).abs() < 1e-8);
        }
        for k in 0..11 {
            let sup = (0..60).fold(0.0f64, |a, i| a.max(e.eigfunc(i, k).abs()));
            assert!((sup - 1.0).abs() < 1e-12);
            let first = (0..60).map(|i| e.eigfunc(i, k)).find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
            for i in 0..60 {
                assert_eq!(e.coord(i, k), e.eigvals[k] * e.eigfunc(i, k));
            }
        }
        assert!(e.max_residual < 1e-9);
        let again = DiffusionEmbedding::compute(&d, &DiffusionParams::default()).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn eigenfunctions_are_markov_eigenvectors() {
        let d = DistanceMatrix::euclidean(&random_points(25, 2, 8));
        let h = bandwidth_nss(&d, 5).unwrap();
        let ahat = density_normalize(&build_kernel(&d, h).unwrap()).unwrap();
        let s = markov_matrix(&ahat);
        let e = DiffusionEmbedding::compute(
            &d,
            &DiffusionParams {
                n_min: 5,
                m: 6,
                h: None,
            },
        )
        .unwrap();
        for k in 0..6 {
            for i in 0..25 {
                let sv: f64 = (0..25).map(|j| s[i * 25 + j] * e.eigfunc(j, k)).sum();
                assert!((sv - e.eigvals[k] * e.eigfunc(i, k)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_clusters_split_by_first_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for c in [0.0, 10.0] {
            for _ in 0..15 {
                pts.push(vec![c + 0.1 * rng.gen::<f64>(), 0.1 * rng.gen::<f64>()]);
            }
        }
        let d = DistanceMatrix::euclidean(&pts);
        let e = DiffusionEmbedding::compute(
            &d,
            &DiffusionParams {
                n_min: 5,
                m: 3,
                h: Some(2.0),
            },
        )
        .unwrap();
        let chi1: Vec<f64> = (0..30).map(|i| e.eigfunc(i, 1)).collect();
        let (a, b) = chi1.split_at(15);
        assert!(a.iter().all(|&v| v > 0.0) && b.iter().all(|&v| v < 0.0));
        let spread =
            |s: &[f64]| s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread(a) < 1e-3 && spread(b) < 1e-3);
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let pts = vec![vec![0.0], vec![0.01], vec![100.0], vec![100.01]];
        let d = DistanceMatrix::euclidean(&pts);
        let r = DiffusionEmbedding::compute(
            &d,
            &DiffusionParams {
                n_min: 1,
                m: 2,
                h: None,
            },
        );
        assert!(matches!(r, Err(Error::DegenerateTopEigenvalue { .. })));
    }

    #[test]
    fn ring_parametrization() {
        let n = 200;
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let e = DiffusionEmbedding::compute(&DistanceMatrix::euclidean(&pts), &DiffusionParams::default()).unwrap();
        let r: Vec<f64> = (0..n).map(|i| e.coord(i, 1).hypot(e.coord(i, 2))).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(sd / mean < 0.05, "relative sd {}", sd / mean);
    }

    #[test]
    fn single_sample() {
        let d = dm(1, &[]);
        let e = DiffusionEmbedding::compute(&d, &DiffusionParams::default()).unwrap();
        assert_eq!(e.eigvals, vec![1.0]);
        assert_eq!(e.coords, vec![1.0]);
    }

    proptest! {
        #[test]
        fn markov_rows_sum_to_one(seed in 0u64..1000, n in 2usize..20) {
            let d = DistanceMatrix::euclidean(&random_points(n, 2, seed));
            let ahat = density_normalize(&build_kernel(&d, 0.05).unwrap()).unwrap();
            let (s, _) = symmetrize_transition(&ahat);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(s.get(i, j), s.get(j, i));
                    prop_assert_eq!(ahat.get(i, j), ahat.get(j, i));
                }
            }
            let p = markov_matrix(&ahat);
            for i in 0..n {
                let sum: f64 = p[i * n..(i + 1) * n].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
            let (vals, _) = eigensolve_symmetric(&s, n).unwrap();
            prop_assert!(vals.iter().all(|v| v.abs() <= 1.0 + 1e-8));
        }

        #[test]
        fn reconstruction(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = SymMatrix::zeros(6);
            for i in 0..6 {
                for j in 0..=i {
                    a.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let (vals, vecs) = eigensolve_symmetric(&a, 6).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let s: f64 = (0..6).map(|k| vecs[k][i] * vals[k] * vecs[k][j]).sum();
                    prop_assert!((s - a.get(i, j)).abs() < 1e-10);
                }
            }
        }
    }
}
