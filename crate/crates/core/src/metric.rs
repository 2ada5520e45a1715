//! Negative-order Sobolev distance between quotient samples,
//!
//! `d(a, b)² = Σ_k |a_k − b_k|² / [1 + (2π‖k‖₂)²]^s`,
//!
//! with `s = (D+1)/2` unless overridden.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::QuotientSample;
use crate::observables::WaveLattice;

/// `[1 + (2π‖k‖₂)²]^{-s}`.
pub fn sobolev_weight(k: &[i32], s: f64) -> f64 {
    let norm2: f64 = k.iter().map(|&v| (v as f64) * (v as f64)).sum();
    (1.0 + 4.0 * PI * PI * norm2).powf(-s)
}

/// Default order `(D+1)/2`.
pub fn default_order(dim: usize) -> f64 {
    (dim as f64 + 1.0) / 2.0
}

/// Per-entry weights for one lattice, half-lattice multiplicity included.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevParams {
    pub s: f64,
    pub omega: f64,
    pub lattice_hash: String,
    weights: Vec<f64>,
}

impl SobolevParams {
    pub fn new(lattice: &WaveLattice, s: Option<f64>, omega: f64) -> Result<Self> {
        let s = s.unwrap_or_else(|| default_order(lattice.dim()));
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!("Sobolev order must be finite, got {s}")));
        }
        if omega != 0.0 && lattice.is_half() {
            return Err(Error::BasisMismatch(
                "harmonic averages (omega != 0) lack conjugate symmetry; use the full lattice".into(),
            ));
        }
        let weights = lattice
            .iter()
            .enumerate()
            .map(|(j, k)| lattice.multiplicity(j) * sobolev_weight(k, s))
            .collect();
        Ok(SobolevParams {
            s,
            omega,
            lattice_hash: lattice.hash(),
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, sample: &QuotientSample) -> Result<()> {
        if sample.averages.len() != self.weights.len() {
            return Err(Error::BasisMismatch(format!(
                "sample has {} coefficients, lattice has {}",
                sample.averages.len(),
                self.weights.len()
            )));
        }
        if sample.omega != self.omega {
            return Err(Error::BasisMismatch(format!(
                "sample frequency {} differs from metric frequency {}",
                sample.omega, self.omega
            )));
        }
        Ok(())
    }
}

/// Weighted distance between two coefficient vectors.
pub fn weighted_distance(a: &[Complex64], b: &[Complex64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `H^{-s}` distance between two samples on the same lattice and frequency.
pub fn distance(a: &QuotientSample, b: &QuotientSample, params: &SobolevParams) -> Result<f64> {
    params.check(a)?;
    params.check(b)?;
    Ok(weighted_distance(&a.averages, &b.averages, &params.weights))
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    /// Index of each row in the original ensemble.
    pub sample_ids: Vec<usize>,
}

impl DistanceMatrix {
    pub fn from_parts(n: usize, data: Vec<f64>, sample_ids: Vec<usize>) -> Result<Self> {
        if data.len() != n * n || sample_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(DistanceMatrix { n, data, sample_ids })
    }

    /// Euclidean distances between points; handy for synthetic inputs.
    pub fn euclidean(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix {
            n,
            data,
            sample_ids: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Exact symmetry, zero diagonal and finite nonnegative entries.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(format!("diagonal entry ({i}, {i}) = {}", self.get(i, i)));
            }
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a != b {
                    return Err(format!("asymmetric entries ({i}, {j}) = {a} vs ({j}, {i}) = {b}"));
                }
                if !(a.is_finite() && a >= 0.0) {
                    return Err(format!("invalid entry ({i}, {j}) = {a}"));
                }
            }
        }
        Ok(())
    }
}

/// Pairwise distances over `samples`; the upper triangle is computed once
/// and mirrored.
pub fn pairwise_matrix(
    samples: &[&QuotientSample],
    sample_ids: Vec<usize>,
    params: &SobolevParams,
) -> Result<DistanceMatrix> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    if sample_ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sample_ids.len(),
        });
    }
    for s in samples {
        params.check(s)?;
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| weighted_distance(&samples[i].averages, &samples[j].averages, &params.weights))
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix::from_parts(n, data, sample_ids)
}

/// Closed-form constant `(2/π)^{3/4} D^{1/4} / π^D` and the resulting bound
/// `𝓔(D)/√K` on the `H^{-s}` mass outside `[-K, K]^D`.
pub fn truncation_bound(dim: usize, k: u32) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("truncation bound needs K >= 1".into()));
    }
    let d = dim as f64;
    let constant = (2.0 / PI).powf(0.75) * d.powf(0.25) / PI.powf(d);
    Ok((constant, constant / (k as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Interval;
    use crate::observables::ObservableBasis;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(averages: Vec<Complex64>) -> QuotientSample {
        QuotientSample {
            x0: vec![],
            omega: 0.0,
            averages,
            stop_time: 0.0,
            final_adiff: 0.0,
            converged: true,
            n_steps: 0,
            failure: None,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
            .collect()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(sobolev_weight(&[0, 0, 0], 2.0), 1.0);
        assert_eq!(sobolev_weight(&[0], 7.3), 1.0);
        let w = sobolev_weight(&[1, 0, 0], 2.0);
        assert!((w - (1.0 + 4.0 * PI * PI).powi(-2)).abs() < 1e-18);
        assert!((w - 6.1031e-4).abs() < 1e-8);
        assert!(sobolev_weight(&[1, 1, 0], 2.0) < w);
        assert!(sobolev_weight(&[-2, 0, 0], 2.0) < w);
        assert_eq!(default_order(3), 2.0);
    }

    #[test]
    fn params_weights_are_monotone() {
        let lattice = WaveLattice::uniform(3, 4, false).unwrap();
        let p = SobolevParams::new(&lattice, None, 0.0).unwrap();
        assert_eq!(p.weights()[lattice.zero_index()], 1.0);
        let mut pairs: Vec<(f64, f64)> = lattice
            .iter()
            .zip(p.weights())
            .map(|(k, &w)| (k.iter().map(|&v| (v * v) as f64).sum::<f64>(), w))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1));
        let half = WaveLattice::uniform(3, 4, true).unwrap();
        assert!(SobolevParams::new(&half, None, 0.5).is_err());
    }

    #[test]
    fn distance_examples() {
        let lattice = WaveLattice::uniform(2, 2, false).unwrap();
        let p = SobolevParams::new(&lattice, None, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = sample(random_vec(&mut rng, lattice.len()));
        assert_eq!(distance(&a, &a, &p).unwrap(), 0.0);
        let mut b = a.clone();
        b.averages[lattice.zero_index()] += Complex64::new(0.0, 0.25);
        assert!((distance(&a, &b, &p).unwrap() - 0.25).abs() < 1e-15);
        let short = sample(vec![Complex64::new(0.0, 0.0); 3]);
        assert!(matches!(distance(&a, &short, &p), Err(Error::BasisMismatch(_))));
        let mut harmonic = a.clone();
        harmonic.omega = 1.0;
        assert!(distance(&a, &harmonic, &p).is_err());
    }

    #[test]
    fn half_lattice_distance_equals_full() {
        let full = WaveLattice::new(&[3, 2, 2], false).unwrap();
        let half = WaveLattice::new(&[3, 2, 2], true).unwrap();
        let domain = vec![Interval::new(0.0, 1.0); 3];
        let fb = ObservableBasis::new(full.clone(), domain).unwrap();
        let pf = SobolevParams::new(&full, None, 0.0).unwrap();
        let ph = SobolevParams::new(&half, None, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            // averages of real trajectories: mean of a few basis evaluations
            let mk = |rng: &mut ChaCha8Rng| {
                let mut acc = vec![Complex64::new(0.0, 0.0); full.len()];
                for _ in 0..5 {
                    let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                    for (a, v) in acc.iter_mut().zip(fb.eval(&x, 0.0, 0.0).unwrap()) {
                        *a += v / 5.0;
                    }
                }
                acc
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let project =
                |v: &[Complex64]| -> Vec<Complex64> { half.iter().map(|k| v[full.index_of(k).unwrap()]).collect() };
            let df = distance(&sample(a.clone()), &sample(b.clone()), &pf).unwrap();
            let dh = distance(&sample(project(&a)), &sample(project(&b)), &ph).unwrap();
            assert!((df - dh).abs() <= 1e-12 * df, "{df} vs {dh}");
        }
    }

    #[test]
    fn pairwise_examples() {
        let lattice = WaveLattice::uniform(1, 3, false).unwrap();
        let p = SobolevParams::new(&lattice, None, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = sample(random_vec(&mut rng, lattice.len()));
        let m = pairwise_matrix(&[&one], vec![0], &p).unwrap();
        assert_eq!(m.as_slice(), &[0.0]);
        assert!(pairwise_matrix(&[], vec![], &p).is_err());

        let s: Vec<QuotientSample> = (0..3).map(|_| sample(random_vec(&mut rng, lattice.len()))).collect();
        let refs: Vec<&QuotientSample> = s.iter().collect();
        let m = pairwise_matrix(&refs, vec![0, 1, 2], &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(
                    m.get(i, j),
                    if i == j {
                        0.0
                    } else {
                        distance(&s[i], &s[j], &p).unwrap()
                    }
                );
            }
        }
        m.check_invariants().unwrap();

        let dup = [&s[0], &s[1], &s[0]];
        let m = pairwise_matrix(&dup, vec![0, 1, 2], &p).unwrap();
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn invariant_check_names_the_entry() {
        let mut m = DistanceMatrix::from_parts(2, vec![0.0, 1.0, 1.0, 0.0], vec![0, 1]).unwrap();
        assert!(m.check_invariants().is_ok());
        m.data[1] = 1.5;
        assert!(m.check_invariants().unwrap_err().contains("asymmetric"));
    }

    #[test]
    fn truncation_bound_values() {
        let (e3, b) = truncation_bound(3, 10).unwrap();
        assert!((e3 - 0.03025).abs() < 1e-4, "{e3}");
        assert!((b - 9.57e-3).abs() < 1e-5, "{b}");
        let (_, b1) = truncation_bound(2, 5).unwrap();
        let (_, b4) = truncation_bound(2, 20).unwrap();
        assert!((b1 - 2.0 * b4).abs() < 1e-15);
        assert!(truncation_bound(3, 0).is_err());
    }

    #[test]
    fn downweighting_of_high_wavenumbers() {
        let lattice = WaveLattice::uniform(2, 4, false).unwrap();
        let p = SobolevParams::new(&lattice, None, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = sample(random_vec(&mut rng, lattice.len()));
        let b = sample(random_vec(&mut rng, lattice.len()));
        let base = distance(&a, &b, &p).unwrap();
        let delta = Complex64::new(0.03, -0.04);
        let hi = lattice.index_of(&[4, 0]).unwrap();
        let lo = lattice.zero_index();
        let mut bh = b.clone();
        bh.averages[hi] += delta;
        let mut bl = b.clone();
        bl.averages[lo] += delta;
        let ch = (distance(&a, &bh, &p).unwrap() - base).abs();
        let cl = (distance(&a, &bl, &p).unwrap() - base).abs();
        assert!(ch <= sobolev_weight(&[4, 0], 1.5).sqrt() * delta.norm() + 1e-15);
        // the zero mode carries full weight: reverse triangle inequality is tight in one direction
        let zero_shift = distance(&b, &bl, &p).unwrap();
        assert!((zero_shift - delta.norm()).abs() < 1e-15);
        let high_shift = distance(&b, &bh, &p).unwrap();
        assert!(high_shift < zero_shift);
        assert!(cl <= delta.norm() + 1e-15);
    }

    proptest! {
        #[test]
        fn metric_axioms(seed in 0u64..10_000) {
            let lattice = WaveLattice::uniform(2, 2, false).unwrap();
            let p = SobolevParams::new(&lattice, None, 0.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = sample(random_vec(&mut rng, lattice.len()));
            let b = sample(random_vec(&mut rng, lattice.len()));
            let c = sample(random_vec(&mut rng, lattice.len()));
            let ab = distance(&a, &b, &p).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, distance(&b, &a, &p).unwrap());
            prop_assert!(distance(&a, &c, &p).unwrap() <= ab + distance(&b, &c, &p).unwrap() + 1e-12);
            prop_assert!(ab > 0.0);
        }
    }
}
