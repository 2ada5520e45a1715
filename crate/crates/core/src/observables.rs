//! Truncated Fourier observable basis `f_k(x) = (2π)^{-D/2} exp(i2π k·y)`,
//! where `y` is the state rescaled to the unit torus.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Interval;
use crate::error::{Error, Result};

/// An ordered set of integer wavevectors in `∏ [-K_d, K_d]`.
///
/// Waves are in lexicographic order of `(k_1, …, k_D)`. The half lattice keeps
/// `k = 0` and, of each pair `{k, -k}`, the member whose first nonzero
/// component is positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveLattice {
    dim: usize,
    bounds: Vec<u32>,
    half: bool,
    /// Flattened wavevectors, `dim` entries each.
    waves: Vec<i32>,
}

impl WaveLattice {
    pub fn new(bounds: &[u32], half: bool) -> Result<Self> {
        let dim = bounds.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("lattice needs at least one axis".into()));
        }
        let full = full_size(bounds);
        let mut waves = Vec::with_capacity(full * dim);
        let mut k: Vec<i32> = bounds.iter().map(|&b| -(b as i32)).collect();
        for _ in 0..full {
            if !half || is_canonical(&k) {
                waves.extend_from_slice(&k);
            }
            // odometer increment, last axis fastest
            for d in (0..dim).rev() {
                if k[d] < bounds[d] as i32 {
                    k[d] += 1;
                    break;
                }
                k[d] = -(bounds[d] as i32);
            }
        }
        Ok(WaveLattice {
            dim,
            bounds: bounds.to_vec(),
            half,
            waves,
        })
    }

    /// Same bound on every axis.
    pub fn uniform(dim: usize, k: u32, half: bool) -> Result<Self> {
        Self::new(&vec![k; dim], half)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[u32] {
        &self.bounds
    }

    pub fn is_half(&self) -> bool {
        self.half
    }

    pub fn len(&self) -> usize {
        self.waves.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    pub fn wave(&self, j: usize) -> &[i32] {
        &self.waves[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i32]> {
        self.waves.chunks_exact(self.dim)
    }

    /// Number of full-lattice entries represented by entry `j` (2 for a
    /// conjugate pair on the half lattice, else 1).
    pub fn multiplicity(&self, j: usize) -> f64 {
        if self.half && self.wave(j).iter().any(|&k| k != 0) {
            2.0
        } else {
            1.0
        }
    }

    pub fn index_of(&self, k: &[i32]) -> Option<usize> {
        self.iter().position(|w| w == k)
    }

    pub fn zero_index(&self) -> usize {
        self.index_of(&vec![0; self.dim]).expect("k = 0 is always present")
    }

    /// Hex SHA-256 of the lattice definition and wave order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update([u8::from(self.half)]);
        for b in &self.bounds {
            h.update(b.to_le_bytes());
        }
        for k in &self.waves {
            h.update(k.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn full_size(bounds: &[u32]) -> usize {
    bounds.iter().map(|&b| 2 * b as usize + 1).product()
}

fn is_canonical(k: &[i32]) -> bool {
    match k.iter().find(|&&v| v != 0) {
        None => true,
        Some(&v) => v > 0,
    }
}

/// Affine map of `x` onto the unit torus coordinates of `domain`.
pub fn rescale_state(domain: &[Interval], x: &[f64]) -> Result<Vec<f64>> {
    if domain.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: domain.len(),
            got: x.len(),
        });
    }
    domain
        .iter()
        .zip(x)
        .enumerate()
        .map(|(d, (iv, &v))| {
            let w = iv.width();
            if !(w != 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate domain axis {d}: [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
            Ok((v - iv.lo) / w)
        })
        .collect()
}

/// The Fourier observables of a [`WaveLattice`] on a rescaled box.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableBasis {
    lattice: WaveLattice,
    domain: Vec<Interval>,
    norm_const: f64,
    /// Per-axis offset of `k_d = 0` inside the concatenated phase table.
    axis_base: Vec<usize>,
    /// For every wave, `dim` indices into the phase table.
    gather: Vec<usize>,
    table_len: usize,
}

impl ObservableBasis {
    pub fn new(lattice: WaveLattice, domain: Vec<Interval>) -> Result<Self> {
        if domain.len() != lattice.dim() {
            return Err(Error::DimensionMismatch {
                expected: lattice.dim(),
                got: domain.len(),
            });
        }
        for (d, iv) in domain.iter().enumerate() {
            let w = iv.width();
            if !(w != 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate domain axis {d}: [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        let mut axis_base = Vec::with_capacity(lattice.dim());
        let mut offset = 0;
        for &b in lattice.bounds() {
            axis_base.push(offset + b as usize);
            offset += 2 * b as usize + 1;
        }
        let gather = lattice
            .iter()
            .flat_map(|k| {
                k.iter()
                    .zip(&axis_base)
                    .map(|(&kd, &base)| (base as i64 + kd as i64) as usize)
                    .collect::<Vec<_>>()
            })
            .collect();
        let norm_const = (2.0 * PI).powf(-(lattice.dim() as f64) / 2.0);
        Ok(ObservableBasis {
            lattice,
            domain,
            norm_const,
            axis_base,
            gather,
            table_len: offset,
        })
    }

    pub fn lattice(&self) -> &WaveLattice {
        &self.lattice
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    /// `(2π)^{-D/2}`, the modulus of every observable.
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn workspace(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.table_len]
    }

    /// Evaluates every observable at `x`, modulated by `exp(i2πωt)`.
    ///
    /// `table` must come from [`ObservableBasis::workspace`]. Only the first
    /// `dim` components of `x` are observed, so states of an extended system
    /// can be passed directly.
    pub fn eval_into(&self, x: &[f64], t: f64, omega: f64, table: &mut [Complex64], out: &mut [Complex64]) {
        let dim = self.dim();
        debug_assert!(x.len() >= dim);
        debug_assert_eq!(out.len(), self.len());
        for d in 0..dim {
            let iv = self.domain[d];
            let y = (x[d] - iv.lo) / iv.width();
            let base = self.axis_base[d];
            let kmax = self.lattice.bounds[d] as usize;
            table[base] = Complex64::new(1.0, 0.0);
            for k in 1..=kmax {
                let (s, c) = (2.0 * PI * k as f64 * y).sin_cos();
                table[base + k] = Complex64::new(c, s);
                table[base - k] = Complex64::new(c, -s);
            }
        }
        let scale = if omega == 0.0 {
            Complex64::new(self.norm_const, 0.0)
        } else {
            let (s, c) = (2.0 * PI * omega * t).sin_cos();
            Complex64::new(c, s) * self.norm_const
        };
        for (o, idx) in out.iter_mut().zip(self.gather.chunks_exact(dim)) {
            let mut v = scale;
            for &i in idx {
                v *= table[i];
            }
            *o = v;
        }
    }

    pub fn eval(&self, x: &[f64], t: f64, omega: f64) -> Result<Vec<Complex64>> {
        if x.len() < self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut table = self.workspace();
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        self.eval_into(x, t, omega, &mut table, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(basis: &ObservableBasis, x: &[f64], t: f64, omega: f64) -> Vec<Complex64> {
        let y = rescale_state(basis.domain(), &x[..basis.dim()]).unwrap();
        basis
            .lattice()
            .iter()
            .map(|k| {
                let phase: f64 = k.iter().zip(&y).map(|(&kd, yd)| kd as f64 * yd).sum::<f64>() + omega * t;
                Complex64::from_polar(basis.norm_const(), 2.0 * PI * phase)
            })
            .collect()
    }

    fn hill_domain() -> Vec<Interval> {
        vec![
            Interval::new(0.0, 0.5),
            Interval::new(-1.0, 1.0),
            Interval::new(0.0, 2.0 * PI),
        ]
    }

    #[test]
    fn one_dimensional_lattice() {
        let l = WaveLattice::uniform(1, 1, false).unwrap();
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![&[-1][..], &[0], &[1]]);
        let h = WaveLattice::uniform(1, 1, true).unwrap();
        assert_eq!(h.iter().collect::<Vec<_>>(), vec![&[0][..], &[1]]);
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(WaveLattice::uniform(3, 10, false).unwrap().len(), 9261);
        assert_eq!(WaveLattice::new(&[8, 8, 4], false).unwrap().len(), 2601);
        assert_eq!(WaveLattice::uniform(3, 10, true).unwrap().len(), 9261_usize.div_ceil(2));
        assert_eq!(WaveLattice::new(&[8, 8, 4], true).unwrap().len(), 1301);
        assert_eq!(WaveLattice::uniform(2, 0, true).unwrap().len(), 1);
    }

    #[test]
    fn half_lattice_structure() {
        let full = WaveLattice::new(&[2, 3, 1], false).unwrap();
        let half = WaveLattice::new(&[2, 3, 1], true).unwrap();
        let zeros = half.iter().filter(|k| k.iter().all(|&v| v == 0)).count();
        assert_eq!(zeros, 1);
        for k in half.iter() {
            let neg: Vec<i32> = k.iter().map(|v| -v).collect();
            if k.iter().any(|&v| v != 0) {
                assert!(half.index_of(&neg).is_none());
            }
            assert!(full.index_of(k).is_some());
        }
        let mut sorted: Vec<Vec<i32>> = half.iter().map(|k| k.to_vec()).collect();
        sorted.sort();
        assert_eq!(sorted, half.iter().map(|k| k.to_vec()).collect::<Vec<_>>());
        let total: f64 = (0..half.len()).map(|j| half.multiplicity(j)).sum();
        assert_eq!(total as usize, full.len());
    }

    #[test]
    fn lattice_hash_distinguishes_order_and_mode() {
        let a = WaveLattice::uniform(2, 2, false).unwrap();
        let b = WaveLattice::uniform(2, 2, true).unwrap();
        let c = WaveLattice::new(&[2, 1], false).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash(), WaveLattice::uniform(2, 2, false).unwrap().hash());
    }

    #[test]
    fn rescale_examples() {
        let unit = vec![Interval::new(0.0, 1.0); 3];
        assert_eq!(rescale_state(&unit, &[0.1, 0.2, 0.3]).unwrap(), vec![0.1, 0.2, 0.3]);
        let y = rescale_state(&hill_domain(), &[0.25, 0.0, PI]).unwrap();
        assert_eq!(y, vec![0.5, 0.5, 0.5]);
        assert_eq!(rescale_state(&hill_domain(), &[0.0, -1.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert!(rescale_state(&[Interval::new(1.0, 1.0)], &[1.0]).is_err());
        assert!(ObservableBasis::new(
            WaveLattice::uniform(1, 1, false).unwrap(),
            vec![Interval::new(2.0, 2.0)]
        )
        .is_err());
    }

    #[test]
    fn origin_gives_constant_entries() {
        let basis = ObservableBasis::new(
            WaveLattice::uniform(3, 2, false).unwrap(),
            vec![Interval::new(0.0, 1.0); 3],
        )
        .unwrap();
        let v = basis.eval(&[0.0, 0.0, 0.0], 0.0, 0.0).unwrap();
        let c = (2.0 * PI).powf(-1.5);
        assert!((c - 0.0634936).abs() < 1e-7);
        for z in v {
            assert!((z.re - c).abs() < 1e-16 && z.im.abs() < 1e-16);
        }
    }

    proptest! {
        #[test]
        fn separable_matches_naive(x in prop::collection::vec(-3.0f64..3.0, 3), t in 0.0f64..100.0, omega in -2.0f64..2.0) {
            let basis = ObservableBasis::new(WaveLattice::new(&[4, 3, 2], false).unwrap(), hill_domain()).unwrap();
            let fast = basis.eval(&x, t, omega).unwrap();
            let slow = naive(&basis, &x, t, omega);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).norm() <= 1e-12 * b.norm());
            }
        }

        #[test]
        fn unit_modulus_and_zero_mode(x in prop::collection::vec(-10.0f64..10.0, 3), t in 0.0f64..10.0) {
            let basis = ObservableBasis::new(WaveLattice::uniform(3, 5, true).unwrap(), vec![Interval::new(0.0, 1.0); 3]).unwrap();
            let v = basis.eval(&x, t, 0.7).unwrap();
            let c = basis.norm_const();
            for z in &v {
                prop_assert!((z.norm() - c).abs() <= 1e-14 * c);
            }
            let v0 = basis.eval(&x, t, 0.0).unwrap();
            prop_assert_eq!(v0[basis.lattice().zero_index()], Complex64::new(c, 0.0));
        }

        #[test]
        fn conjugate_symmetry(x in prop::collection::vec(-2.0f64..2.0, 2)) {
            let lattice = WaveLattice::uniform(2, 3, false).unwrap();
            let basis = ObservableBasis::new(lattice.clone(), vec![Interval::new(0.0, 1.0); 2]).unwrap();
            let v = basis.eval(&x, 0.0, 0.0).unwrap();
            for (j, k) in lattice.iter().enumerate() {
                let neg: Vec<i32> = k.iter().map(|a| -a).collect();
                let i = lattice.index_of(&neg).unwrap();
                prop_assert_eq!(v[i], v[j].conj());
            }
        }

        #[test]
        fn periodic_in_every_axis(x in prop::collection::vec(0.0f64..0.5, 3), axis in 0usize..3) {
            let domain = hill_domain();
            let basis = ObservableBasis::new(WaveLattice::new(&[3, 3, 2], false).unwrap(), domain.clone()).unwrap();
            let mut shifted = x.clone();
            shifted[axis] += domain[axis].width();
            let a = basis.eval(&x, 0.0, 0.0).unwrap();
            let b = basis.eval(&shifted, 0.0, 0.0).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).norm() <= 1e-12);
            }
        }
    }
}
