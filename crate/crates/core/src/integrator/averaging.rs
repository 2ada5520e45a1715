//! Online trajectory averages of the Fourier observables with the pause-and-
//! compare stopping rule.
//!
//! Along accepted steps `t_0 < t_1 < … < t_N` the average is the left-endpoint
//! sum `(1/(t_N − t_0)) Σ (t_n − t_{n−1}) f(x_{n−1}) e^{i2πω(t_{n−1} − t_0)}`.
//! Integration pauses every `T_e`; once a pause at or after `T_min` changes
//! the averages by less than `ATOL` in the max-modulus norm, the trajectory
//! is done.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ode::{OdeTolerances, Stepper};
use crate::dynamics::FlowSystem;
use crate::error::{Error, Result};
use crate::observables::ObservableBasis;

/// Stopping-rule and quadrature settings for one averaging run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingConfig {
    pub atol_stop: f64,
    pub t_min: f64,
    pub t_e: f64,
    pub t_max: f64,
    /// Harmonic frequency; `0` gives plain ergodic averages.
    pub omega: f64,
    pub ode: OdeTolerances,
}

impl AveragingConfig {
    /// `t_max` defaults to `5 · t_min`.
    pub fn new(atol_stop: f64, t_min: f64, t_e: f64, t_max: Option<f64>) -> Result<Self> {
        let cfg = AveragingConfig {
            atol_stop,
            t_min,
            t_e,
            t_max: t_max.unwrap_or(5.0 * t_min),
            omega: 0.0,
            ode: OdeTolerances::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_ode(mut self, ode: OdeTolerances) -> Self {
        self.ode = ode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_e > 0.0 && self.t_e.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "avg.t_e must be positive, got {}",
                self.t_e
            )));
        }
        if !(self.t_min >= 0.0 && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= t_min <= t_max, got t_min = {}, t_max = {}",
                self.t_min, self.t_max
            )));
        }
        if !(self.atol_stop > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "avg.atol must be positive, got {}",
                self.atol_stop
            )));
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidArgument("avg.omega must be finite".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument("avg.t_max must be positive".into()));
        }
        self.ode.validate()
    }
}

/// One point of the ergodic (or harmonic) quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientSample {
    pub x0: Vec<f64>,
    pub omega: f64,
    pub averages: Vec<Complex64>,
    pub stop_time: f64,
    pub final_adiff: f64,
    pub converged: bool,
    pub n_steps: usize,
    /// Set when the dynamics failed (e.g. a singular state); the averages are
    /// then whatever had accumulated before the failure.
    pub failure: Option<String>,
}

impl QuotientSample {
    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Running time average. Stored as a mean rather than a sum, so a constant
/// signal averages to itself exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    mean: Vec<Complex64>,
    elapsed: f64,
}

impl Accumulator {
    pub fn new(len: usize) -> Self {
        Accumulator {
            mean: vec![Complex64::new(0.0, 0.0); len],
            elapsed: 0.0,
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Adds `values` held constant for a duration `dt`.
    pub fn add(&mut self, values: &[Complex64], dt: f64) {
        debug_assert_eq!(values.len(), self.mean.len());
        if dt <= 0.0 {
            return;
        }
        self.elapsed += dt;
        let w = dt / self.elapsed;
        for (m, v) in self.mean.iter_mut().zip(values) {
            *m += (v - *m) * w;
        }
    }

    /// Zeroth-order contribution of the step `(t_prev, x_prev) → t_new`,
    /// with `t` measured from the start of the trajectory.
    pub fn accumulate(
        &mut self,
        basis: &ObservableBasis,
        (t_prev, x_prev, t_new): (f64, &[f64], f64),
        omega: f64,
        table: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        basis.eval_into(x_prev, t_prev, omega, table, scratch);
        self.add(scratch, t_new - t_prev);
    }

    /// Combines with the average over a subsequent, disjoint time interval.
    pub fn merge(&mut self, other: &Accumulator) {
        if other.elapsed <= 0.0 {
            return;
        }
        if self.elapsed <= 0.0 {
            *self = other.clone();
            return;
        }
        self.elapsed += other.elapsed;
        let w = other.elapsed / self.elapsed;
        for (m, v) in self.mean.iter_mut().zip(&other.mean) {
            *m += (v - *m) * w;
        }
    }

    pub fn finalize(&self) -> Vec<Complex64> {
        self.mean.clone()
    }

    pub fn mean(&self) -> &[Complex64] {
        &self.mean
    }
}

/// `‖a − b‖_∞` over complex moduli.
pub fn adiff(current: &[Complex64], previous: &[Complex64]) -> Result<f64> {
    if current.len() != previous.len() {
        return Err(Error::DimensionMismatch {
            expected: previous.len(),
            got: current.len(),
        });
    }
    Ok(current
        .iter()
        .zip(previous)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

struct Run<'a> {
    stepper: Stepper<'a>,
    basis: &'a ObservableBasis,
    omega: f64,
    t0: f64,
    acc: Accumulator,
    table: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<'a> Run<'a> {
    fn start(
        system: &'a FlowSystem,
        x0: &[f64],
        basis: &'a ObservableBasis,
        omega: f64,
        ode: OdeTolerances,
    ) -> Result<(Self, Vec<Complex64>)> {
        if x0.len() < basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "basis observes {} components but the state has {}",
                basis.dim(),
                x0.len()
            )));
        }
        let stepper = Stepper::new(system, x0, 0.0, ode)?;
        let initial = basis.eval(x0, 0.0, omega)?;
        Ok((
            Run {
                stepper,
                basis,
                omega,
                t0: 0.0,
                acc: Accumulator::new(basis.len()),
                table: basis.workspace(),
                scratch: vec![Complex64::new(0.0, 0.0); basis.len()],
            },
            initial,
        ))
    }

    fn advance(&mut self, t_end: f64) -> Result<()> {
        let Run {
            stepper,
            basis,
            omega,
            t0,
            acc,
            table,
            scratch,
        } = self;
        stepper.advance(t_end, |tp, xp, tn, _| {
            acc.accumulate(basis, (tp - *t0, xp, tn - *t0), *omega, table, scratch);
        })
    }
}

/// Averages observables along the trajectory from `x0` until the stopping
/// rule fires or `t_max` is reached.
///
/// Configuration errors are returned as `Err`; failures of the dynamics are
/// recorded in [`QuotientSample::failure`].
pub fn run_until_converged(
    system: &FlowSystem,
    x0: &[f64],
    basis: &ObservableBasis,
    cfg: &AveragingConfig,
) -> Result<QuotientSample> {
    cfg.validate()?;
    let ode = OdeTolerances {
        h_max: cfg.ode.h_max.min(cfg.t_e),
        ..cfg.ode
    };
    let mut sample = QuotientSample {
        x0: x0.to_vec(),
        omega: cfg.omega,
        averages: Vec::new(),
        stop_time: 0.0,
        final_adiff: f64::INFINITY,
        converged: false,
        n_steps: 0,
        failure: None,
    };
    let (mut run, mut previous) = match Run::start(system, x0, basis, cfg.omega, ode) {
        Ok(r) => r,
        Err(e @ (Error::BasisMismatch(_) | Error::DimensionMismatch { .. } | Error::InvalidArgument(_))) => {
            return Err(e)
        }
        Err(e) => {
            sample.failure = Some(e.to_string());
            sample.averages = vec![Complex64::new(f64::NAN, f64::NAN); basis.len()];
            return Ok(sample);
        }
    };
    let mut j = 1u64;
    loop {
        let pause = (j as f64 * cfg.t_e).min(cfg.t_max);
        if let Err(e) = run.advance(pause) {
            sample.failure = Some(e.to_string());
            sample.stop_time = run.stepper.time();
            sample.n_steps = run.stepper.n_steps();
            sample.averages = run.acc.finalize();
            return Ok(sample);
        }
        let current = run.acc.finalize();
        let diff = adiff(&current, &previous)?;
        sample.final_adiff = diff;
        sample.stop_time = pause;
        if pause >= cfg.t_min && diff < cfg.atol_stop {
            sample.converged = true;
        }
        if sample.converged || pause >= cfg.t_max {
            sample.averages = current;
            sample.n_steps = run.stepper.n_steps();
            return Ok(sample);
        }
        previous = current;
        j += 1;
    }
}

/// Runs [`run_until_converged`] for every initial condition concurrently;
/// output order follows `ics`.
pub fn run_ensemble(
    system: &FlowSystem,
    ics: &[Vec<f64>],
    basis: &ObservableBasis,
    cfg: &AveragingConfig,
) -> Result<Vec<QuotientSample>> {
    ics.par_iter()
        .map(|x0| run_until_converged(system, x0, basis, cfg))
        .collect()
}

/// Records `(T_j, ADIFF_j)` at each pause of `pause_grid` (strictly
/// increasing, positive). The first entry compares against the observable
/// values at `x0`, the `T → 0` limit of the average.
pub fn convergence_probe(
    system: &FlowSystem,
    x0: &[f64],
    basis: &ObservableBasis,
    pause_grid: &[f64],
    omega: f64,
    ode: OdeTolerances,
) -> Result<Vec<(f64, f64)>> {
    if pause_grid.windows(2).any(|w| !(w[1] > w[0])) || pause_grid.first().is_some_and(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument(
            "pause grid must be positive and strictly increasing".into(),
        ));
    }
    let (mut run, mut previous) = Run::start(system, x0, basis, omega, ode)?;
    let mut out = Vec::with_capacity(pause_grid.len());
    for &pause in pause_grid {
        run.advance(pause)?;
        let current = run.acc.finalize();
        out.push((pause, adiff(&current, &previous)?));
        previous = current;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_abc_default, builtin_hill, builtin_oscillator, zero_field, Interval};
    use crate::observables::WaveLattice;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn osc_basis(k: u32, half: bool) -> ObservableBasis {
        ObservableBasis::new(WaveLattice::uniform(1, k, half).unwrap(), vec![Interval::new(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn constant_signal_is_exact() {
        let v = [Complex64::new(0.3, -0.7), Complex64::new(1.1, 0.0)];
        let mut acc = Accumulator::new(2);
        for dt in [0.1, 0.37, 1e-3, 2.5, 0.1, 0.9] {
            acc.add(&v, dt);
        }
        assert_eq!(acc.finalize(), v.to_vec());
        let mut single = Accumulator::new(2);
        single.add(&v, 0.123);
        assert_eq!(single.finalize(), v.to_vec());
    }

    #[test]
    fn oscillator_grid_average_matches_exact_integral() {
        // uniform grid dt = 1e-3 to T = 50; exact average is
        // (2π)^{-1/2} (e^{i2πT} − 1)/(i2πT) = 0
        let basis = osc_basis(1, false);
        let j1 = basis.lattice().index_of(&[1]).unwrap();
        let mut acc = Accumulator::new(basis.len());
        let mut table = basis.workspace();
        let mut scratch = vec![Complex64::new(0.0, 0.0); basis.len()];
        let dt = 1e-3;
        let n = 50_000;
        for i in 0..n {
            let t = i as f64 * dt;
            acc.accumulate(&basis, (t, &[t], t + dt), 0.0, &mut table, &mut scratch);
        }
        let t_end = n as f64 * dt;
        let c = (2.0 * PI).powf(-0.5);
        let exact = c * (Complex64::new(0.0, 2.0 * PI * t_end).exp() - 1.0) / Complex64::new(0.0, 2.0 * PI * t_end);
        let avg = acc.finalize()[j1];
        assert!(avg.norm() < 5e-3);
        // left-endpoint error over whole periods is O(dt)
        assert!((avg - exact).norm() < 2.0 * c * dt);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(dts in prop::collection::vec(1e-3f64..1.0, 2..60), split in 0usize..60, seed in 0u64..1000) {
            let split = split % dts.len();
            let vals: Vec<Vec<Complex64>> = dts.iter().enumerate().map(|(i, _)| {
                let a = (i as f64 + seed as f64) * 0.37;
                vec![Complex64::new(a.sin(), a.cos()), Complex64::new((2.0 * a).cos(), 0.5)]
            }).collect();
            let mut one = Accumulator::new(2);
            for (v, &dt) in vals.iter().zip(&dts) { one.add(v, dt); }
            let mut first = Accumulator::new(2);
            let mut second = Accumulator::new(2);
            for (i, (v, &dt)) in vals.iter().zip(&dts).enumerate() {
                if i < split { first.add(v, dt) } else { second.add(v, dt) }
            }
            first.merge(&second);
            for (a, b) in first.mean().iter().zip(one.mean()) {
                prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
            prop_assert!((first.elapsed() - one.elapsed()).abs() <= 1e-12 * one.elapsed());
        }

        #[test]
        fn adiff_is_max_modulus(a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..20), b_shift in -1.0f64..1.0) {
            let x: Vec<Complex64> = a.iter().map(|&(r, i)| Complex64::new(r, i)).collect();
            let y: Vec<Complex64> = a.iter().enumerate().map(|(j, &(r, i))| Complex64::new(r + b_shift * j as f64, i - b_shift)).collect();
            let mut brute = 0.0f64;
            for j in 0..x.len() {
                let d = ((x[j].re - y[j].re).powi(2) + (x[j].im - y[j].im).powi(2)).sqrt();
                brute = brute.max(d);
            }
            prop_assert!((adiff(&x, &y).unwrap() - brute).abs() <= 1e-14 * brute.max(1.0));
        }
    }

    #[test]
    fn adiff_examples() {
        let z = Complex64::new(0.0, 0.0);
        let f = vec![z, Complex64::new(0.1, 0.0)];
        assert_eq!(adiff(&f, &f).unwrap(), 0.0);
        assert_eq!(adiff(&f, &[z, z]).unwrap(), 0.1);
        assert!(adiff(&f, &[z]).is_err());
    }

    #[test]
    fn fixed_point_converges_at_first_pause() {
        let sys = zero_field(3);
        let basis = ObservableBasis::new(
            WaveLattice::uniform(3, 2, true).unwrap(),
            vec![Interval::new(0.0, 1.0); 3],
        )
        .unwrap();
        let cfg = AveragingConfig::new(1e-4, 10.0, 10.0, None).unwrap();
        let x0 = [0.12, 0.5, 0.77];
        let s = run_until_converged(&sys, &x0, &basis, &cfg).unwrap();
        assert!(s.converged);
        assert_eq!(s.stop_time, 10.0);
        assert_eq!(s.final_adiff, 0.0);
        assert_eq!(s.averages, basis.eval(&x0, 0.0, 0.0).unwrap());
    }

    #[test]
    fn oscillator_converges_to_zero_modes() {
        let basis = osc_basis(3, false);
        let cfg = AveragingConfig::new(1e-4, 50.0, 50.0, Some(5000.0)).unwrap();
        let s = run_until_converged(&builtin_oscillator(), &[0.3], &basis, &cfg).unwrap();
        assert!(s.converged, "{s:?}");
        let c = (2.0 * PI).powf(-0.5);
        for (k, a) in basis.lattice().iter().zip(&s.averages) {
            if k[0] == 0 {
                assert_eq!(*a, Complex64::new(c, 0.0));
            } else {
                assert!(a.norm() < 1e-3, "k = {k:?}: {a}");
            }
        }
    }

    #[test]
    fn converged_samples_respect_invariants() {
        let sys = builtin_abc_default();
        let basis = ObservableBasis::new(
            WaveLattice::uniform(3, 2, true).unwrap(),
            vec![Interval::new(0.0, 1.0); 3],
        )
        .unwrap();
        let cfg = AveragingConfig::new(2e-3, 40.0, 10.0, Some(100.0)).unwrap();
        let ics = vec![vec![0.1, 0.2, 0.3], vec![0.0, 0.95, 0.1], vec![0.6, 0.1, 0.9]];
        let samples = run_ensemble(&sys, &ics, &basis, &cfg).unwrap();
        let c = basis.norm_const();
        let z = basis.lattice().zero_index();
        for s in &samples {
            assert!(s.failure.is_none());
            if s.converged {
                assert!(s.final_adiff < cfg.atol_stop && s.stop_time >= cfg.t_min);
            } else {
                assert_eq!(s.stop_time, cfg.t_max);
            }
            assert_eq!(s.averages[z], Complex64::new(c, 0.0));
            assert!(s.averages.iter().all(|a| a.norm() <= c * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn orbit_invariance_of_ergodic_averages() {
        let sys = builtin_abc_default();
        let basis = ObservableBasis::new(
            WaveLattice::uniform(3, 2, true).unwrap(),
            vec![Interval::new(0.0, 1.0); 3],
        )
        .unwrap();
        let cfg = AveragingConfig::new(1e-4, 200.0, 10.0, Some(4000.0)).unwrap();
        // inside a primary vortex, so the trajectory is regular
        let x0 = [0.0, 0.55, 0.75];
        let a = run_until_converged(&sys, &x0, &basis, &cfg).unwrap();
        assert!(a.converged);
        let traj = super::super::ode::integrate_adaptive(&sys, &x0, 0.0, 10.0, cfg.ode).unwrap();
        let x_tau = traj.last().unwrap().1.clone();
        let b = run_until_converged(&sys, &x_tau, &basis, &cfg).unwrap();
        assert!(b.converged);
        let d = adiff(&a.averages, &b.averages).unwrap();
        assert!(d < 10.0 * cfg.atol_stop, "{d:e}");
    }

    #[test]
    fn harmonic_average_is_koopman_eigenfunction() {
        // oscillator, ω = −k: the harmonic average of f_k is (2π)^{-1/2} e^{i2πkθ₀}
        let c = (2.0 * PI).powf(-0.5);
        let basis = osc_basis(2, false);
        let ode = OdeTolerances {
            h_max: 0.01,
            ..Default::default()
        };
        for k in [1i32, 2] {
            let omega = -(k as f64);
            let j = basis.lattice().index_of(&[k]).unwrap();
            let mut errs = Vec::new();
            for t_end in [50.0, 500.0] {
                let cfg = AveragingConfig::new(1e-12, t_end, t_end, Some(t_end))
                    .unwrap()
                    .with_omega(omega)
                    .with_ode(ode);
                let theta0 = 0.17;
                let tau = 0.3;
                let a = run_until_converged(&builtin_oscillator(), &[theta0], &basis, &cfg).unwrap();
                let b = run_until_converged(&builtin_oscillator(), &[theta0 + tau], &basis, &cfg).unwrap();
                let expect = Complex64::from_polar(c, 2.0 * PI * k as f64 * theta0);
                assert!((a.averages[j] - expect).norm() < 5e-3);
                // U_τ f̃ = e^{−i2πωτ} f̃ for the e^{+i2πωt} modulation
                let factor = Complex64::from_polar(1.0, -2.0 * PI * omega * tau);
                errs.push((b.averages[j] - factor * a.averages[j]).norm());
            }
            assert!(errs.iter().all(|&e| e < 1e-9), "{errs:?}");
        }
    }

    #[test]
    fn singular_dynamics_mark_sample_failed() {
        let basis = ObservableBasis::new(
            WaveLattice::uniform(3, 1, true).unwrap(),
            builtin_hill(0.0, 0.0).domain().to_vec(),
        )
        .unwrap();
        let cfg = AveragingConfig::new(1e-4, 10.0, 5.0, None).unwrap();
        let s = run_until_converged(&builtin_hill(0.01, 0.01), &[0.0, 0.0, 0.0], &basis, &cfg).unwrap();
        assert!(s.is_failed());
        assert!(!s.converged);
    }

    #[test]
    fn config_validation() {
        assert!(AveragingConfig::new(1e-4, 100.0, 0.0, None).is_err());
        assert!(AveragingConfig::new(1e-4, 100.0, 10.0, Some(50.0)).is_err());
        assert!(AveragingConfig::new(0.0, 100.0, 10.0, None).is_err());
        assert_eq!(AveragingConfig::new(1e-4, 100.0, 10.0, None).unwrap().t_max, 500.0);
    }

    #[test]
    fn probe_on_fixed_point_is_zero() {
        let basis = ObservableBasis::new(
            WaveLattice::uniform(2, 3, false).unwrap(),
            vec![Interval::new(0.0, 1.0); 2],
        )
        .unwrap();
        let probe = convergence_probe(
            &zero_field(2),
            &[0.4, 0.1],
            &basis,
            &[10.0, 20.0, 30.0],
            0.0,
            OdeTolerances::default(),
        )
        .unwrap();
        assert!(probe.iter().all(|&(_, d)| d == 0.0));
        assert!(convergence_probe(
            &zero_field(2),
            &[0.4, 0.1],
            &basis,
            &[10.0, 5.0],
            0.0,
            OdeTolerances::default()
        )
        .is_err());
    }
}
