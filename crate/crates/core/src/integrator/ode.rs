//! Dormand–Prince 5(4) embedded Runge–Kutta pair with PI step-size control.
//!
//! Reference: Hairer, Nørsett, Wanner, *Solving Ordinary Differential
//! Equations I*, §II.4–5 (coefficients and the `dopri5` controller).

use serde::{Deserialize, Serialize};

use crate::dynamics::FlowSystem;
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b̂
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Local error tolerances and step limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeTolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step the solver may take. This also sets the resolution of the
    /// left-endpoint quadrature used for averaging.
    pub h_max: f64,
}

impl Default for OdeTolerances {
    fn default() -> Self {
        OdeTolerances {
            rtol: 1e-8,
            atol: 1e-10,
            h_max: 0.1,
        }
    }
}

impl OdeTolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= 0.0 && self.atol >= 0.0 && self.rtol + self.atol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ode tolerances must be nonnegative and not both zero (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ode.h_max must be positive, got {}",
                self.h_max
            )));
        }
        Ok(())
    }
}

/// Stateful adaptive stepper for one trajectory.
///
/// The proposed step size and the FSAL derivative carry over between calls to
/// [`Stepper::advance`], so integrating in chunks costs nothing extra.
pub struct Stepper<'a> {
    system: &'a FlowSystem,
    tol: OdeTolerances,
    t: f64,
    x: Vec<f64>,
    h: f64,
    fac_old: f64,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    x_new: Vec<f64>,
    n_steps: usize,
    n_rejected: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a FlowSystem, x0: &[f64], t0: f64, tol: OdeTolerances) -> Result<Self> {
        tol.validate()?;
        let n = system.dim();
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x0.len(),
            });
        }
        if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("initial state component {i}")));
        }
        let mut s = Stepper {
            system,
            tol,
            t: t0,
            x: x0.to_vec(),
            h: 0.0,
            fac_old: 1e-4,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            x_new: vec![0.0; n],
            n_steps: 0,
            n_rejected: 0,
        };
        system.eval_into(x0, t0, &mut s.k[0])?;
        s.h = s.initial_step()?;
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_rejected(&self) -> usize {
        self.n_rejected
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        self.tol.atol + self.tol.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.x.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.x.len() {
            let w = self.weight(self.x[i], self.x[i]);
            d0 += (self.x[i] / w).powi(2);
            d1 += (self.k[0][i] / w).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.tol.h_max);
        for i in 0..self.x.len() {
            self.stage[i] = self.x[i] + h0 * self.k[0][i];
        }
        self.system.eval_into(&self.stage, self.t + h0, &mut self.k[1])?;
        let mut d2 = 0.0;
        for i in 0..self.x.len() {
            let w = self.weight(self.x[i], self.x[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / w).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.tol.h_max))
    }

    /// Attempts one step of size `h`; returns the scaled error norm and leaves
    /// the candidate in `x_new` and its derivative in `k[6]`.
    fn try_step(&mut self, h: f64) -> Result<f64> {
        let n = self.x.len();
        let t = self.t;
        let sys = self.system;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let x = &self.x;
        let y = &mut self.stage;

        for i in 0..n {
            y[i] = x[i] + h * A21 * k1[i];
        }
        sys.eval_into(y, t + C2 * h, k2)?;
        for i in 0..n {
            y[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.eval_into(y, t + C3 * h, k3)?;
        for i in 0..n {
            y[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.eval_into(y, t + C4 * h, k4)?;
        for i in 0..n {
            y[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.eval_into(y, t + C5 * h, k5)?;
        for i in 0..n {
            y[i] = x[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.eval_into(y, t + h, k6)?;
        let x_new = &mut self.x_new;
        for i in 0..n {
            x_new[i] = x[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        if let Some(i) = x_new.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state component {i} at t = {}", t + h)));
        }
        sys.eval_into(x_new, t + h, k7)?;
        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let w = self.tol.atol + self.tol.rtol * x[i].abs().max(x_new[i].abs());
            err += (e / w).powi(2);
        }
        Ok((err / n as f64).sqrt())
    }

    /// Integrates to `t_end`, calling `on_step(t_prev, x_prev, t_new, x_new)`
    /// after every accepted step. The last step lands exactly on `t_end`.
    pub fn advance<F>(&mut self, t_end: f64, mut on_step: F) -> Result<()>
    where
        F: FnMut(f64, &[f64], f64, &[f64]),
    {
        if !(t_end >= self.t) {
            return Err(Error::InvalidArgument(format!(
                "cannot integrate backwards from {} to {t_end}",
                self.t
            )));
        }
        let expo = 0.2 - 0.75 * BETA;
        while self.t < t_end {
            let remaining = t_end - self.t;
            let mut h = self.h.min(self.tol.h_max);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let h_min = 1e-14 * self.t.abs().max(1.0);
            if h < h_min && !last {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let err = self.try_step(h)?;
            let fac11 = err.powf(expo);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let h_new = h / fac;
                self.fac_old = err.max(1e-4);
                let t_new = if last { t_end } else { self.t + h };
                on_step(self.t, &self.x, t_new, &self.x_new);
                self.t = t_new;
                std::mem::swap(&mut self.x, &mut self.x_new);
                self.k.swap(0, 6);
                self.n_steps += 1;
                // a truncated final step says nothing about the natural step size
                if !last || h_new < self.h {
                    self.h = h_new.min(self.tol.h_max);
                }
            } else {
                self.n_rejected += 1;
                let shrink = (fac11 / SAFETY).min(1.0 / FAC_MIN);
                self.h = h / shrink;
                if self.h < h_min {
                    return Err(Error::StepUnderflow { t: self.t, h: self.h });
                }
            }
        }
        Ok(())
    }
}

/// Integrates `system` from `(t0, x0)` to `t1` and returns every accepted
/// `(t_n, x_n)`, starting with `(t0, x0)` and ending exactly at `t1`.
pub fn integrate_adaptive(
    system: &FlowSystem,
    x0: &[f64],
    t0: f64,
    t1: f64,
    tol: OdeTolerances,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let mut stepper = Stepper::new(system, x0, t0, tol)?;
    let mut out = vec![(t0, x0.to_vec())];
    stepper.advance(t1, |_, _, t, x| out.push((t, x.to_vec())))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_abc_default, builtin_hill, builtin_oscillator, hill_hamiltonian, zero_field};

    #[test]
    fn oscillator_is_exact() {
        let tol = OdeTolerances::default();
        let traj = integrate_adaptive(&builtin_oscillator(), &[0.0], 0.0, 1.0, tol).unwrap();
        let (t, x) = traj.last().unwrap();
        assert_eq!(*t, 1.0);
        assert!((x[0] - 1.0).abs() <= tol.atol);
        assert!(traj.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(traj[0].0, 0.0);
    }

    #[test]
    fn zero_field_stays_put() {
        let x0 = [0.3, 0.6];
        let traj = integrate_adaptive(&zero_field(2), &x0, 0.0, 5.0, OdeTolerances::default()).unwrap();
        for (_, x) in &traj {
            assert_eq!(x, &x0);
        }
    }

    #[test]
    fn abc_tolerance_halving() {
        let sys = builtin_abc_default();
        let tol = OdeTolerances {
            rtol: 1e-7,
            atol: 1e-9,
            h_max: 1.0,
        };
        let half = OdeTolerances {
            rtol: tol.rtol / 2.0,
            atol: tol.atol / 2.0,
            ..tol
        };
        for x0 in [[0.1, 0.2, 0.3], [0.0, 0.95, 0.1], [0.7, 0.4, 0.55]] {
            let a = integrate_adaptive(&sys, &x0, 0.0, 10.0, tol).unwrap();
            let b = integrate_adaptive(&sys, &x0, 0.0, 10.0, half).unwrap();
            let (xa, xb) = (&a.last().unwrap().1, &b.last().unwrap().1);
            let diff = xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 10.0 * tol.rtol, "diff = {diff:e}");
        }
    }

    #[test]
    fn chunked_equals_single_pass() {
        let sys = builtin_abc_default();
        let tol = OdeTolerances::default();
        let mut one = Stepper::new(&sys, &[0.1, 0.2, 0.3], 0.0, tol).unwrap();
        one.advance(7.5, |_, _, _, _| {}).unwrap();
        let mut two = Stepper::new(&sys, &[0.1, 0.2, 0.3], 0.0, tol).unwrap();
        two.advance(2.5, |_, _, _, _| {}).unwrap();
        two.advance(7.5, |_, _, _, _| {}).unwrap();
        let diff: f64 = one.state().iter().zip(two.state()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff < 1e-6);
    }

    #[test]
    fn unperturbed_hill_conserves_hamiltonian() {
        let sys = builtin_hill(0.0, 0.0);
        let tol = OdeTolerances {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.1,
        };
        let traj = integrate_adaptive(&sys, &[0.2, 0.1, 1.3], 0.0, 50.0, tol).unwrap();
        let h0 = hill_hamiltonian(0.2, 0.1);
        let drift = traj
            .iter()
            .map(|(_, x)| (hill_hamiltonian(x[0], x[1]) - h0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift = {drift:e}");
    }

    #[test]
    fn singular_state_propagates() {
        let sys = builtin_hill(0.01, 0.01);
        assert!(integrate_adaptive(&sys, &[0.0, 0.0, 0.0], 0.0, 1.0, OdeTolerances::default()).is_err());
        assert!(integrate_adaptive(&builtin_oscillator(), &[0.0], 1.0, 1.0, OdeTolerances::default()).is_err());
    }

    #[test]
    fn step_cap_is_respected() {
        let tol = OdeTolerances {
            h_max: 0.01,
            ..Default::default()
        };
        let traj = integrate_adaptive(&builtin_oscillator(), &[0.0], 0.0, 1.0, tol).unwrap();
        assert!(traj.windows(2).all(|w| w[1].0 - w[0].0 <= 0.01 + 1e-15));
        assert!(traj.len() >= 101);
    }
}
