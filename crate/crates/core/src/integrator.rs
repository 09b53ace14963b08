//! Dormand–Prince 5(4) integrator with PI step-size control on fixed-size
//! real state vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative/absolute error tolerances of the adaptive solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite()) {
            return Err(Error::Config(format!(
                "solver tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for Stats {
    fn add_assign(&mut self, rhs: Self) {
        self.accepted += rhs.accepted;
        self.rejected += rhs.rejected;
        self.rhs_evals += rhs.rhs_evals;
    }
}

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

// 5th minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub tol: Tolerances,
    /// Largest allowed step; `f64::INFINITY` for none.
    pub h_max: f64,
    pub max_steps: usize,
    pub safety: f64,
    pub fac_min: f64,
    pub fac_max: f64,
    /// PI stabilisation exponent.
    pub beta: f64,
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Dopri5 {
            tol,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
            safety: 0.9,
            fac_min: 0.2,
            fac_max: 10.0,
            beta: 0.04,
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1`, updating `y` in place.
    ///
    /// `h` carries the step-size guess in and the last proposed step out, so
    /// consecutive segments can continue smoothly; pass `0.0` for an automatic
    /// initial guess. `on_step` runs after every accepted step and may modify
    /// the state, returning `true` if it did.
    pub fn integrate<const N: usize, F, O>(
        &self,
        mut f: F,
        t0: f64,
        t1: f64,
        y: &mut [f64; N],
        h: &mut f64,
        mut on_step: O,
    ) -> Result<Stats>
    where
        F: FnMut(f64, &[f64; N], &mut [f64; N]),
        O: FnMut(f64, &mut [f64; N]) -> bool,
    {
        let mut stats = Stats::default();
        if t1 <= t0 {
            return Ok(stats);
        }
        let span = t1 - t0;
        let h_max = self.h_max.min(span);

        let mut k1 = [0.0; N];
        let mut k2 = [0.0; N];
        let mut k3 = [0.0; N];
        let mut k4 = [0.0; N];
        let mut k5 = [0.0; N];
        let mut k6 = [0.0; N];
        let mut k7 = [0.0; N];
        let mut stage = [0.0; N];
        let mut y_new = [0.0; N];

        f(t0, y, &mut k1);
        stats.rhs_evals += 1;

        let mut step = if *h > 0.0 { h.min(h_max) } else { self.initial_step(&mut f, t0, y, &k1, h_max, &mut stats) };
        let expo = 0.2 - 0.75 * self.beta;
        let mut fac_old: f64 = 1e-4;
        let mut t = t0;
        let mut last_rejected = false;

        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::ToleranceNotAchieved { t, steps: self.max_steps });
            }
            let remaining = t1 - t;
            let last = step >= remaining * (1.0 - 1e-12);
            if last {
                step = remaining;
            }
            if step < 16.0 * f64::EPSILON * t.abs().max(span) {
                return Err(Error::StepSizeUnderflow { t });
            }

            let s = step;
            for i in 0..N {
                stage[i] = y[i] + s * A21 * k1[i];
            }
            f(t + C2 * s, &stage, &mut k2);
            for i in 0..N {
                stage[i] = y[i] + s * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * s, &stage, &mut k3);
            for i in 0..N {
                stage[i] = y[i] + s * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * s, &stage, &mut k4);
            for i in 0..N {
                stage[i] = y[i] + s * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * s, &stage, &mut k5);
            for i in 0..N {
                stage[i] = y[i] + s * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_next = if last { t1 } else { t + s };
            f(t_next, &stage, &mut k6);
            for i in 0..N {
                y_new[i] = y[i] + s * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t_next, &y_new, &mut k7);
            stats.rhs_evals += 6;

            let mut err_sq = 0.0;
            for i in 0..N {
                let e = s * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / N as f64).sqrt();
            if !err.is_finite() {
                stats.rejected += 1;
                step *= self.fac_min;
                last_rejected = true;
                continue;
            }

            let fac11 = err.powf(expo);
            if err <= 1.0 {
                let fac = (fac11 / fac_old.powf(self.beta) / self.safety).clamp(1.0 / self.fac_max, 1.0 / self.fac_min);
                let mut proposal = step / fac;
                fac_old = err.max(1e-4);
                stats.accepted += 1;
                t = t_next;
                y.copy_from_slice(&y_new);
                if on_step(t, y) {
                    f(t, y, &mut k1);
                    stats.rhs_evals += 1;
                } else {
                    k1 = k7;
                }
                if last_rejected {
                    proposal = proposal.min(step);
                }
                last_rejected = false;
                if last {
                    *h = proposal.min(h_max);
                    return Ok(stats);
                }
                step = proposal.min(h_max);
            } else {
                stats.rejected += 1;
                step /= (fac11 / self.safety).min(1.0 / self.fac_min);
                last_rejected = true;
            }
        }
    }

    fn initial_step<const N: usize, F>(
        &self,
        f: &mut F,
        t0: f64,
        y: &[f64; N],
        f0: &[f64; N],
        h_max: f64,
        stats: &mut Stats,
    ) -> f64
    where
        F: FnMut(f64, &[f64; N], &mut [f64; N]),
    {
        let sc = |i: usize| self.tol.atol + self.tol.rtol * y[i].abs();
        let rms = |v: &[f64; N]| (v.iter().enumerate().map(|(i, x)| (x / sc(i)).powi(2)).sum::<f64>() / N as f64).sqrt();
        let d0 = rms(y);
        let d1 = rms(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(h_max);
        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] = y[i] + h0 * f0[i];
        }
        let mut f1 = [0.0; N];
        f(t0 + h0, &y1, &mut f1);
        stats.rhs_evals += 1;
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - f0[i];
        }
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(h_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let solver = Dopri5::new(Tolerances { rtol: 1e-10, atol: 1e-12 });
        let mut y = [1.0];
        let mut h = 0.0;
        solver.integrate(|_, y: &[f64; 1], dy| dy[0] = -0.5 * y[0], 0.0, 4.0, &mut y, &mut h, |_, _| false).unwrap();
        assert_relative_eq!(y[0], (-2.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let solver = Dopri5::new(Tolerances { rtol: 1e-10, atol: 1e-12 });
        let mut y = [1.0, 0.0];
        let mut h = 0.0;
        let stats = solver
            .integrate(|_, y: &[f64; 2], dy| { dy[0] = y[1]; dy[1] = -y[0]; }, 0.0, 10.0, &mut y, &mut h, |_, _| false)
            .unwrap();
        assert_relative_eq!(y[0], 10f64.cos(), epsilon = 1e-8);
        assert_relative_eq!(y[1], -10f64.sin(), epsilon = 1e-8);
        assert!(stats.accepted > 10);
    }

    #[test]
    fn time_dependent_rhs_hits_endpoint() {
        let solver = Dopri5::new(Tolerances::default()).with_h_max(0.1);
        let mut y = [0.0];
        let mut h = 0.0;
        let mut last_t = 0.0;
        solver
            .integrate(|t, _: &[f64; 1], dy| dy[0] = t.cos(), 0.0, 3.0, &mut y, &mut h, |t, _| { last_t = t; false })
            .unwrap();
        assert_eq!(last_t, 3.0);
        assert_relative_eq!(y[0], 3f64.sin(), epsilon = 1e-9);
    }

    #[test]
    fn step_budget_exhaustion_is_reported() {
        let solver = Dopri5::new(Tolerances::default()).with_max_steps(5);
        let mut y = [1.0, 0.0];
        let mut h = 0.0;
        let err = solver
            .integrate(|_, y: &[f64; 2], dy| { dy[0] = 50.0 * y[1]; dy[1] = -50.0 * y[0]; }, 0.0, 100.0, &mut y, &mut h, |_, _| false)
            .unwrap_err();
        assert!(matches!(err, Error::ToleranceNotAchieved { .. }));
    }

    #[test]
    fn blow_up_underflows() {
        let solver = Dopri5::new(Tolerances::default());
        let mut y = [1.0];
        let mut h = 0.0;
        let err = solver
            .integrate(|_, y: &[f64; 1], dy| dy[0] = y[0] * y[0], 0.0, 2.0, &mut y, &mut h, |_, _| false)
            .unwrap_err();
        match err {
            Error::StepSizeUnderflow { t } | Error::ToleranceNotAchieved { t, .. } => assert!(t > 0.9 && t < 1.0 + 1e-6),
            other => panic!("unexpected {other}"),
        }
    }
}
