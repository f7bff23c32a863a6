//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    /// Current step-size magnitude; carried between calls.
    pub h: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Per-component absolute tolerances; `atol` applies when empty.
    pub component_atol: Vec<f64>,
    pub max_steps: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Dopri5 {
            rtol,
            atol,
            h: 0.0,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            component_atol: Vec::new(),
            max_steps: 5_000_000,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Integrate from `*t` towards `t_end`. `on_step` sees every accepted
    /// state and may stop the integration by returning `false`. Returns
    /// whether `t_end` was reached.
    pub fn integrate<const N: usize, F, S>(
        &mut self,
        mut f: F,
        t: &mut f64,
        y: &mut [f64; N],
        t_end: f64,
        mut on_step: S,
    ) -> Result<bool, OdeError>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
        S: FnMut(f64, &[f64; N]) -> bool,
    {
        let span = t_end - *t;
        if span == 0.0 {
            return Ok(true);
        }
        let dir = span.signum();
        let mut k = [[0.0; N]; 7];
        k[0] = f(*t, y);
        if self.h <= 0.0 {
            self.h = self.initial_step(y, &k[0], span.abs());
        }
        let mut steps = 0usize;
        loop {
            let remaining = (t_end - *t) * dir;
            if remaining <= 0.0 {
                return Ok(true);
            }
            if steps >= self.max_steps {
                return Err(OdeError::TooManySteps { t: *t });
            }
            let mut h = self.h.min(self.h_max);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let hs = h * dir;
            for s in 1..7 {
                let mut ys = *y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for i in 0..N {
                            ys[i] += hs * a * kj[i];
                        }
                    }
                }
                k[s] = f(*t + C[s] * hs, &ys);
            }
            let mut y_new = *y;
            for (j, kj) in k.iter().enumerate().take(6) {
                let b = A[6][j];
                for i in 0..N {
                    y_new[i] += hs * b * kj[i];
                }
            }
            let mut err = 0.0;
            for i in 0..N {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                e *= hs;
                let sc = self.atol_of(i) + self.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / N as f64).sqrt();
            steps += 1;
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                self.rejected += 1;
                self.h = h * 0.2;
                if self.h < self.h_min * t.abs().max(1.0) {
                    return Err(OdeError::NonFinite { t: *t });
                }
                continue;
            }
            if err <= 1.0 {
                *t = if last { t_end } else { *t + hs };
                *y = y_new;
                self.accepted += 1;
                // first-same-as-last
                k[0] = k[6];
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    self.h = h * fac;
                }
                if !on_step(*t, y) {
                    return Ok(false);
                }
            } else {
                self.rejected += 1;
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if self.h < self.h_min * t.abs().max(1.0) {
                    return Err(OdeError::StepUnderflow { t: *t });
                }
            }
        }
    }

    fn atol_of(&self, i: usize) -> f64 {
        self.component_atol.get(i).copied().unwrap_or(self.atol)
    }

    fn initial_step<const N: usize>(&self, y: &[f64; N], dy: &[f64; N], span: f64) -> f64 {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = self.atol_of(i) + self.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (dy[i] / sc).powi(2);
        }
        let d0 = (d0 / N as f64).sqrt();
        let d1 = (d1 / N as f64).sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span).max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let mut s = Dopri5::new(1e-12, 1e-14);
        let mut t = 0.0;
        let mut y = [1.0, 0.0];
        let done = s
            .integrate(|_, y| [y[1], -y[0]], &mut t, &mut y, 2.0 * std::f64::consts::PI, |_, _| true)
            .unwrap();
        assert!(done);
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
    }

    #[test]
    fn backward_integration() {
        let mut s = Dopri5::new(1e-12, 1e-14);
        let mut t = 1.0;
        let mut y = [1.0f64.exp()];
        s.integrate(|_, y| [y[0]], &mut t, &mut y, 0.0, |_, _| true).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-11);
    }
}
