//! Finite-dimensional modulation dynamics in the rescaled time `s`:
//!
//! ```text
//! ds/dt = lambda^-3,  lambda_s / lambda = -b,  x_s / lambda = 1,
//! b_s + 2 b^2 + c0 omega_s = 0,  omega = gamma / lambda^m
//! ```
//!
//! with the conserved quantity `L = b / lambda^2 + c1 gamma / lambda^(m+2)`,
//! `c1 = m c0 / (m + 2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::groundstate::closed_form_q;
use crate::ode::{Dopri5, OdeError};
use crate::{abs_pow, saturation_exponent, Regime};

#[derive(Debug, Error)]
pub enum ReducedError {
    #[error("b diverged to {b:.3e} at s = {s}")]
    BlowUpDetected { s: f64, b: f64, states: Vec<ReducedState> },
    #[error("step size underflow at s = {0}")]
    StepUnderflow(f64),
    #[error("integration failed: {0}")]
    Integration(OdeError),
    #[error("L0 = {0:.3e} is not positive")]
    WrongRegime(f64),
    #[error("trajectory spans too little time: {0}")]
    InsufficientSpan(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub gamma: f64,
    pub q: f64,
    pub c0: f64,
    pub m: f64,
}

impl ReducedParams {
    /// Parameters with `c0` computed from the quintic ground state.
    pub fn new(gamma: f64, q: f64) -> Self {
        Self::with_c0(gamma, q, default_c0(q))
    }

    pub fn with_c0(gamma: f64, q: f64, c0: f64) -> Self {
        ReducedParams { gamma, q, c0, m: saturation_exponent(q) }
    }

    pub fn c1(&self) -> f64 {
        self.m * self.c0 / (self.m + 2.0)
    }
}

/// `c0 = (q-1)/(4(q+1)) int Q^(q+1)` by quadrature of the closed form.
pub fn default_c0(q: f64) -> f64 {
    let g = Grid::make_symmetric(40.0, 8001).expect("static grid");
    let qq = closed_form_q(g);
    let int = qq.map(|v| abs_pow(v, q + 1.0)).integrate();
    (q - 1.0) / (4.0 * (q + 1.0)) * int
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
    pub b: f64,
    pub x: f64,
    pub params: ReducedParams,
}

impl ReducedState {
    pub fn new(lambda: f64, b: f64, params: ReducedParams) -> Self {
        ReducedState { s: 0.0, t: 0.0, lambda, b, x: 0.0, params }
    }

    pub fn omega(&self) -> f64 {
        self.params.gamma / self.lambda.powf(self.params.m)
    }

    /// `b / lambda^2 + c1 gamma / lambda^(m+2)`.
    pub fn l_of_s(&self) -> f64 {
        let p = &self.params;
        self.b / (self.lambda * self.lambda) + p.c1() * p.gamma / self.lambda.powf(p.m + 2.0)
    }
}

/// Initial `b` on the `L = 0` manifold for a given `lambda`.
pub fn critical_b(lambda: f64, params: &ReducedParams) -> f64 {
    -params.c1() * params.gamma / lambda.powf(params.m)
}

/// Integrate in `s` up to `s_end`, recording every accepted step.
/// `tol` is the relative tolerance; the absolute one is `tol / 100`.
pub fn integrate_reduced(init: &ReducedState, s_end: f64, tol: f64) -> Result<Vec<ReducedState>, ReducedError> {
    if !(init.lambda > 0.0) {
        return Err(ReducedError::InvalidArgument(format!("lambda = {}", init.lambda)));
    }
    if !(tol > 0.0) || !(s_end >= init.s) {
        return Err(ReducedError::InvalidArgument("tol > 0 and s_end >= s required".into()));
    }
    let p = init.params;
    let blowup = -1.0 / tol;
    let rhs = |_s: f64, y: &[f64; 4]| {
        // y = (ln lambda, b, t, x)
        let lam = y[0].exp();
        let omega = p.gamma * (-p.m * y[0]).exp();
        let b = y[1];
        [-b, -2.0 * b * b - p.c0 * p.m * omega * b, lam * lam * lam, lam]
    };
    let mut ode = Dopri5::new(tol, tol * 1e-2);
    // b, t and x are controlled relatively: on the L = 0 manifold b decays
    // like a power of lambda and an absolute floor would swamp it
    ode.component_atol = vec![tol * 1e-2, 1e-300, 1e-300, 1e-300];
    let mut s = init.s;
    let mut y = [init.lambda.ln(), init.b, init.t, init.x];
    let mut out = vec![*init];
    let mut diverged = false;
    // keep lambda^-3 nearly linear across a step so the t-series resolves ds/dt
    let mut res = Ok(true);
    while s < s_end && !diverged {
        ode.h_max = 3e-4 / y[1].abs();
        let seg_end = (s + 10.0 * ode.h_max).min(s_end);
        res = ode.integrate(rhs, &mut s, &mut y, seg_end, |s, y| {
            out.push(ReducedState { s, t: y[2], lambda: y[0].exp(), b: y[1], x: y[3], params: p });
            if y[1] < blowup || !y[0].is_finite() {
                diverged = true;
                return false;
            }
            true
        });
        if res.is_err() {
            break;
        }
    }
    let last = *out.last().expect("non-empty");
    match res {
        _ if diverged => Err(ReducedError::BlowUpDetected { s: last.s, b: last.b, states: out }),
        Ok(_) => Ok(out),
        Err(OdeError::StepUnderflow { t }) if last.b < 0.0 => {
            Err(ReducedError::BlowUpDetected { s: t, b: last.b, states: out })
        }
        Err(OdeError::StepUnderflow { t }) => Err(ReducedError::StepUnderflow(t)),
        Err(e) => Err(ReducedError::Integration(e)),
    }
}

/// Regime from the sign of `L0`; `|L0| <= zero_band` counts as blow down.
pub fn classify_l0(init: &ReducedState, zero_band: f64) -> Regime {
    let l0 = init.l_of_s();
    if l0.abs() <= zero_band {
        Regime::BlowDown
    } else if l0 > 0.0 {
        Regime::Soliton
    } else {
        Regime::Exit
    }
}

/// Terminal scale and translation speed for `L0 > 0`.
pub fn soliton_limit(init: &ReducedState) -> Result<(f64, f64), ReducedError> {
    let l0 = init.l_of_s();
    if !(l0 > 0.0) {
        return Err(ReducedError::WrongRegime(l0));
    }
    let p = &init.params;
    let lambda_inf = (p.c1() * p.gamma / l0).powf(1.0 / (p.m + 2.0));
    Ok((lambda_inf, lambda_inf.powi(-2)))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Log-log slopes of `lambda(t)` and `x(t)` on `t in [t_lo, t_hi]`, sampled
/// at 64 log-spaced times by linear interpolation of the trajectory.
pub fn exponents_on(traj: &[ReducedState], t_lo: f64, t_hi: f64) -> Result<(f64, f64), ReducedError> {
    if traj.len() < 2 || !(t_lo > 0.0) || !(t_hi > t_lo) {
        return Err(ReducedError::InsufficientSpan("need t_hi > t_lo > 0 and two states".into()));
    }
    let t_max = traj.last().map(|r| r.t).unwrap_or(0.0);
    if t_max < t_hi * (1.0 - 1e-12) || traj[0].t > t_lo {
        return Err(ReducedError::InsufficientSpan(format!("trajectory covers [{}, {t_max}]", traj[0].t)));
    }
    let k = 64;
    let mut ts = Vec::with_capacity(k);
    let mut lams = Vec::with_capacity(k);
    let mut xs = Vec::with_capacity(k);
    let mut j = 0;
    for i in 0..k {
        let t = t_lo * (t_hi / t_lo).powf(i as f64 / (k - 1) as f64);
        while j + 2 < traj.len() && traj[j + 1].t < t {
            j += 1;
        }
        let (a, b) = (&traj[j], &traj[j + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        ts.push(t);
        lams.push(a.lambda + w * (b.lambda - a.lambda));
        xs.push(a.x + w * (b.x - a.x));
    }
    Ok((log_log_slope(&ts, &lams), log_log_slope(&ts, &xs)))
}

/// Exponents over the final decade in `t`. The trajectory must span two
/// decades beyond `max(t0, lambda0^3)`.
pub fn asymptotic_exponents(traj: &[ReducedState]) -> Result<(f64, f64), ReducedError> {
    let t_end = traj.last().map(|r| r.t).unwrap_or(0.0);
    let t_start = traj.first().map(|r| r.t.max(r.lambda.powi(3))).unwrap_or(0.0).max(f64::MIN_POSITIVE);
    if !(t_end > 100.0 * t_start) {
        return Err(ReducedError::InsufficientSpan(format!("t from {t_start} to {t_end}")));
    }
    exponents_on(traj, t_end / 10.0, t_end)
}

/// Integrate `F_x = L - F^(1+nu)` on `[0, x_end]` and check the barrier
/// bounds `min(F0, L^(1/(1+nu))) <= F <= max(F0, L^(1/(1+nu)))`.
pub fn ode_comparison_check(f0: f64, nu: f64, l: f64, x_end: f64) -> Result<(bool, bool), ReducedError> {
    if !(f0 > 0.0 && nu > 0.0 && l > 0.0 && x_end > 0.0) {
        return Err(ReducedError::InvalidArgument("F0, nu, L and x_end must be positive".into()));
    }
    let barrier = l.powf(1.0 / (1.0 + nu));
    let lo = f0.min(barrier);
    let hi = f0.max(barrier);
    let slack = 1e-10 * hi;
    let mut ode = Dopri5::new(1e-10, 1e-12);
    let mut x = 0.0;
    let mut y = [f0];
    let mut lower_ok = true;
    let mut upper_ok = true;
    ode.integrate(
        |_, y: &[f64; 1]| [l - y[0].max(0.0).powf(1.0 + nu)],
        &mut x,
        &mut y,
        x_end,
        |_, y| {
            lower_ok &= y[0] >= lo - slack;
            upper_ok &= y[0] <= hi + slack;
            true
        },
    )
    .map_err(ReducedError::Integration)?;
    Ok((lower_ok, upper_ok))
}

/// Recompute `s` from `t` by trapezoidal integration of `lambda^-3`.
pub fn s_from_t(traj: &[ReducedState]) -> Vec<f64> {
    let mut s = Vec::with_capacity(traj.len());
    let mut acc = traj.first().map(|r| r.s).unwrap_or(0.0);
    for (i, r) in traj.iter().enumerate() {
        if i > 0 {
            let a = &traj[i - 1];
            acc += 0.5 * (r.t - a.t) * (a.lambda.powi(-3) + r.lambda.powi(-3));
        }
        s.push(acc);
    }
    s
}

/// Regime map over a grid of initial `(lambda0, b0)`.
pub fn basin(lambdas: &[f64], bs: &[f64], params: &ReducedParams, zero_band: f64) -> Vec<(f64, f64, Regime)> {
    let mut out = Vec::with_capacity(lambdas.len() * bs.len());
    for &l in lambdas {
        for &b in bs {
            out.push((l, b, classify_l0(&ReducedState::new(l, b, *params), zero_band)));
        }
    }
    out
}
