//! Ground states `Q_omega`: even, positive, decaying solutions of
//! `Q'' - Q + Q^5 - omega Q |Q|^(q-1) = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, Grid, GridFunction};
use crate::linearized::{self, LinearError, LinearizedOperator};
use crate::ode::Dopri5;
use crate::odd_pow;

#[derive(Debug, Error)]
pub enum GroundStateError {
    #[error("omega = {omega} outside the admissible range [0, {omega_star})")]
    OmegaTooLarge { omega: f64, omega_star: f64 },
    #[error("shooting did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GroundStateConfig {
    pub omega_star: f64,
    /// Shooting target; the profile continues as a pure exponential beyond.
    pub match_point: f64,
    pub rtol: f64,
    pub max_newton: usize,
}

impl Default for GroundStateConfig {
    fn default() -> Self {
        GroundStateConfig { omega_star: 0.05, match_point: 12.0, rtol: 1e-12, max_newton: 30 }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub omega: f64,
    pub q: f64,
    pub profile: GridFunction,
    pub derivative: GridFunction,
    pub center: f64,
    pub newton_iterations: usize,
}

impl GroundState {
    pub fn grid(&self) -> Grid {
        self.profile.grid
    }

    /// Generator of L2 scaling applied to the profile, `Q/2 + y Q'`.
    pub fn lambda_q(&self) -> GridFunction {
        let g = self.grid();
        let v = (0..g.n)
            .map(|i| 0.5 * self.profile.values[i] + g.x(i) * self.derivative.values[i])
            .collect();
        GridFunction { grid: g, values: v }
    }

    /// `Q''` from the profile equation.
    pub fn second_derivative(&self) -> GridFunction {
        let (w, q) = (self.omega, self.q);
        self.profile.map(|u| u - u.powi(5) + w * odd_pow(u, q))
    }

    pub fn mass(&self) -> f64 {
        let p = &self.profile;
        crate::grid::inner_unchecked(&p.grid, &p.values, &p.values)
    }
}

/// `Q(x) = (3 / cosh^2(2x))^(1/4)`.
pub fn closed_form_value(x: f64) -> f64 {
    let a = x.abs();
    let e = (-4.0 * a).exp();
    3f64.powf(0.25) * std::f64::consts::SQRT_2 * (-a).exp() / (1.0 + e).sqrt()
}

pub fn closed_form_derivative(x: f64) -> f64 {
    -closed_form_value(x) * (2.0 * x).tanh()
}

/// Closed-form quintic ground state sampled on a grid.
pub fn closed_form_q(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, closed_form_value)
}

/// Smallest positive root of `a^4/6 - omega a^(q-1)/(q+1) = 1/2`, the value
/// of `Q(0)` forced by the first integral of the profile equation.
pub fn center_from_first_integral(omega: f64, q: f64) -> Option<f64> {
    let g = |a: f64| a.powi(4) / 6.0 - omega * a.powf(q - 1.0) / (q + 1.0) - 0.5;
    let dg = |a: f64| 2.0 * a.powi(3) / 3.0 - omega * (q - 1.0) * a.powf(q - 2.0) / (q + 1.0);
    // g increases from -1/2 until its maximum; bracket the first crossing.
    let mut lo = 0.0;
    let mut hi = 3f64.powf(0.25);
    while g(hi) < 0.0 {
        if dg(hi) <= 0.0 || hi > 100.0 {
            return None;
        }
        lo = hi;
        hi *= 1.05;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shot {
    Over,
    Under,
}

struct Shooter {
    omega: f64,
    q: f64,
    cfg: GroundStateConfig,
}

impl Shooter {
    fn rhs(&self) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
        move |_, s| [s[1], s[0] - s[0].powi(5) + self.omega * odd_pow(s[0], self.q)]
    }

    fn classify(&self, a: f64) -> Result<Shot, GroundStateError> {
        let mut ode = Dopri5::new(self.cfg.rtol, 1e-15);
        let mut t = 0.0;
        let mut y = [a, 0.0];
        let mut event = None;
        let res = ode.integrate(self.rhs(), &mut t, &mut y, self.cfg.match_point, |_, s| {
            if s[0] < 0.0 {
                event = Some(Shot::Over);
                false
            } else if s[1] > 0.0 {
                event = Some(Shot::Under);
                false
            } else {
                true
            }
        });
        res.map_err(|e| GroundStateError::NoConvergence(e.to_string()))?;
        Ok(event.unwrap_or(if y[0] + y[1] > 0.0 { Shot::Under } else { Shot::Over }))
    }

    /// Matching defect `Q + Q'` at the target and its sensitivity to `Q(0)`.
    fn defect(&self, a: f64) -> Result<(f64, f64), GroundStateError> {
        let (w, q) = (self.omega, self.q);
        let f = move |_: f64, s: &[f64; 4]| {
            let u = s[0];
            let dn = 1.0 - 5.0 * u.powi(4) + q * w * u.abs().powf(q - 1.0);
            [s[1], u - u.powi(5) + w * odd_pow(u, q), s[3], dn * s[2]]
        };
        let mut ode = Dopri5::new(self.cfg.rtol, 1e-15);
        let mut t = 0.0;
        let mut y = [a, 0.0, 1.0, 0.0];
        ode.integrate(f, &mut t, &mut y, self.cfg.match_point, |_, _| true)
            .map_err(|e| GroundStateError::NoConvergence(e.to_string()))?;
        Ok((y[0] + y[1], y[2] + y[3]))
    }
}

pub fn solve_ground_state(omega: f64, q: f64, grid: Grid) -> Result<GroundState, GroundStateError> {
    solve_ground_state_with(omega, q, grid, &GroundStateConfig::default(), None)
}

/// Shooting from `Q'(0) = 0`: bracketing by overshoot/undershoot, bisection,
/// then Newton on the decay condition `Q + Q' = 0` at the match point.
pub fn solve_ground_state_with(
    omega: f64,
    q: f64,
    grid: Grid,
    cfg: &GroundStateConfig,
    guess: Option<f64>,
) -> Result<GroundState, GroundStateError> {
    if !(q > 5.0) {
        return Err(GroundStateError::InvalidArgument(format!("q = {q} must exceed 5")));
    }
    if !(omega >= 0.0) || omega >= cfg.omega_star {
        return Err(GroundStateError::OmegaTooLarge { omega, omega_star: cfg.omega_star });
    }
    let center = solve_center(omega, q, cfg, guess)?;
    let (profile, derivative) = fill_profile(omega, q, grid, cfg, center.0)?;
    Ok(GroundState { omega, q, profile, derivative, center: center.0, newton_iterations: center.1 })
}

/// Shooting without the admissibility check; used for difference quotients
/// around small `omega`, including negative values.
pub(crate) fn solve_unchecked(omega: f64, q: f64, grid: Grid) -> Result<GroundState, GroundStateError> {
    let cfg = GroundStateConfig::default();
    let center = solve_center(omega, q, &cfg, None)?;
    let (profile, derivative) = fill_profile(omega, q, grid, &cfg, center.0)?;
    Ok(GroundState { omega, q, profile, derivative, center: center.0, newton_iterations: center.1 })
}

fn solve_center(
    omega: f64,
    q: f64,
    cfg: &GroundStateConfig,
    guess: Option<f64>,
) -> Result<(f64, usize), GroundStateError> {
    let sh = Shooter { omega, q, cfg: *cfg };
    let a0 = match guess {
        Some(a) => a,
        None => center_from_first_integral(omega, q)
            .ok_or(GroundStateError::OmegaTooLarge { omega, omega_star: cfg.omega_star })?,
    };
    let (mut lo, mut hi);
    let s0 = sh.classify(a0)?;
    let mut step = 0.002 * a0;
    let mut other = a0;
    let mut tries = 0;
    loop {
        other += if s0 == Shot::Under { step } else { -step };
        if other <= 0.0 || tries > 200 {
            return Err(GroundStateError::OmegaTooLarge { omega, omega_star: cfg.omega_star });
        }
        if sh.classify(other)? != s0 {
            break;
        }
        step *= 1.5;
        tries += 1;
    }
    if s0 == Shot::Under {
        lo = a0.min(other);
        hi = a0.max(other);
    } else {
        lo = other.min(a0);
        hi = other.max(a0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match sh.classify(mid)? {
            Shot::Under => lo = mid,
            Shot::Over => hi = mid,
        }
        if hi - lo < 1e-9 * hi {
            break;
        }
    }
    let mut a = 0.5 * (lo + hi);
    let mut delta = f64::INFINITY;
    for it in 1..=cfg.max_newton {
        let (f, df) = sh.defect(a)?;
        if !(df.is_finite() && f.is_finite()) || df == 0.0 {
            return Err(GroundStateError::NoConvergence(format!("degenerate defect at a = {a}")));
        }
        let next = (a - f / df).clamp(lo, hi);
        delta = (next - a).abs();
        a = next;
        if delta <= 1e-13 * a {
            return Ok((a, it));
        }
    }
    if delta <= 1e-10 * a {
        return Ok((a, cfg.max_newton));
    }
    Err(GroundStateError::NoConvergence(format!("Newton stalled near Q(0) = {a}")))
}

fn fill_profile(
    omega: f64,
    q: f64,
    grid: Grid,
    cfg: &GroundStateConfig,
    a: f64,
) -> Result<(GridFunction, GridFunction), GroundStateError> {
    let sh = Shooter { omega, q, cfg: *cfg };
    let ym = cfg.match_point;
    let mut order: Vec<usize> = (0..grid.n).collect();
    order.sort_by(|&i, &j| grid.x(i).abs().total_cmp(&grid.x(j).abs()));
    let mut raw = vec![(0.0, 0.0); grid.n];
    let mut ode = Dopri5::new(cfg.rtol, 1e-15);
    let mut t = 0.0;
    let mut y = [a, 0.0];
    for &i in &order {
        let r = grid.x(i).abs();
        if r > ym {
            break;
        }
        ode.integrate(sh.rhs(), &mut t, &mut y, r, |_, _| true)
            .map_err(|e| GroundStateError::NoConvergence(e.to_string()))?;
        raw[i] = (y[0], y[1]);
    }
    ode.integrate(sh.rhs(), &mut t, &mut y, ym, |_, _| true)
        .map_err(|e| GroundStateError::NoConvergence(e.to_string()))?;
    // Split the state at the match point into the decaying and growing modes
    // of Q'' = Q; the residual growing part is shooting round-off.
    let growing = 0.5 * (y[0] + y[1]);
    let decaying = 0.5 * (y[0] - y[1]);
    let mut vals = vec![0.0; grid.n];
    let mut ders = vec![0.0; grid.n];
    for i in 0..grid.n {
        let x = grid.x(i);
        let r = x.abs();
        let (v, d) = if r <= ym {
            let e = growing * (r - ym).exp();
            (raw[i].0 - e, raw[i].1 - e)
        } else {
            let v = decaying * (-(r - ym)).exp();
            (v, -v)
        };
        vals[i] = v;
        ders[i] = if x < 0.0 { -d } else { d };
    }
    Ok((GridFunction { grid, values: vals }, GridFunction { grid, values: ders }))
}

/// `Z = dQ_omega/d omega`, the solution of `L_omega Z = -Q |Q|^(q-1)` with
/// `(Z, Q') = 0`.
pub fn solve_z(gs: &GroundState) -> Result<GridFunction, GroundStateError> {
    let op = LinearizedOperator::build(gs)?;
    let q = gs.q;
    let rhs = gs.profile.map(|u| -odd_pow(u, q));
    let z = linearized::solve_constrained(&op, &rhs, &gs.derivative)?;
    Ok(z)
}
