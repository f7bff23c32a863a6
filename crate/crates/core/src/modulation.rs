//! Modulation decomposition `u = lambda^(-1/2) (Q_{b,omega} + eps)((x - x_c)/lambda)`
//! with `omega = gamma / lambda^m`, fixed by
//! `(eps, Q_omega) = (eps, Lambda Q_omega) = (eps, y Lambda Q_omega) = 0`,
//! plus the weighted norms, Lyapunov functionals and regime classifier
//! evaluated along tracked trajectories.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::FieldState;
use crate::grid::{self, Grid, GridError, GridFunction};
use crate::groundstate;
use crate::linearized::{build_p, scaling_operator};
use crate::profile::scaled_cutoff;
use crate::{abs_pow, odd_pow, saturation_exponent, Regime};

#[derive(Debug, Error, Clone)]
pub enum ModulationError {
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("state outside the modulation tube: {0}")]
    OutsideTube(String),
    #[error("need at least {needed} trajectory points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("profile bank: {0}")]
    Bank(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("parameters jumped between snapshots: {0}")]
    BranchJump(String),
}

impl From<GridError> for ModulationError {
    fn from(e: GridError) -> Self {
        ModulationError::Grid(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// profile bank

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub half_length: f64,
    pub n: usize,
    pub omega_star: f64,
    pub d_omega: f64,
    pub beta: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { half_length: 40.0, n: 4001, omega_star: 0.05, d_omega: 2.5e-3, beta: 0.75 }
    }
}

struct Node {
    q: Vec<f64>,
    dq: Vec<f64>,
    p: Vec<f64>,
    left_limit: f64,
}

/// `rho_1`, `rho_2` on the bank grid with their limits at `+inf`.
#[derive(Clone, Debug)]
pub struct Rho {
    pub rho1: GridFunction,
    pub rho2: GridFunction,
    pub rho1_right: f64,
    pub rho2_right: f64,
    pub integral_q: f64,
}

impl Rho {
    pub fn eval(&self, y: f64) -> (f64, f64) {
        let g = self.rho1.grid;
        if y <= g.x_min {
            (0.0, 0.0)
        } else if y >= g.x_max() {
            (self.rho1_right, self.rho2_right)
        } else {
            (self.rho1.interpolate(y), self.rho2.interpolate(y))
        }
    }

    /// `4 rho_1 + rho_2`.
    pub fn rho(&self) -> GridFunction {
        GridFunction {
            grid: self.rho1.grid,
            values: self.rho1.values.iter().zip(&self.rho2.values).map(|(a, b)| 4.0 * a + b).collect(),
        }
    }
}

/// Ground states and nonlocal profiles on a uniform `omega` lattice, built
/// on first use and interpolated in between.
pub struct ProfileBank {
    pub q: f64,
    pub cfg: BankConfig,
    pub grid: Grid,
    nodes: Vec<OnceLock<Result<Arc<Node>, String>>>,
    rho: OnceLock<Result<Arc<Rho>, String>>,
}

impl ProfileBank {
    pub fn new(q: f64, cfg: BankConfig) -> Result<Self, ModulationError> {
        if !(q > 5.0) || !(cfg.d_omega > 0.0) || !(cfg.omega_star > 0.0) {
            return Err(ModulationError::Bank(format!("bad configuration q = {q}, {cfg:?}")));
        }
        let grid = Grid::make_symmetric(cfg.half_length, cfg.n)?;
        let count = (cfg.omega_star / cfg.d_omega).ceil() as usize + 1;
        Ok(ProfileBank {
            q,
            cfg,
            grid,
            nodes: (0..count.max(4)).map(|_| OnceLock::new()).collect(),
            rho: OnceLock::new(),
        })
    }

    pub fn shared(q: f64) -> Result<Arc<Self>, ModulationError> {
        Ok(Arc::new(Self::new(q, BankConfig::default())?))
    }

    pub fn c0(&self) -> Result<f64, ModulationError> {
        let n = self.node(0)?;
        let int = grid::inner_unchecked(&self.grid, &n.q.iter().map(|&v| abs_pow(v, self.q + 1.0)).collect::<Vec<_>>(), &vec![1.0; self.grid.n]);
        Ok((self.q - 1.0) / (4.0 * (self.q + 1.0)) * int)
    }

    pub fn c1(&self) -> Result<f64, ModulationError> {
        let m = saturation_exponent(self.q);
        Ok(m / (m + 2.0) * self.c0()?)
    }

    fn node(&self, j: usize) -> Result<Arc<Node>, ModulationError> {
        let cell = self.nodes.get(j).ok_or_else(|| ModulationError::Bank(format!("node {j} out of range")))?;
        cell.get_or_init(|| {
            let omega = j as f64 * self.cfg.d_omega;
            let gs = groundstate::solve_unchecked(omega, self.q, self.grid).map_err(|e| e.to_string())?;
            let np = build_p(&gs).map_err(|e| e.to_string())?;
            Ok(Arc::new(Node {
                q: gs.profile.values,
                dq: gs.derivative.values,
                p: np.p.values,
                left_limit: np.left_limit,
            }))
        })
        .clone()
        .map_err(ModulationError::Bank)
    }

    /// Fields at `omega`, by cubic Lagrange interpolation across nodes.
    pub fn fields(&self, omega: f64) -> Result<OmegaFields, ModulationError> {
        if !(omega >= 0.0) || omega > self.cfg.omega_star {
            return Err(ModulationError::OutsideTube(format!(
                "omega = {omega:.4e} outside [0, {}]",
                self.cfg.omega_star
            )));
        }
        let d = self.cfg.d_omega;
        let last = self.nodes.len() - 1;
        let t = omega / d;
        let mut weights: Vec<(usize, f64)> = Vec::with_capacity(4);
        if (t - t.round()).abs() < 1e-12 {
            weights.push((t.round() as usize, 1.0));
        } else {
            let j0 = (t.floor() as usize).saturating_sub(1).min(last - 3);
            for a in 0..4 {
                let mut w = 1.0;
                for b in 0..4 {
                    if a != b {
                        w *= (t - (j0 + b) as f64) / (a as f64 - b as f64);
                    }
                }
                weights.push((j0 + a, w));
            }
        }
        let n = self.grid.n;
        let mut q = vec![0.0; n];
        let mut dq = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut left_limit = 0.0;
        for (j, w) in weights {
            let node = self.node(j)?;
            for i in 0..n {
                q[i] += w * node.q[i];
                dq[i] += w * node.dq[i];
                p[i] += w * node.p[i];
            }
            left_limit += w * node.left_limit;
        }
        Ok(OmegaFields { omega, beta: self.cfg.beta, grid: self.grid, q, dq, p, left_limit })
    }

    pub fn rho(&self) -> Result<Arc<Rho>, ModulationError> {
        self.rho
            .get_or_init(|| {
                let node = self.node(0).map_err(|e| e.to_string())?;
                let g = self.grid;
                let q = GridFunction { grid: g, values: node.q.clone() };
                let p = GridFunction { grid: g, values: node.p.clone() };
                let lq = GridFunction {
                    grid: g,
                    values: (0..g.n).map(|i| 0.5 * node.q[i] + g.x(i) * node.dq[i]).collect(),
                };
                let int_q = q.integrate();
                let c = 4.0 / (int_q * int_q);
                let rho1 = grid::cumulative_from_left(&lq).scale(c);
                let lp = scaling_operator(&p).map_err(|e| e.to_string())?;
                let lp_q = grid::inner(&lp, &q).map_err(|e| e.to_string())?;
                let lq2 = grid::inner(&lq, &lq).map_err(|e| e.to_string())?;
                let ratio = lp_q / lq2;
                let c2 = 16.0 / (int_q * int_q);
                let rho2 = GridFunction {
                    grid: g,
                    values: (0..g.n)
                        .map(|i| c2 * (ratio * lq.values[i] + p.values[i] - 0.5 * int_q) - 8.0 * rho1.values[i])
                        .collect(),
                };
                let rho1_right = rho1.values[g.n - 1];
                let rho2_right = rho2.values[g.n - 1];
                Ok(Arc::new(Rho { rho1, rho2, rho1_right, rho2_right, integral_q: int_q }))
            })
            .clone()
            .map_err(ModulationError::Bank)
    }
}

/// `Q_omega`, `Q_omega'`, `P_omega` at one `omega` on the bank grid.
#[derive(Clone, Debug)]
pub struct OmegaFields {
    pub omega: f64,
    pub beta: f64,
    pub grid: Grid,
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub p: Vec<f64>,
    pub left_limit: f64,
}

impl OmegaFields {
    /// `(Q, Q', P)` at an arbitrary point; outside the grid the decay and
    /// plateau limits are used.
    pub fn sample(&self, y: f64) -> (f64, f64, f64) {
        let g = &self.grid;
        if y <= g.x_min {
            return (0.0, 0.0, self.left_limit);
        }
        if y >= g.x_max() {
            return (0.0, 0.0, 0.0);
        }
        let n = g.n;
        let t = (y - g.x_min) / g.h;
        let i0 = (t.floor() as i64 - 3).clamp(0, n as i64 - 8) as usize;
        let s = t - i0 as f64;
        const W: [f64; 8] = [1.0, -7.0, 21.0, -35.0, 35.0, -21.0, 7.0, -1.0];
        let mut c = [0.0; 8];
        let mut den = 0.0;
        for j in 0..8 {
            let d = s - j as f64;
            if d == 0.0 {
                let k = i0 + j;
                return (self.q[k], self.dq[k], self.p[k]);
            }
            c[j] = W[j] / d;
            den += c[j];
        }
        let (mut a, mut b, mut e) = (0.0, 0.0, 0.0);
        for j in 0..8 {
            let k = i0 + j;
            a += c[j] * self.q[k];
            b += c[j] * self.dq[k];
            e += c[j] * self.p[k];
        }
        (a / den, b / den, e / den)
    }

    /// `Q_{b,omega}(y) = Q + b chi(|b|^beta y) P`.
    pub fn localized(&self, b: f64, y: f64) -> f64 {
        let (q, _, p) = self.sample(y);
        q + b * scaled_cutoff(b, self.beta, y) * p
    }
}

// ---------------------------------------------------------------------------
// weights

/// C2 monotone junction on `[y0, y1]` between a left branch (value, slope,
/// curvature at `y0`) and a right branch (same at `y1`). The slope is
/// `d0 E0 + d1 E1 + kappa t^2 (1-t)^2` with `E0 = (1-t)^k (1 + (k+s0) t)` and
/// `E1 = t^k (1 + (k-s1)(1-t))`; `k` is the smallest degree leaving a
/// non-negative `kappa`.
#[derive(Clone, Copy, Debug)]
struct Junction {
    y0: f64,
    w: f64,
    f0: f64,
    d0: f64,
    d1: f64,
    a0: f64,
    a1: f64,
    k: f64,
    kappa: f64,
}

impl Junction {
    fn new(y0: f64, y1: f64, left: (f64, f64, f64), right: (f64, f64, f64)) -> Self {
        let w = y1 - y0;
        let delta = right.0 - left.0;
        let (d0, d1) = (left.1, right.1);
        let s0 = if d0 > 0.0 { w * left.2 / d0 } else { 0.0 };
        let s1 = if d1 > 0.0 { w * right.2 / d1 } else { 0.0 };
        for k in 2..200 {
            let k = k as f64;
            let a0 = k + s0;
            let a1 = k - s1;
            if a0 < -1.0 || a1 < -1.0 {
                continue;
            }
            let int0 = 1.0 / (k + 1.0) + a0 / ((k + 1.0) * (k + 2.0));
            let int1 = 1.0 / (k + 1.0) + a1 / ((k + 1.0) * (k + 2.0));
            let area = w * (d0 * int0 + d1 * int1);
            if area <= delta {
                let kappa = (delta - area) * 30.0 / w;
                return Junction { y0, w, f0: left.0, d0, d1, a0, a1, k, kappa };
            }
        }
        panic!("no monotone junction on [{y0}, {y1}]");
    }

    fn slope(&self, y: f64) -> f64 {
        let t = ((y - self.y0) / self.w).clamp(0.0, 1.0);
        let u = 1.0 - t;
        let e0 = u.powf(self.k) * (1.0 + self.a0 * t);
        let e1 = t.powf(self.k) * (1.0 + self.a1 * u);
        self.d0 * e0 + self.d1 * e1 + self.kappa * t * t * u * u
    }

    fn value(&self, y: f64) -> f64 {
        let t = ((y - self.y0) / self.w).clamp(0.0, 1.0);
        let k = self.k;
        let u = 1.0 - t;
        // closed-form antiderivatives from 0 to t
        let i0 = (1.0 + self.a0) * (1.0 - u.powf(k + 1.0)) / (k + 1.0) - self.a0 * (1.0 - u.powf(k + 2.0)) / (k + 2.0);
        let i1 = (1.0 + self.a1) * t.powf(k + 1.0) / (k + 1.0) - self.a1 * t.powf(k + 2.0) / (k + 2.0);
        let ib = t.powi(3) / 3.0 - t.powi(4) / 2.0 + t.powi(5) / 5.0;
        self.f0 + self.w * (self.d0 * i0 + self.d1 * i1 + self.kappa * ib)
    }
}

/// Weight functions `psi_B`, `phi_{i,B}` (`i = 1, 2`) and `phi_10`.
#[derive(Clone, Debug)]
pub struct WeightSet {
    pub b_scale: f64,
    psi_join: Junction,
    phi_left: Junction,
    phi_right: [Junction; 2],
}

impl WeightSet {
    pub fn new(b_scale: f64) -> Self {
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let psi_join = Junction::new(-1.0, -0.5, (e2, 2.0 * e2, 4.0 * e2), (1.0, 0.0, 0.0));
        let phi_left = Junction::new(-1.0, -0.5, (e1, e1, e1), (0.5, 1.0, 0.0));
        let phi_right = [
            Junction::new(0.5, 2.0, (1.5, 1.0, 0.0), (2.0, 1.0, 0.0)),
            Junction::new(0.5, 2.0, (1.5, 1.0, 0.0), (4.0, 4.0, 2.0)),
        ];
        WeightSet { b_scale, psi_join, phi_left, phi_right }
    }

    /// Unscaled `psi`.
    pub fn psi(&self, y: f64) -> f64 {
        if y < -1.0 {
            (2.0 * y).exp()
        } else if y > -0.5 {
            1.0
        } else {
            self.psi_join.value(y)
        }
    }

    pub fn dpsi(&self, y: f64) -> f64 {
        if y < -1.0 {
            2.0 * (2.0 * y).exp()
        } else if y > -0.5 {
            0.0
        } else {
            self.psi_join.slope(y)
        }
    }

    /// Unscaled `phi_i`, `i` in `{1, 2}`.
    pub fn phi(&self, i: usize, y: f64) -> f64 {
        if y < -1.0 {
            y.exp()
        } else if y <= -0.5 {
            self.phi_left.value(y)
        } else if y < 0.5 {
            1.0 + y
        } else if y <= 2.0 {
            self.phi_right[i - 1].value(y)
        } else {
            y.powi(i as i32)
        }
    }

    pub fn dphi(&self, i: usize, y: f64) -> f64 {
        if y < -1.0 {
            y.exp()
        } else if y <= -0.5 {
            self.phi_left.slope(y)
        } else if y < 0.5 {
            1.0
        } else if y <= 2.0 {
            self.phi_right[i - 1].slope(y)
        } else {
            i as f64 * y.powi(i as i32 - 1)
        }
    }

    pub fn psi_b(&self, y: f64) -> f64 {
        self.psi(y / self.b_scale)
    }

    pub fn phi_b(&self, i: usize, y: f64) -> f64 {
        self.phi(i, y / self.b_scale)
    }

    pub fn dphi_b(&self, i: usize, y: f64) -> f64 {
        self.dphi(i, y / self.b_scale) / self.b_scale
    }

    /// `max(y, 0)^10`.
    pub fn phi10(y: f64) -> f64 {
        if y > 0.0 {
            y.powi(10)
        } else {
            0.0
        }
    }

    pub fn on_grid(&self, g: Grid) -> SampledWeights {
        let f = |h: &dyn Fn(f64) -> f64| GridFunction::from_fn(g, h);
        SampledWeights {
            psi_b: f(&|y| self.psi_b(y)),
            phi_1b: f(&|y| self.phi_b(1, y)),
            phi_2b: f(&|y| self.phi_b(2, y)),
            dphi_1b: f(&|y| self.dphi_b(1, y)),
            dphi_2b: f(&|y| self.dphi_b(2, y)),
            phi_10: f(&WeightSet::phi10),
        }
    }
}

impl Default for WeightSet {
    fn default() -> Self {
        WeightSet::new(100.0)
    }
}

#[derive(Clone, Debug)]
pub struct SampledWeights {
    pub psi_b: GridFunction,
    pub phi_1b: GridFunction,
    pub phi_2b: GridFunction,
    pub dphi_1b: GridFunction,
    pub dphi_2b: GridFunction,
    pub phi_10: GridFunction,
}

// ---------------------------------------------------------------------------
// decomposition

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    /// Largest accepted `||eps||_2`.
    pub alpha_star: f64,
    /// Largest accepted `|b|`.
    pub b_max: f64,
    pub max_iterations: usize,
    /// Target for the largest orthogonality residual.
    pub tolerance: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { alpha_star: 0.5, b_max: 0.3, max_iterations: 50, tolerance: 1e-11 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guess {
    pub lambda: f64,
    pub x: f64,
    pub b: f64,
}

#[derive(Clone, Debug)]
pub struct ModulationState {
    pub t: f64,
    pub s: f64,
    pub lambda: f64,
    pub b: f64,
    pub x_center: f64,
    pub omega: f64,
    /// `eps` on the window grid `y_j = (x_j - x_center) / lambda`.
    pub epsilon: GridFunction,
    /// `Q_{b,omega}` on the same grid.
    pub q_b: GridFunction,
    /// Largest orthogonality residual at acceptance.
    pub newton_residual: f64,
    pub iterations: usize,
    /// Index (unreduced) of the first PDE node in the window.
    pub window_start: i64,
}

impl ModulationState {
    pub fn guess(&self) -> Guess {
        Guess { lambda: self.lambda, x: self.x_center, b: self.b }
    }

    /// The three orthogonality products.
    pub fn orthogonality(&self, bank: &ProfileBank) -> Result<[f64; 3], ModulationError> {
        let f = bank.fields(self.omega)?;
        let g = self.epsilon.grid;
        let mut r = [0.0; 3];
        for i in 0..g.n {
            let y = g.x(i);
            let (q, dq, _) = f.sample(y);
            let lq = 0.5 * q + y * dq;
            let e = self.epsilon.values[i];
            r[0] += e * q;
            r[1] += e * lq;
            r[2] += e * y * lq;
        }
        Ok(r.map(|v| v * g.h))
    }

    /// Values `lambda^(-1/2) (Q_b + eps)` placed back on the PDE grid.
    pub fn reconstruct(&self, pde: Grid) -> GridFunction {
        let n = pde.n;
        let mut values = vec![0.0; n];
        let s = self.lambda.powf(-0.5);
        for j in 0..n {
            let k = (self.window_start + j as i64).rem_euclid(n as i64) as usize;
            values[k] = s * (self.q_b.values[j] + self.epsilon.values[j]);
        }
        GridFunction { grid: pde, values }
    }
}

/// Modulation extraction for one saturation strength.
pub struct Decomposer {
    pub bank: Arc<ProfileBank>,
    pub gamma: f64,
    pub cfg: DecomposeConfig,
}

struct Window {
    start: i64,
    y0: f64,
    hy: f64,
}

fn window(g: &Grid, x: f64, lambda: f64) -> Window {
    let period = g.n as f64 * g.h;
    let a = (x - 0.5 * period - g.x_min) / g.h;
    let start = a.ceil() as i64;
    let x0 = g.x_min + start as f64 * g.h;
    Window { start, y0: (x0 - x) / lambda, hy: g.h / lambda }
}

impl Decomposer {
    pub fn new(bank: Arc<ProfileBank>, gamma: f64, cfg: DecomposeConfig) -> Self {
        Decomposer { bank, gamma, cfg }
    }

    pub fn omega_of(&self, lambda: f64) -> f64 {
        self.gamma / lambda.powf(saturation_exponent(self.bank.q))
    }

    fn residual(&self, u: &GridFunction, p: &[f64; 3]) -> Result<[f64; 3], ModulationError> {
        let (lambda, x, b) = (p[0], p[1], p[2]);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(ModulationError::OutsideTube(format!("lambda = {lambda}")));
        }
        let f = self.bank.fields(self.omega_of(lambda))?;
        let g = &u.grid;
        let w = window(g, x, lambda);
        let n = g.n as i64;
        let sl = lambda.sqrt();
        let mut r = [0.0; 3];
        for j in 0..g.n {
            let y = w.y0 + j as f64 * w.hy;
            let (q, dq, pp) = f.sample(y);
            if q == 0.0 && dq == 0.0 {
                continue;
            }
            let k = (w.start + j as i64).rem_euclid(n) as usize;
            let e = sl * u.values[k] - (q + b * scaled_cutoff(b, f.beta, y) * pp);
            let lq = 0.5 * q + y * dq;
            r[0] += e * q;
            r[1] += e * lq;
            r[2] += e * y * lq;
        }
        Ok(r.map(|v| v * w.hy))
    }

    fn build_state(&self, u: &GridFunction, p: &[f64; 3], res: f64, it: usize) -> Result<ModulationState, ModulationError> {
        let (lambda, x, b) = (p[0], p[1], p[2]);
        let omega = self.omega_of(lambda);
        let f = self.bank.fields(omega)?;
        let g = &u.grid;
        let w = window(g, x, lambda);
        let yg = Grid::uniform(w.y0, w.hy, g.n)?;
        let sl = lambda.sqrt();
        let n = g.n as i64;
        let mut eps = Vec::with_capacity(g.n);
        let mut qb = Vec::with_capacity(g.n);
        for j in 0..g.n {
            let y = yg.x(j);
            let k = (w.start + j as i64).rem_euclid(n) as usize;
            let prof = f.localized(b, y);
            qb.push(prof);
            eps.push(sl * u.values[k] - prof);
        }
        Ok(ModulationState {
            t: 0.0,
            s: 0.0,
            lambda,
            b,
            x_center: x,
            omega,
            epsilon: GridFunction { grid: yg, values: eps },
            q_b: GridFunction { grid: yg, values: qb },
            newton_residual: res,
            iterations: it,
            window_start: w.start,
        })
    }

    /// Peak location and height by a parabola through the largest sample,
    /// then `lambda` from the profile's central value.
    pub fn default_guess(&self, u: &GridFunction) -> Result<Guess, ModulationError> {
        let g = &u.grid;
        let n = g.n;
        let (i, &top) = u
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .ok_or(ModulationError::InsufficientPoints { needed: 1, got: 0 })?;
        if !(top > 0.0) {
            return Err(ModulationError::OutsideTube("no positive peak".into()));
        }
        let um = u.values[(i + n - 1) % n];
        let up = u.values[(i + 1) % n];
        let curv = um - 2.0 * top + up;
        let (shift, peak) = if curv < 0.0 {
            (0.5 * (um - up) / curv, top - (um - up).powi(2) / (8.0 * curv))
        } else {
            (0.0, top)
        };
        let x = g.x(i) + shift * g.h;
        let mut lambda = (groundstate::closed_form_value(0.0) / peak).powi(2);
        for _ in 0..3 {
            let omega = self.omega_of(lambda);
            let center = if omega <= self.bank.cfg.omega_star {
                self.bank.fields(omega)?.q[self.bank.grid.n / 2]
            } else {
                break;
            };
            lambda = (center / peak).powi(2);
        }
        Ok(Guess { lambda, x, b: 0.0 })
    }

    pub fn decompose(&self, u: &GridFunction, guess: Option<Guess>) -> Result<ModulationState, ModulationError> {
        let guess = match guess {
            Some(g) => g,
            None => self.default_guess(u)?,
        };
        let mut p = [guess.lambda, guess.x, guess.b];
        let norm = |r: &[f64; 3]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut r = self.residual(u, &p)?;
        let mut res = norm(&r);
        let mut best = res;
        for it in 0..=self.cfg.max_iterations {
            if res <= self.cfg.tolerance {
                return self.accept(u, &p, res, it);
            }
            if it == self.cfg.max_iterations {
                break;
            }
            let steps = [1e-7 * p[0], 1e-7 * p[0], 1e-7];
            let mut jac = vec![vec![0.0; 3]; 3];
            for c in 0..3 {
                let mut pc = p;
                pc[c] += steps[c];
                let rc = self.residual(u, &pc)?;
                for row in 0..3 {
                    jac[row][c] = (rc[row] - r[row]) / steps[c];
                }
            }
            let delta = grid::solve_dense(jac, r.map(|v| -v).to_vec())
                .ok_or_else(|| ModulationError::NewtonDiverged { iterations: it, residual: res })?;
            // keep the scale positive and the step moderate
            let mut scale: f64 = 1.0;
            scale = scale.min(0.5 * p[0] / delta[0].abs().max(1e-300));
            scale = scale.min(0.2 / delta[2].abs().max(1e-300));
            scale = scale.min(p[0] / delta[1].abs().max(1e-300));
            let mut accepted = false;
            for _ in 0..8 {
                let trial = [p[0] + scale * delta[0], p[1] + scale * delta[1], p[2] + scale * delta[2]];
                match self.residual(u, &trial) {
                    Ok(rt) if norm(&rt) < res || scale < 1.0 / 64.0 => {
                        p = trial;
                        r = rt;
                        res = norm(&rt);
                        accepted = true;
                        break;
                    }
                    Ok(_) => scale *= 0.5,
                    Err(_) => scale *= 0.5,
                }
            }
            if !accepted {
                break;
            }
            best = best.min(res);
        }
        if best <= 10.0 * self.cfg.tolerance.max(1e-10) {
            return self.accept(u, &p, res, self.cfg.max_iterations);
        }
        Err(ModulationError::NewtonDiverged { iterations: self.cfg.max_iterations, residual: best })
    }

    fn accept(&self, u: &GridFunction, p: &[f64; 3], res: f64, it: usize) -> Result<ModulationState, ModulationError> {
        let ms = self.build_state(u, p, res, it)?;
        if ms.b.abs() > self.cfg.b_max {
            return Err(ModulationError::OutsideTube(format!("|b| = {:.4} above {}", ms.b.abs(), self.cfg.b_max)));
        }
        let e = ms.epsilon.l2_norm();
        if e > self.cfg.alpha_star {
            return Err(ModulationError::OutsideTube(format!("||eps|| = {e:.4} above {}", self.cfg.alpha_star)));
        }
        Ok(ms)
    }
}

/// One-shot decomposition with a freshly built profile bank.
pub fn decompose(u: &GridFunction, gamma: f64, q: f64, guess: Option<Guess>) -> Result<ModulationState, ModulationError> {
    let d = Decomposer::new(ProfileBank::shared(q)?, gamma, DecomposeConfig::default());
    d.decompose(u, guess)
}

/// Samples of `lambda^(-1/2) Q_{b,omega}((x - x0)/lambda)` on a grid.
pub fn modulated_profile(
    bank: &ProfileBank,
    gamma: f64,
    lambda: f64,
    x0: f64,
    b: f64,
    g: Grid,
) -> Result<GridFunction, ModulationError> {
    let omega = gamma / lambda.powf(saturation_exponent(bank.q));
    let f = bank.fields(omega)?;
    let s = lambda.powf(-0.5);
    Ok(GridFunction::from_fn(g, |x| s * f.localized(b, (x - x0) / lambda)))
}

// ---------------------------------------------------------------------------
// tracking

#[derive(Clone, Debug)]
pub struct TrackFailure {
    pub index: usize,
    pub t: f64,
    pub error: ModulationError,
}

#[derive(Clone, Debug)]
pub struct TrackResult {
    pub states: Vec<ModulationState>,
    pub failure: Option<TrackFailure>,
}

/// Decompose every snapshot, warm-starting from a linear extrapolation of
/// the previous two states.
/// Largest accepted deviation of `ln lambda` and of `b` from the
/// extrapolated prediction between consecutive snapshots.
pub const TRACK_JUMP: (f64, f64) = (0.05, 0.02);

pub fn track(dec: &Decomposer, snapshots: &[FieldState]) -> TrackResult {
    let mut states: Vec<ModulationState> = Vec::with_capacity(snapshots.len());
    for (i, snap) in snapshots.iter().enumerate() {
        let guess = match states.len() {
            0 => None,
            1 => {
                let a = &states[0];
                let dt = snap.t - a.t;
                let ds = dt / a.lambda.powi(3);
                Some(Guess {
                    lambda: a.lambda * (-a.b * ds).exp(),
                    x: a.x_center + dt / (a.lambda * a.lambda),
                    b: a.b,
                })
            }
            k => {
                let (a, b) = (&states[k - 2], &states[k - 1]);
                let dt = b.t - a.t;
                let w = if dt > 0.0 { (snap.t - b.t) / dt } else { 0.0 };
                let lambda = b.lambda + w * (b.lambda - a.lambda);
                Some(Guess {
                    lambda: if lambda > 0.0 { lambda } else { b.lambda },
                    x: b.x_center + w * (b.x_center - a.x_center),
                    b: b.b + w * (b.b - a.b),
                })
            }
        };
        let result = dec
            .decompose(&snap.u, guess)
            .or_else(|e| match (&e, states.last()) {
                (ModulationError::NewtonDiverged { .. }, Some(prev)) => dec.decompose(&snap.u, Some(prev.guess())),
                _ => Err(e),
            })
            .and_then(|ms| match guess {
                Some(g) if states.len() >= 2 => {
                    let dl = (ms.lambda / g.lambda).ln().abs();
                    let db = (ms.b - g.b).abs();
                    if dl > TRACK_JUMP.0 || db > TRACK_JUMP.1 {
                        Err(ModulationError::BranchJump(format!(
                            "lambda {:.4} vs {:.4}, b {:.3e} vs {:.3e}",
                            ms.lambda, g.lambda, ms.b, g.b
                        )))
                    } else {
                        Ok(ms)
                    }
                }
                _ => Ok(ms),
            });
        match result {
            Ok(mut ms) => {
                ms.t = snap.t;
                ms.s = match states.last() {
                    Some(prev) => {
                        prev.s + 0.5 * (snap.t - prev.t) * (prev.lambda.powi(-3) + ms.lambda.powi(-3))
                    }
                    None => 0.0,
                };
                states.push(ms);
            }
            Err(error) => {
                return TrackResult { states, failure: Some(TrackFailure { index: i, t: snap.t, error }) };
            }
        }
    }
    TrackResult { states, failure: None }
}

// ---------------------------------------------------------------------------
// modulation laws

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationRates {
    pub s: f64,
    /// `lambda_s / lambda + b`.
    pub lambda_law: f64,
    pub b_s: f64,
    /// `x_s / lambda - 1`.
    pub x_law: f64,
    /// `b_s + 2 b^2 + c0 omega_s`.
    pub b_law: f64,
}

/// Three-point derivative at the middle of non-uniform samples.
fn diff3(s: [f64; 3], f: [f64; 3]) -> f64 {
    let (h1, h2) = (s[1] - s[0], s[2] - s[1]);
    (-h2 / (h1 * (h1 + h2))) * f[0] + ((h2 - h1) / (h1 * h2)) * f[1] + (h1 / (h2 * (h1 + h2))) * f[2]
}

/// Finite-difference modulation-law residuals at interior points.
pub fn modulation_rates(traj: &[ModulationState], c0: f64) -> Result<Vec<ModulationRates>, ModulationError> {
    if traj.len() < 3 {
        return Err(ModulationError::InsufficientPoints { needed: 3, got: traj.len() });
    }
    Ok(traj
        .windows(3)
        .map(|w| {
            let s = [w[0].s, w[1].s, w[2].s];
            let m = &w[1];
            let ln_l = diff3(s, [w[0].lambda.ln(), w[1].lambda.ln(), w[2].lambda.ln()]);
            let b_s = diff3(s, [w[0].b, w[1].b, w[2].b]);
            let x_s = diff3(s, [w[0].x_center, w[1].x_center, w[2].x_center]);
            let om_s = diff3(s, [w[0].omega, w[1].omega, w[2].omega]);
            ModulationRates {
                s: m.s,
                lambda_law: ln_l + m.b,
                b_s,
                x_law: x_s / m.lambda - 1.0,
                b_law: b_s + 2.0 * m.b * m.b + c0 * om_s,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// functionals

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub n1: f64,
    pub n2: f64,
    pub n1_loc: f64,
    pub n2_loc: f64,
    /// `F[i-1][j-1] = F_{i,j}`.
    pub f: [[f64; 2]; 2],
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
    pub tail10: f64,
    /// `int (eps_y^2 + eps^2) phi_{i,B}'`.
    pub dissipation: [f64; 2],
}

/// `(Q+e)^k - Q^k - k e Q^(k-1)` for an even integer `k`, expanded.
fn even_power_remainder(qv: f64, e: f64, k: u32) -> f64 {
    let mut sum = 0.0;
    let mut binom = k as f64 * (k as f64 - 1.0) / 2.0;
    let mut ep = e * e;
    for j in 2..=k {
        sum += binom * qv.powi((k - j) as i32) * ep;
        binom = binom * (k - j) as f64 / (j + 1) as f64;
        ep *= e;
    }
    sum
}

fn power_remainder(qv: f64, e: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && (p as u32) % 2 == 0 && p <= 64.0 {
        even_power_remainder(qv, e, p as u32)
    } else {
        abs_pow(qv + e, p) - abs_pow(qv, p) - p * e * odd_pow(qv, p - 1.0)
    }
}

pub fn evaluate_functionals(
    ms: &ModulationState,
    w: &WeightSet,
    rho: &Rho,
    q: f64,
) -> Result<FunctionalReport, ModulationError> {
    let eps = &ms.epsilon;
    let g = eps.grid;
    if !g.matches(&ms.q_b.grid) {
        return Err(GridError::GridMismatch.into());
    }
    let ey = grid::differentiate(eps, 1)?;
    let sw = w.on_grid(g);
    let omega = ms.omega;
    let mut acc = [0.0f64; 16];
    let mut j1 = 0.0;
    let mut j2 = 0.0;
    for i in 0..g.n {
        let y = g.x(i);
        let wt = g.weight(i);
        let e = eps.values[i];
        let e2 = e * e;
        let d2 = ey.values[i] * ey.values[i];
        let psi = sw.psi_b.values[i];
        let (p1, p2) = (sw.phi_1b.values[i], sw.phi_2b.values[i]);
        let (dp1, dp2) = (sw.dphi_1b.values[i], sw.dphi_2b.values[i]);
        let qb = ms.q_b.values[i];
        let pot = -power_remainder(qb, e, 6.0) / 3.0 + 2.0 * omega / (q + 1.0) * power_remainder(qb, e, q + 1.0);
        acc[0] += wt * (d2 * psi + e2 * p1);
        acc[1] += wt * (d2 * psi + e2 * p2);
        acc[2] += wt * e2 * dp1;
        acc[3] += wt * e2 * dp2;
        acc[4] += wt * d2 * psi;
        acc[5] += wt * e2 * p1;
        acc[6] += wt * e2 * p2;
        acc[7] += wt * psi * pot;
        acc[8] += wt * WeightSet::phi10(y) * e2;
        acc[9] += wt * (d2 + e2) * dp1;
        acc[10] += wt * (d2 + e2) * dp2;
        let (r1, r2) = rho.eval(y);
        j1 += wt * e * r1;
        j2 += wt * e * r2;
    }
    let mut f = [[0.0; 2]; 2];
    for (i, row) in f.iter_mut().enumerate() {
        for (j, fij) in row.iter_mut().enumerate() {
            let expo = -4.0 * j as f64 - 2.0 * (i + 1) as f64;
            let jij = (1.0 - j1).powf(expo) - 1.0;
            let weighted = if i == 0 { acc[5] } else { acc[6] };
            *fij = acc[4] + (1.0 + jij) * weighted + acc[7];
        }
    }
    Ok(FunctionalReport {
        n1: acc[0],
        n2: acc[1],
        n1_loc: acc[2],
        n2_loc: acc[3],
        f,
        j1,
        j2,
        j: 4.0 * j1 + j2,
        tail10: acc[8],
        dissipation: [acc[9], acc[10]],
    })
}

/// `int (Q_b + eps)^2`, which equals the PDE mass.
pub fn reconstructed_mass(ms: &ModulationState) -> f64 {
    let v: Vec<f64> = ms.q_b.values.iter().zip(&ms.epsilon.values).map(|(a, b)| a + b).collect();
    grid::inner_unchecked(&ms.epsilon.grid, &v, &v)
}

// ---------------------------------------------------------------------------
// monotonicity probe

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSample {
    pub s: f64,
    pub df11_ds: f64,
    pub forcing: f64,
    pub dissipation: f64,
    pub tail_rate: f64,
    pub tail_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    /// Noise level of `dF_{1,1}/ds`.
    pub noise: f64,
    /// Fitted dissipation rate `mu`.
    pub mu: f64,
    /// Smallest `C` with `dF_{1,1}/ds <= C b^2 (omega^2 + b^2) + 10 noise`.
    pub c_fit: f64,
    /// Samples needing `C > c_limit`.
    pub violations: Vec<usize>,
    /// Smallest `C` with `lambda^-10 d(lambda^10 tail10)/ds <= C (N_1loc + b^2) + 10 noise`.
    pub c_tail: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust noise level of a sequence: scaled median absolute second
/// difference.
pub fn noise_level(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let d: Vec<f64> = v.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).collect();
    1.4826 * median(d) / 6f64.sqrt()
}

/// Finite-difference check of the Lyapunov and tail inequalities along a
/// trajectory. `noise` overrides the estimated noise level; samples needing
/// a constant above `c_limit` are flagged.
pub fn monotonicity_probe(
    traj: &[ModulationState],
    reports: &[FunctionalReport],
    noise: Option<f64>,
    c_limit: f64,
) -> Result<ProbeReport, ModulationError> {
    if traj.len() < 3 || reports.len() != traj.len() {
        return Err(ModulationError::InsufficientPoints { needed: 3, got: traj.len().min(reports.len()) });
    }
    let mut samples = Vec::with_capacity(traj.len() - 2);
    for k in 1..traj.len() - 1 {
        let s = [traj[k - 1].s, traj[k].s, traj[k + 1].s];
        let f = [reports[k - 1].f[0][0], reports[k].f[0][0], reports[k + 1].f[0][0]];
        let tail = [reports[k - 1].tail10, reports[k].tail10, reports[k + 1].tail10];
        let lnl = [traj[k - 1].lambda.ln(), traj[k].lambda.ln(), traj[k + 1].lambda.ln()];
        let m = &traj[k];
        let rate = diff3(s, tail) + 10.0 * diff3(s, lnl) * tail[1];
        samples.push(ProbeSample {
            s: m.s,
            df11_ds: diff3(s, f),
            forcing: m.b * m.b * (m.omega * m.omega + m.b * m.b),
            dissipation: reports[k].dissipation[0],
            tail_rate: rate,
            tail_scale: reports[k].n1_loc + m.b * m.b,
        });
    }
    let rates: Vec<f64> = samples.iter().map(|p| p.df11_ds).collect();
    let noise = noise.unwrap_or_else(|| noise_level(&rates));
    let mu = median(
        samples
            .iter()
            .filter(|p| p.dissipation > 0.0)
            .map(|p| (-p.df11_ds / p.dissipation).max(0.0))
            .collect(),
    );
    let need = |excess: f64, scale: f64| {
        if excess <= 0.0 {
            0.0
        } else if scale > 0.0 {
            excess / scale
        } else {
            f64::INFINITY
        }
    };
    let mut c_fit = 0.0f64;
    let mut violations = Vec::new();
    let mut c_tail = 0.0f64;
    let tail_noise = noise_level(&samples.iter().map(|p| p.tail_rate).collect::<Vec<_>>());
    for (i, p) in samples.iter().enumerate() {
        let c = need(p.df11_ds - 10.0 * noise, p.forcing);
        if c > c_limit {
            violations.push(i);
        } else {
            c_fit = c_fit.max(c);
        }
        c_tail = c_tail.max(need(p.tail_rate - 10.0 * tail_noise, p.tail_scale));
    }
    Ok(ProbeReport { samples, noise, mu, c_fit, violations, c_tail })
}

// ---------------------------------------------------------------------------
// classification

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub c_star: f64,
    /// Relative band around the separation threshold left undecided.
    pub band: f64,
    /// Trailing fraction of the time span over which `lambda` must settle.
    pub settle_fraction: f64,
    /// Largest relative spread of `lambda` counted as settled.
    pub settle_tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { c_star: 10.0, band: 0.2, settle_fraction: 0.2, settle_tol: 0.02 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Classification {
    pub regime: Regime,
    pub reason: String,
    pub margins: Vec<f64>,
    pub max_margin: f64,
    pub min_margin: f64,
}

/// `(b + c1 omega) / (C* (N_1 + b^2 + omega^2))`.
pub fn separation_margin(ms: &ModulationState, n1: f64, c1: f64, c_star: f64) -> f64 {
    let num = ms.b + c1 * ms.omega;
    let den = c_star * (n1 + ms.b * ms.b + ms.omega * ms.omega);
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Regime of a tracked trajectory. `failure` carries the decomposition
/// failure that truncated the track, if any.
pub fn classify_regime(
    traj: &[ModulationState],
    n1: &[f64],
    failure: Option<&TrackFailure>,
    c1: f64,
    cfg: &ClassifierConfig,
) -> Classification {
    let margins: Vec<f64> = traj.iter().zip(n1).map(|(m, &n)| separation_margin(m, n, c1, cfg.c_star)).collect();
    let max_margin = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let thr = 1.0 + cfg.band;
    let first_pos = margins.iter().position(|&m| m >= thr);
    let first_neg = margins.iter().position(|&m| m <= -thr);
    let out = |regime, reason: String| Classification { regime, reason, margins: margins.clone(), max_margin, min_margin };
    // no admissible decomposition with b <= 0 (or none at all) counts as
    // leaving the tube
    let tube_exit = failure.and_then(|f| match &f.error {
        ModulationError::OutsideTube(_) | ModulationError::NewtonDiverged { .. } => {
            let b_last = traj.last().map(|m| m.b).unwrap_or(0.0);
            (b_last <= 0.0).then(|| format!("left the tube at t = {:.4} ({})", f.t, f.error))
        }
        _ => None,
    });
    match (first_pos, first_neg) {
        (Some(p), n) if n.is_none_or(|n| p < n) => {
            let t_end = traj.last().map(|m| m.t).unwrap_or(0.0);
            let t_from = traj[p].t.max(t_end - cfg.settle_fraction * (t_end - traj[0].t));
            let tail: Vec<f64> = traj.iter().filter(|m| m.t >= t_from).map(|m| m.lambda).collect();
            if failure.is_some() {
                return out(Regime::Undetermined, format!("separated at t = {:.4} but tracking stopped", traj[p].t));
            }
            if tail.len() >= 3 {
                let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = tail.iter().sum::<f64>() / tail.len() as f64;
                let spread = (hi - lo) / mean;
                if spread <= cfg.settle_tol {
                    return out(
                        Regime::Soliton,
                        format!("separated at t = {:.4}; lambda settled at {mean:.5} (spread {spread:.2e})", traj[p].t),
                    );
                }
                return out(Regime::Undetermined, format!("separated at t = {:.4}; lambda spread {spread:.2e}", traj[p].t));
            }
            out(Regime::Undetermined, format!("separated at t = {:.4}; too few samples afterwards", traj[p].t))
        }
        (_, Some(n)) => out(Regime::Exit, format!("negative separation at t = {:.4}", traj[n].t)),
        _ => {
            if let Some(reason) = tube_exit {
                return out(Regime::Exit, reason);
            }
            if failure.is_none() && traj.len() >= 4 {
                let half = traj.len() / 2;
                let ts: Vec<f64> = traj[half..].iter().map(|m| m.t).collect();
                let ls: Vec<f64> = traj[half..].iter().map(|m| m.lambda).collect();
                if ts[0] > 0.0 {
                    let slope = crate::reduced::log_log_slope(&ts, &ls);
                    if slope > 0.05 && ls[ls.len() - 1] > 1.05 * traj[0].lambda {
                        return out(Regime::BlowDown, format!("no separation; lambda ~ t^{slope:.3}"));
                    }
                }
            }
            let why = match failure {
                Some(f) => format!("tracking stopped at t = {:.4}: {}", f.t, f.error),
                None => "no separation before the horizon".to_string(),
            };
            out(Regime::Undetermined, why)
        }
    }
}
