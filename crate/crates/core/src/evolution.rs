//! Periodic pseudo-spectral solver: exponential time differencing (ETDRK4)
//! with the dispersive term treated exactly.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, Grid, GridError, GridFunction};
use crate::{abs_pow, odd_pow};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("instability detected at t = {t}")]
    InstabilityDetected { t: f64 },
    #[error("non-finite values at t = {t}")]
    NanDetected { t: f64 },
    #[error("rescaled data leaves the domain: {0}")]
    OutOfDomain(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn default_ceiling() -> f64 {
    1e3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub gamma: f64,
    pub q: f64,
    pub domain_half_length: f64,
    pub n_modes: usize,
    /// Largest time step.
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub dealias: bool,
    /// Optional linear damping `-rate (|k|/k_c)^order`, with `k_c` the
    /// largest retained wavenumber.
    #[serde(default)]
    pub damping: Option<SpectralDamping>,
    /// Absorbing layer centred half a period away from the peak of `|u|`.
    #[serde(default)]
    pub sponge: Option<Sponge>,
    /// When set, each step is also bounded by `cfl / (k_max max|N'(u)|)`.
    #[serde(default)]
    pub cfl: Option<f64>,
    /// When set, snapshots are taken at multiples of this time instead of
    /// every `stride` steps.
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    /// Stop once `||u_x||_2` exceeds this value.
    #[serde(default = "default_ceiling")]
    pub ux_ceiling: f64,
    /// Stop once the outer third of the spectrum carries more than this
    /// fraction of the L2 norm.
    #[serde(default)]
    pub resolution_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDamping {
    pub rate: f64,
    pub order: i32,
}

/// Damping rate `rate cos^2(pi d / (2 half_width))` at distance `d` from
/// the point opposite the peak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sponge {
    pub rate: f64,
    pub half_width: f64,
}

impl Sponge {
    pub fn rate_at(&self, d: f64) -> f64 {
        if d.abs() >= self.half_width {
            0.0
        } else {
            self.rate * (0.5 * PI * d / self.half_width).cos().powi(2)
        }
    }

    /// Multiply `u` by `exp(-dt sigma)` around the antipode of its peak.
    pub fn absorb(&self, grid: &Grid, u: &mut [f64], dt: f64) {
        let Some(peak) = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
        else {
            return;
        };
        let period = grid.period();
        let centre = grid.x(peak) + 0.5 * period;
        for (i, v) in u.iter_mut().enumerate() {
            let d = (grid.x(i) - centre).rem_euclid(period);
            let d = if d > 0.5 * period { d - period } else { d };
            let r = self.rate_at(d);
            if r > 0.0 {
                *v *= (-dt * r).exp();
            }
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: String| Err(EvolutionError::InvalidConfig(m));
        if !self.n_modes.is_power_of_two() || self.n_modes < 16 {
            return bad(format!("n_modes = {} must be a power of two >= 16", self.n_modes));
        }
        if !(self.q > 5.0) {
            return bad(format!("q = {} must exceed 5", self.q));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma = {} must be non-negative", self.gamma));
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) || !(self.domain_half_length > 0.0) {
            return bad("dt, t_end and domain_half_length must be positive".into());
        }
        if let Some(sp) = self.sponge {
            if !(sp.rate >= 0.0) || !(sp.half_width > 0.0) || sp.half_width > self.domain_half_length {
                return bad(format!("sponge {sp:?}"));
            }
        }
        if let Some(c) = self.cfl {
            if !(c > 0.0) {
                return bad(format!("cfl = {c}"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, EvolutionError> {
        Ok(Grid::make_periodic(self.domain_half_length, self.n_modes)?)
    }
}

#[derive(Clone, Debug)]
pub struct FieldState {
    pub t: f64,
    pub u: GridFunction,
    pub mass: f64,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    UxCeiling,
    Unresolved,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub snapshots: Vec<FieldState>,
    pub stop: StopReason,
    pub steps: usize,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

/// Spectral solver bound to one configuration.
pub struct Solver {
    pub cfg: EvolutionConfig,
    pub grid: Grid,
    k: Vec<f64>,
    k_max: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    mask: Vec<f64>,
    decay: Vec<f64>,
    coef_cache: Vec<(f64, Etd4)>,
    current: usize,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Solver {
    pub fn new(cfg: &EvolutionConfig) -> Result<Self, EvolutionError> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let n = cfg.n_modes;
        let base = 2.0 * PI / grid.period();
        let k: Vec<f64> = (0..n)
            .map(|j| {
                if j < n / 2 {
                    j as f64 * base
                } else if j == n / 2 {
                    0.0
                } else {
                    (j as f64 - n as f64) * base
                }
            })
            .collect();
        let k_max = (n / 2) as f64 * base;
        let mask = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j } else { n - j };
                if cfg.dealias && 3 * m > n {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let k_cut = if cfg.dealias { (n / 3) as f64 * base } else { k_max };
        let decay = k
            .iter()
            .map(|&kk| cfg.damping.map_or(0.0, |d| d.rate * (kk.abs() / k_cut).powi(d.order)))
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Ok(Solver {
            cfg: cfg.clone(),
            grid,
            k,
            k_max,
            fwd,
            inv,
            mask,
            decay,
            coef_cache: Vec::new(),
            current: 0,
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub fn forward(&mut self, u: &[f64]) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process_with_scratch(&mut v, &mut self.scratch);
        v
    }

    pub fn inverse(&mut self, uhat: &[Complex64]) -> Vec<f64> {
        let n = uhat.len() as f64;
        let mut v = uhat.to_vec();
        self.inv.process_with_scratch(&mut v, &mut self.scratch);
        v.iter().map(|c| c.re / n).collect()
    }

    fn set_dt(&mut self, dt: f64) {
        if let Some(i) = self.coef_cache.iter().position(|(d, _)| *d == dt) {
            self.current = i;
            return;
        }
        let mut coef = Etd4::zeros(self.k.len());
        for (j, &k) in self.k.iter().enumerate() {
            let z = Complex64::new(-self.decay[j], k * k * k) * dt;
            coef.set(j, z, dt);
        }
        if self.coef_cache.len() >= 12 {
            self.coef_cache.remove(0);
        }
        self.coef_cache.push((dt, coef));
        self.current = self.coef_cache.len() - 1;
    }

    /// `-i k dt (u^5 - gamma sign(u)|u|^q)^` for spectral input `v`; also
    /// returns `(sup |u|, sup |N'(u)|)`.
    fn flux(&mut self, v: &[Complex64], dt: f64, out: &mut [Complex64]) -> (f64, f64) {
        let n = v.len();
        let (g, q) = (self.cfg.gamma, self.cfg.q);
        self.buf.copy_from_slice(v);
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_n = 1.0 / n as f64;
        let mut sup = 0.0f64;
        let mut sup_d = 0.0f64;
        for c in self.buf.iter_mut() {
            let u = c.re * inv_n;
            sup = sup.max(u.abs());
            let u4 = u * u * u * u;
            let sat = g * odd_pow(u, q);
            if u != 0.0 {
                sup_d = sup_d.max((5.0 * u4 - q * sat / u).abs());
            }
            *c = Complex64::new(u4 * u - sat, 0.0);
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for j in 0..n {
            out[j] = Complex64::new(0.0, -self.k[j] * dt * self.mask[j]) * self.buf[j];
        }
        (sup, sup_d)
    }

    /// Largest stable step for the current state bound.
    fn step_bound(&self, sup_d: f64) -> f64 {
        match self.cfg.cfl {
            Some(c) if sup_d > 0.0 => {
                // snap to dt 2^(-j/8) so coefficient sets can be reused
                let bound = c / (self.k_max * sup_d);
                if bound >= self.cfg.dt {
                    self.cfg.dt
                } else {
                    let j = (8.0 * (self.cfg.dt / bound).log2()).ceil();
                    self.cfg.dt * (-j / 8.0).exp2()
                }
            }
            _ => self.cfg.dt,
        }
    }

    /// One exponential RK4 step (Cox-Matthews) on spectral data.
    fn advance(&mut self, v: &mut [Complex64], dt: f64) -> Result<(), EvolutionError> {
        let n = v.len();
        self.set_dt(dt);
        let mut nv = vec![Complex64::default(); n];
        let mut na = vec![Complex64::default(); n];
        let mut nb = vec![Complex64::default(); n];
        let mut nc = vec![Complex64::default(); n];
        let mut a = vec![Complex64::default(); n];
        let mut w = vec![Complex64::default(); n];
        self.flux(v, 1.0, &mut nv);
        let c = &self.coef_cache[self.current].1;
        for j in 0..n {
            a[j] = c.half[j] * v[j] + c.q[j] * nv[j];
        }
        self.flux(&a, 1.0, &mut na);
        let c = &self.coef_cache[self.current].1;
        for j in 0..n {
            w[j] = c.half[j] * v[j] + c.q[j] * na[j];
        }
        self.flux(&w, 1.0, &mut nb);
        let c = &self.coef_cache[self.current].1;
        for j in 0..n {
            w[j] = c.half[j] * a[j] + c.q[j] * (2.0 * nb[j] - nv[j]);
        }
        self.flux(&w, 1.0, &mut nc);
        let c = &self.coef_cache[self.current].1;
        for j in 0..n {
            v[j] = c.full[j] * v[j] + c.f1[j] * nv[j] + 2.0 * c.f2[j] * (na[j] + nb[j]) + c.f3[j] * nc[j];
        }
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(EvolutionError::NanDetected { t: f64::NAN });
        }
        Ok(())
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        self.grid.h * u.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn derivative(&mut self, u: &[f64]) -> Vec<f64> {
        let mut uh = self.forward(u);
        for (j, z) in uh.iter_mut().enumerate() {
            *z *= Complex64::new(0.0, self.k[j]);
        }
        self.inverse(&uh)
    }

    pub fn energy(&mut self, u: &[f64]) -> f64 {
        let ux = self.derivative(u);
        let (g, q) = (self.cfg.gamma, self.cfg.q);
        self.grid.h
            * u.iter()
                .zip(&ux)
                .map(|(&v, &d)| 0.5 * d * d - v.powi(6) / 6.0 + g * abs_pow(v, q + 1.0) / (q + 1.0))
                .sum::<f64>()
    }

    pub fn l2_ux(&mut self, u: &[f64]) -> f64 {
        let ux = self.derivative(u);
        self.mass(&ux).sqrt()
    }

    /// Fraction of the L2 norm carried by the outer third of the resolved
    /// spectrum (the retained band when de-aliasing).
    pub fn spectral_tail(&self, uhat: &[Complex64]) -> f64 {
        let n = uhat.len();
        let cut = if self.cfg.dealias { n / 3 } else { n / 2 };
        let mut tail = 0.0;
        let mut total = 0.0;
        for (j, z) in uhat.iter().enumerate() {
            let m = if j <= n / 2 { j } else { n - j };
            let e = z.norm_sqr();
            if m > cut {
                continue;
            }
            total += e;
            if 3 * m > 2 * cut {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            (tail / total).sqrt()
        }
    }

    pub fn state(&mut self, t: f64, u: Vec<f64>) -> FieldState {
        let mass = self.mass(&u);
        let energy = self.energy(&u);
        FieldState { t, u: GridFunction { grid: self.grid, values: u }, mass, energy }
    }

    /// Advance a state by one step of size `dt`.
    pub fn step(&mut self, state: &FieldState, dt: f64) -> Result<FieldState, EvolutionError> {
        if !self.grid.matches(&state.u.grid) {
            return Err(GridError::GridMismatch.into());
        }
        let sup0 = state.u.sup_norm();
        let mut v = self.forward(&state.u.values);
        let t = state.t + dt;
        self.advance(&mut v, dt).map_err(|_| EvolutionError::NanDetected { t })?;
        let u = self.inverse(&v);
        check_growth(&u, sup0, t)?;
        Ok(self.state(t, u))
    }
}

/// Exponential RK4 coefficients per mode for `z = L dt`.
struct Etd4 {
    half: Vec<Complex64>,
    full: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etd4 {
    fn zeros(n: usize) -> Self {
        let z = vec![Complex64::default(); n];
        Etd4 { half: z.clone(), full: z.clone(), q: z.clone(), f1: z.clone(), f2: z.clone(), f3: z }
    }

    fn set(&mut self, j: usize, z: Complex64, dt: f64) {
        self.half[j] = (0.5 * z).exp();
        self.full[j] = z.exp();
        let [q, f1, f2, f3] = if z.norm() >= 1.0 {
            etd_terms(z)
        } else {
            // average over a circle around z to avoid cancellation
            const M: usize = 32;
            let mut acc = [Complex64::default(); 4];
            for i in 0..M {
                let r = Complex64::from_polar(1.0, PI * (i as f64 + 0.5) / M as f64 * 2.0);
                for (a, t) in acc.iter_mut().zip(etd_terms(z + r)) {
                    *a += t;
                }
            }
            acc.map(|a| a / M as f64)
        };
        self.q[j] = dt * q;
        self.f1[j] = dt * f1;
        self.f2[j] = dt * f2;
        self.f3[j] = dt * f3;
    }
}

fn etd_terms(z: Complex64) -> [Complex64; 4] {
    let ez = z.exp();
    let z3 = z * z * z;
    [
        ((0.5 * z).exp() - 1.0) / z,
        (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3,
        (2.0 + z + ez * (z - 2.0)) / z3,
        (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3,
    ]
}

fn check_growth(u: &[f64], sup0: f64, t: f64) -> Result<(), EvolutionError> {
    let mut sup = 0.0f64;
    for v in u {
        if !v.is_finite() {
            return Err(EvolutionError::NanDetected { t });
        }
        sup = sup.max(v.abs());
    }
    if sup0 > 0.0 && sup > 10.0 * sup0 {
        return Err(EvolutionError::InstabilityDetected { t });
    }
    Ok(())
}

/// Single step with the configured `dt`.
pub fn step(state: &FieldState, cfg: &EvolutionConfig) -> Result<FieldState, EvolutionError> {
    Solver::new(cfg)?.step(state, cfg.dt)
}

/// Evolve `u0` to `t_end`, keeping a snapshot every `stride` steps (or at
/// the configured snapshot interval) plus the initial and final states.
pub fn run(u0: &GridFunction, cfg: &EvolutionConfig, stride: usize) -> Result<RunResult, EvolutionError> {
    let mut solver = Solver::new(cfg)?;
    if !solver.grid.matches(&u0.grid) {
        return Err(GridError::GridMismatch.into());
    }
    let stride = stride.max(1);
    let first = solver.state(0.0, u0.values.clone());
    let (m0, e0) = (first.mass, first.energy);
    let e_scale = e0.abs().max(f64::MIN_POSITIVE);
    let mut snapshots = vec![first];
    let mut v = solver.forward(&u0.values);
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut since = 0usize;
    let mut next_snap = cfg.snapshot_interval.map(|d| d.min(cfg.t_end));
    let mut max_mass_drift = 0.0f64;
    let mut max_energy_drift = 0.0f64;
    let mut stop = StopReason::Completed;
    let mut sup_prev = u0.sup_norm();
    let tiny = 1e-12 * cfg.t_end.max(1.0);
    while t < cfg.t_end - tiny {
        let mut buf = vec![Complex64::default(); v.len()];
        let (_, sup_d) = solver.flux(&v, 0.0, &mut buf);
        let mut dt = solver.step_bound(sup_d).min(cfg.t_end - t);
        if let Some(ts) = next_snap {
            dt = dt.min(ts - t);
        }
        if dt <= 0.0 {
            return Err(EvolutionError::InvalidConfig(format!("non-positive step at t = {t}")));
        }
        solver.advance(&mut v, dt).map_err(|_| EvolutionError::NanDetected { t: t + dt })?;
        t += dt;
        steps += 1;
        since += 1;
        let snap = match (cfg.snapshot_interval, next_snap) {
            (Some(d), Some(ts)) if t >= ts - tiny => {
                next_snap = Some((ts + d).min(cfg.t_end));
                true
            }
            (None, _) => since >= stride,
            _ => false,
        };
        let last = t >= cfg.t_end - tiny;
        let mut u = solver.inverse(&v);
        if let Some(sp) = &cfg.sponge {
            sp.absorb(&solver.grid, &mut u, dt);
            v = solver.forward(&u);
        }
        check_growth(&u, sup_prev, t)?;
        sup_prev = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if snap || last {
            since = 0;
            let s = solver.state(t, u);
            max_mass_drift = max_mass_drift.max((s.mass - m0).abs() / m0);
            max_energy_drift = max_energy_drift.max((s.energy - e0).abs() / e_scale);
            let ux = solver.l2_ux(&s.u.values);
            let unresolved = cfg.resolution_tol.is_some_and(|tol| solver.spectral_tail(&v) > tol);
            snapshots.push(s);
            if ux > cfg.ux_ceiling {
                stop = StopReason::UxCeiling;
                break;
            }
            if unresolved {
                stop = StopReason::Unresolved;
                break;
            }
        }
    }
    Ok(RunResult { snapshots, stop, steps, max_mass_drift, max_energy_drift })
}

/// Multiply `u` by a smooth window that equals one for `x - x0 >= -start`
/// and vanishes for `x - x0 <= -end` (no periodic wrap).
pub fn taper_behind(u: &GridFunction, x0: f64, start: f64, end: f64) -> Result<GridFunction, EvolutionError> {
    if !(end > start && start > 0.0) {
        return Err(EvolutionError::InvalidConfig(format!("taper {start}..{end}")));
    }
    let g = u.grid;
    let values = (0..g.n)
        .map(|i| u.values[i] * crate::profile::cutoff(-2.0 + (g.x(i) - x0 + end) / (end - start)))
        .collect();
    Ok(GridFunction { grid: g, values })
}

/// Band-limited interpolant of periodic samples at arbitrary points.
pub fn trig_interpolate(u: &GridFunction, points: &[f64]) -> Vec<f64> {
    let n = u.grid.n;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let mut c: Vec<Complex64> = u.values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut c);
    let base = 2.0 * PI / u.grid.period();
    points
        .iter()
        .map(|&x| {
            let s = x - u.grid.x_min;
            let step = Complex64::from_polar(1.0, base * s);
            let mut ph = Complex64::new(1.0, 0.0);
            let mut acc = c[0].re;
            for (j, cj) in c.iter().enumerate().take(n / 2).skip(1) {
                ph *= step;
                if j % 64 == 0 {
                    ph = Complex64::from_polar(1.0, base * s * j as f64);
                }
                acc += 2.0 * (cj * ph).re;
            }
            let nyq = Complex64::from_polar(1.0, base * s * (n / 2) as f64);
            acc += (c[n / 2] * nyq).re;
            acc / n as f64
        })
        .collect()
}

/// `lambda0^(-1/2) u(x / lambda0)` on the same periodic grid.
pub fn pseudo_rescale(u: &GridFunction, lambda0: f64) -> Result<GridFunction, EvolutionError> {
    if !(lambda0 > 0.0) {
        return Err(EvolutionError::InvalidConfig(format!("lambda0 = {lambda0}")));
    }
    let g = u.grid;
    let half = 0.5 * g.period();
    let center = g.x_min + half;
    let sup = u.sup_norm();
    let edge = g.n / 32;
    let edge_max = u.values[..edge].iter().chain(&u.values[g.n - edge..]).fold(0.0f64, |m, v| m.max(v.abs()));
    if sup > 0.0 && edge_max > 1e-6 * sup {
        return Err(EvolutionError::OutOfDomain("data not localized away from the ends".into()));
    }
    let reach = half / lambda0;
    let mut pts = Vec::with_capacity(g.n);
    let mut inside = Vec::with_capacity(g.n);
    for i in 0..g.n {
        let y = center + (g.x(i) - center) / lambda0;
        inside.push((y - center).abs() < half);
        pts.push(y);
    }
    if lambda0 > 1.0 {
        // the band |x| > reach of u is stretched over the whole domain edge
        let tail = (0..g.n)
            .filter(|&i| (g.x(i) - center).abs() >= reach)
            .fold(0.0f64, |m, i| m.max(u.values[i].abs()));
        if sup > 0.0 && tail > 1e-6 * sup {
            return Err(EvolutionError::OutOfDomain(format!("support exceeds 1/{lambda0} of the domain")));
        }
    }
    let vals = trig_interpolate(u, &pts);
    let s = lambda0.powf(-0.5);
    let values = vals.iter().zip(&inside).map(|(v, &ins)| if ins { s * v } else { 0.0 }).collect();
    Ok(GridFunction { grid: g, values })
}

/// Write `u_{i}.csv` per snapshot and `series.csv` with diagnostics.
pub fn write_run(dir: &Path, cfg: &EvolutionConfig, result: &RunResult) -> Result<(), EvolutionError> {
    std::fs::create_dir_all(dir).map_err(GridError::from)?;
    let mut solver = Solver::new(cfg)?;
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (i, s) in result.snapshots.iter().enumerate() {
        s.u.write_csv(&dir.join(format!("u_{i}.csv")))?;
        cols[0].push(s.t);
        cols[1].push(s.mass);
        cols[2].push(s.energy);
        cols[3].push(s.u.sup_norm());
        cols[4].push(solver.l2_ux(&s.u.values));
    }
    grid::write_columns(
        &dir.join("series.csv"),
        &["t", "mass", "energy", "sup_u", "l2_ux"],
        &[&cols[0], &cols[1], &cols[2], &cols[3], &cols[4]],
    )?;
    Ok(())
}

/// Read back the snapshots written by [`write_run`].
pub fn read_run(dir: &Path, cfg: &EvolutionConfig) -> Result<Vec<FieldState>, EvolutionError> {
    let mut rdr = csv::Reader::from_path(dir.join("series.csv")).map_err(GridError::from)?;
    let mut times = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(GridError::from)?;
        let t: f64 = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| GridError::Parse("bad time column".into()))?;
        times.push(t);
    }
    let mut solver = Solver::new(cfg)?;
    let mut out = Vec::with_capacity(times.len());
    for (i, t) in times.into_iter().enumerate() {
        let u = GridFunction::read_csv(&dir.join(format!("u_{i}.csv")))?;
        if u.grid.n != solver.grid.n {
            return Err(GridError::GridMismatch.into());
        }
        out.push(solver.state(t, u.values));
    }
    Ok(out)
}
