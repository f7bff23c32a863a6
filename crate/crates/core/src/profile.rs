//! Localized approximate self-similar profile
//! `Q_{b,omega} = Q_omega + b chi(|b|^beta y) P_omega` and its error term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, GridError, GridFunction};
use crate::groundstate::GroundState;
use crate::linearized::{scaling_operator, LinearError, NonlocalProfile};
use crate::{abs_pow, odd_pow};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("|b| = {b} not below {b_star}")]
    BOutOfRange { b: f64, b_star: f64 },
    #[error("cutoff transition spans {nodes:.1} nodes, need {needed}")]
    CutoffUnresolved { nodes: f64, needed: usize },
    #[error("grid starts at {x_min}, cutoff support reaches {needed}")]
    DomainTooShort { x_min: f64, needed: f64 },
    #[error("ground state and nonlocal profile disagree on {0}")]
    Mismatch(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub b_star: f64,
    pub beta: f64,
    pub min_transition_nodes: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { b_star: 0.1, beta: 0.75, min_transition_nodes: 8 }
    }
}

/// Quintic smoothstep: 0 for `y <= -2`, 1 for `y >= -1`.
pub fn cutoff(y: f64) -> f64 {
    let t = (y + 2.0).clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn cutoff_derivative(y: f64) -> f64 {
    if y <= -2.0 || y >= -1.0 {
        return 0.0;
    }
    let t = y + 2.0;
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// `chi(|b|^beta y)`, identically one at `b = 0`.
#[inline]
pub fn scaled_cutoff(b: f64, beta: f64, y: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else {
        cutoff(b.abs().powf(beta) * y)
    }
}

#[inline]
pub fn scaled_cutoff_derivative(b: f64, beta: f64, y: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        let s = b.abs().powf(beta);
        s * cutoff_derivative(s * y)
    }
}

#[derive(Clone, Debug)]
pub struct LocalizedProfile {
    pub b: f64,
    pub omega: f64,
    pub q: f64,
    pub beta: f64,
    pub q_b: GridFunction,
    pub chi: GridFunction,
}

pub fn build_localized(
    b: f64,
    gs: &GroundState,
    np: &NonlocalProfile,
    cfg: &ProfileConfig,
) -> Result<LocalizedProfile, ProfileError> {
    if !(b.abs() < cfg.b_star) {
        return Err(ProfileError::BOutOfRange { b, b_star: cfg.b_star });
    }
    if !gs.grid().matches(&np.p.grid) {
        return Err(GridError::GridMismatch.into());
    }
    if gs.omega != np.omega || gs.q != np.q {
        return Err(ProfileError::Mismatch("omega or q"));
    }
    let g = gs.grid();
    if b != 0.0 {
        let width = b.abs().powf(-cfg.beta);
        let nodes = width / g.h;
        if nodes < cfg.min_transition_nodes as f64 {
            return Err(ProfileError::CutoffUnresolved { nodes, needed: cfg.min_transition_nodes });
        }
        if g.x_min > -2.0 * width {
            return Err(ProfileError::DomainTooShort { x_min: g.x_min, needed: -2.0 * width });
        }
    }
    let chi = GridFunction::from_fn(g, |y| scaled_cutoff(b, cfg.beta, y));
    let q_b = GridFunction {
        grid: g,
        values: (0..g.n)
            .map(|i| gs.profile.values[i] + b * chi.values[i] * np.p.values[i])
            .collect(),
    };
    Ok(LocalizedProfile { b, omega: gs.omega, q: gs.q, beta: cfg.beta, q_b, chi })
}

/// `Psi` defined by `-Psi = b Lambda Q_b + (Q_b'' - Q_b + Q_b^5 - omega Q_b |Q_b|^(q-1))'`.
pub fn compute_psi(lp: &LocalizedProfile) -> Result<GridFunction, ProfileError> {
    let qb = &lp.q_b;
    let (w, q) = (lp.omega, lp.q);
    let d2 = grid::differentiate(qb, 2)?;
    let bracket = d2.zip_with(qb, |_, a, u| a - u + u.powi(5) - w * odd_pow(u, q))?;
    let flux = grid::differentiate(&bracket, 1)?;
    let lqb = scaling_operator(qb)?;
    Ok(flux.zip_with(&lqb, |_, f, l| -(lp.b * l + f))?)
}

pub fn profile_mass(lp: &LocalizedProfile) -> f64 {
    let v = &lp.q_b.values;
    grid::inner_unchecked(&lp.q_b.grid, v, v)
}

/// `E(Q_b) = 1/2 int Q_b'^2 - 1/6 int Q_b^6 + omega/(q+1) int |Q_b|^(q+1)`.
pub fn profile_energy(lp: &LocalizedProfile) -> Result<f64, ProfileError> {
    Ok(energy(&lp.q_b, lp.omega, lp.q)?)
}

/// Energy with saturation coefficient `omega` for a function on a grid.
pub fn energy(u: &GridFunction, omega: f64, q: f64) -> Result<f64, GridError> {
    let du = grid::differentiate(u, 1)?;
    let g = u.grid;
    Ok((0..g.n)
        .map(|i| {
            let v = u.values[i];
            g.weight(i)
                * (0.5 * du.values[i].powi(2) - v.powi(6) / 6.0 + omega * abs_pow(v, q + 1.0) / (q + 1.0))
        })
        .sum())
}
