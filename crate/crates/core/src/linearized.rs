//! Linearized operator `L_omega f = -f'' + f - 5 Q^4 f + q omega |Q|^(q-1) f`,
//! constrained inversion, and the nonlocal profile `P_omega`.

use thiserror::Error;

use crate::banded::{BandError, BandLu, BandMatrix};
use crate::grid::{self, Grid, GridError, GridFunction};
use crate::groundstate::{self, closed_form_q, GroundState, GroundStateError};
use crate::odd_pow;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("right-hand side not orthogonal to the kernel (relative overlap {0:.3e})")]
    NotOrthogonal(f64),
    #[error("singular bordered system: {0}")]
    SingularSystem(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<BandError> for LinearError {
    fn from(e: BandError) -> Self {
        LinearError::SingularSystem(e.to_string())
    }
}

/// Relative overlap above which a right-hand side is rejected.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

// sixth-order centered second difference
const D2: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];

/// `L_omega` discretized as a symmetric band matrix (zero extension past the
/// ends) together with its LU factors.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub omega: f64,
    pub q: f64,
    pub grid: Grid,
    pub potential: Vec<f64>,
    pub matrix: BandMatrix,
    lu: BandLu,
}

impl LinearizedOperator {
    pub fn build(gs: &GroundState) -> Result<Self, LinearError> {
        let grid = gs.grid();
        let (w, q) = (gs.omega, gs.q);
        let potential: Vec<f64> = gs
            .profile
            .values
            .iter()
            .map(|&u| 1.0 - 5.0 * u.powi(4) + q * w * u.abs().powf(q - 1.0))
            .collect();
        let n = grid.n;
        let h2 = grid.h * grid.h;
        let mut m = BandMatrix::zeros(n, 3, 3);
        for i in 0..n {
            for (k, c) in D2.iter().enumerate() {
                let j = i as i64 + k as i64 - 3;
                if j >= 0 && (j as usize) < n {
                    m.set(i, j as usize, -c / h2);
                }
            }
            m.add(i, i, potential[i]);
        }
        let lu = m.lu()?;
        Ok(LinearizedOperator { omega: w, q, grid, potential, matrix: m, lu })
    }

    /// Number of eigenvalues of the discrete operator in `(-tol, tol)`.
    pub fn near_zero_eigenvalues(&self, tol: f64) -> usize {
        self.matrix.count_below(tol) - self.matrix.count_below(-tol)
    }

    /// Number of eigenvalues below `-tol`.
    pub fn negative_eigenvalues(&self, tol: f64) -> usize {
        self.matrix.count_below(-tol)
    }

    /// Matrix form applied to a vector (zero extension at the ends).
    pub fn apply_matrix(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.matvec(f)
    }
}

/// `L_omega f` with one-sided stencils at the ends.
pub fn apply_l(op: &LinearizedOperator, f: &GridFunction) -> Result<GridFunction, LinearError> {
    if !op.grid.matches(&f.grid) {
        return Err(GridError::GridMismatch.into());
    }
    let d2 = grid::differentiate(f, 2)?;
    let values = (0..f.grid.n).map(|i| -d2.values[i] + op.potential[i] * f.values[i]).collect();
    Ok(GridFunction { grid: f.grid, values })
}

/// `f/2 + y f'`.
pub fn scaling_operator(f: &GridFunction) -> Result<GridFunction, LinearError> {
    let d = grid::differentiate(f, 1)?;
    let g = f.grid;
    let values = (0..g.n).map(|i| 0.5 * f.values[i] + g.x(i) * d.values[i]).collect();
    Ok(GridFunction { grid: g, values })
}

/// Solve `L g = f` subject to `(g, kernel) = 0` through the bordered system
/// `[L v; v^T 0]`, with `v` the quadrature-weighted kernel.
pub fn solve_constrained(
    op: &LinearizedOperator,
    f: &GridFunction,
    kernel: &GridFunction,
) -> Result<GridFunction, LinearError> {
    if !op.grid.matches(&f.grid) || !op.grid.matches(&kernel.grid) {
        return Err(GridError::GridMismatch.into());
    }
    let nf = f.l2_norm();
    let nk = kernel.l2_norm();
    if nk == 0.0 {
        return Err(LinearError::SingularSystem("zero kernel vector".into()));
    }
    let overlap = grid::inner(f, kernel)?;
    if nf > 0.0 && overlap.abs() > ORTHOGONALITY_TOL * nf * nk {
        return Err(LinearError::NotOrthogonal(overlap.abs() / (nf * nk)));
    }
    let g = op.grid;
    let v: Vec<f64> = (0..g.n).map(|i| g.weight(i) * kernel.values[i]).collect();
    let y = op.lu.solve(&v)?;
    let vy: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
    if vy == 0.0 || !vy.is_finite() {
        return Err(LinearError::SingularSystem("kernel orthogonal to its preimage".into()));
    }
    let bordered = |rhs: &[f64], c: f64| -> Result<(Vec<f64>, f64), LinearError> {
        let x = op.lu.solve(rhs)?;
        let vx: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
        let mu = (vx - c) / vy;
        Ok((x.iter().zip(&y).map(|(a, b)| a - mu * b).collect(), mu))
    };
    let (mut sol, mut mu) = bordered(&f.values, 0.0)?;
    // one step of refinement on the full bordered system
    let ag = op.matrix.matvec(&sol);
    let r1: Vec<f64> = (0..g.n).map(|i| f.values[i] - ag[i] - mu * v[i]).collect();
    let r2 = -v.iter().zip(&sol).map(|(a, b)| a * b).sum::<f64>();
    let (dg, dmu) = bordered(&r1, r2)?;
    for (s, d) in sol.iter_mut().zip(&dg) {
        *s += d;
    }
    mu += dmu;
    if sol.iter().any(|x| !x.is_finite()) || !mu.is_finite() {
        return Err(LinearError::SingularSystem("non-finite solution".into()));
    }
    Ok(GridFunction { grid: g, values: sol })
}

/// The nonlocal profile `P_omega = P_tilde - int_y^inf Lambda Q_omega`, with
/// `(L_omega P)' = Lambda Q_omega`.
#[derive(Clone, Debug)]
pub struct NonlocalProfile {
    pub omega: f64,
    pub q: f64,
    pub p: GridFunction,
    pub p_tilde: GridFunction,
    pub lambda_q: GridFunction,
    /// `lim_{y -> -inf} P = (1/2) int Q_omega`.
    pub left_limit: f64,
    /// `(P_omega, Q_omega) - (int Q)^2 / 16` with `Q` the quintic ground state.
    pub f_omega: f64,
    /// `int Q` of the quintic ground state on the same grid.
    pub integral_q: f64,
}

pub fn build_p(gs: &GroundState) -> Result<NonlocalProfile, LinearError> {
    let op = LinearizedOperator::build(gs)?;
    build_p_with(gs, &op)
}

pub fn build_p_with(gs: &GroundState, op: &LinearizedOperator) -> Result<NonlocalProfile, LinearError> {
    let g = gs.grid();
    let (w, q) = (gs.omega, gs.q);
    let qv = &gs.profile.values;
    let lq = gs.lambda_q();
    let mut tail = grid::cumulative_from_right(&lq);
    let y_end = g.x_max();
    let tail_beyond = -qv[g.n - 1] * (y_end + 0.5);
    for t in tail.values.iter_mut() {
        *t += tail_beyond;
    }
    let q2 = gs.second_derivative();
    let rhs: Vec<f64> = (0..g.n)
        .map(|i| {
            let u = qv[i];
            let dlq = 1.5 * gs.derivative.values[i] + g.x(i) * q2.values[i];
            dlq - 5.0 * u.powi(4) * tail.values[i] + q * w * u.abs().powf(q - 1.0) * tail.values[i]
        })
        .collect();
    let mut rhs = GridFunction { grid: g, values: rhs };
    // the exact right-hand side is orthogonal to Q'; drop the quadrature defect
    let c = grid::inner(&rhs, &gs.derivative)? / grid::inner(&gs.derivative, &gs.derivative)?;
    rhs = rhs.axpy(-c, &gs.derivative)?;
    let p_tilde = solve_constrained(op, &rhs, &gs.derivative)?;
    let p = p_tilde.axpy(-1.0, &tail)?;
    let int_q_omega = gs.profile.integrate();
    let integral_q = closed_form_q(g).integrate();
    let f_omega = grid::inner(&p, &gs.profile)? - integral_q * integral_q / 16.0;
    Ok(NonlocalProfile {
        omega: w,
        q,
        p,
        p_tilde,
        lambda_q: lq,
        left_limit: 0.5 * int_q_omega,
        f_omega,
        integral_q,
    })
}

/// Centered difference of `P_omega` and `F(omega)` in `omega`.
pub fn d_omega_p(np: &NonlocalProfile, delta: f64) -> Result<(GridFunction, f64), GroundStateError> {
    let g = np.p.grid;
    let plus = groundstate::solve_unchecked(np.omega + delta, np.q, g)?;
    let minus = groundstate::solve_unchecked(np.omega - delta, np.q, g)?;
    let pp = build_p(&plus)?;
    let pm = build_p(&minus)?;
    let dp = pp.p.zip_with(&pm.p, |_, a, b| (a - b) / (2.0 * delta))?;
    Ok((dp, (pp.f_omega - pm.f_omega) / (2.0 * delta)))
}

/// Rayleigh quotient `(L f, f) / (f, f)`.
pub fn rayleigh_quotient(op: &LinearizedOperator, f: &GridFunction) -> Result<f64, LinearError> {
    let lf = apply_l(op, f)?;
    Ok(grid::inner(&lf, f)? / grid::inner(f, f)?)
}

/// `L_omega Lambda Q_omega + 2 Q_omega - m omega Q_omega^q`, which vanishes
/// identically.
pub fn scaling_identity_defect(op: &LinearizedOperator, gs: &GroundState) -> Result<GridFunction, LinearError> {
    let lq = gs.lambda_q();
    let l = apply_l(op, &lq)?;
    let m = crate::saturation_exponent(gs.q);
    let (w, q) = (gs.omega, gs.q);
    l.zip_with(&gs.profile, |_, a, u| a + 2.0 * u - m * w * odd_pow(u, q)).map_err(Into::into)
}
