use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satgkdv::evolution::taper_behind;
use satgkdv::grid::{self, Grid, GridFunction};
use satgkdv::modulation::modulated_profile;

use crate::config::InitialData;
use crate::HarnessError;

/// Number of Gaussian bumps in a seeded perturbation.
const BUMPS: usize = 6;

/// `||f||_H1` with the derivative taken on the grid.
pub fn h1_norm(f: &GridFunction) -> f64 {
    let d = grid::differentiate(f, 1).expect("grid has enough nodes");
    (f.l2_norm().powi(2) + d.l2_norm().powi(2)).sqrt()
}

/// `int_{y>0} y^10 f^2` with the node weights.
pub fn right_tail(f: &GridFunction) -> f64 {
    let g = f.grid;
    (0..g.n)
        .filter(|&i| g.x(i) > 0.0)
        .map(|i| g.weight(i) * g.x(i).powi(10) * f.values[i] * f.values[i])
        .sum()
}

/// Seeded smooth field with `||e||_H1 = amplitude` and right tail below one half.
pub fn seeded_perturbation(grid: Grid, seed: u64, amplitude: f64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64)> = (0..BUMPS)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-6.0..1.0), rng.gen_range(0.5..1.5)))
        .collect();
    let raw = GridFunction::from_fn(grid, |x| bumps.iter().map(|(a, c, w)| a * (-((x - c) / w).powi(2)).exp()).sum());
    let mut e = raw.scale(amplitude / h1_norm(&raw));
    let tail = right_tail(&e);
    if tail >= 0.5 {
        e = e.scale((0.5 / tail).sqrt());
    }
    e
}

pub fn make_initial_data(
    data: &InitialData,
    grid: Grid,
    gamma: f64,
    q: f64,
    seed: u64,
) -> Result<GridFunction, HarnessError> {
    let bank = || crate::bank(q);
    let soliton = |b: f64| -> Result<GridFunction, HarnessError> {
        modulated_profile(&*bank()?, gamma, 1.0, 0.0, b, grid).map_err(HarnessError::numerical)
    };
    match data {
        InitialData::GroundState => soliton(0.0),
        InitialData::Profile { b0, taper } => {
            let u = soliton(*b0)?;
            match taper {
                Some(t) => taper_behind(&u, 0.0, t.start, t.end).map_err(|e| HarnessError::Config(e.to_string())),
                None => Ok(u),
            }
        }
        InitialData::Perturbed { seed: own, amplitude } => {
            let e = seeded_perturbation(grid, own.unwrap_or(seed), *amplitude);
            Ok(soliton(0.0)?.axpy(1.0, &e).map_err(HarnessError::numerical)?)
        }
        InitialData::Scaled { factor } => Ok(soliton(0.0)?.scale(*factor)),
        InitialData::File { path } => {
            let u = GridFunction::read_csv(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            if u.grid.n != grid.n || (u.grid.h - grid.h).abs() > 1e-9 * grid.h || (u.grid.x_min - grid.x_min).abs() > 1e-9 * grid.h
            {
                return Err(HarnessError::Config(format!("{} is not sampled on the configured grid", path.display())));
            }
            Ok(GridFunction { grid, values: u.values })
        }
    }
}
