use satgkdv::grid::{inner, Grid, GridFunction};
use satgkdv::groundstate::{
    closed_form_q, closed_form_value, solve_ground_state, solve_ground_state_with, solve_z,
    GroundStateConfig, GroundStateError,
};

fn grid() -> Grid {
    Grid::make_symmetric(40.0, 4001).unwrap()
}

#[test]
fn quintic_ground_state_matches_closed_form() {
    let g = grid();
    let gs = solve_ground_state(0.0, 7.0, g).unwrap();
    assert!((gs.center - 3f64.powf(0.25)).abs() <= 1e-8, "center {}", gs.center);
    let mut err: f64 = 0.0;
    for i in 0..g.n {
        if g.x(i).abs() <= 10.0 {
            err = err.max((gs.profile.values[i] - closed_form_value(g.x(i))).abs());
        }
    }
    assert!(err <= 1e-7, "max error {err:e}");
}

#[test]
fn profile_is_even_positive_and_decreasing() {
    let g = grid();
    let gs = solve_ground_state(0.02, 7.0, g).unwrap();
    let mid = g.n / 2;
    for k in 0..mid {
        let a = gs.profile.values[mid + k];
        let b = gs.profile.values[mid - k];
        assert!((a - b).abs() <= 1e-12 * gs.center);
        assert!(a > 0.0);
        assert!(gs.profile.values[mid + k + 1] < a);
    }
}

#[test]
fn exponential_decay_rate() {
    let g = grid();
    let gs = solve_ground_state(0.01, 9.0, g).unwrap();
    let pts: Vec<(f64, f64)> = (0..g.n)
        .filter(|&i| (10.0..=18.0).contains(&g.x(i)))
        .map(|i| (g.x(i), gs.profile.values[i].ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    assert!((num / den + 1.0).abs() <= 0.02);
}

#[test]
fn elliptic_residual_is_small() {
    let g = grid();
    for &(w, q) in &[(0.0, 7.0), (0.03, 7.0), (0.01, 11.0)] {
        let gs = solve_ground_state(w, q, g).unwrap();
        let d2 = satgkdv::grid::differentiate(&gs.profile, 2).unwrap();
        let r = GridFunction::from_fn(g, |_| 0.0)
            .zip_with(&gs.profile, |_, _, u| u - u.powi(5) + w * satgkdv::odd_pow(u, q))
            .unwrap()
            .axpy(-1.0, &d2)
            .unwrap();
        assert!(r.l2_norm() <= 1e-7, "w={w} q={q} residual {:e}", r.l2_norm());
    }
}

#[test]
fn omega_out_of_range_is_rejected() {
    let e = solve_ground_state(0.5, 7.0, grid()).unwrap_err();
    assert!(matches!(e, GroundStateError::OmegaTooLarge { .. }));
}

#[test]
fn shooting_is_insensitive_to_the_initial_center() {
    let g = grid();
    let cfg = GroundStateConfig::default();
    let base = solve_ground_state(0.01, 7.0, g).unwrap().center;
    for f in [0.99, 1.01] {
        let gs = solve_ground_state_with(0.01, 7.0, g, &cfg, Some(base * f)).unwrap();
        assert!((gs.center - base).abs() <= 1e-8);
    }
}

#[test]
fn mass_of_quintic_ground_state() {
    let gs = solve_ground_state(0.0, 7.0, grid()).unwrap();
    let expected = 3f64.sqrt() * std::f64::consts::PI / 2.0;
    assert!((gs.mass() - expected).abs() <= 1e-8);
    let cf = closed_form_q(grid());
    assert!((inner(&cf, &cf).unwrap() - expected).abs() <= 1e-8);
}

#[test]
fn omega_derivative_pairing() {
    let g = grid();
    let gs = solve_ground_state(0.0, 7.0, g).unwrap();
    let z = solve_z(&gs).unwrap();
    let int_q8: f64 = gs.profile.map(|u| u.powi(8)).integrate();
    let expected = 6.0 / 32.0 * int_q8;
    let got = inner(&z, &gs.profile).unwrap();
    assert!(((got - expected) / expected).abs() <= 1e-4, "{got} vs {expected}");
}

#[test]
fn omega_derivative_matches_difference_quotient() {
    let g = grid();
    let w = 0.01;
    let d = 1e-4;
    let z = solve_z(&solve_ground_state(w, 7.0, g).unwrap()).unwrap();
    let p = solve_ground_state(w + d, 7.0, g).unwrap().profile;
    let m = solve_ground_state(w - d, 7.0, g).unwrap().profile;
    let fd = p.zip_with(&m, |_, a, b| (a - b) / (2.0 * d)).unwrap();
    let err = fd.axpy(-1.0, &z).unwrap().l2_norm() / z.l2_norm();
    assert!(err <= 1e-5, "relative error {err:e}");
}
