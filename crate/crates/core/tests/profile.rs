use satgkdv::grid::{inner, Grid};
use satgkdv::groundstate::solve_ground_state;
use satgkdv::linearized::build_p;
use satgkdv::profile::{
    build_localized, compute_psi, profile_energy, profile_mass, LocalizedProfile, ProfileConfig,
    ProfileError,
};

fn family(omega: f64, half: f64, n: usize) -> (satgkdv::groundstate::GroundState, satgkdv::linearized::NonlocalProfile) {
    let g = Grid::make_symmetric(half, n).unwrap();
    let gs = solve_ground_state(omega, 7.0, g).unwrap();
    let np = build_p(&gs).unwrap();
    (gs, np)
}

fn sup_right(lp: &LocalizedProfile) -> f64 {
    let psi = compute_psi(lp).unwrap();
    let g = psi.grid;
    (0..g.n).filter(|&i| g.x(i) > 0.0 && g.x(i) < g.x_max() - 1.0).map(|i| psi.values[i].abs()).fold(0.0, f64::max)
}

#[test]
fn zero_b_reproduces_ground_state() {
    let (gs, np) = family(0.01, 40.0, 4001);
    let lp = build_localized(0.0, &gs, &np, &ProfileConfig::default()).unwrap();
    assert_eq!(lp.q_b.values, gs.profile.values);
}

#[test]
fn error_term_is_quadratic_on_the_right() {
    let (gs, np) = family(0.0, 80.0, 8001);
    let cfg = ProfileConfig::default();
    for (b, half) in [(0.08, 0.04), (0.04, 0.02)] {
        let big = sup_right(&build_localized(b, &gs, &np, &cfg).unwrap());
        let small = sup_right(&build_localized(half, &gs, &np, &cfg).unwrap());
        let ratio = big / small;
        assert!((3.5..=4.5).contains(&ratio), "b={b}: ratio {ratio}");
    }
}

#[test]
fn mass_deviation_scales_with_five_quarters() {
    let (gs, np) = family(0.0, 80.0, 8001);
    let cfg = ProfileConfig::default();
    let base = gs.mass();
    let pq = inner(&np.p, &gs.profile).unwrap();
    let dev = |b: f64| {
        let lp = build_localized(b, &gs, &np, &cfg).unwrap();
        profile_mass(&lp) - base - 2.0 * b * pq
    };
    let r = dev(0.04) / dev(0.02);
    let target = 2f64.powf(1.25);
    assert!(r >= 0.8 * target && r <= 1.2 * target, "ratio {r}");
}

#[test]
fn energy_bounds() {
    let (gs, np) = family(0.0, 80.0, 8001);
    let cfg = ProfileConfig::default();
    let e0 = profile_energy(&build_localized(0.0, &gs, &np, &cfg).unwrap()).unwrap();
    assert!(e0.abs() <= 1e-7, "{e0:e}");
    let (gs, np) = family(0.01, 80.0, 8001);
    let e = profile_energy(&build_localized(0.01, &gs, &np, &cfg).unwrap()).unwrap();
    assert!(e.abs() <= 10.0 * 0.02, "{e}");
}

#[test]
fn coarse_grid_cannot_resolve_cutoff() {
    let (gs, np) = family(0.0, 40.0, 101);
    let e = build_localized(0.09, &gs, &np, &ProfileConfig::default()).unwrap_err();
    assert!(matches!(e, ProfileError::CutoffUnresolved { .. }));
}

#[test]
fn large_b_is_rejected() {
    let (gs, np) = family(0.0, 40.0, 1001);
    let e = build_localized(0.2, &gs, &np, &ProfileConfig::default()).unwrap_err();
    assert!(matches!(e, ProfileError::BOutOfRange { .. }));
}
