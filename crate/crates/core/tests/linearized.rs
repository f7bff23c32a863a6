use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satgkdv::grid::{inner, Grid, GridFunction};
use satgkdv::groundstate::{solve_ground_state, GroundState};
use satgkdv::linearized::{
    apply_l, build_p, d_omega_p, rayleigh_quotient, scaling_identity_defect, solve_constrained,
    LinearError, LinearizedOperator,
};
use std::sync::OnceLock;

fn setup() -> &'static (GroundState, LinearizedOperator) {
    static S: OnceLock<(GroundState, LinearizedOperator)> = OnceLock::new();
    S.get_or_init(|| {
        let g = Grid::make_symmetric(40.0, 4001).unwrap();
        let gs = solve_ground_state(0.0, 7.0, g).unwrap();
        let op = LinearizedOperator::build(&gs).unwrap();
        (gs, op)
    })
}

fn rel(a: &GridFunction, b: &GridFunction) -> f64 {
    a.axpy(-1.0, b).unwrap().l2_norm() / b.l2_norm()
}

#[test]
fn kernel_and_power_identities() {
    let (gs, op) = setup();
    let lqp = apply_l(op, &gs.derivative).unwrap();
    assert!(lqp.l2_norm() / gs.derivative.l2_norm() <= 1e-7, "{:e}", lqp.l2_norm());
    let q3 = gs.profile.map(|u| u.powi(3));
    let lq3 = apply_l(op, &q3).unwrap();
    assert!(rel(&lq3, &q3.scale(-8.0)) <= 1e-6);
    let d = scaling_identity_defect(op, gs).unwrap();
    assert!(d.l2_norm() / gs.profile.l2_norm() <= 1e-6);
}

#[test]
fn scaling_identity_with_saturation() {
    let g = Grid::make_symmetric(40.0, 4001).unwrap();
    let gs = solve_ground_state(0.02, 9.0, g).unwrap();
    let op = LinearizedOperator::build(&gs).unwrap();
    let d = scaling_identity_defect(&op, &gs).unwrap();
    assert!(d.l2_norm() / gs.profile.l2_norm() <= 1e-6, "{:e}", d.l2_norm());
}

#[test]
fn constrained_inverses() {
    let (gs, op) = setup();
    let g = solve_constrained(op, &gs.profile.scale(-2.0), &gs.derivative).unwrap();
    assert!(rel(&g, &gs.lambda_q()) <= 1e-5);
    let q3 = gs.profile.map(|u| u.powi(3));
    let g = solve_constrained(op, &q3, &gs.derivative).unwrap();
    assert!(rel(&g, &q3.scale(-0.125)) <= 1e-5);
    assert!(inner(&g, &gs.derivative).unwrap().abs() <= 1e-9);
}

#[test]
fn non_orthogonal_rhs_is_rejected() {
    let (gs, op) = setup();
    let e = solve_constrained(op, &gs.derivative, &gs.derivative).unwrap_err();
    assert!(matches!(e, LinearError::NotOrthogonal(_)));
}

#[test]
fn single_near_zero_eigenvalue_and_one_negative() {
    let (_, op) = setup();
    assert_eq!(op.near_zero_eigenvalues(1e-6), 1);
    assert_eq!(op.negative_eigenvalues(1e-6), 1);
    assert!(op.matrix.asymmetry() <= 1e-12);
}

#[test]
fn nonlocal_profile_properties() {
    let (gs, _) = setup();
    let np = build_p(gs).unwrap();
    let int_q = np.integral_q;
    let target = int_q * int_q / 16.0;
    let pq = inner(&np.p, &gs.profile).unwrap();
    assert!(((pq - target) / target).abs() <= 1e-4, "{pq} vs {target}");
    let g = np.p.grid;
    let i30 = g.nearest_index(-30.0);
    assert!((np.p.values[i30] - 0.5 * int_q).abs() <= 1e-5 * int_q);
    let lp = apply_l(&LinearizedOperator::build(gs).unwrap(), &np.p).unwrap();
    let dlp = satgkdv::grid::differentiate(&lp, 1).unwrap();
    assert!(rel(&dlp, &np.lambda_q) <= 1e-5, "{:e}", rel(&dlp, &np.lambda_q));
    assert!(inner(&np.p, &gs.derivative).unwrap().abs() <= 1e-9);
    assert!(np.f_omega.abs() <= 1e-4 * target);
    for i in 0..g.n {
        let y = g.x(i);
        if y <= -25.0 {
            assert!((np.p.values[i] - np.left_limit).abs() <= 1e-6);
        }
        if y > 0.0 {
            assert!(np.p.values[i].abs() <= 10.0 * (-y / 2.0).exp());
        }
    }
}

#[test]
fn f_omega_derivative_is_finite() {
    let g = Grid::make_symmetric(40.0, 4001).unwrap();
    let gs = solve_ground_state(0.0, 7.0, g).unwrap();
    let np = build_p(&gs).unwrap();
    let (dp, df) = d_omega_p(&np, 1e-4).unwrap();
    assert!(df.is_finite() && dp.l2_norm().is_finite());
}

fn bump(g: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
    let terms: Vec<(f64, f64, f64)> = (0..5)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-6.0..6.0), rng.gen_range(0.5..2.5)))
        .collect();
    GridFunction::from_fn(g, |x| {
        terms.iter().map(|&(a, c, w)| a * (-((x - c) / w).powi(2)).exp()).sum()
    })
}

#[test]
fn coercivity_on_the_orthogonal_complement() {
    let (gs, op) = setup();
    let g = gs.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q3 = gs.profile.map(|u| u.powi(3));
    let qp = &gs.derivative;
    for _ in 0..100 {
        let mut f = bump(g, &mut rng);
        // Q^3 is even and Q' odd, so they are already orthogonal
        for d in [&q3, qp] {
            let c = inner(&f, d).unwrap() / inner(d, d).unwrap();
            f = f.axpy(-c, d).unwrap();
        }
        let r = rayleigh_quotient(op, &f).unwrap();
        assert!(r >= 1.0 - 1e-6, "quotient {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn operator_is_self_adjoint(seed in any::<u64>()) {
        let (gs, op) = setup();
        let g = gs.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = bump(g, &mut rng);
        let h = bump(g, &mut rng);
        let a = inner(&apply_l(op, &f).unwrap(), &h).unwrap();
        let b = inner(&f, &apply_l(op, &h).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * f.l2_norm() * h.l2_norm());
    }
}
