use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satgkdv::evolution::{run, EvolutionConfig, StopReason};
use satgkdv::grid::{Grid, GridFunction};
use satgkdv::groundstate::{closed_form_derivative, closed_form_value};
use satgkdv::modulation::*;
use satgkdv::Regime;

fn bank() -> Arc<ProfileBank> {
    static BANK: OnceLock<Arc<ProfileBank>> = OnceLock::new();
    BANK.get_or_init(|| ProfileBank::shared(7.0).unwrap()).clone()
}

fn pde_grid() -> Grid {
    Grid::make_periodic(40.0, 1024).unwrap()
}

fn decomposer(gamma: f64) -> Decomposer {
    Decomposer::new(bank(), gamma, DecomposeConfig::default())
}

fn soliton(g: Grid) -> GridFunction {
    GridFunction::from_fn(g, closed_form_value)
}

fn bumped(seed: u64, amplitude: f64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: f64 = rng.gen_range(-3.0..3.0);
    let w: f64 = rng.gen_range(0.5..2.0);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    GridFunction::from_fn(pde_grid(), |x| closed_form_value(x) + sign * amplitude * (-((x - c) / w).powi(2)).exp())
}

fn orthogonality_ok(ms: &ModulationState) {
    let r = ms.orthogonality(&bank()).unwrap();
    let qn = bank().fields(ms.omega).unwrap().q.iter().map(|v| v * v).sum::<f64>().sqrt() * bank().grid.h.sqrt();
    let bound = 1e-9 * ms.epsilon.l2_norm().max(1e-300) * qn;
    for v in r {
        assert!(v.abs() <= bound.max(1e-10), "orthogonality {r:?} against {bound:e}");
    }
}

#[test]
fn soliton_decomposes_to_identity() {
    let ms = decomposer(0.0).decompose(&soliton(pde_grid()), None).unwrap();
    assert!((ms.lambda - 1.0).abs() < 1e-10, "{}", ms.lambda);
    assert!(ms.b.abs() < 1e-10 && ms.x_center.abs() < 1e-10, "{} {}", ms.b, ms.x_center);
    assert!(ms.epsilon.sup_norm() < 1e-10, "{:e}", ms.epsilon.sup_norm());
}

#[test]
fn rescaled_soliton_recovers_scale() {
    let g = pde_grid();
    let u = GridFunction::from_fn(g, |x| 0.5f64.sqrt() * closed_form_value(0.5 * x));
    let ms = decomposer(0.0).decompose(&u, None).unwrap();
    assert!((ms.lambda - 2.0).abs() < 1e-8, "{}", ms.lambda);
    assert!(ms.b.abs() < 1e-8 && ms.x_center.abs() < 1e-8);
    assert!(ms.newton_residual <= 1e-10);
    assert!(ms.iterations <= 10);
    assert!(ms.epsilon.l2_norm() < 1e-8);
}

#[test]
fn perturbed_soliton_converges_quickly() {
    for seed in 0..4 {
        let ms = decomposer(0.0).decompose(&bumped(seed, 0.01), None).unwrap();
        assert!(ms.iterations <= 10, "seed {seed}: {} iterations", ms.iterations);
        assert!(ms.newton_residual <= 1e-10);
        orthogonality_ok(&ms);
        let small = decomposer(0.0).decompose(&bumped(seed, 1e-3), None).unwrap();
        assert!(small.epsilon.l2_norm() <= 0.02, "seed {seed}: {}", small.epsilon.l2_norm());
    }
}

#[test]
fn drift_plateau_dominates_the_error() {
    let ms = decomposer(0.0).decompose(&bumped(0, 0.01), None).unwrap();
    let left = bank().fields(0.0).unwrap().left_limit;
    let g = ms.epsilon.grid;
    let i = g.nearest_index(-12.0);
    // behind the soliton eps cancels b P, which tends to b times half the integral of Q
    assert!((ms.epsilon.values[i] + ms.b * left).abs() <= 0.02 * ms.b.abs() * left, "{} vs {}", ms.epsilon.values[i], -ms.b * left);
}

#[test]
fn omega_is_slaved_to_scale() {
    let gamma = 1e-3;
    let g = pde_grid();
    let u = modulated_profile(&bank(), gamma, 0.9, 1.5, 0.01, g).unwrap();
    let ms = decomposer(gamma).decompose(&u, None).unwrap();
    assert!((ms.omega - gamma / ms.lambda.powi(1)).abs() <= 1e-12);
    assert!((ms.lambda - 0.9).abs() < 1e-8 && (ms.x_center - 1.5).abs() < 1e-8 && (ms.b - 0.01).abs() < 1e-8);
    orthogonality_ok(&ms);
}

#[test]
fn far_from_the_family_is_rejected() {
    let g = pde_grid();
    let u = GridFunction::from_fn(g, |x| 0.3 * (-(x * x) / 50.0).exp());
    assert!(decomposer(0.0).decompose(&u, None).is_err());
    let zero = GridFunction::zeros(g);
    assert!(matches!(decomposer(0.0).decompose(&zero, None), Err(ModulationError::OutsideTube(_))));
}

#[test]
fn weight_branches() {
    let w = WeightSet::default();
    for y in [-5.0, -2.0, -1.01] {
        assert!((w.psi(y) - (2.0 * y).exp()).abs() < 1e-14);
        assert!((w.phi(1, y) - y.exp()).abs() < 1e-14);
    }
    for y in [-0.49, 0.0, 3.0] {
        assert_eq!(w.psi(y), 1.0);
    }
    for y in [-0.4, 0.0, 0.4] {
        assert!((w.phi(2, y) - (1.0 + y)).abs() < 1e-14);
    }
    for y in [2.5, 7.0] {
        assert!((w.phi(1, y) - y).abs() < 1e-12 && (w.phi(2, y) - y * y).abs() < 1e-12);
    }
    assert!((w.phi_b(2, 300.0) - 9.0).abs() < 1e-12);
    assert_eq!(WeightSet::phi10(-1.0), 0.0);
    assert_eq!(WeightSet::phi10(2.0), 1024.0);
    let mut prev = (0.0, 0.0, 0.0, 0.0);
    for k in 0..=4000 {
        let y = -4.0 + k as f64 * 2e-3;
        let cur = (w.psi(y), w.phi(1, y), w.phi(2, y), WeightSet::phi10(y));
        assert!(cur.0 > 0.0 && cur.1 > 0.0 && cur.2 > 0.0 && cur.3 >= 0.0);
        assert!(w.dphi(1, y) > 0.0 && w.dphi(2, y) > 0.0 && w.dpsi(y) >= 0.0, "y {y}");
        assert!(cur.1 <= cur.2 + 1e-14, "phi_1 > phi_2 at {y}");
        if k > 0 {
            assert!(cur.0 >= prev.0 && cur.1 > prev.1 && cur.2 > prev.2 && cur.3 >= prev.3, "y {y}");
        }
        prev = cur;
    }
}

#[test]
fn weight_junctions_are_smooth() {
    let w = WeightSet::default();
    let h = 1e-6;
    for y in [-1.0, -0.5, 0.5, 2.0] {
        for i in [1, 2] {
            let jump = w.phi(i, y + h) - w.phi(i, y - h);
            assert!(jump.abs() < 1e-5, "phi_{i} jump at {y}");
            let slope = (w.dphi(i, y + h) - w.dphi(i, y - h)).abs();
            assert!(slope < 1e-4, "phi_{i}' jump at {y}: {slope}");
        }
        assert!((w.psi(y + h) - w.psi(y - h)).abs() < 1e-5);
        assert!((w.dpsi(y + h) - w.dpsi(y - h)).abs() < 1e-4);
    }
}

#[test]
fn rho_vanishes_at_both_ends() {
    let rho = bank().rho().unwrap().rho();
    let n = rho.values.len();
    assert!(rho.values[0].abs() <= 1e-6, "{}", rho.values[0]);
    assert!(rho.values[n - 1].abs() <= 1e-6, "{}", rho.values[n - 1]);
}

fn manual_state(eps: GridFunction, q_b: GridFunction) -> ModulationState {
    ModulationState {
        t: 0.0,
        s: 0.0,
        lambda: 1.0,
        b: 0.0,
        x_center: 0.0,
        omega: 0.0,
        epsilon: eps,
        q_b,
        newton_residual: 0.0,
        iterations: 0,
        window_start: 0,
    }
}

#[test]
fn functionals_vanish_for_zero_error() {
    let g = pde_grid();
    let ms = manual_state(GridFunction::zeros(g), soliton(g));
    let r = evaluate_functionals(&ms, &WeightSet::default(), &bank().rho().unwrap(), 7.0).unwrap();
    for v in [r.n1, r.n2, r.n1_loc, r.n2_loc, r.j1, r.j2, r.j, r.tail10, r.f[0][0], r.f[0][1], r.f[1][0], r.f[1][1]] {
        assert_eq!(v, 0.0);
    }
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn functionals_of_the_soliton_match_quadrature() {
    let g = Grid::make_symmetric(30.0, 6001).unwrap();
    let q = soliton(g);
    let ms = manual_state(q.clone(), GridFunction::zeros(g));
    let w = WeightSet::default();
    let r = evaluate_functionals(&ms, &w, &bank().rho().unwrap(), 7.0).unwrap();
    // |y| < B/2 keeps psi_B = 1, and the odd part of phi_B integrates out
    let exact = 0.75 * 3f64.sqrt() * PI;
    let n2 = simpson(-30.0, 30.0, 20000, |y| closed_form_derivative(y).powi(2) * w.psi_b(y) + closed_form_value(y).powi(2) * w.phi_b(2, y));
    assert!((n2 - exact).abs() < 1e-9, "{n2} vs {exact}");
    assert!((r.n2 - n2).abs() < 1e-6 * n2, "{} vs {n2}", r.n2);
    assert!((r.n1 - exact).abs() < 1e-6 * exact);
    assert!(r.n1 <= r.n2 + 1e-12);
    let tail = simpson(0.0, 30.0, 20000, |y| y.powi(10) * closed_form_value(y).powi(2));
    assert!((r.tail10 - tail).abs() < 1e-6 * tail, "{} vs {tail}", r.tail10);
    let loc = simpson(-30.0, 30.0, 20000, |y| closed_form_value(y).powi(2) * w.dphi_b(1, y));
    assert!((r.n1_loc - loc).abs() < 1e-6 * loc);
}

fn perturbed_states() -> Vec<ModulationState> {
    let dec = decomposer(0.0);
    let mut out = Vec::new();
    for (seed, amp) in [(1, 1e-3), (2, 3e-3), (3, 1e-2), (4, 2e-2), (5, 5e-3), (6, 1e-2)] {
        out.push(dec.decompose(&bumped(seed, amp), None).unwrap());
    }
    out
}

#[test]
fn coercivity_sandwich_and_j_smallness() {
    let w = WeightSet::default();
    let rho = bank().rho().unwrap();
    let mut c = 1.0f64;
    let mut cj = 0.0f64;
    for ms in perturbed_states() {
        orthogonality_ok(&ms);
        let r = evaluate_functionals(&ms, &w, &rho, 7.0).unwrap();
        assert!(r.n1 > 0.0 && r.n1 <= r.n2);
        for (i, row) in r.f.iter().enumerate() {
            let n = if i == 0 { r.n1 } else { r.n2 };
            for &f in row {
                assert!(f > 0.0, "F = {f}");
                c = c.max(n / f).max(f / n);
            }
        }
        cj = cj.max((r.j1.abs() + r.j2.abs()) / r.n2.sqrt());
    }
    eprintln!("coercivity constant {c:.3}, J constant {cj:.3}");
    assert!(c < 10.0, "{c}");
    assert!(cj < 10.0, "{cj}");
}

#[test]
fn mass_identity_on_decomposed_states() {
    for seed in 0..3 {
        let u = bumped(seed, 1e-2);
        let ms = decomposer(0.0).decompose(&u, None).unwrap();
        let mass = u.values.iter().map(|v| v * v).sum::<f64>() * u.grid.h;
        assert!((reconstructed_mass(&ms) - mass).abs() < 1e-10 * mass);
    }
}

fn pde_config(gamma: f64, t_end: f64) -> EvolutionConfig {
    EvolutionConfig {
        gamma,
        q: 7.0,
        domain_half_length: 40.0,
        n_modes: 1024,
        dt: 2e-3,
        t_end,
        dealias: false,
        damping: None,
        sponge: None,
        cfl: None,
        snapshot_interval: Some(0.125),
        ux_ceiling: 1e3,
        resolution_tol: None,
    }
}

#[test]
fn traveling_soliton_is_tracked() {
    let cfg = pde_config(0.0, 5.0);
    let res = run(&soliton(cfg.grid().unwrap()), &cfg, 1).unwrap();
    assert_eq!(res.stop, StopReason::Completed);
    let dec = decomposer(0.0);
    let tr = track(&dec, &res.snapshots);
    assert!(tr.failure.is_none());
    assert_eq!(tr.states.len(), res.snapshots.len());
    for ms in &tr.states {
        assert!((ms.lambda - 1.0).abs() <= 1e-3, "t {} lambda {}", ms.t, ms.lambda);
        assert!(ms.b.abs() <= 1e-3);
        assert!((ms.x_center - ms.t).abs() <= 1e-2);
        assert!((ms.s - ms.t).abs() <= 1e-5 * ms.t.max(1.0), "s {} t {}", ms.s, ms.t);
        orthogonality_ok(ms);
    }
    for (ms, snap) in tr.states.iter().zip(&res.snapshots) {
        assert!((reconstructed_mass(ms) - snap.mass).abs() <= 1e-8 * snap.mass);
    }
    let rates = modulation_rates(&tr.states, bank().c0().unwrap()).unwrap();
    for r in &rates {
        assert!(r.lambda_law.abs() <= 1e-3 && r.b_s.abs() <= 1e-3 && r.x_law.abs() <= 1e-3 && r.b_law.abs() <= 1e-3, "{r:?}");
    }
    let w = WeightSet::default();
    let rho = bank().rho().unwrap();
    let reps: Vec<_> = tr.states.iter().map(|m| evaluate_functionals(m, &w, &rho, 7.0).unwrap()).collect();
    let probe = monotonicity_probe(&tr.states, &reps, None, 1e3).unwrap();
    for p in &probe.samples {
        assert!(p.df11_ds.abs() <= 1e-8, "{p:?}");
    }
}

#[test]
fn jump_between_snapshots_stops_tracking() {
    let cfg = pde_config(0.0, 1.0);
    let mut snaps = run(&soliton(cfg.grid().unwrap()), &cfg, 1).unwrap().snapshots;
    let g = snaps[0].u.grid;
    let wide = GridFunction::from_fn(g, |x| 1.2f64.powf(-0.5) * closed_form_value((x - snaps[3].t) / 1.2));
    snaps[3].u = wide;
    let tr = track(&decomposer(0.0), &snaps);
    let f = tr.failure.expect("jump detected");
    assert_eq!(f.index, 3);
    assert!(matches!(f.error, ModulationError::BranchJump(_)), "{}", f.error);
    assert_eq!(tr.states.len(), 3);
}

#[test]
fn saturated_soliton_keeps_its_parameters() {
    let gamma = 1e-3;
    let cfg = pde_config(gamma, 2.0);
    let g = cfg.grid().unwrap();
    let u0 = modulated_profile(&bank(), gamma, 1.0, 0.0, 0.0, g).unwrap();
    let res = run(&u0, &cfg, 1).unwrap();
    let tr = track(&decomposer(gamma), &res.snapshots);
    assert!(tr.failure.is_none());
    for ms in &tr.states {
        assert!((ms.lambda - 1.0).abs() <= 1e-3 && (ms.omega - gamma).abs() <= 1e-5);
        assert!((ms.x_center - ms.t).abs() <= 1e-2);
    }
}

#[test]
fn rates_need_three_points() {
    let ms = decomposer(0.0).decompose(&soliton(pde_grid()), None).unwrap();
    assert!(matches!(modulation_rates(&[ms.clone(), ms], 1.0), Err(ModulationError::InsufficientPoints { .. })));
}

fn synthetic(t: f64, lambda: f64, b: f64, omega: f64) -> ModulationState {
    let g = Grid::make_symmetric(1.0, 9).unwrap();
    let mut ms = manual_state(GridFunction::zeros(g), GridFunction::zeros(g));
    ms.t = t;
    ms.lambda = lambda;
    ms.b = b;
    ms.omega = omega;
    ms
}

#[test]
fn classifier_examples() {
    let c1 = 0.375;
    let cfg = ClassifierConfig::default();
    let gamma = 1e-3;
    let flat: Vec<_> = (0..20).map(|k| synthetic(k as f64, 1.0, 0.0, gamma)).collect();
    let zeros = vec![0.0; 20];
    let out = classify_regime(&flat, &zeros, None, c1, &cfg);
    assert_eq!(out.regime, Regime::Soliton, "{}", out.reason);
    assert!(out.margins[0] > 1.0);

    let falling: Vec<_> = (0..10).map(|k| synthetic(k as f64, 1.0 + 0.1 * k as f64, -0.1, gamma)).collect();
    let fail = TrackFailure { index: 10, t: 10.0, error: ModulationError::OutsideTube("||eps|| above 0.5".into()) };
    let out = classify_regime(&falling, &zeros[..10], Some(&fail), c1, &cfg);
    assert_eq!(out.regime, Regime::Exit, "{}", out.reason);

    let growing: Vec<_> = (1..=40)
        .map(|k| {
            let t = 10.0 * k as f64;
            let lambda = t.powf(0.25);
            let omega = gamma / lambda;
            synthetic(t, lambda, -c1 * omega, omega)
        })
        .collect();
    let out = classify_regime(&growing, &[0.0; 40], None, c1, &cfg);
    assert_eq!(out.regime, Regime::BlowDown, "{}", out.reason);

    let stuck: Vec<_> = (0..10).map(|k| synthetic(k as f64, 1.0, -c1 * gamma, gamma)).collect();
    let out = classify_regime(&stuck, &zeros[..10], None, c1, &cfg);
    assert_eq!(out.regime, Regime::Undetermined);
}

#[test]
fn separation_margin_arithmetic() {
    let ms = synthetic(0.0, 1.0, 0.01, 0.02);
    let m = separation_margin(&ms, 1e-4, 0.5, 10.0);
    let expected = (0.01 + 0.5 * 0.02) / (10.0 * (1e-4 + 1e-4 + 4e-4));
    assert!((m - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn decompose_reconstruct_round_trip(
        lambda in 0.8f64..1.25,
        x in -3.0f64..3.0,
        b in -0.02f64..0.02,
        seed in 0u64..1000,
    ) {
        let gamma = 1e-3;
        let g = pde_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: f64 = rng.gen_range(-2.0..2.0);
        let base = modulated_profile(&bank(), gamma, lambda, x, b, g).unwrap();
        let u = base.zip_with(&GridFunction::from_fn(g, |y| 3e-3 * (-(y - x - c).powi(2)).exp()), |_, a, e| a + e).unwrap();
        let dec = decomposer(gamma);
        let first = dec.decompose(&u, Some(Guess { lambda, x, b })).unwrap();
        let again = dec.decompose(&first.reconstruct(g), Some(Guess { lambda, x, b })).unwrap();
        prop_assert!((again.lambda - first.lambda).abs() <= 1e-9);
        prop_assert!((again.x_center - first.x_center).abs() <= 1e-9);
        prop_assert!((again.b - first.b).abs() <= 1e-9);
    }

    #[test]
    fn accepted_states_are_orthogonal(seed in 0u64..1000, amplitude in 1e-3f64..5e-3) {
        let ms = decomposer(0.0).decompose(&bumped(seed, amplitude), None).unwrap();
        orthogonality_ok(&ms);
    }
}
