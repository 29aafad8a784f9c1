use pathhj_core::gauge::*;
use pathhj_core::path_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(dt: f64, n: usize) -> GridSpec {
    GridSpec::new(1.0, 1.0, dt, n).unwrap()
}

#[test]
fn v_zero_and_constant_paths() {
    let g = grid(0.125, 2);
    assert_eq!(eval_v(&SampledPath::constant(g, 3, &[0.0, 0.0])), 0.0);
    let c = SampledPath::constant(g, 3, &[0.6, -0.8]);
    assert!((eval_v(&c) - 1.0).abs() < 1e-15);
    let gv = grad_v(&c).unwrap();
    assert!((gv[0] - 1.2).abs() < 1e-15 && (gv[1] + 1.6).abs() < 1e-15);
    assert_eq!(dt_v(&c).unwrap(), 0.0);
}

#[test]
fn grad_v_vanishes_when_current_is_zero() {
    let g = grid(0.25, 1);
    let p = SampledPath::from_fn(g, 2, |t, o| o[0] = t * (t - 0.5));
    assert_eq!(p.current()[0], 0.0);
    assert!(eval_v(&p) > 0.0);
    assert_eq!(grad_v(&p).unwrap(), vec![0.0]);
}

#[test]
fn grad_v_rejects_terminal_point() {
    let g = grid(0.25, 1);
    let p = SampledPath::constant(g, g.horizon_steps(), &[1.0]);
    assert!(grad_v(&p).is_err());
    assert!(dt_v(&p).is_err());
}

#[test]
fn v_bounds_on_constant_path() {
    let g = grid(0.25, 1);
    let c = 1.7;
    let (lo, hi) = check_v_bounds(&SampledPath::constant(g, 1, &[c]));
    assert!((lo - c * c * (1.0 - v_lower_constant())).abs() < 1e-12);
    assert!((hi - c * c).abs() < 1e-12);
    assert_eq!(check_v_bounds(&SampledPath::constant(g, 1, &[0.0])), (0.0, 0.0));
}

#[test]
fn v_bounds_on_many_random_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = grid(1.0 / 32.0, 2);
    for i in 0..10_000 {
        let p = random_piecewise_affine(g, i % 33, 5, 3.0, &mut rng);
        let (lo, hi) = check_v_bounds(&p);
        assert!(lo >= -1e-12 && hi >= -1e-12, "{lo} {hi}");
        if p.in_g0() {
            assert!(check_grad_v_bound(&p) >= -1e-12);
        }
    }
}

fn example_pair() -> (SampledPath, SampledPath) {
    let g = grid(1.0 / 64.0, 1);
    let x = SampledPath::constant(g, 0, &[1.0]);
    let y = SampledPath::from_fn(g, g.horizon_steps(), |t, o| o[0] = t.max(0.0));
    (x, y)
}

#[test]
fn example_vbar_is_one() {
    let (x, y) = example_pair();
    assert!((eval_vbar(&x, &y).unwrap() - 1.0).abs() < 1e-15);
    // At t = 0 the difference path is x ≡ 1, so V = 1 as well.
    assert!((eval_v(&x) - 1.0).abs() < 1e-15);
}

#[test]
fn vbar_is_symmetric_and_vanishes_on_diagonal() {
    let (x, y) = example_pair();
    assert_eq!(eval_vbar(&x, &y).unwrap(), eval_vbar(&y, &x).unwrap());
    assert_eq!(eval_vbar(&y, &y).unwrap(), 0.0);
}

#[test]
fn mu_alpha_cases() {
    let g = grid(0.25, 1);
    let gp = GaugeParams::for_grid(1.0, &g).unwrap();
    assert_eq!(gp.c_alpha(), 10.0);
    let p = SampledPath::from_fn(g, 2, |t, o| o[0] = 0.3 * t);
    assert_eq!(eval_mu_alpha(&p, &p, &gp).unwrap(), 0.0);
    let q = SampledPath::constant(g, 3, &[0.1]);
    assert_eq!(eval_mu_alpha(&p, &q, &gp).unwrap(), 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let a = random_piecewise_affine(g, rng_step(&mut rng), 3, 1.0, &mut rng);
        let b = random_piecewise_affine(g, rng_step(&mut rng), 3, 1.0, &mut rng);
        let (a, b) = (shrink_to(&a, 1.0), shrink_to(&b, 1.0));
        let m = eval_mu_alpha(&a, &b, &gp).unwrap();
        assert!((0.0..=10.0 + 1e-12).contains(&m), "{m}");
    }
}

fn rng_step(rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    rng.gen_range(0..=4)
}

fn shrink_to(p: &SampledPath, alpha: f64) -> SampledPath {
    let s = sup_norm(p);
    if s <= alpha {
        return p.clone();
    }
    let v: Vec<f64> = p.values().iter().map(|x| x * alpha / s).collect();
    SampledPath::from_flat(*p.grid(), p.step(), v).unwrap()
}

#[test]
fn mu_alpha_small_implies_rho_inf_small() {
    let g = grid(1.0 / 64.0, 1);
    let gp = GaugeParams::for_grid(2.0, &g).unwrap();
    let base = SampledPath::from_fn(g, 32, |t, o| o[0] = (3.0 * t).sin());
    let mut last = f64::INFINITY;
    for k in 1..=6 {
        let eps = 0.5f64.powi(k);
        // Same time, shifted history: μ_α ≍ eps² and ρ∞ = eps.
        let q = SampledPath::from_fn(g, 32, |t, o| o[0] = (3.0 * t).sin() + eps);
        let mu = eval_mu_alpha(&q, &base, &gp).unwrap();
        let r = rho_inf(&q, &base).unwrap();
        assert!(mu <= last);
        assert!(r <= 2.0 * mu.sqrt() + 1e-12);
        last = mu;
    }
}

#[test]
fn psi_constant_paths() {
    let g = grid(0.25, 1);
    let (a, b) = (0.7, -0.2);
    let p = SampledPath::constant(g, 0, &[a]);
    let q = SampledPath::constant(g, 0, &[b]);
    let d = a - b;
    assert!((eval_psi(&p, &q).unwrap() - 3.0 * d * d).abs() < 1e-12);
    assert!((grad1_psi(&p, &q).unwrap()[0] - 4.0 * d).abs() < 1e-12);
    assert_eq!(eval_psi(&p, &p).unwrap(), 0.0);
    assert_eq!(grad1_psi(&p, &p).unwrap(), vec![0.0]);
    assert_eq!(dt_psi(&p, &q).unwrap(), 0.0);
}

#[test]
fn psi_grad1_matches_difference_quotients() {
    let g = grid(1.0 / 1024.0, 2);
    let p = SampledPath::from_fn(g, 256, |t, o| {
        o[0] = (2.0 * t).cos();
        o[1] = t * t;
    });
    let q = SampledPath::from_fn(g, 512, |t, o| {
        o[0] = 0.5 * t;
        o[1] = (t - 0.2).abs();
    });
    let l = [0.8, -1.3];
    let grad = grad1_psi(&p, &q).unwrap();
    let want = grad[0] * l[0] + grad[1] * l[1];
    let z = straight_extension(&p, &l, 768).unwrap();
    let base = eval_psi(&p, &q).unwrap();
    let mut errs = Vec::new();
    for k in 4..=10 {
        let steps = 1024 >> k;
        let z_tau = restrict_steps(&z, 256 + steps).unwrap();
        let tau = steps as f64 / 1024.0;
        errs.push(((eval_psi(&z_tau, &q).unwrap() - base) / tau - want).abs());
    }
    // O(τ − t): the error shrinks roughly by half with each halving of the step.
    assert!(errs[errs.len() - 1] < 1e-2, "{errs:?}");
    for w in errs.windows(2) {
        assert!(w[1] <= 0.75 * w[0] + 1e-9, "{errs:?}");
    }
}

#[test]
fn probe_l2_gives_one() {
    let r = counterexample_probe(2.0, &default_probe_taus()).unwrap();
    assert!((r.limit - 1.0).abs() < 1e-3, "{r:?}");
    assert!(r.converged);
}

#[test]
fn probe_l4_gives_three_halves() {
    let r = counterexample_probe(4.0, &default_probe_taus()).unwrap();
    assert!((r.limit - 1.5).abs() < 1e-3, "{r:?}");
    assert!(r.converged);
}

#[test]
fn probe_time_direction_gives_zero() {
    let r = counterexample_probe(0.0, &default_probe_taus()).unwrap();
    assert!(r.limit.abs() < 1e-12, "{r:?}");
}

#[test]
fn probe_limits_depend_on_direction() {
    let a = counterexample_probe(2.0, &default_probe_taus()).unwrap().limit;
    let b = counterexample_probe(3.0, &default_probe_taus()).unwrap().limit;
    assert!((a - b).abs() > 10.0 * PROBE_TOL);
}

#[test]
fn probe_rejects_small_l() {
    assert!(counterexample_probe(1.0, &default_probe_taus()).is_err());
    assert!(counterexample_probe(0.5, &default_probe_taus()).is_err());
}

fn arb_path() -> impl Strategy<Value = SampledPath> {
    (0u64..u64::MAX, 0usize..=16).prop_map(|(seed, step)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_piecewise_affine(grid(1.0 / 16.0, 2), step, 4, 2.0, &mut rng)
    })
}

proptest! {
    #[test]
    fn psi_is_symmetric(p in arb_path(), q in arb_path()) {
        prop_assert_eq!(eval_psi(&p, &q).unwrap(), eval_psi(&q, &p).unwrap());
        prop_assert_eq!(grad2_psi(&p, &q).unwrap(), grad1_psi(&q, &p).unwrap());
    }

    #[test]
    fn v_bounds_hold(p in arb_path()) {
        let (lo, hi) = check_v_bounds(&p);
        prop_assert!(lo >= -1e-12 && hi >= -1e-12);
        prop_assert!(check_grad_v_bound(&p) >= -1e-12);
    }

    #[test]
    fn mu_alpha_nonnegative_and_zero_on_diagonal(p in arb_path(), q in arb_path()) {
        let gp = GaugeParams::new(2.0, 1.0).unwrap();
        prop_assert!(eval_mu_alpha(&p, &q, &gp).unwrap() >= 0.0);
        prop_assert_eq!(eval_mu_alpha(&p, &p, &gp).unwrap(), 0.0);
    }

    #[test]
    fn v_ci_expansion_has_order_one(seed in 0u64..u64::MAX, step in 0usize..512, l0 in -2.0f64..2.0, l1 in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_piecewise_affine(grid(1.0 / 1024.0, 2), step, 4, 2.0, &mut rng);
        let g = grad_v(&p).unwrap();
        let want = g[0] * l0 + g[1] * l1;
        let z = straight_extension(&p, &[l0, l1], 64).unwrap();
        let base = eval_v(&p);
        // err(τ) ≤ K τ over τ = 2⁻⁴..2⁻¹⁰; K covers the curvature of V for |x| ≤ 2, |l| ≤ 2√2.
        for k in [64usize, 32, 16, 8, 4, 2, 1] {
            let tau = k as f64 / 1024.0;
            let zt = restrict_steps(&z, p.step() + k).unwrap();
            let err = ((eval_v(&zt) - base) / tau - want).abs();
            prop_assert!(err <= 64.0 * tau, "tau {} err {}", tau, err);
        }
    }
}
