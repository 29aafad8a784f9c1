use pathhj_core::path_core::*;
use pathhj_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(dt: f64, n: usize) -> GridSpec {
    GridSpec::new(1.0, 1.0, dt, n).unwrap()
}

#[test]
fn grid_validation_names_fields() {
    assert!(matches!(GridSpec::new(0.0, 1.0, 0.25, 1), Err(Error::Grid { field: "h", .. })));
    assert!(matches!(GridSpec::new(1.0, 1.0, 0.3, 1), Err(Error::Grid { field: "dt", .. })));
    assert!(matches!(GridSpec::new(1.0, 1.0, 0.5, 1), Err(Error::Grid { field: "dt", .. })));
    assert!(matches!(GridSpec::new(1.0, 1.0, 0.25, 0), Err(Error::Grid { field: "n", .. })));
    let g = GridSpec::new(0.5, 2.0, 0.25, 3).unwrap();
    assert_eq!((g.delay_steps(), g.horizon_steps(), g.nodes()), (2, 8, 11));
}

#[test]
fn sup_norm_examples() {
    let g = grid(0.25, 1);
    assert_eq!(sup_norm(&SampledPath::constant(g, 2, &[0.0])), 0.0);
    assert_eq!(sup_norm(&SampledPath::constant(g, 2, &[-3.5])), 3.5);
    let ramp = SampledPath::from_fn(g, 4, |t, o| o[0] = t);
    assert_eq!(sup_norm(&ramp), 1.0);
}

#[test]
fn constant_extension_examples() {
    let g = grid(0.25, 1);
    let p = SampledPath::constant(g, 0, &[1.0]);
    let e = constant_extension(&p, 1.0).unwrap();
    assert!(e.values().iter().all(|v| *v == 1.0));
    assert_eq!(e.len(), g.nodes());
    let q = SampledPath::from_fn(g, 2, |t, o| o[0] = t * t);
    assert_eq!(constant_extension(&q, 0.5).unwrap(), q);
    assert!(constant_extension(&q, 0.25).is_err());
}

#[test]
fn y_star_restricted_and_extended_is_zero() {
    let g = grid(1.0 / 8.0, 1);
    let y = SampledPath::from_fn(g, g.horizon_steps(), |t, o| o[0] = t.max(0.0));
    let e = constant_extension(&restrict(&y, 0.0).unwrap(), 1.0).unwrap();
    assert!(e.values().iter().all(|v| *v == 0.0));
}

#[test]
fn restrict_examples() {
    let g = grid(0.125, 1);
    let z = SampledPath::from_fn(g, 8, |t, o| o[0] = 2.0 * t + 1.0);
    assert_eq!(restrict(&z, 1.0).unwrap(), z);
    assert!(restrict(&restrict(&z, 0.5).unwrap(), 0.75).is_err());
    // A monotone ramp restricted at 0.5 and refrozen.
    let f = constant_extension(&restrict(&z, 0.5).unwrap(), 1.0).unwrap();
    for i in 0..g.nodes() {
        let t = g.node_time(i);
        let want = 2.0 * t.min(0.5) + 1.0;
        assert!((f.node(i)[0] - want).abs() < 1e-15);
    }
}

#[test]
fn rho_examples() {
    let g = grid(0.25, 1);
    let z = SampledPath::constant(g, 0, &[0.0]);
    let c = SampledPath::constant(g, 0, &[-0.7]);
    assert_eq!(rho_inf(&z, &z).unwrap(), 0.0);
    assert!((rho_inf(&z, &c).unwrap() - 0.7).abs() < 1e-15);
    let shifted = SampledPath::constant(g, 3, &[0.0]);
    assert!((rho_inf(&z, &shifted).unwrap() - 0.75).abs() < 1e-15);
    assert_eq!(rho_1(&z, &z).unwrap(), 0.0);
    assert!((rho_1(&z, &c).unwrap() - 3.0 * 0.7).abs() < 1e-12);
}

#[test]
fn rho_rejects_mismatched_grids() {
    let a = SampledPath::constant(grid(0.25, 1), 0, &[0.0]);
    let b = SampledPath::constant(grid(0.125, 1), 0, &[0.0]);
    assert_eq!(rho_inf(&a, &b), Err(Error::GridMismatch));
    assert_eq!(rho_1(&a, &b), Err(Error::GridMismatch));
}

#[test]
fn rho_1_dominated_on_random_pairs() {
    let g = GridSpec::new(0.5, 2.0, 1.0 / 16.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 1.0 + g.t_end() + g.h();
    for i in 0..1000 {
        let p = random_piecewise_affine(g, i % 33, 4, 2.0, &mut rng);
        let q = random_piecewise_affine(g, (7 * i) % 33, 4, 2.0, &mut rng);
        assert!(rho_1(&p, &q).unwrap() <= k * rho_inf(&p, &q).unwrap() + 1e-12);
    }
}

#[test]
fn make_extension_examples() {
    let g = grid(0.25, 1);
    let p = SampledPath::from_fn(g, 1, |t, o| o[0] = t);
    let zero = make_extension(&p, &[0.0; 3]).unwrap();
    assert_eq!(zero, constant_extension(&p, 1.0).unwrap());
    let l = 1.5;
    let z = make_extension(&p, &[l; 3]).unwrap();
    for k in 1..=4 {
        let tau = g.step_time(k);
        assert!((z.node(g.delay_steps() + k)[0] - (0.25 + (tau - 0.25) * l)).abs() < 1e-15);
    }
    assert!(matches!(make_extension(&p, &[0.0; 2]), Err(Error::Length { .. })));
}

#[test]
fn sawtooth_extension() {
    let g = GridSpec::new(1.0, 1.0, 0.25, 2).unwrap();
    let p = SampledPath::constant(g, 0, &[0.0, 0.0]);
    let d = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
    let z = make_extension(&p, &d).unwrap();
    let row = |k: usize| z.node(g.delay_steps() + k)[0];
    assert_eq!([row(1), row(2), row(3), row(4)], [0.25, 0.0, 0.25, 0.0]);
    assert_eq!(sup_norm(&z), 0.25);
    assert_eq!(lipschitz_constant_from(&z, 0), 1.0);
}

#[test]
fn integrate_scalar_examples() {
    let g = GridSpec::new(1.0, 1.0, 1.0 / 128.0, 1).unwrap();
    let nodes: Vec<f64> = (0..g.nodes()).map(|i| g.node_time(i)).collect();
    let ones = vec![1.0; nodes.len()];
    assert!((integrate_scalar(&g, &ones, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    assert!((integrate_scalar(&g, &nodes, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
    let sq: Vec<f64> = nodes.iter().map(|t| t * t).collect();
    assert!((integrate_scalar(&g, &sq, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    assert!(integrate_scalar(&g, &ones, 0.5, 0.25).is_err());
}

fn arb_path(step_max: usize) -> impl Strategy<Value = SampledPath> {
    (0u64..u64::MAX, 0usize..=step_max).prop_map(|(seed, step)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_piecewise_affine(grid(1.0 / 16.0, 2), step, 5, 3.0, &mut rng)
    })
}

proptest! {
    #[test]
    fn metrics_symmetric_and_zero_on_diagonal(p in arb_path(16), q in arb_path(16)) {
        prop_assert_eq!(rho_inf(&p, &q).unwrap(), rho_inf(&q, &p).unwrap());
        prop_assert_eq!(rho_1(&p, &q).unwrap(), rho_1(&q, &p).unwrap());
        prop_assert_eq!(rho_inf(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(rho_1(&p, &p).unwrap(), 0.0);
        if p != q {
            prop_assert!(rho_inf(&p, &q).unwrap() > 0.0);
            prop_assert!(rho_1(&p, &q).unwrap() > 0.0);
        }
    }

    #[test]
    fn triangle_inequality(p in arb_path(16), q in arb_path(16), r in arb_path(16)) {
        prop_assert!(rho_inf(&p, &r).unwrap() <= rho_inf(&p, &q).unwrap() + rho_inf(&q, &r).unwrap() + 1e-9);
        prop_assert!(rho_1(&p, &r).unwrap() <= rho_1(&p, &q).unwrap() + rho_1(&q, &r).unwrap() + 1e-9);
    }

    #[test]
    fn rho_1_dominated(p in arb_path(16), q in arb_path(16)) {
        prop_assert!(rho_1(&p, &q).unwrap() <= 3.0 * rho_inf(&p, &q).unwrap() + 1e-12);
    }

    #[test]
    fn restrict_after_extension_is_identity(p in arb_path(16), extra in 0usize..16) {
        let to = (p.step() + extra).min(16);
        let e = constant_extension_steps(&p, to).unwrap();
        prop_assert_eq!(restrict_steps(&e, p.step()).unwrap(), p);
    }

    #[test]
    fn extension_respects_lipschitz_bound(p in arb_path(15), seed in 0u64..u64::MAX, lam in 0.0f64..3.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = 16 - p.step();
        let mut d = Vec::with_capacity(2 * steps);
        for _ in 0..steps {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
            let s = lam / (v[0] * v[0] + v[1] * v[1]).sqrt().max(1e-12);
            d.extend([v[0] * s.min(1e12), v[1] * s.min(1e12)]);
        }
        let z = make_extension(&p, &d).unwrap();
        let g = *z.grid();
        let start = g.delay_steps() + p.step();
        for i in start..g.nodes() {
            for j in i..g.nodes() {
                let gap = euclid(&[z.node(i)[0] - z.node(j)[0], z.node(i)[1] - z.node(j)[1]]);
                prop_assert!(gap <= lam * (j - i) as f64 * g.dt() + 1e-9);
            }
        }
    }

    #[test]
    fn g_alpha_is_monotone(p in arb_path(16), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        if p.in_g_alpha(a) {
            prop_assert!(p.in_g_alpha(a + b));
        }
    }
}
