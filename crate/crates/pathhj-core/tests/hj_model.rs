use pathhj_core::hj_model::*;
use pathhj_core::path_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> GridSpec {
    GridSpec::new(1.0, 1.0, 1.0 / 32.0, n).unwrap()
}

#[test]
fn linear_hamiltonian_has_no_violations() {
    let h = LinearHamiltonian::new(vec![0.6, -0.8]);
    let rep = validate_assumption_h(&h, &grid(2), 2000, 1);
    assert!(rep.passed(), "{:?}", rep.worst);
    assert_eq!(rep.samples, 2000);
    // H does not depend on (t, x), so the modulus table is flat zero.
    assert!(rep.modulus.iter().all(|r| r.max_dh == 0.0));
}

#[test]
fn norm_scaled_hamiltonian_is_tight_but_valid() {
    let h = NormScaledHamiltonian { c_h: 2.0 };
    let rep = validate_assumption_h(&h, &grid(3), 2000, 2);
    assert!(rep.passed(), "{:?}", rep.worst);
    let g = grid(1);
    let p = SampledPath::constant(g, 0, &[1.0]);
    // Equality case: r = 0.
    assert!((h.eval(&p, &[1.5]) - 2.0 * 2.0 * 1.5).abs() < 1e-15);
}

#[test]
fn understated_constant_is_reported() {
    let h = FnHamiltonian::new(|_: &SampledPath, s: &[f64]| 3.0 * s[0], 1.0);
    let rep = validate_assumption_h(&h, &grid(1), 500, 3);
    assert!(!rep.passed());
    assert!(rep.worst.len() <= 10);
    assert!(rep.worst.windows(2).all(|w| w[0].excess >= w[1].excess));
}

#[test]
fn modulus_table_shrinks_for_continuous_h() {
    let h = NormScaledHamiltonian { c_h: 1.0 };
    let rep = validate_assumption_h(&h, &grid(2), 512, 4);
    let first = &rep.modulus[0];
    let last = &rep.modulus[rep.modulus.len() - 1];
    assert!(last.max_dh < first.max_dh);
    assert!(last.max_rho_inf < first.max_rho_inf);
}

#[test]
fn ball_radius_examples() {
    let g = grid(1);
    assert_eq!(char_ball_radius(&SampledPath::constant(g, 0, &[0.0]), 1.5), 1.5);
    assert_eq!(char_ball_radius(&SampledPath::constant(g, 0, &[1.0]), 2.0), 4.0);
    let small = SampledPath::constant(g, 0, &[0.5]);
    let big = SampledPath::constant(g, 0, &[0.7]);
    assert!(char_ball_radius(&small, 1.0) < char_ball_radius(&big, 1.0));
}

#[test]
fn single_characteristic_is_the_constant_extension() {
    let g = grid(2);
    let p = SampledPath::constant(g, 5, &[0.3, 0.1]);
    let zs = sample_characteristics(&p, 1.0, 1, 0).unwrap();
    assert_eq!(zs.len(), 1);
    assert_eq!(zs[0], constant_extension_steps(&p, g.horizon_steps()).unwrap());
    assert!(sample_characteristics(&p, 1.0, 0, 0).is_err());
    let terminal = SampledPath::constant(g, g.horizon_steps(), &[0.0, 0.0]);
    assert!(sample_characteristics(&terminal, 1.0, 3, 0).is_err());
}

#[test]
fn gronwall_discrete_below_continuous() {
    for (sup, c, steps) in [(0.0, 1.0, 32usize), (2.0, 3.0, 10), (0.5, 0.1, 1000)] {
        let dt = 1.0 / steps as f64;
        assert!(gronwall_discrete(sup, c, dt, steps) <= gronwall_continuous(sup, c, 1.0) + 1e-12);
    }
}

#[test]
fn outward_motion_attains_discrete_gronwall_bound() {
    let g = grid(1);
    let p = SampledPath::constant(g, 0, &[1.0]);
    let zs = sample_characteristics(&p, 1.0, 4, 0).unwrap();
    // Constant, +R₀, −R₀, then the outward motion.
    let outward = &zs[3];
    let want = gronwall_discrete(1.0, 1.0, g.dt(), g.horizon_steps());
    assert!((sup_norm(outward) - want).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn characteristics_stay_in_lip_ch(seed in 0u64..u64::MAX, step in 0usize..31, c_h in 0.1f64..3.0, n in 1usize..=3) {
        let g = grid(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_piecewise_affine(g, step, 4, 2.0, &mut rng);
        let zs = sample_characteristics(&p, c_h, 24, seed).unwrap();
        prop_assert_eq!(zs.len(), 24);
        let span = g.t_end() - p.t();
        let bound = gronwall_discrete(sup_norm(&p), c_h, g.dt(), g.horizon_steps() - step);
        prop_assert!(bound <= gronwall_continuous(sup_norm(&p), c_h, span) + 1e-9);
        for z in &zs {
            prop_assert_eq!(restrict_steps(z, step).unwrap(), p.clone());
            prop_assert!(characteristic_excess(z, step, c_h) <= 1e-12);
            prop_assert!(sup_norm(z) <= bound + 1e-9);
        }
    }

    #[test]
    fn radius_follows_sup_norm_along_characteristics(seed in 0u64..u64::MAX, c_h in 0.1f64..2.0) {
        let g = grid(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_piecewise_affine(g, 4, 3, 1.0, &mut rng);
        for z in sample_characteristics(&p, c_h, 8, seed).unwrap() {
            let mut last = 0.0;
            for k in 4..=g.horizon_steps() {
                let r = char_ball_radius(&restrict_steps(&z, k).unwrap(), c_h);
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
