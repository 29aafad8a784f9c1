use pathhj_core::ci_calculus::{FnFunctional, Functional, Tags};
use pathhj_core::delay_control::{BellmanHamiltonian, DelayControlProblem, ValueFunctional, ValueMode};
use pathhj_core::hj_model::{FnHamiltonian, LinearHamiltonian, ZeroHamiltonian};
use pathhj_core::path_core::*;
use pathhj_core::solution_checkers::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> GridSpec {
    GridSpec::new(0.25, 1.0, 1.0 / 64.0, n).unwrap()
}

fn point(g: GridSpec, seed: u64) -> SampledPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = rng.gen_range(0..g.horizon_steps() / 2);
    random_piecewise_affine(g, step, 4, 1.0, &mut rng)
}

#[test]
fn criterion_ids_round_trip() {
    for id in CriterionId::ALL {
        assert_eq!(id.name().parse::<CriterionId>().unwrap(), id);
    }
    assert!("UX".parse::<CriterionId>().is_err());
    assert!(CriterionId::Um.is_upper() && !CriterionId::Lv.is_upper());
}

#[test]
fn constant_functional_with_zero_hamiltonian() {
    let g = grid(2);
    let phi = FnFunctional::new(|_: &SampledPath| 3.0, Tags::LIPSCHITZ);
    let h = ZeroHamiltonian { c_h: 1.0 };
    let c = Checker::new(&phi, &h, CheckConfig::new(1));
    let p = point(g, 1);
    let s = [0.0, 0.0];
    let tau = g.step_time(p.step() + 4);
    for id in CriterionId::ALL {
        let r = c.check(id, &p, &s, Some(tau)).unwrap();
        assert!(r.pass, "{id}: {}", r.margin);
        assert!(r.margin.abs() <= 1e-6, "{id}: {}", r.margin);
    }
    let r = c.check_upper_minimax(&p, tau, &s).unwrap();
    assert!(r.certified);
    // The constant extension is the first sampled characteristic and attains the minimum.
    assert!(r.witness.unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn decreasing_in_time_passes_upper_minimax() {
    let g = grid(1);
    let h = LinearHamiltonian::new(vec![0.5]);
    // sup |H(s)| = 0.5 |s| ≤ 1 for the s used below.
    let phi = FnFunctional::new(|p: &SampledPath| -2.0 * p.t(), Tags::LIPSCHITZ);
    let c = Checker::new(&phi, &h, CheckConfig::new(2));
    for seed in 0..5 {
        let p = point(g, seed);
        for s in [[0.0], [1.0], [-2.0]] {
            let r = c.check_upper_minimax(&p, g.step_time(p.step() + 8), &s).unwrap();
            assert!(r.margin <= 0.0, "{}", r.margin);
        }
    }
}

#[test]
fn stationary_affine_solves_zero_equation() {
    let g = grid(2);
    let a = [0.7, -0.2];
    let phi = FnFunctional::new(move |p: &SampledPath| a[0] * p.current()[0] + a[1] * p.current()[1], Tags::LIPSCHITZ);
    let h = ZeroHamiltonian { c_h: 1.0 };
    let c = Checker::new(&phi, &h, CheckConfig::new(3));
    let p = point(g, 7);
    let uv = c.check_upper_viscosity(&p).unwrap();
    assert!(!uv.vacuous);
    assert!(uv.margin.abs() <= 1e-6, "{}", uv.margin);
    let lv = c.check_lower_viscosity(&p).unwrap();
    assert!(lv.margin.abs() <= 1e-6, "{}", lv.margin);
    for id in [CriterionId::UmLip, CriterionId::UmMulti, CriterionId::UvInfext, CriterionId::UmD0] {
        let r = c.check(id, &p, &a, None).unwrap();
        assert!(r.margin.abs() <= 1e-9, "{id}: {}", r.margin);
    }
}

#[test]
fn concave_kink_has_vacuous_upper_viscosity() {
    let g = grid(1);
    let phi = FnFunctional::new(|p: &SampledPath| -p.current()[0].abs(), Tags::LIPSCHITZ);
    let h = ZeroHamiltonian { c_h: 1.0 };
    let c = Checker::new(&phi, &h, CheckConfig::new(4));
    let p = SampledPath::constant(g, 8, &[0.0]);
    let r = c.check_upper_viscosity(&p).unwrap();
    assert!(r.vacuous && r.pass);
    let l = c.check_lower_viscosity(&p).unwrap();
    assert!(!l.vacuous);
}

#[test]
fn lipschitz_only_criteria_refuse_untagged() {
    let g = grid(1);
    let phi = FnFunctional::new(|p: &SampledPath| p.current()[0], Tags::CONTINUOUS);
    let h = ZeroHamiltonian { c_h: 1.0 };
    let c = Checker::new(&phi, &h, CheckConfig::new(5));
    let p = point(g, 2);
    assert!(c.check_um_lip(&p, &[0.0]).is_err());
    assert!(c.check_upper_viscosity(&p).is_err());
    let rep = cross_validate(&c, &[p], &[vec![0.0]], &[TauChoice::Steps(2)], &CriterionId::ALL).unwrap();
    assert_eq!(rep.skipped, vec!["UV", "LV", "UM_LIP"]);
    assert_eq!(rep.upper_agree, None);
}

#[test]
fn tau_must_follow_point() {
    let g = grid(1);
    let phi = FnFunctional::new(|_: &SampledPath| 0.0, Tags::LIPSCHITZ);
    let h = ZeroHamiltonian { c_h: 1.0 };
    let c = Checker::new(&phi, &h, CheckConfig::new(6));
    let p = SampledPath::constant(g, 10, &[0.0]);
    assert!(c.check_upper_minimax(&p, p.t(), &[0.0]).is_err());
    assert!(c.check_lower_minimax(&p, 0.01, &[0.0]).is_err());
    assert!(c.check_upper_minimax(&p, g.step_time(11), &[0.0, 1.0]).is_err());
}

#[test]
fn s_grid_layout() {
    let s = default_s_grid(2, 3.0, 1);
    assert_eq!(s.len(), 1 + 8 + 4);
    assert_eq!(s[0], vec![0.0, 0.0]);
    for v in &s[9..] {
        assert!((v.iter().map(|c| c * c).sum::<f64>().sqrt() - 3.0).abs() < 1e-12);
    }
}

fn battery() -> Vec<(&'static str, Box<dyn Functional + Send>)> {
    let lip = Tags::LIPSCHITZ;
    vec![
        ("abs", Box::new(FnFunctional::new(|p: &SampledPath| p.current()[0].abs(), lip))),
        ("neg_abs", Box::new(FnFunctional::new(|p: &SampledPath| -p.current()[0].abs(), lip))),
        ("affine_t", Box::new(FnFunctional::new(|p: &SampledPath| 0.3 * p.t() - p.current()[0], lip))),
        ("sup", Box::new(FnFunctional::new(|p: &SampledPath| sup_norm(p), lip))),
        ("delayed", Box::new(FnFunctional::new(|p: &SampledPath| p.node(p.len() - 1 - p.grid().delay_steps())[0], lip))),
        ("sine", Box::new(FnFunctional::new(|p: &SampledPath| (2.0 * p.current()[0]).sin() + p.t(), lip))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ordering_chain_holds(seed in 0u64..1_000_000, si in 0usize..5, which in 0usize..6) {
        let g = GridSpec::new(0.25, 1.0, 1.0 / 32.0, 1).unwrap();
        let fs = battery();
        let h = FnHamiltonian::new(|p: &SampledPath, s: &[f64]| 0.5 * s[0].abs() - 0.2 * p.current()[0] * s[0], 1.0);
        let c = Checker::new(&*fs[which].1, &h, CheckConfig::new(seed));
        let p = point(g, seed);
        let s = default_s_grid(1, 1.0, seed)[si].clone();
        let multi = c.check_um_multi(&p, &s).unwrap();
        let d0 = c.check_um_d0(&p, &s).unwrap();
        let inf = c.check_uv_infext(&p, &s).unwrap();
        prop_assert!(d0.margin <= multi.margin + 1e-9, "{} d0 {} multi {}", fs[which].0, d0.margin, multi.margin);
        prop_assert!(inf.margin <= multi.margin + 1e-9, "{} infext {} multi {}", fs[which].0, inf.margin, multi.margin);
    }

    #[test]
    fn lipschitz_criterion_tracks_multi(seed in 0u64..1_000_000, si in 0usize..5, which in 0usize..6) {
        let g = GridSpec::new(0.25, 1.0, 1.0 / 32.0, 1).unwrap();
        let fs = battery();
        let h = ZeroHamiltonian { c_h: 1.0 };
        let c = Checker::new(&*fs[which].1, &h, CheckConfig::new(seed));
        let p = point(g, seed);
        let s = default_s_grid(1, 1.0, seed)[si].clone();
        let multi = c.check_um_multi(&p, &s).unwrap();
        let lip = c.check_um_lip(&p, &s).unwrap();
        prop_assert!((multi.margin - lip.margin).abs() <= 2e-2, "{} lip {} multi {}", fs[which].0, lip.margin, multi.margin);
    }
}

fn lattice_points(g: GridSpec, count: usize, seed: u64) -> Vec<SampledPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let step = rng.gen_range(0..g.horizon_steps());
            let raw = random_piecewise_affine(g, step, 3, 1.2, &mut rng);
            let x = raw.current()[0];
            let snapped = (x / g.dt()).round() * g.dt();
            let vals = raw.values().iter().map(|v| v + snapped - x).collect();
            SampledPath::from_flat(g, step, vals).unwrap()
        })
        .collect()
}

#[test]
fn integrator_value_passes_and_perturbations_fail_their_side() {
    let g = GridSpec::new(0.2, 1.0, 0.1, 1).unwrap();
    let prob = DelayControlProblem::integrator(g).unwrap();
    let vf = ValueFunctional::new(&prob, ValueMode::Exhaustive, 59049, Tags::LIPSCHITZ).unwrap();
    let h = BellmanHamiltonian::new(&prob);
    let w = ControlWitnesses { prob: &prob, mode: ValueMode::Exhaustive, budget: 59049 };
    let points = lattice_points(g, 6, 9);
    let s_grid = default_s_grid(1, 1.0, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pairs: Vec<(SampledPath, Vec<f64>)> =
        points.iter().map(|p| (p.clone(), s_grid[rng.gen_range(0..s_grid.len())].clone())).collect();
    let taus = [TauChoice::Steps(1), TauChoice::Steps(2), TauChoice::Time(0.5)];
    let c = Checker::new(&vf, &h, CheckConfig::new(9)).with_witnesses(&w);
    let rep = cross_validate_pairs(&c, &pairs, &taus, &CriterionId::ALL).unwrap();
    for s in &rep.summary {
        assert!(s.pass, "value {}: max margin {}", s.id, s.max_margin);
    }
    for (sign, upper_fails) in [(-1.0, true), (1.0, false)] {
        let vf = &vf;
        let pert = FnFunctional::new(move |p: &SampledPath| vf.eval(p) + sign * 0.5 * (1.0 - p.t()), Tags::LIPSCHITZ);
        let c = Checker::new(&pert, &h, CheckConfig::new(9)).with_witnesses(&w);
        let mut all = pairs.clone();
        for p in &points {
            all.push((p.clone(), vec![0.0]));
            all.push((p.clone(), vec![p.current()[0].signum()]));
        }
        let rep = cross_validate_pairs(&c, &all, &taus, &CriterionId::ALL).unwrap();
        for s in &rep.summary {
            assert_eq!(!s.pass, s.id.is_upper() == upper_fails, "sign {sign} {}: max margin {}", s.id, s.max_margin);
        }
    }
}
