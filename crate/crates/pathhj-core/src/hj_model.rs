//! Hamiltonians, a sampled report on their growth and continuity assumptions, the
//! characteristic ball `B_{c_H}` and sampled characteristic trajectories.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ci_calculus::stream_rng;
use crate::error::Error;
use crate::math::{abs, dist, dot, exp, norm, powi};
use crate::path_core::{random_piecewise_affine, rho_inf, sup_norm, GridSpec, SampledPath};

/// `H(t, x(·), s)` with its declared growth constant `c_H`.
pub trait Hamiltonian: Sync {
    fn eval(&self, p: &SampledPath, s: &[f64]) -> f64;

    /// `c_H` in `|H(t, x, s) − H(t, x, r)| ≤ c_H (1 + ‖x‖) ‖s − r‖`.
    fn c_h(&self) -> f64;
}

impl<T: Hamiltonian + ?Sized> Hamiltonian for &T {
    fn eval(&self, p: &SampledPath, s: &[f64]) -> f64 {
        (**self).eval(p, s)
    }

    fn c_h(&self) -> f64 {
        (**self).c_h()
    }
}

/// `H ≡ 0`; any positive `c_H` is admissible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroHamiltonian {
    pub c_h: f64,
}

impl Hamiltonian for ZeroHamiltonian {
    fn eval(&self, _: &SampledPath, _: &[f64]) -> f64 {
        0.0
    }

    fn c_h(&self) -> f64 {
        self.c_h
    }
}

/// `H(t, x, s) = ⟨s, b⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHamiltonian {
    pub b: Vec<f64>,
    pub c_h: f64,
}

impl LinearHamiltonian {
    /// `c_H = max(‖b‖, tiny)`, the smallest admissible constant.
    pub fn new(b: Vec<f64>) -> Self {
        let c_h = norm(&b).max(f64::MIN_POSITIVE);
        LinearHamiltonian { b, c_h }
    }
}

impl Hamiltonian for LinearHamiltonian {
    fn eval(&self, _: &SampledPath, s: &[f64]) -> f64 {
        dot(s, &self.b)
    }

    fn c_h(&self) -> f64 {
        self.c_h
    }
}

/// `H(t, x, s) = c_H (1 + ‖x‖) ‖s‖`, the equality case of the growth bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormScaledHamiltonian {
    pub c_h: f64,
}

impl Hamiltonian for NormScaledHamiltonian {
    fn eval(&self, p: &SampledPath, s: &[f64]) -> f64 {
        self.c_h * (1.0 + sup_norm(p)) * norm(s)
    }

    fn c_h(&self) -> f64 {
        self.c_h
    }
}

/// Closure-backed Hamiltonian.
pub struct FnHamiltonian<F> {
    f: F,
    c_h: f64,
}

impl<F: Fn(&SampledPath, &[f64]) -> f64 + Sync> FnHamiltonian<F> {
    pub fn new(f: F, c_h: f64) -> Self {
        FnHamiltonian { f, c_h }
    }
}

impl<F: Fn(&SampledPath, &[f64]) -> f64 + Sync> Hamiltonian for FnHamiltonian<F> {
    fn eval(&self, p: &SampledPath, s: &[f64]) -> f64 {
        (self.f)(p, s)
    }

    fn c_h(&self) -> f64 {
        self.c_h
    }
}

/// `c_H (1 + ‖x‖)`, the radius of `B_{c_H}(t, x)`.
pub fn char_ball_radius(p: &SampledPath, c_h: f64) -> f64 {
    c_h * (1.0 + sup_norm(p))
}

/// One sampled growth-bound violation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Violation {
    pub t: f64,
    pub sup_norm: f64,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    /// `|H(s) − H(r)| − c_H (1 + ‖x‖)‖s − r‖`.
    pub excess: f64,
}

/// One row of the sampled modulus of continuity in `(t, x)` at fixed `s`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ModulusRow {
    /// Perturbation scale used to build the pairs.
    pub scale: f64,
    /// Largest `ρ∞` among the pairs.
    pub max_rho_inf: f64,
    /// Largest `|H(p, s) − H(q, s)|` among the pairs.
    pub max_dh: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AssumptionReport {
    pub c_h: f64,
    pub samples: usize,
    pub violations: usize,
    /// Worst violators, largest excess first (at most ten).
    pub worst: Vec<Violation>,
    pub modulus: Vec<ModulusRow>,
    pub seed: u64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Sampled check of the growth bound `|H(p, s) − H(p, r)| ≤ c_H (1 + ‖x‖)‖s − r‖ + 1e-9` over
/// `budget` random triples, plus a table of `|ΔH|` against `ρ∞` for shrinking perturbations.
pub fn validate_assumption_h(h: &dyn Hamiltonian, grid: &GridSpec, budget: usize, seed: u64) -> AssumptionReport {
    let n = grid.n();
    let c_h = h.c_h();
    let mut rng = stream_rng(seed, 0x4841);
    let mut all = Vec::new();
    for _ in 0..budget {
        let step = rng.gen_range(0..=grid.horizon_steps());
        let amp = rng.gen_range(0.0..3.0);
        let p = random_piecewise_affine(*grid, step, 4, amp, &mut rng);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bound = c_h * (1.0 + sup_norm(&p)) * dist(&s, &r);
        let excess = abs(h.eval(&p, &s) - h.eval(&p, &r)) - bound;
        if excess > 1e-9 {
            all.push(Violation { t: p.t(), sup_norm: sup_norm(&p), s, r, excess });
        }
    }
    let violations = all.len();
    all.sort_by(|a, b| b.excess.total_cmp(&a.excess));
    all.truncate(10);
    let s_fixed: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let mut modulus = Vec::new();
    let pairs = (budget / 8).clamp(1, 64);
    for k in 1..=8 {
        let scale = powi(0.5, k);
        let mut row = ModulusRow { scale, max_rho_inf: 0.0, max_dh: 0.0 };
        for _ in 0..pairs {
            let step = rng.gen_range(0..=grid.horizon_steps());
            let p = random_piecewise_affine(*grid, step, 4, 1.0, &mut rng);
            let bump = random_piecewise_affine(*grid, step, 4, scale, &mut rng);
            let vals: Vec<f64> = p.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect();
            let q = SampledPath::from_flat(*grid, step, vals).expect("same shape");
            let r = rho_inf(&p, &q).expect("same grid");
            row.max_rho_inf = row.max_rho_inf.max(r);
            row.max_dh = row.max_dh.max(abs(h.eval(&p, &s_fixed) - h.eval(&q, &s_fixed)));
        }
        modulus.push(row);
    }
    AssumptionReport { c_h, samples: budget, violations, worst: all, modulus, seed }
}

/// Discrete bound on `‖z‖` after `steps` explicit steps with derivative norm at most
/// `c_H (1 + ‖z‖)`: `(1 + ‖x‖)(1 + c_H dt)^steps − 1`.
pub fn gronwall_discrete(sup: f64, c_h: f64, dt: f64, steps: usize) -> f64 {
    (1.0 + sup) * powi(1.0 + c_h * dt, steps as i32) - 1.0
}

/// Continuous bound `(1 + ‖x‖) e^{c_H (τ − t)} − 1`; never below [`gronwall_discrete`].
pub fn gronwall_continuous(sup: f64, c_h: f64, span: f64) -> f64 {
    (1.0 + sup) * exp(c_h * span) - 1.0
}

/// Extends `p` to `to_step` with `deriv(step, current state, local radius, out)`, clipping each
/// derivative to the radius `c_H (1 + ‖z_τ‖)` at the step's left node.
fn steer(p: &SampledPath, c_h: f64, to_step: usize, mut deriv: impl FnMut(usize, &[f64], f64, &mut [f64])) -> SampledPath {
    let n = p.grid().n();
    let dt = p.grid().dt();
    let mut z = p.clone();
    let mut sup = sup_norm(p);
    let mut cur = p.current().to_vec();
    let mut d = vec![0.0; n];
    for k in p.step()..to_step {
        let radius = c_h * (1.0 + sup);
        deriv(k, &cur, radius, &mut d);
        let len = norm(&d);
        if len > radius {
            d.iter_mut().for_each(|c| *c *= radius / len);
        }
        for (c, v) in cur.iter_mut().zip(&d) {
            *c += dt * v;
        }
        z.push_node(&cur);
        sup = sup.max(norm(&cur));
    }
    z
}

fn unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

/// Up to `count` extensions of `p` to `to_step` in `Lip_{c_H}`. In order: the constant
/// extension, straight lines `±R₀ eᵢ`, radially outward motion at full speed, straight lines in
/// random directions at `R₀ = c_H (1 + ‖x‖)`, and random piecewise-constant selections.
pub fn sample_characteristics_to(
    p: &SampledPath,
    c_h: f64,
    to_step: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SampledPath>, Error> {
    if count == 0 {
        return Err(Error::Argument("characteristic count must be positive"));
    }
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    if to_step <= p.step() || to_step > p.grid().horizon_steps() {
        return Err(Error::TimeOrder { what: "characteristics must end after the point and by T" });
    }
    if !(c_h > 0.0) || !c_h.is_finite() {
        return Err(Error::Argument("c_H must be finite and > 0"));
    }
    let n = p.grid().n();
    let r0 = char_ball_radius(p, c_h);
    let mut out = Vec::with_capacity(count);
    out.push(steer(p, c_h, to_step, |_, _, _, d| d.fill(0.0)));
    let mut lines: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for sgn in [1.0, -1.0] {
            let mut l = vec![0.0; n];
            l[i] = sgn * r0;
            lines.push(l);
        }
    }
    for l in &lines {
        if out.len() == count {
            return Ok(out);
        }
        out.push(steer(p, c_h, to_step, |_, _, _, d| d.copy_from_slice(l)));
    }
    if out.len() < count {
        // Outward at the local radius: the extremal growth the Grönwall bound allows.
        let fallback = lines[0].clone();
        out.push(steer(p, c_h, to_step, |_, x, r, d| {
            let len = norm(x);
            if len > 0.0 {
                d.iter_mut().zip(x).for_each(|(o, c)| *o = c * r / len);
            } else {
                d.iter_mut().zip(&fallback).for_each(|(o, c)| *o = c / r0 * r);
            }
        }));
    }
    let mut rng = stream_rng(seed, 0x6368);
    let randoms = count.saturating_sub(out.len());
    let n_lines = randoms / 2;
    for _ in 0..n_lines {
        let l: Vec<f64> = unit(n, &mut rng).into_iter().map(|c| c * r0).collect();
        out.push(steer(p, c_h, to_step, |_, _, _, d| d.copy_from_slice(&l)));
    }
    while out.len() < count {
        let mut dir = unit(n, &mut rng);
        let mut frac: f64 = rng.gen_range(0.0..=1.0);
        let z = steer(p, c_h, to_step, |_, _, r, d| {
            if rng.gen_bool(0.2) {
                dir = unit(n, &mut rng);
                frac = rng.gen_range(0.0..=1.0);
            }
            d.iter_mut().zip(&dir).for_each(|(o, c)| *o = c * frac * r);
        });
        out.push(z);
    }
    Ok(out)
}

/// [`sample_characteristics_to`] with every extension reaching `T`.
pub fn sample_characteristics(p: &SampledPath, c_h: f64, count: usize, seed: u64) -> Result<Vec<SampledPath>, Error> {
    sample_characteristics_to(p, c_h, p.grid().horizon_steps(), count, seed)
}

/// Largest per-step `‖ż‖ − c_H (1 + ‖z_τ‖)` along `z` after the point's step; `≤ 0` means `z`
/// stays in `Lip_{c_H}` under the left-node convention.
pub fn characteristic_excess(z: &SampledPath, from_step: usize, c_h: f64) -> f64 {
    let g = z.grid();
    let dt = g.dt();
    let start = g.delay_steps() + from_step;
    let mut sup = (0..=start).map(|i| norm(z.node(i))).fold(0.0, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for i in start..z.len() - 1 {
        let speed = dist(z.node(i + 1), z.node(i)) / dt;
        worst = worst.max(speed - c_h * (1.0 + sup));
        sup = sup.max(norm(z.node(i + 1)));
    }
    worst
}
