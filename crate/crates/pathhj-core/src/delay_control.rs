//! Time-delay optimal control with a finite control set: explicit-Euler motions, trapezoid
//! costs, the value functional by exhaustive enumeration (or beam search), the Bellman
//! Hamiltonian, a dynamic-programming residual and regularity diagnostics.
//!
//! Controls are piecewise constant on grid steps. A signal is one index into `U` per step of
//! `[t, T]`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::ci_calculus::{stream_rng, Functional, Tags};
use crate::error::Error;
use crate::hj_model::{gronwall_discrete, Hamiltonian};
use crate::math::{abs, dot, lex_cmp, norm};
use crate::par::map_indexed;
use crate::path_core::{random_piecewise_affine, rho_1, sup_norm, GridSpec, SampledPath};

/// Right-hand side `f(τ, z_τ(·), u)`.
pub trait Dynamics: Sync {
    fn eval(&self, z: &SampledPath, u: &[f64], out: &mut [f64]);

    /// `(n, m)` when the builtin fixes them.
    fn dims(&self) -> Option<(usize, usize)> {
        None
    }
}

/// Running cost `χ(τ, z_τ(·), u)`.
pub trait RunningCost: Sync {
    fn eval(&self, z: &SampledPath, u: &[f64]) -> f64;
}

/// Terminal cost `σ(z(·))` of a path on `[-h, T]`.
pub trait TerminalCost: Sync {
    fn eval(&self, z: &SampledPath) -> f64;

    /// Declared `ρ₁`-Lipschitz continuity; enables the Lipschitz fit of the regularity report.
    fn rho1_lipschitz(&self) -> bool {
        false
    }
}

/// `f = A₀ z(τ) + A₁ z(τ − h) + B u`, matrices row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDelay {
    n: usize,
    m: usize,
    a0: Vec<f64>,
    a1: Vec<f64>,
    b: Vec<f64>,
}

impl LinearDelay {
    pub fn new(n: usize, m: usize, a0: Vec<f64>, a1: Vec<f64>, b: Vec<f64>) -> Result<Self, Error> {
        if a0.len() != n * n {
            return Err(Error::Length { what: "A0", expected: n * n, got: a0.len() });
        }
        if a1.len() != n * n {
            return Err(Error::Length { what: "A1", expected: n * n, got: a1.len() });
        }
        if b.len() != n * m {
            return Err(Error::Length { what: "B", expected: n * m, got: b.len() });
        }
        Ok(LinearDelay { n, m, a0, a1, b })
    }

    /// Induced 2-norm bounds would be tighter; Frobenius norms keep this simple and valid.
    pub fn growth_constant(&self, controls: &[Vec<f64>]) -> f64 {
        let fro = |a: &[f64]| norm(a);
        let umax = controls.iter().map(|u| norm(u)).fold(0.0, f64::max);
        fro(&self.a0) + fro(&self.a1) + fro(&self.b) * umax
    }
}

impl Dynamics for LinearDelay {
    fn eval(&self, z: &SampledPath, u: &[f64], out: &mut [f64]) {
        let lag = z.len() - 1 - z.grid().delay_steps();
        let (now, past) = (z.current(), z.node(lag));
        for (i, o) in out.iter_mut().enumerate() {
            let r0 = &self.a0[i * self.n..(i + 1) * self.n];
            let r1 = &self.a1[i * self.n..(i + 1) * self.n];
            let rb = &self.b[i * self.m..(i + 1) * self.m];
            *o = dot(r0, now) + dot(r1, past) + dot(rb, u);
        }
    }

    fn dims(&self) -> Option<(usize, usize)> {
        Some((self.n, self.m))
    }
}

/// `ż = u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrator {
    pub n: usize,
}

impl Dynamics for Integrator {
    fn eval(&self, _: &SampledPath, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }

    fn dims(&self) -> Option<(usize, usize)> {
        Some((self.n, self.n))
    }
}

/// `f ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Still;

impl Dynamics for Still {
    fn eval(&self, _: &SampledPath, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

pub struct FnDynamics<F>(pub F);

impl<F: Fn(&SampledPath, &[f64], &mut [f64]) + Sync> Dynamics for FnDynamics<F> {
    fn eval(&self, z: &SampledPath, u: &[f64], out: &mut [f64]) {
        (self.0)(z, u, out)
    }
}

/// `χ ≡ c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstCost(pub f64);

impl RunningCost for ConstCost {
    fn eval(&self, _: &SampledPath, _: &[f64]) -> f64 {
        self.0
    }
}

pub struct FnRunning<F>(pub F);

impl<F: Fn(&SampledPath, &[f64]) -> f64 + Sync> RunningCost for FnRunning<F> {
    fn eval(&self, z: &SampledPath, u: &[f64]) -> f64 {
        (self.0)(z, u)
    }
}

/// `σ = ‖z(T)‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormTerminal;

impl TerminalCost for NormTerminal {
    fn eval(&self, z: &SampledPath) -> f64 {
        norm(z.current())
    }

    fn rho1_lipschitz(&self) -> bool {
        true
    }
}

/// `σ = ‖z(T)‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticTerminal;

impl TerminalCost for QuadraticTerminal {
    fn eval(&self, z: &SampledPath) -> f64 {
        dot(z.current(), z.current())
    }
}

/// `σ = 1` if `z_c(ξ) > 0` at the step `step`, else `0`. Discontinuous in `ρ₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorTerminal {
    pub step: usize,
    pub coord: usize,
}

impl TerminalCost for IndicatorTerminal {
    fn eval(&self, z: &SampledPath) -> f64 {
        let i = z.grid().delay_steps() + self.step;
        if z.node(i)[self.coord] > 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

pub struct FnTerminal<F>(pub F);

impl<F: Fn(&SampledPath) -> f64 + Sync> TerminalCost for FnTerminal<F> {
    fn eval(&self, z: &SampledPath) -> f64 {
        (self.0)(z)
    }
}

/// Dynamics, costs, finite control set and grid.
pub struct DelayControlProblem {
    grid: GridSpec,
    controls: Vec<Vec<f64>>,
    f: Box<dyn Dynamics>,
    chi: Box<dyn RunningCost>,
    sigma: Box<dyn TerminalCost>,
    c_fchi: f64,
}

impl core::fmt::Debug for DelayControlProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("DelayControlProblem")
            .field("grid", &self.grid)
            .field("controls", &self.controls)
            .field("c_fchi", &self.c_fchi)
            .finish_non_exhaustive()
    }
}

impl DelayControlProblem {
    pub fn new(
        grid: GridSpec,
        controls: Vec<Vec<f64>>,
        f: Box<dyn Dynamics>,
        chi: Box<dyn RunningCost>,
        sigma: Box<dyn TerminalCost>,
        c_fchi: f64,
    ) -> Result<Self, Error> {
        let m = controls.first().ok_or(Error::Empty("control set U"))?.len();
        if let Some(u) = controls.iter().find(|u| u.len() != m) {
            return Err(Error::Length { what: "control vector", expected: m, got: u.len() });
        }
        if controls.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Argument("control vectors must be finite"));
        }
        if controls.len() > u8::MAX as usize + 1 {
            return Err(Error::Argument("at most 256 controls"));
        }
        if let Some((n, fm)) = f.dims() {
            if n != grid.n() {
                return Err(Error::Length { what: "dynamics state dimension", expected: grid.n(), got: n });
            }
            if fm != m {
                return Err(Error::Length { what: "dynamics control dimension", expected: m, got: fm });
            }
        }
        if !(c_fchi > 0.0) || !c_fchi.is_finite() {
            return Err(Error::Argument("c_fchi must be finite and > 0"));
        }
        Ok(DelayControlProblem { grid, controls, f, chi, sigma, c_fchi })
    }

    /// `ż = u`, `U = {−1, 0, 1}`, `χ ≡ 0`, `σ = |z(T)|` on a scalar grid.
    pub fn integrator(grid: GridSpec) -> Result<Self, Error> {
        if grid.n() != 1 {
            return Err(Error::Grid { field: "n", reason: "the integrator problem is scalar" });
        }
        Self::new(
            grid,
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            Box::new(Integrator { n: 1 }),
            Box::new(ConstCost(0.0)),
            Box::new(NormTerminal),
            1.0,
        )
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn c_fchi(&self) -> f64 {
        self.c_fchi
    }

    pub fn sigma(&self) -> &dyn TerminalCost {
        &*self.sigma
    }

    fn check_point(&self, p: &SampledPath) -> Result<(), Error> {
        if *p.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn check_signal(&self, p: &SampledPath, u: &[usize]) -> Result<(), Error> {
        let steps = self.grid.horizon_steps() - p.step();
        if u.len() != steps {
            return Err(Error::Length { what: "control signal", expected: steps, got: u.len() });
        }
        if u.iter().any(|&i| i >= self.controls.len()) {
            return Err(Error::Argument("control index out of range"));
        }
        Ok(())
    }

    /// One Euler step under control `c`; returns the trapezoid running-cost increment.
    fn step(&self, z: &mut SampledPath, c: usize, buf: &mut [f64]) -> f64 {
        let u = &self.controls[c];
        let dt = self.grid.dt();
        self.f.eval(z, u, buf);
        let left = self.chi.eval(z, u);
        for (b, x) in buf.iter_mut().zip(z.current()) {
            *b = x + dt * *b;
        }
        z.push_node(buf);
        let right = self.chi.eval(z, u);
        0.5 * dt * (left + right)
    }
}

/// Motion from `p` under the signal `u`, on `[-h, T]`.
pub fn integrate_motion(prob: &DelayControlProblem, p: &SampledPath, u: &[usize]) -> Result<SampledPath, Error> {
    prob.check_point(p)?;
    prob.check_signal(p, u)?;
    let mut z = p.clone();
    let mut buf = vec![0.0; prob.grid.n()];
    for &c in u {
        prob.step(&mut z, c, &mut buf);
    }
    Ok(z)
}

/// `σ(z) + ∫_t^T χ` along the motion, summed left to right.
pub fn cost(prob: &DelayControlProblem, p: &SampledPath, u: &[usize]) -> Result<f64, Error> {
    prob.check_point(p)?;
    prob.check_signal(p, u)?;
    let (acc, z) = run_signal(prob, p, u);
    Ok(acc + prob.sigma.eval(&z))
}

fn run_signal(prob: &DelayControlProblem, p: &SampledPath, u: &[usize]) -> (f64, SampledPath) {
    let mut z = p.clone();
    let mut buf = vec![0.0; prob.grid.n()];
    let mut acc = 0.0;
    for &c in u {
        acc += prob.step(&mut z, c, &mut buf);
    }
    (acc, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum ValueMode {
    /// All `|U|^steps` signals; the oracle.
    Exhaustive,
    /// Beam search of the given width followed by coordinate descent; an upper bound.
    Beam { width: usize },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ValueResult {
    pub value: f64,
    pub witness: Vec<usize>,
    pub mode: ValueMode,
    /// `true` for exhaustive enumeration; beam values are upper bounds.
    pub exact: bool,
    /// Complete signals whose cost was evaluated.
    pub signals: u128,
}

fn signal_count(controls: usize, steps: usize) -> u128 {
    (controls as u128).saturating_pow(steps as u32)
}

/// Errors unless `|U|^steps ≤ budget`.
pub fn check_budget(prob: &DelayControlProblem, steps: usize, budget: u128) -> Result<u128, Error> {
    let needed = signal_count(prob.controls.len(), steps);
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    Ok(needed)
}

struct Best {
    value: f64,
    signal: Vec<usize>,
}

impl Best {
    fn offer(&mut self, value: f64, signal: &[usize]) {
        // Depth-first order visits signals lexicographically, so strict `<` keeps the
        // lowest-index optimum.
        if value < self.value || (self.value.is_nan() && !value.is_nan()) {
            self.value = value;
            self.signal.clear();
            self.signal.extend_from_slice(signal);
        }
    }
}

fn dfs(
    prob: &DelayControlProblem,
    z: &mut SampledPath,
    remaining: usize,
    acc: f64,
    signal: &mut Vec<usize>,
    buf: &mut [f64],
    best: &mut Best,
) {
    if remaining == 0 {
        best.offer(acc + prob.sigma.eval(z), signal);
        return;
    }
    let here = z.step();
    for c in 0..prob.controls.len() {
        let inc = prob.step(z, c, buf);
        signal.push(c);
        dfs(prob, z, remaining - 1, acc + inc, signal, buf, best);
        signal.pop();
        z.truncate_to_step(here);
    }
}

/// Exhaustive minimum over all signals from `p`, starting from a running-cost prefix `acc`.
fn exhaustive(prob: &DelayControlProblem, p: &SampledPath, acc0: f64) -> (f64, Vec<usize>) {
    let steps = prob.grid.horizon_steps() - p.step();
    if steps == 0 {
        return (acc0 + prob.sigma.eval(p), Vec::new());
    }
    let branches = map_indexed(prob.controls.len(), |c| {
        let mut z = p.clone();
        let mut buf = vec![0.0; prob.grid.n()];
        let inc = prob.step(&mut z, c, &mut buf);
        let mut signal = vec![c];
        let mut best = Best { value: f64::NAN, signal: Vec::new() };
        dfs(prob, &mut z, steps - 1, acc0 + inc, &mut signal, &mut buf, &mut best);
        best
    });
    let mut best = Best { value: f64::NAN, signal: Vec::new() };
    for b in branches {
        best.offer(b.value, &b.signal);
    }
    (best.value, best.signal)
}

fn beam(prob: &DelayControlProblem, p: &SampledPath, width: usize) -> (f64, Vec<usize>, u128) {
    let steps = prob.grid.horizon_steps() - p.step();
    let mut frontier: Vec<(f64, Vec<usize>, SampledPath)> = vec![(0.0, Vec::new(), p.clone())];
    let mut buf = vec![0.0; prob.grid.n()];
    for _ in 0..steps {
        let mut next = Vec::with_capacity(frontier.len() * prob.controls.len());
        for (acc, sig, z) in &frontier {
            for c in 0..prob.controls.len() {
                let mut z2 = z.clone();
                let inc = prob.step(&mut z2, c, &mut buf);
                let mut s2 = sig.clone();
                s2.push(c);
                next.push((acc + inc, s2, z2));
            }
        }
        next.sort_by(|a, b| match a.0.total_cmp(&b.0) {
            Ordering::Equal => a.1.cmp(&b.1),
            o => o,
        });
        next.truncate(width);
        frontier = next;
    }
    let mut evaluated = frontier.len() as u128;
    let (mut value, mut signal) = frontier
        .into_iter()
        .map(|(acc, s, z)| (acc + prob.sigma.eval(&z), s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .expect("beam keeps at least one prefix");
    // Coordinate descent on the winner.
    let mut improved = true;
    while improved {
        improved = false;
        for k in 0..signal.len() {
            for c in 0..prob.controls.len() {
                if c == signal[k] {
                    continue;
                }
                let mut cand = signal.clone();
                cand[k] = c;
                let (acc, z) = run_signal(prob, p, &cand);
                let v = acc + prob.sigma.eval(&z);
                evaluated += 1;
                let lex = lex_cmp(
                    &cand.iter().map(|&i| i as f64).collect::<Vec<_>>(),
                    &signal.iter().map(|&i| i as f64).collect::<Vec<_>>(),
                );
                if v < value || (v == value && lex == Ordering::Less) {
                    value = v;
                    signal = cand;
                    improved = true;
                }
            }
        }
    }
    (value, signal, evaluated)
}

/// The value functional `inf_u J(t, x, u)` over piecewise-constant signals.
pub fn value(prob: &DelayControlProblem, p: &SampledPath, mode: ValueMode, budget: u128) -> Result<ValueResult, Error> {
    prob.check_point(p)?;
    let steps = prob.grid.horizon_steps() - p.step();
    match mode {
        ValueMode::Exhaustive => {
            let signals = check_budget(prob, steps, budget)?;
            let (value, witness) = exhaustive(prob, p, 0.0);
            Ok(ValueResult { value, witness, mode, exact: true, signals })
        }
        ValueMode::Beam { width } => {
            if width == 0 {
                return Err(Error::Argument("beam width must be positive"));
            }
            let (value, witness, signals) = beam(prob, p, width);
            Ok(ValueResult { value, witness, mode, exact: false, signals })
        }
    }
}

/// `|value(p) − min over signals u on [t, τ) of [∫_t^τ χ + value(τ, z_τ)]|`.
pub fn dpp_residual(prob: &DelayControlProblem, p: &SampledPath, tau: f64, mode: ValueMode, budget: u128) -> Result<f64, Error> {
    prob.check_point(p)?;
    let k = prob.grid.step_of_named(tau, "tau")?;
    if k <= p.step() {
        return Err(Error::TimeOrder { what: "tau must follow the point's time" });
    }
    let total = prob.grid.horizon_steps() - p.step();
    if mode == ValueMode::Exhaustive {
        check_budget(prob, total, budget)?;
    }
    let direct = value(prob, p, mode, budget)?.value;
    let prefix = k - p.step();
    let count = signal_count(prob.controls.len(), prefix) as usize;
    let m = prob.controls.len();
    let tails = map_indexed(count, |idx| {
        let mut sig = vec![0usize; prefix];
        let mut rest = idx;
        for s in sig.iter_mut().rev() {
            *s = rest % m;
            rest /= m;
        }
        let mut z = p.clone();
        let mut buf = vec![0.0; prob.grid.n()];
        let mut acc = 0.0;
        for &c in &sig {
            acc += prob.step(&mut z, c, &mut buf);
        }
        value(prob, &z, mode, budget).map(|v| acc + v.value)
    });
    let mut best = f64::INFINITY;
    for t in tails {
        best = best.min(t?);
    }
    Ok(abs(direct - best))
}

/// `H(t, x, s) = min_{u ∈ U} ⟨s, f(t, x, u)⟩ + χ(t, x, u)`, with `c_H = c_{f,χ}`.
pub struct BellmanHamiltonian<'a> {
    prob: &'a DelayControlProblem,
}

impl<'a> BellmanHamiltonian<'a> {
    pub fn new(prob: &'a DelayControlProblem) -> Self {
        BellmanHamiltonian { prob }
    }
}

pub fn bellman_h(prob: &DelayControlProblem, p: &SampledPath, s: &[f64]) -> f64 {
    let mut buf = vec![0.0; prob.grid.n()];
    prob.controls
        .iter()
        .map(|u| {
            prob.f.eval(p, u, &mut buf);
            dot(s, &buf) + prob.chi.eval(p, u)
        })
        .fold(f64::INFINITY, f64::min)
}

impl Hamiltonian for BellmanHamiltonian<'_> {
    fn eval(&self, p: &SampledPath, s: &[f64]) -> f64 {
        bellman_h(self.prob, p, s)
    }

    fn c_h(&self) -> f64 {
        self.prob.c_fchi
    }
}

/// `ẋ`-extension of the optimal motion from `p` over its first `steps` steps, row-major
/// per-step derivatives; the natural witness for minimax checks.
pub fn optimal_motion_derivs(prob: &DelayControlProblem, p: &SampledPath, witness: &[usize], steps: usize) -> Result<Vec<f64>, Error> {
    let z = integrate_motion(prob, p, witness)?;
    let n = prob.grid.n();
    let dt = prob.grid.dt();
    let start = prob.grid.delay_steps() + p.step();
    let mut out = Vec::with_capacity(steps * n);
    for i in start..start + steps.min(witness.len()) {
        for c in 0..n {
            out.push((z.node(i + 1)[c] - z.node(i)[c]) / dt);
        }
    }
    Ok(out)
}

/// The value functional as a [`Functional`]. The enumeration budget is checked once, at the
/// earliest time, when constructing.
pub struct ValueFunctional<'a> {
    prob: &'a DelayControlProblem,
    mode: ValueMode,
    budget: u128,
    tags: Tags,
}

impl<'a> ValueFunctional<'a> {
    pub fn new(prob: &'a DelayControlProblem, mode: ValueMode, budget: u128, tags: Tags) -> Result<Self, Error> {
        if mode == ValueMode::Exhaustive {
            check_budget(prob, prob.grid.horizon_steps(), budget)?;
        }
        Ok(ValueFunctional { prob, mode, budget, tags })
    }

    pub fn problem(&self) -> &DelayControlProblem {
        self.prob
    }

    pub fn result(&self, p: &SampledPath) -> Result<ValueResult, Error> {
        value(self.prob, p, self.mode, self.budget)
    }
}

impl Functional for ValueFunctional<'_> {
    /// NaN for points on a different grid.
    fn eval(&self, p: &SampledPath) -> f64 {
        value(self.prob, p, self.mode, self.budget).map(|r| r.value).unwrap_or(f64::NAN)
    }

    fn tags(&self) -> Tags {
        self.tags
    }
}

/// Sampled check of `‖f‖ + |χ| ≤ c_{f,χ}(1 + ‖x‖)`; returns the worst excess (`≤ 1e-9` passes).
pub fn growth_excess(prob: &DelayControlProblem, samples: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0x6766);
    let mut buf = vec![0.0; prob.grid.n()];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let step = rng.gen_range(0..=prob.grid.horizon_steps());
        let amp = rng.gen_range(0.0..3.0);
        let p = random_piecewise_affine(prob.grid, step, 4, amp, &mut rng);
        for u in &prob.controls {
            prob.f.eval(&p, u, &mut buf);
            let lhs = norm(&buf) + abs(prob.chi.eval(&p, u));
            worst = worst.max(lhs - prob.c_fchi * (1.0 + sup_norm(&p)));
        }
    }
    worst
}

/// Pair statistics at one perturbation scale.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ModulusBin {
    pub scale: f64,
    /// `(ρ₁, |Δvalue|)` per pair.
    pub pairs: Vec<(f64, f64)>,
    /// `max |Δvalue| / ρ₁` over pairs with `ρ₁ > 0`.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct RegularityReport {
    pub alpha: f64,
    /// Largest sup-norm over the sampled motions.
    pub alpha_star: f64,
    /// `(1 + α)(1 + c dt)^steps − 1` for the longest horizon sampled.
    pub gronwall_bound: f64,
    pub within_gronwall: bool,
    pub bins: Vec<ModulusBin>,
    /// Largest ratio `|Δvalue| / ρ₁` reached by bisecting the pairs of the coarsest bin.
    pub bisection_ratio: f64,
    /// Bisection drove the ratio above eight times the largest coarse-scale ratio.
    pub modulus_violation: bool,
    /// Present when σ is declared `ρ₁`-Lipschitz: `1.25 ×` the largest ratio over even-indexed
    /// pairs, checked against the odd-indexed ones.
    pub lambda: Option<f64>,
    pub outliers: usize,
    pub seed: u64,
}

fn normalized_start(grid: GridSpec, alpha: f64, rng: &mut rand_chacha::ChaCha8Rng) -> SampledPath {
    let step = rng.gen_range(0..grid.horizon_steps());
    let raw = random_piecewise_affine(grid, step, 4, 1.0, rng);
    let s = sup_norm(&raw);
    let k = if s > 0.0 { alpha / s } else { 0.0 };
    let vals = raw.values().iter().map(|v| v * k).collect();
    SampledPath::from_flat(grid, step, vals).expect("same shape")
}

fn perturbed(p: &SampledPath, scale: f64, rng: &mut rand_chacha::ChaCha8Rng) -> SampledPath {
    let bump = random_piecewise_affine(*p.grid(), p.step(), 3, scale, rng);
    let vals = p.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect();
    SampledPath::from_flat(*p.grid(), p.step(), vals).expect("same shape")
}

fn midpoint(p: &SampledPath, q: &SampledPath) -> SampledPath {
    let vals = p.values().iter().zip(q.values()).map(|(a, b)| 0.5 * (a + b)).collect();
    SampledPath::from_flat(*p.grid(), p.step(), vals).expect("same shape")
}

/// Growth, modulus and Lipschitz diagnostics of the exhaustive value functional.
///
/// `budget` bounds the signals enumerated per start for the growth estimate (random signals
/// beyond it) and the number of sampled pairs per scale.
pub fn regularity_report(prob: &DelayControlProblem, alpha: f64, budget: usize, seed: u64) -> Result<RegularityReport, Error> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Argument("alpha must be finite and > 0"));
    }
    if budget == 0 {
        return Err(Error::Argument("sample budget must be positive"));
    }
    let grid = prob.grid;
    let total = check_budget(prob, grid.horizon_steps(), u128::MAX)?;
    let vbudget = total;
    let mut rng = stream_rng(seed, 0x7267);
    let starts = 8;
    let mut alpha_star: f64 = 0.0;
    let mut longest = 0;
    let m = prob.controls.len();
    for _ in 0..starts {
        let p = normalized_start(grid, alpha, &mut rng);
        let steps = grid.horizon_steps() - p.step();
        longest = longest.max(steps);
        alpha_star = alpha_star.max(sup_norm(&p));
        let count = signal_count(m, steps);
        let signals: Vec<Vec<usize>> = if count <= budget as u128 {
            (0..count as usize)
                .map(|idx| {
                    let mut sig = vec![0usize; steps];
                    let mut rest = idx;
                    for s in sig.iter_mut().rev() {
                        *s = rest % m;
                        rest /= m;
                    }
                    sig
                })
                .collect()
        } else {
            (0..budget).map(|_| (0..steps).map(|_| rng.gen_range(0..m)).collect()).collect()
        };
        let sups = map_indexed(signals.len(), |i| sup_norm(&run_signal(prob, &p, &signals[i]).1));
        alpha_star = sups.into_iter().fold(alpha_star, f64::max);
    }
    let gronwall_bound = gronwall_discrete(alpha, prob.c_fchi, grid.dt(), longest);
    let val = |p: &SampledPath| value(prob, p, ValueMode::Exhaustive, vbudget).map(|r| r.value);
    let pairs_per_bin = budget.clamp(2, 32);
    let mut bins = Vec::new();
    let mut coarse_pairs = Vec::new();
    for k in 1..=6 {
        let scale = 1.0 / (1u64 << k) as f64;
        let mut made = Vec::with_capacity(pairs_per_bin);
        for _ in 0..pairs_per_bin {
            let p = normalized_start(grid, alpha, &mut rng);
            let q = perturbed(&p, scale, &mut rng);
            made.push((p, q));
        }
        let stats = map_indexed(made.len(), |i| {
            let (p, q) = &made[i];
            Ok::<_, Error>((rho_1(p, q)?, abs(val(p)? - val(q)?)))
        });
        let pairs = stats.into_iter().collect::<Result<Vec<_>, _>>()?;
        let max_ratio = ratio_of(&pairs);
        if k == 1 {
            coarse_pairs = made;
        }
        bins.push(ModulusBin { scale, pairs, max_ratio });
    }
    let coarse_ratio = bins[0].max_ratio;
    let bisected = map_indexed(coarse_pairs.len(), |i| {
        let (mut p, mut q) = coarse_pairs[i].clone();
        let (mut vp, mut vq) = (val(&p)?, val(&q)?);
        let mut best: f64 = 0.0;
        for _ in 0..12 {
            let mid = midpoint(&p, &q);
            let vm = val(&mid)?;
            if abs(vp - vm) >= abs(vm - vq) {
                q = mid;
                vq = vm;
            } else {
                p = mid;
                vp = vm;
            }
            let r = rho_1(&p, &q)?;
            if r > 0.0 {
                best = best.max(abs(vp - vq) / r);
            }
        }
        Ok::<_, Error>(best)
    });
    let mut bisection_ratio: f64 = 0.0;
    for b in bisected {
        bisection_ratio = bisection_ratio.max(b?);
    }
    let modulus_violation = bisection_ratio > 8.0 * coarse_ratio.max(1e-12);
    let (lambda, outliers) = if prob.sigma.rho1_lipschitz() {
        let all: Vec<(f64, f64)> = bins.iter().flat_map(|b| b.pairs.iter().copied()).collect();
        let train: Vec<(f64, f64)> = all.iter().copied().step_by(2).collect();
        let lambda = 1.25 * ratio_of(&train);
        let outliers = all.iter().skip(1).step_by(2).filter(|(r, d)| *d > lambda * r + 1e-9).count();
        (Some(lambda), outliers)
    } else {
        (None, 0)
    };
    Ok(RegularityReport {
        alpha,
        alpha_star,
        gronwall_bound,
        within_gronwall: alpha_star <= gronwall_bound + 1e-9,
        bins,
        bisection_ratio,
        modulus_violation,
        lambda,
        outliers,
        seed,
    })
}

fn ratio_of(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().filter(|(r, _)| *r > 0.0).map(|(r, d)| d / r).fold(0.0, f64::max)
}

/// Motion from `p` under a signal prefix; the result ends `u.len()` steps after the point.
pub fn integrate_partial(prob: &DelayControlProblem, p: &SampledPath, u: &[usize]) -> Result<SampledPath, Error> {
    prob.check_point(p)?;
    if p.step() + u.len() > prob.grid.horizon_steps() {
        return Err(Error::Length { what: "control signal", expected: prob.grid.horizon_steps() - p.step(), got: u.len() });
    }
    if u.iter().any(|&i| i >= prob.controls.len()) {
        return Err(Error::Argument("control index out of range"));
    }
    Ok(run_signal(prob, p, u).1)
}

/// `f(p, u)` for every `u ∈ U`, in order.
pub fn velocities(prob: &DelayControlProblem, p: &SampledPath) -> Vec<Vec<f64>> {
    let mut buf = vec![0.0; prob.grid.n()];
    prob.controls
        .iter()
        .map(|u| {
            prob.f.eval(p, u, &mut buf);
            buf.clone()
        })
        .collect()
}
