//! Estimators for right derivatives along extensions, directional derivatives in single- and
//! multi-valued directions, the `d₀` variant, and polyhedral approximations of the
//! ci-sub/superdifferentials.
//!
//! Limits are replaced by a running min (or max) over a finite schedule of time offsets.
//! Infima over extensions are sampled, so they are one-sided: an upper bound of the true infimum.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::math::{dot, lex_cmp, norm};
use crate::par::map_indexed;
use crate::path_core::{extend_by, restrict_steps, sup_norm, SampledPath};

/// Regularity a caller asserts for a functional. Recorded in reports, never verified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Tags {
    pub continuous: bool,
    pub rho1_lsc: bool,
    pub rho1_usc: bool,
    pub locally_lipschitz: bool,
}

impl Tags {
    pub const NONE: Tags = Tags { continuous: false, rho1_lsc: false, rho1_usc: false, locally_lipschitz: false };
    /// Locally `ρ₁`-Lipschitz, hence continuous and semicontinuous both ways.
    pub const LIPSCHITZ: Tags = Tags { continuous: true, rho1_lsc: true, rho1_usc: true, locally_lipschitz: true };
    pub const CONTINUOUS: Tags = Tags { continuous: true, rho1_lsc: false, rho1_usc: false, locally_lipschitz: false };

    /// Tags of `−φ`: the semicontinuity directions swap.
    pub fn negated(self) -> Tags {
        Tags { rho1_lsc: self.rho1_usc, rho1_usc: self.rho1_lsc, ..self }
    }

    pub fn names(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (on, name) in [
            (self.continuous, "continuous"),
            (self.rho1_lsc, "rho1_lsc"),
            (self.rho1_usc, "rho1_usc"),
            (self.locally_lipschitz, "locally_lipschitz"),
        ] {
            if on {
                out.push(name);
            }
        }
        out
    }
}

/// A map `G → R`. Evaluation must be deterministic.
pub trait Functional: Sync {
    fn eval(&self, p: &SampledPath) -> f64;

    fn tags(&self) -> Tags {
        Tags::NONE
    }
}

impl<F: Functional + ?Sized> Functional for &F {
    fn eval(&self, p: &SampledPath) -> f64 {
        (**self).eval(p)
    }

    fn tags(&self) -> Tags {
        (**self).tags()
    }
}

impl<F: Functional + ?Sized + Send> Functional for alloc::boxed::Box<F> {
    fn eval(&self, p: &SampledPath) -> f64 {
        (**self).eval(p)
    }

    fn tags(&self) -> Tags {
        (**self).tags()
    }
}

/// Closure-backed functional.
pub struct FnFunctional<F> {
    f: F,
    tags: Tags,
}

impl<F: Fn(&SampledPath) -> f64 + Sync> FnFunctional<F> {
    pub fn new(f: F, tags: Tags) -> Self {
        FnFunctional { f, tags }
    }
}

impl<F: Fn(&SampledPath) -> f64 + Sync> Functional for FnFunctional<F> {
    fn eval(&self, p: &SampledPath) -> f64 {
        (self.f)(p)
    }

    fn tags(&self) -> Tags {
        self.tags
    }
}

/// `φ_s(t, x) = φ(t, x) − ⟨s, x(t)⟩`.
pub struct Shifted<'a> {
    inner: &'a dyn Functional,
    s: Vec<f64>,
}

pub fn shift_by_s<'a>(phi: &'a dyn Functional, s: &[f64]) -> Shifted<'a> {
    Shifted { inner: phi, s: s.to_vec() }
}

impl Shifted<'_> {
    pub fn s(&self) -> &[f64] {
        &self.s
    }
}

impl Functional for Shifted<'_> {
    fn eval(&self, p: &SampledPath) -> f64 {
        self.inner.eval(p) - dot(&self.s, p.current())
    }

    fn tags(&self) -> Tags {
        self.inner.tags()
    }
}

/// `−φ`.
pub struct Negated<'a>(pub &'a dyn Functional);

impl Functional for Negated<'_> {
    fn eval(&self, p: &SampledPath) -> f64 {
        -self.0.eval(p)
    }

    fn tags(&self) -> Tags {
        self.0.tags().negated()
    }
}

/// How one schedule entry turns evaluations into a quotient estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum QuotientRule {
    /// `q(τ) = [φ(τ, z_τ) − φ(t, x)]/(τ − t)`.
    Plain,
    /// `2q(τ) − q(2τ)`, cancelling the first-order error term of smooth functionals. Falls back
    /// to [`QuotientRule::Plain`] where `2τ` overruns the extension.
    Extrapolated,
}

/// Strictly decreasing time offsets `τ − t`, in grid steps.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Schedule {
    offsets: Vec<usize>,
    rule: QuotientRule,
}

impl Schedule {
    /// Offsets `2⁻ᵏ (T − t)` for `k = 4..12`, rounded to nodes, at least one step, deduplicated.
    pub fn dyadic(p: &SampledPath) -> Result<Self, Error> {
        Self::dyadic_levels(p, 4, 12)
    }

    pub fn dyadic_levels(p: &SampledPath, first: u32, last: u32) -> Result<Self, Error> {
        if !p.in_g0() {
            return Err(Error::Terminal);
        }
        let room = (p.grid().horizon_steps() - p.step()) as f64;
        let mut offsets: Vec<usize> = (first..=last)
            .map(|k| crate::math::round(room / (1u64 << k) as f64).max(1.0) as usize)
            .collect();
        offsets.dedup();
        Self::from_steps(offsets)
    }

    pub fn from_steps(offsets: Vec<usize>) -> Result<Self, Error> {
        if offsets.is_empty() {
            return Err(Error::Empty("schedule"));
        }
        if offsets.windows(2).any(|w| w[1] >= w[0]) || offsets[offsets.len() - 1] == 0 {
            return Err(Error::Argument("schedule offsets must be strictly decreasing and >= 1"));
        }
        Ok(Schedule { offsets, rule: QuotientRule::Plain })
    }

    pub fn with_rule(mut self, rule: QuotientRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn extrapolated(self) -> Self {
        self.with_rule(QuotientRule::Extrapolated)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn rule(&self) -> QuotientRule {
        self.rule
    }

    /// Largest offset; the extension must reach at least this far (twice for extrapolation).
    pub fn reach(&self) -> usize {
        self.offsets[0]
    }

    pub(crate) fn plain(&self) -> Schedule {
        Schedule { offsets: self.offsets.clone(), rule: QuotientRule::Plain }
    }
}

/// A derivative estimate with the evidence behind it.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DerivEstimate {
    pub estimate: f64,
    /// `(τ − t, quotient)` in schedule order, for the extension that produced the estimate.
    pub trace: Vec<(f64, f64)>,
    /// `(ε, value)` per enlargement radius; empty for single-extension estimates.
    pub eps_trace: Vec<(f64, f64)>,
    /// Functional evaluations spent.
    pub evaluations: usize,
    /// Candidate budget per `ε` (zero for single-extension estimates).
    pub budget: usize,
    pub seed: Option<u64>,
    /// The estimate is an upper bound of a sampled infimum.
    pub one_sided: bool,
    /// Per-step derivatives of the best extension, row-major.
    pub witness: Option<Vec<f64>>,
}

fn check_extension(p: &SampledPath, z: &SampledPath, reach: usize) -> Result<(), Error> {
    if p.grid() != z.grid() {
        return Err(Error::GridMismatch);
    }
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    if z.step() < p.step() + reach || z.values()[..p.values().len()] != *p.values() {
        return Err(Error::Argument("extension must agree with the point and cover the schedule"));
    }
    Ok(())
}

/// Quotients of one extension for every schedule entry, already reduced by the rule.
fn quotients(phi: &dyn Functional, base: f64, p: &SampledPath, z: &SampledPath, s: &Schedule) -> Vec<(f64, f64)> {
    let dt = p.grid().dt();
    let plain = |k: usize| {
        let zt = restrict_steps(z, p.step() + k).expect("extension covers schedule");
        (phi.eval(&zt) - base) / (k as f64 * dt)
    };
    s.offsets
        .iter()
        .map(|&k| {
            let q = plain(k);
            let v = match s.rule {
                QuotientRule::Extrapolated if p.step() + 2 * k <= z.step() => 2.0 * q - plain(2 * k),
                _ => q,
            };
            (k as f64 * dt, v)
        })
        .collect()
}

fn evals_per_extension(s: &Schedule, p: &SampledPath, z_step: usize) -> usize {
    match s.rule {
        QuotientRule::Plain => s.offsets.len(),
        QuotientRule::Extrapolated => {
            s.offsets.len() + s.offsets.iter().filter(|&&k| p.step() + 2 * k <= z_step).count()
        }
    }
}

fn one_extension(
    phi: &dyn Functional,
    p: &SampledPath,
    z: &SampledPath,
    s: &Schedule,
    pick: fn(f64, f64) -> f64,
    init: f64,
) -> Result<DerivEstimate, Error> {
    check_extension(p, z, s.reach())?;
    let base = phi.eval(p);
    let trace = quotients(phi, base, p, z, s);
    let estimate = trace.iter().fold(init, |a, &(_, q)| pick(a, q));
    Ok(DerivEstimate {
        estimate,
        trace,
        eps_trace: Vec::new(),
        evaluations: 1 + evals_per_extension(s, p, z.step()),
        budget: 0,
        seed: None,
        one_sided: false,
        witness: None,
    })
}

/// Lower right derivative of `φ` at `p` along the extension `z`: the minimum of the schedule's
/// quotients.
pub fn lower_right_derivative(
    phi: &dyn Functional,
    p: &SampledPath,
    z: &SampledPath,
    schedule: &Schedule,
) -> Result<DerivEstimate, Error> {
    one_extension(phi, p, z, schedule, f64::min, f64::INFINITY)
}

/// Upper right derivative: the maximum of the schedule's quotients.
pub fn upper_right_derivative(
    phi: &dyn Functional,
    p: &SampledPath,
    z: &SampledPath,
    schedule: &Schedule,
) -> Result<DerivEstimate, Error> {
    one_extension(phi, p, z, schedule, f64::max, f64::NEG_INFINITY)
}

/// Extension steps a straight line needs for `schedule`.
fn straight_reach(p: &SampledPath, s: &Schedule) -> usize {
    let room = p.grid().horizon_steps() - p.step();
    match s.rule {
        QuotientRule::Plain => s.reach(),
        QuotientRule::Extrapolated => (2 * s.reach()).min(room),
    }
}

/// Lower right derivative along `z^{[l]}(τ) = x(t) + (τ − t) l`.
pub fn dir_deriv_single(
    phi: &dyn Functional,
    p: &SampledPath,
    l: &[f64],
    schedule: &Schedule,
) -> Result<DerivEstimate, Error> {
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    let z = crate::path_core::straight_extension(p, l, straight_reach(p, schedule))?;
    let mut est = lower_right_derivative(phi, p, &z, schedule)?;
    est.witness = Some(l.to_vec());
    Ok(est)
}

/// Upper counterpart of [`dir_deriv_single`].
pub fn dir_deriv_single_upper(
    phi: &dyn Functional,
    p: &SampledPath,
    l: &[f64],
    schedule: &Schedule,
) -> Result<DerivEstimate, Error> {
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    let z = crate::path_core::straight_extension(p, l, straight_reach(p, schedule))?;
    let mut est = upper_right_derivative(phi, p, &z, schedule)?;
    est.witness = Some(l.to_vec());
    Ok(est)
}

/// Shape of a compact convex direction set `L`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum DirectionKind {
    Ball { radius: f64 },
    Polytope { vertices: Vec<Vec<f64>> },
}

/// `L ⊂ Rⁿ` together with an enlargement radius for `[L]^ε`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DirectionSet {
    n: usize,
    kind: DirectionKind,
    epsilon: f64,
}

impl DirectionSet {
    pub fn ball(n: usize, radius: f64) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::Argument("dimension must be positive"));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Argument("ball radius must be finite and >= 0"));
        }
        Ok(DirectionSet { n, kind: DirectionKind::Ball { radius }, epsilon: 0.0 })
    }

    /// Convex hull of `vertices`.
    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self, Error> {
        let n = vertices.first().ok_or(Error::Empty("polytope vertices"))?.len();
        if n == 0 {
            return Err(Error::Argument("dimension must be positive"));
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != n) {
            return Err(Error::Length { what: "polytope vertex", expected: n, got: v.len() });
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Argument("polytope vertices must be finite"));
        }
        Ok(DirectionSet { n, kind: DirectionKind::Polytope { vertices }, epsilon: 0.0 })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, Error> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Argument("epsilon must be finite and >= 0"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &DirectionKind {
        &self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `max_{l ∈ L} ‖l‖`.
    pub fn radius(&self) -> f64 {
        match &self.kind {
            DirectionKind::Ball { radius } => *radius,
            DirectionKind::Polytope { vertices } => vertices.iter().map(|v| norm(v)).fold(0.0, f64::max),
        }
    }

    /// Finite samples of `[L]^{ε + eps}`, row-major: boundary points first, then interior points.
    pub fn palette<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let e = self.epsilon + eps;
        let mut out: Vec<f64> = Vec::new();
        match &self.kind {
            DirectionKind::Ball { radius } => {
                let r = radius + e;
                for i in 0..n {
                    for sgn in [1.0, -1.0] {
                        let mut v = vec![0.0; n];
                        v[i] = sgn * r;
                        out.extend(v);
                    }
                }
                for _ in 0..2 * n {
                    out.extend(random_unit(n, rng).into_iter().map(|c| c * r));
                }
                out.extend(vec![0.0; n]);
                for _ in 0..n + 2 {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let s = r * libm::pow(u, 1.0 / n as f64);
                    out.extend(random_unit(n, rng).into_iter().map(|c| c * s));
                }
            }
            DirectionKind::Polytope { vertices } => {
                for v in vertices {
                    out.extend_from_slice(v);
                    if e > 0.0 {
                        for i in 0..n {
                            for sgn in [1.0, -1.0] {
                                let mut w = v.clone();
                                w[i] += sgn * e;
                                out.extend(w);
                            }
                        }
                    }
                }
                let m = vertices.len();
                let mut centroid = vec![0.0; n];
                for v in vertices {
                    for (c, x) in centroid.iter_mut().zip(v) {
                        *c += x / m as f64;
                    }
                }
                out.extend(centroid);
                for _ in 0..2 * m {
                    let w: Vec<f64> = (0..m).map(|_| -libm::log(rng.gen_range(f64::MIN_POSITIVE..1.0))).collect();
                    let total: f64 = w.iter().sum();
                    let mut v = vec![0.0; n];
                    for (wk, vert) in w.iter().zip(vertices) {
                        for (c, x) in v.iter_mut().zip(vert) {
                            *c += wk / total * x;
                        }
                    }
                    out.extend(v);
                }
            }
        }
        dedup_rows(out, n)
    }

    /// Deterministic dense grid of `L` (no enlargement), for oracle minimizations.
    pub fn dense_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        let per_axis = per_axis.max(2);
        let mut out = Vec::new();
        match &self.kind {
            DirectionKind::Ball { radius } => {
                let r = *radius;
                let total = per_axis.pow(n as u32);
                for idx in 0..total {
                    let mut rest = idx;
                    let mut v = vec![0.0; n];
                    for c in v.iter_mut() {
                        let j = rest % per_axis;
                        rest /= per_axis;
                        *c = -r + 2.0 * r * j as f64 / (per_axis - 1) as f64;
                    }
                    if norm(&v) <= r * (1.0 + 1e-12) {
                        out.push(v);
                    }
                }
                if n == 2 {
                    for j in 0..4 * per_axis {
                        let a = core::f64::consts::TAU * j as f64 / (4 * per_axis) as f64;
                        out.push(vec![r * libm::cos(a), r * libm::sin(a)]);
                    }
                }
                for i in 0..n {
                    for sgn in [1.0, -1.0] {
                        let mut v = vec![0.0; n];
                        v[i] = sgn * r;
                        out.push(v);
                    }
                }
            }
            DirectionKind::Polytope { vertices } => {
                out.extend(vertices.iter().cloned());
                for (a, va) in vertices.iter().enumerate() {
                    for vb in &vertices[a + 1..] {
                        for j in 1..per_axis {
                            let w = j as f64 / per_axis as f64;
                            out.push(va.iter().zip(vb).map(|(x, y)| (1.0 - w) * x + w * y).collect());
                        }
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

fn dedup_rows(flat: Vec<f64>, n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(flat.len());
    for row in flat.chunks_exact(n) {
        if !out.chunks_exact(n).any(|r| r == row) {
            out.extend_from_slice(row);
        }
    }
    out
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sampling controls for the multi-valued estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiOptions {
    /// Enlargement radii, shrinking. `None` means `[2⁻⁴, 2⁻⁸, 2⁻¹²]·max(1, radius(L))`.
    pub eps_schedule: Option<Vec<f64>>,
    /// Candidate extensions evaluated per radius.
    pub budget: usize,
    pub seed: u64,
    /// Time offsets; `None` means [`Schedule::dyadic`]. The quotient rule is always plain.
    pub schedule: Option<Schedule>,
    /// Additional candidate extensions (row-major per-step derivatives covering the schedule),
    /// evaluated alongside the sampled ones.
    pub extra: Vec<Vec<f64>>,
}

impl MultiOptions {
    pub fn new(seed: u64) -> Self {
        MultiOptions { eps_schedule: None, budget: 512, seed, schedule: None, extra: Vec::new() }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }
}

/// Candidate ranking: score, then lexicographically smallest derivative sequence.
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => lex_cmp(a.1, b.1) == Ordering::Less,
    }
}

type Objective<'o> = &'o (dyn Fn(&[(f64, f64)]) -> f64 + Sync);

/// Where a block vector may move during pattern search.
enum Moves {
    /// `v ± δ eᵢ`, projected back onto the ball of this radius.
    Ball(f64),
    /// `v + δ (w − v)` towards palette points `w`, which keeps `v` in their convex hull.
    Hull,
}

/// One `ε` level of the sampler: a palette and a block layout over the schedule.
///
/// A selection holds one derivative vector per block (row-major). Block `b` covers steps
/// `bounds[b]..bounds[b + 1]`, so the quotient at the `j`-th largest offset only sees the first
/// `blocks - j` blocks.
struct Sampler<'a> {
    phi: &'a dyn Functional,
    p: &'a SampledPath,
    base: f64,
    schedule: &'a Schedule,
    palette: Vec<f64>,
    bounds: Vec<usize>,
    moves: Moves,
    /// Initial pattern-search step.
    scale: f64,
}

impl Sampler<'_> {
    fn n(&self) -> usize {
        self.p.grid().n()
    }

    fn colors(&self) -> usize {
        self.palette.len() / self.n()
    }

    fn blocks(&self) -> usize {
        self.bounds.len() - 1
    }

    fn color(&self, c: usize) -> &[f64] {
        let n = self.n();
        &self.palette[c * n..(c + 1) * n]
    }

    fn derivs(&self, sel: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(self.schedule.reach() * n);
        for b in 0..self.blocks() {
            for _ in self.bounds[b]..self.bounds[b + 1] {
                out.extend_from_slice(&sel[b * n..(b + 1) * n]);
            }
        }
        out
    }

    fn trace(&self, derivs: &[f64]) -> Vec<(f64, f64)> {
        let z = extend_by(self.p, derivs).expect("derivatives fit the horizon");
        quotients(self.phi, self.base, self.p, &z, self.schedule)
    }

    fn score_batch(&self, batch: &[Vec<f64>], objective: Objective<'_>) -> Vec<f64> {
        map_indexed(batch.len(), |i| objective(&self.trace(&self.derivs(&batch[i]))))
    }

    /// Evaluates `alts` and moves to the best strict improvement over `(score, sel)`.
    fn try_moves(&self, alts: Vec<Vec<f64>>, sel: &mut Vec<f64>, score: &mut f64, objective: Objective<'_>) -> bool {
        let scores = self.score_batch(&alts, objective);
        let mut moved = false;
        for (a, s) in alts.into_iter().zip(scores) {
            if better((s, &a), (*score, sel)) {
                *sel = a;
                *score = s;
                moved = true;
            }
        }
        moved
    }

    /// Block-wise palette swaps over blocks `..limit`, then a shrinking pattern search.
    /// Spends at most `budget` candidates and returns how many it used.
    fn refine(&self, sel: &mut Vec<f64>, score: &mut f64, limit: usize, budget: usize, objective: Objective<'_>) -> usize {
        let n = self.n();
        let colors = self.colors();
        let mut used = 0;
        // Palette swaps get half of the budget.
        let swap_budget = budget / 2;
        let mut improved = true;
        while improved && colors > 1 {
            improved = false;
            for b in 0..limit {
                if used + colors > swap_budget {
                    break;
                }
                let alts: Vec<Vec<f64>> = (0..colors)
                    .filter(|&c| sel[b * n..(b + 1) * n] != *self.color(c))
                    .map(|c| {
                        let mut s = sel.clone();
                        s[b * n..(b + 1) * n].copy_from_slice(self.color(c));
                        s
                    })
                    .collect();
                used += alts.len();
                improved |= self.try_moves(alts, sel, score, objective);
            }
        }
        let mut delta = self.scale;
        while delta > 1e-6 * self.scale {
            let mut moved = false;
            for b in 0..limit {
                let alts = self.pattern(sel, b, delta);
                if used + alts.len() > budget {
                    return used;
                }
                used += alts.len();
                moved |= self.try_moves(alts, sel, score, objective);
            }
            if !moved {
                delta *= 0.5;
            }
        }
        used
    }

    fn pattern(&self, sel: &[f64], b: usize, delta: f64) -> Vec<Vec<f64>> {
        let n = self.n();
        let v = &sel[b * n..(b + 1) * n];
        let mut out = Vec::new();
        let mut push = |w: Vec<f64>| {
            if w != v {
                let mut s = sel.to_vec();
                s[b * n..(b + 1) * n].copy_from_slice(&w);
                out.push(s);
            }
        };
        match self.moves {
            Moves::Ball(r) => {
                for i in 0..n {
                    for sgn in [1.0, -1.0] {
                        let mut w = v.to_vec();
                        w[i] += sgn * delta;
                        let len = norm(&w);
                        if len > r {
                            w.iter_mut().for_each(|c| *c *= r / len);
                        }
                        push(w);
                    }
                }
            }
            Moves::Hull => {
                let w = (delta / self.scale).min(1.0);
                for c in 0..self.colors() {
                    let target = self.color(c);
                    push(v.iter().zip(target).map(|(a, t)| a + w * (t - a)).collect());
                }
            }
        }
        out
    }
}

fn min_of(trace: &[(f64, f64)]) -> f64 {
    trace.iter().fold(f64::INFINITY, |a, &(_, q)| a.min(q))
}

/// Best candidate of one `ε` level.
struct Level {
    value: f64,
    derivs: Vec<f64>,
    /// Block selection when the best candidate came from the sampler rather than `extra`.
    selection: Option<Vec<f64>>,
    candidates: usize,
}

fn sample_level(s: &Sampler<'_>, extra: &[Vec<f64>], budget: usize, rng: &mut ChaCha8Rng) -> Level {
    let colors = s.colors();
    let blocks = s.blocks();
    let mut left = budget;
    let mut sels: Vec<Vec<f64>> = (0..colors.min(left)).map(|c| s.color(c).repeat(blocks)).collect();
    left -= sels.len();
    let n_random = if blocks > 1 { left / 4 } else { 0 };
    for _ in 0..n_random {
        let mut sel = Vec::with_capacity(blocks * s.n());
        let mut c = rng.gen_range(0..colors);
        for _ in 0..blocks {
            if rng.gen_bool(0.5) {
                c = rng.gen_range(0..colors);
            }
            sel.extend_from_slice(s.color(c));
        }
        sels.push(sel);
    }
    left -= n_random;
    let scores = s.score_batch(&sels, &min_of);
    let extra_scores: Vec<f64> = map_indexed(extra.len(), |i| min_of(&s.trace(&extra[i])));
    let mut best = 0;
    for i in 1..sels.len() {
        if better((scores[i], &s.derivs(&sels[i])), (scores[best], &s.derivs(&sels[best]))) {
            best = i;
        }
    }
    let mut sel = sels.swap_remove(best);
    let mut score = scores[best];
    let mut candidates = budget - left + extra.len();
    candidates += s.refine(&mut sel, &mut score, blocks, left, &min_of);
    let mut level = Level { value: score, derivs: s.derivs(&sel), selection: Some(sel), candidates };
    for (e, es) in extra.iter().zip(extra_scores) {
        if better((es, e), (level.value, &level.derivs)) {
            level.value = es;
            level.derivs = e.clone();
            level.selection = None;
        }
    }
    level
}

struct MultiRun<'a> {
    estimate: DerivEstimate,
    last: Option<(Sampler<'a>, Vec<f64>)>,
}

fn multi_run<'a>(
    phi: &'a dyn Functional,
    p: &'a SampledPath,
    l: &DirectionSet,
    opts: &MultiOptions,
    schedule: &'a Schedule,
) -> Result<MultiRun<'a>, Error> {
    if opts.budget == 0 {
        return Err(Error::Argument("sampler budget must be positive"));
    }
    if l.n() != p.grid().n() {
        return Err(Error::Length { what: "direction set dimension", expected: p.grid().n(), got: l.n() });
    }
    let k = schedule.reach();
    let n = p.grid().n();
    if let Some(e) = opts.extra.iter().find(|e| e.len() != k * n) {
        return Err(Error::Length { what: "extra extension derivatives", expected: k * n, got: e.len() });
    }
    let scale = l.radius().max(1.0);
    let eps_schedule = match &opts.eps_schedule {
        Some(e) if e.is_empty() => return Err(Error::Empty("epsilon schedule")),
        Some(e) if e.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) => {
            return Err(Error::Argument("epsilon must be finite and >= 0"))
        }
        Some(e) => e.clone(),
        None => [4, 8, 12].iter().map(|&j| scale / (1u64 << j) as f64).collect(),
    };
    let mut bounds = vec![0usize];
    bounds.extend(schedule.offsets().iter().rev().copied());
    let base = phi.eval(p);
    let per = schedule.offsets().len();
    let mut eps_trace = Vec::with_capacity(eps_schedule.len());
    let mut evaluations = 1;
    let mut last = None;
    let mut best_derivs = Vec::new();
    for (j, &eps) in eps_schedule.iter().enumerate() {
        let mut rng = stream_rng(opts.seed, j as u64);
        let palette = l.palette(eps, &mut rng);
        let (moves, step) = match l.kind() {
            DirectionKind::Ball { radius } => (Moves::Ball(radius + l.epsilon() + eps), 0.25 * (radius + l.epsilon() + eps)),
            DirectionKind::Polytope { .. } => (Moves::Hull, 0.5),
        };
        let sampler = Sampler { phi, p, base, schedule, palette, bounds: bounds.clone(), moves, scale: step.max(1e-12) };
        let level = sample_level(&sampler, &opts.extra, opts.budget, &mut rng);
        evaluations += level.candidates * per;
        eps_trace.push((eps, level.value));
        best_derivs = level.derivs;
        last = level.selection.map(|sel| (sampler, sel));
    }
    let z = extend_by(p, &best_derivs)?;
    let trace = quotients(phi, base, p, &z, schedule);
    let estimate = eps_trace[eps_trace.len() - 1].1;
    Ok(MultiRun {
        estimate: DerivEstimate {
            estimate,
            trace,
            eps_trace,
            evaluations,
            budget: opts.budget,
            seed: Some(opts.seed),
            one_sided: true,
            witness: Some(best_derivs),
        },
        last,
    })
}

fn multi_schedule(p: &SampledPath, opts: &MultiOptions) -> Result<Schedule, Error> {
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    Ok(match &opts.schedule {
        Some(s) => s.plain(),
        None => Schedule::dyadic(p)?,
    })
}

/// Derivative of `φ` at `p` in the multi-valued direction `L`: per `ε`, the smallest lower
/// right derivative over sampled extensions with derivatives in `[L]^ε`. The value at the last
/// `ε` is reported; it is an upper bound of the sampled infimum.
pub fn dir_deriv_multi(
    phi: &dyn Functional,
    p: &SampledPath,
    l: &DirectionSet,
    opts: &MultiOptions,
) -> Result<DerivEstimate, Error> {
    let schedule = multi_schedule(p, opts)?;
    Ok(multi_run(phi, p, l, opts, &schedule)?.estimate)
}

/// The `d₀` value: joint infimum over `τ` in the schedule window and extensions in `[L]^δ`.
///
/// Starts from the multi-valued estimate with the same options and refines the best extension
/// separately for each `τ`, so it never exceeds [`dir_deriv_multi`] for equal arguments.
pub fn dir_deriv_d0(
    phi: &dyn Functional,
    p: &SampledPath,
    l: &DirectionSet,
    opts: &MultiOptions,
) -> Result<DerivEstimate, Error> {
    let schedule = multi_schedule(p, opts)?;
    let run = multi_run(phi, p, l, opts, &schedule)?;
    let mut est = run.estimate;
    let Some((sampler, sel)) = run.last else {
        return Ok(est);
    };
    let offsets = schedule.offsets().len();
    for j in 0..offsets {
        let objective = move |tr: &[(f64, f64)]| tr[j].1;
        let mut s = sel.clone();
        let mut score = sampler.trace(&sampler.derivs(&s))[j].1;
        let used = sampler.refine(&mut s, &mut score, offsets - j, opts.budget, &objective);
        est.evaluations += used * offsets;
        if score < est.estimate {
            let derivs = sampler.derivs(&s);
            est.estimate = score;
            est.trace = sampler.trace(&derivs);
            est.witness = Some(derivs);
        }
    }
    Ok(est)
}

/// Which side of the ci-differential a [`PolyhedralApprox`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum Side {
    Sub,
    Super,
}

/// Outer polyhedral approximation of `D⁻φ` (or `D⁺φ`) at a point from finitely many directions.
///
/// For `Sub`, `(p₀, p)` belongs iff `p₀ + ⟨p, l⟩ ≤ d(l) + tol` for every listed `l` and
/// `⟨p, l/2⟩ ≤ d(l) − d(l/2) + tol` for every pair `(l, l/2)` in the grid. The second family
/// stands in for the unbounded directions a finite grid cannot reach. `Super` stores the data of
/// `D⁻(−φ)` and flips signs on the way in and out.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PolyhedralApprox {
    pub side: Side,
    pub directions: Vec<Vec<f64>>,
    /// Lower directional derivatives (of `−φ` for `Super`).
    pub values: Vec<f64>,
    /// `(i, j)` with `directions[j] = directions[i] / 2`.
    pub halving_pairs: Vec<(usize, usize)>,
    pub tol: f64,
}

impl PolyhedralApprox {
    fn sign(&self) -> f64 {
        match self.side {
            Side::Sub => 1.0,
            Side::Super => -1.0,
        }
    }

    /// Largest constraint violation of `(p₀, p)` in the stored (sub) orientation, before `tol`.
    fn violation_sub(&self, p0: f64, p: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (l, d) in self.directions.iter().zip(&self.values) {
            worst = worst.max(p0 + dot(p, l) - d);
        }
        worst.max(self.recession_violation(p))
    }

    fn recession_violation(&self, p: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &(i, j) in &self.halving_pairs {
            worst = worst.max(dot(p, &self.directions[j]) - (self.values[i] - self.values[j]));
        }
        worst
    }

    /// Largest constraint violation of `(p₀, p)`; members have violation `≤ tol`.
    pub fn violation(&self, p0: f64, p: &[f64]) -> f64 {
        let s = self.sign();
        let q: Vec<f64> = p.iter().map(|c| s * c).collect();
        self.violation_sub(s * p0, &q)
    }

    pub fn contains(&self, p0: f64, p: &[f64]) -> bool {
        self.violation(p0, p) <= self.tol
    }

    /// Extreme admissible `p₀` for a given `p`: the largest for `Sub`, the smallest for `Super`.
    /// `None` when no `p₀` works because a recession constraint fails.
    pub fn extreme_p0(&self, p: &[f64]) -> Option<f64> {
        let s = self.sign();
        let q: Vec<f64> = p.iter().map(|c| s * c).collect();
        if self.recession_violation(&q) > self.tol {
            return None;
        }
        let best = self
            .directions
            .iter()
            .zip(&self.values)
            .map(|(l, d)| d - dot(&q, l))
            .fold(f64::INFINITY, f64::min);
        Some(s * (best + self.tol))
    }
}

fn build_approx(
    phi: &dyn Functional,
    p: &SampledPath,
    l_grid: &[Vec<f64>],
    schedule: &Schedule,
    tol: f64,
    side: Side,
) -> Result<PolyhedralApprox, Error> {
    if !phi.tags().locally_lipschitz {
        return Err(Error::MissingTag("locally_lipschitz"));
    }
    if l_grid.is_empty() {
        return Err(Error::Empty("direction grid"));
    }
    let n = p.grid().n();
    if let Some(l) = l_grid.iter().find(|l| l.len() != n) {
        return Err(Error::Length { what: "direction", expected: n, got: l.len() });
    }
    let results = map_indexed(l_grid.len(), |i| dir_deriv_single(phi, p, &l_grid[i], schedule).map(|e| e.estimate));
    let values = results.into_iter().collect::<Result<Vec<f64>, Error>>()?;
    let mut halving_pairs = Vec::new();
    for (i, l) in l_grid.iter().enumerate() {
        if l.iter().all(|c| *c == 0.0) {
            continue;
        }
        if let Some(j) = l_grid.iter().position(|m| m.iter().zip(l).all(|(a, b)| *a == 0.5 * b)) {
            halving_pairs.push((i, j));
        }
    }
    Ok(PolyhedralApprox { side, directions: l_grid.to_vec(), values, halving_pairs, tol })
}

/// Outer approximation of `D⁻φ(p)` from lower directional derivatives along `l_grid`.
/// Only licensed for functionals tagged `locally_lipschitz`.
pub fn approx_subdifferential(
    phi: &dyn Functional,
    p: &SampledPath,
    l_grid: &[Vec<f64>],
    schedule: &Schedule,
    tol: f64,
) -> Result<PolyhedralApprox, Error> {
    build_approx(phi, p, l_grid, schedule, tol, Side::Sub)
}

/// Outer approximation of `D⁺φ(p) = −D⁻(−φ)(p)`.
pub fn approx_superdifferential(
    phi: &dyn Functional,
    p: &SampledPath,
    l_grid: &[Vec<f64>],
    schedule: &Schedule,
    tol: f64,
) -> Result<PolyhedralApprox, Error> {
    build_approx(&Negated(phi), p, l_grid, schedule, tol, Side::Super)
}

/// `{0} ∪ {±R eᵢ} ∪ {2n random directions of norm R} ∪ halves of all of them`, where
/// `R = c_H (1 + ‖x‖)`.
pub fn default_l_grid(p: &SampledPath, c_h: f64, seed: u64) -> Vec<Vec<f64>> {
    let n = p.grid().n();
    let r = c_h * (1.0 + sup_norm(p));
    let mut rng = stream_rng(seed, 0x6c67);
    let mut outer = Vec::with_capacity(4 * n);
    for i in 0..n {
        for sgn in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[i] = sgn * r;
            outer.push(v);
        }
    }
    for _ in 0..2 * n {
        outer.push(random_unit(n, &mut rng).into_iter().map(|c| c * r).collect());
    }
    let mut out = vec![vec![0.0; n]];
    for v in &outer {
        out.push(v.clone());
    }
    for v in &outer {
        out.push(v.iter().map(|c| 0.5 * c).collect());
    }
    out
}
