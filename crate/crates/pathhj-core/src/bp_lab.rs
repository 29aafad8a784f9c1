//! Borwein–Preiss perturbations over finite subsets of path space, the subgradient search built
//! on them, and a sampled check of the gauge axioms for `μ_α`.
//!
//! On a finite set the anchor iteration with exact argmins is eventually constant, so the
//! perturbation series is summed in closed form instead of truncated whenever the last anchor
//! repeats.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ci_calculus::{
    approx_subdifferential, default_l_grid, dir_deriv_d0, DirectionKind, DirectionSet, Functional, MultiOptions,
    Schedule, Tags,
};
use crate::error::Error;
use crate::gauge::{eval_mu_alpha, grad_mu_space, GaugeParams};
use crate::math::{abs, dist2, dot, norm, powi, sqrt};
use crate::par::map_indexed;
use crate::path_core::{random_piecewise_affine, rho_inf, straight_extension, sup_norm, GridSpec, SampledPath};

/// A finite subset of `G(α) ∩ G₀` on a single grid. Finite sets are closed, so no flag is kept.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSet {
    points: Vec<SampledPath>,
    alpha: f64,
}

impl DiscreteSet {
    /// Drops duplicates, keeping first occurrences in order.
    pub fn new(points: Vec<SampledPath>, alpha: f64) -> Result<Self, Error> {
        let mut kept: Vec<SampledPath> = Vec::with_capacity(points.len());
        Self::validate(&points, alpha)?;
        for p in points {
            if !kept.contains(&p) {
                kept.push(p);
            }
        }
        Ok(DiscreteSet { points: kept, alpha })
    }

    fn validate(points: &[SampledPath], alpha: f64) -> Result<(), Error> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument("alpha must be finite and > 0"));
        }
        let first = points.first().ok_or(Error::Empty("point set"))?;
        for p in points {
            if p.grid() != first.grid() {
                return Err(Error::GridMismatch);
            }
            if !p.in_g0() {
                return Err(Error::Terminal);
            }
            let s = sup_norm(p);
            if s > alpha {
                return Err(Error::Precondition { what: "sup-norm <= alpha", estimate: s });
            }
        }
        Ok(())
    }

    /// `count` random piecewise-affine points with steps in `[0, T)` and sup-norm at most `alpha`.
    pub fn random(grid: GridSpec, count: usize, alpha: f64, seed: u64) -> Result<Self, Error> {
        if grid.horizon_steps() == 0 {
            return Err(Error::Terminal);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Per-coordinate amplitude α/√n keeps the Euclidean norm within α.
        let amp = alpha / sqrt(grid.n() as f64);
        let points = (0..count)
            .map(|_| {
                let step = rng.gen_range(0..grid.horizon_steps());
                random_piecewise_affine(grid, step, 4, amp, &mut rng)
            })
            .collect();
        Self::new(points, alpha)
    }

    pub fn points(&self) -> &[SampledPath] {
        &self.points
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid(&self) -> &GridSpec {
        self.points[0].grid()
    }
}

/// `ψ(p) = Σ_k w_k μ_α(p, anchor_k)`.
///
/// Weights are `κ 2⁻ᵏ`. When the anchor sequence became stationary the remaining series
/// `Σ_{j ≥ K−1} κ 2⁻ʲ μ_α(·, anchor_{K−1})` is folded into the last weight, so `ψ` is exact and
/// `Σ w_k = 2κ`. Otherwise the omitted tail is at most `tail_bound` on `G(α)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    anchors: Vec<SampledPath>,
    weights: Vec<f64>,
    kappa: f64,
    params: GaugeParams,
    stationary_tail: bool,
    tail_bound: f64,
}

impl Perturbation {
    pub fn new(anchors: Vec<SampledPath>, kappa: f64, params: GaugeParams, stationary_tail: bool) -> Result<Self, Error> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::Argument("kappa must lie in (0, 1]"));
        }
        let first = anchors.first().ok_or(Error::Empty("anchors"))?;
        if anchors.iter().any(|a| a.grid() != first.grid()) {
            return Err(Error::GridMismatch);
        }
        let k = anchors.len();
        let mut weights: Vec<f64> = (0..k).map(|j| kappa * powi(0.5, j as i32)).collect();
        let tail_bound = if stationary_tail {
            weights[k - 1] *= 2.0;
            0.0
        } else {
            kappa * params.c_alpha() * powi(0.5, k as i32 - 1)
        };
        Ok(Perturbation { anchors, weights, kappa, params, stationary_tail, tail_bound })
    }

    pub fn anchors(&self) -> &[SampledPath] {
        &self.anchors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn params(&self) -> &GaugeParams {
        &self.params
    }

    pub fn stationary_tail(&self) -> bool {
        self.stationary_tail
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn eval(&self, p: &SampledPath) -> Result<f64, Error> {
        let mut acc = 0.0;
        for (a, w) in self.anchors.iter().zip(&self.weights) {
            acc += w * eval_mu_alpha(p, a, &self.params)?;
        }
        Ok(acc)
    }

    /// `(∂_tψ, ∇ψ)`. Each term is differentiable only where `t ≥` the anchor time.
    pub fn ci_derivatives(&self, p: &SampledPath) -> Result<(f64, Vec<f64>), Error> {
        let n = p.grid().n();
        let mut dt = 0.0;
        let mut grad = vec![0.0; n];
        for (a, w) in self.anchors.iter().zip(&self.weights) {
            if a.grid() != p.grid() {
                return Err(Error::GridMismatch);
            }
            if p.step() < a.step() {
                return Err(Error::TimeOrder { what: "point precedes an anchor" });
            }
            dt += w * 2.0 * (p.t() - a.t());
            for (g, d) in grad.iter_mut().zip(grad_mu_space(p, a)) {
                *g += w * d;
            }
        }
        Ok((dt, grad))
    }
}

pub fn eval_psi(pert: &Perturbation, p: &SampledPath) -> Result<f64, Error> {
    pert.eval(p)
}

pub fn psi_ci_derivatives(pert: &Perturbation, p: &SampledPath) -> Result<(f64, Vec<f64>), Error> {
    pert.ci_derivatives(p)
}

/// Output of [`bp_minimize`] with every quantity its clause check needs.
#[derive(Clone, Debug, PartialEq)]
pub struct BpResult {
    pub minimizer_index: usize,
    pub minimizer: SampledPath,
    pub perturbation: Perturbation,
    pub anchor_indices: Vec<usize>,
    /// `μ_α(p*, anchor_k)` next to its bound `κ 2⁻ᵏ`.
    pub anchor_mu: Vec<f64>,
    pub anchor_bounds: Vec<f64>,
    pub phi_min: f64,
    /// `φ(p*) + ψ(p*)`.
    pub objective: f64,
    /// `φ(p*) + ψ(p*) − min_X (φ + ψ)`; zero up to rounding.
    pub minimality_gap: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    /// `2 c_α κ`.
    pub psi_bound: f64,
    /// `None` when an anchor lies after `p*` in time.
    pub dt_psi: Option<f64>,
    pub grad_psi: Option<Vec<f64>>,
    /// `4 T κ` and `8 α κ`.
    pub dt_bound: f64,
    pub grad_bound: f64,
}

/// Pass/fail of each clause on the finite proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BpClauses {
    pub psi_range: bool,
    pub derivative_bounds: bool,
    pub minimality: bool,
    pub anchors: bool,
}

impl BpClauses {
    pub fn all(&self) -> bool {
        self.psi_range && self.derivative_bounds && self.minimality && self.anchors
    }
}

const CLAUSE_SLACK: f64 = 1e-12;

impl BpResult {
    pub fn clauses(&self) -> BpClauses {
        let scale = 1.0 + abs(self.objective);
        let derivative_bounds = match (&self.dt_psi, &self.grad_psi) {
            (Some(d), Some(g)) => abs(*d) <= self.dt_bound + CLAUSE_SLACK && norm(g) <= self.grad_bound + CLAUSE_SLACK,
            _ => false,
        };
        BpClauses {
            psi_range: self.psi_min >= -CLAUSE_SLACK && self.psi_max <= self.psi_bound + CLAUSE_SLACK,
            derivative_bounds,
            minimality: self.minimality_gap <= 1e-12 * scale,
            anchors: self.anchor_mu.iter().zip(&self.anchor_bounds).all(|(m, b)| *m <= b + CLAUSE_SLACK),
        }
    }
}

/// Minimizes `φ + ψ` over `X` with the anchor iteration: anchor₀ is the first point within
/// `κ²/4` of `min φ`, each next anchor the first argmin of `φ + Σ κ2⁻ʲ μ_α(·, anchor_j)`.
pub fn bp_minimize(phi: &dyn Functional, set: &DiscreteSet, kappa: f64, max_anchors: usize) -> Result<BpResult, Error> {
    let values = map_indexed(set.len(), |i| phi.eval(&set.points[i]));
    bp_minimize_values(&values, set, kappa, max_anchors)
}

/// [`bp_minimize`] with `φ` given by its values on `X`, in point order.
pub fn bp_minimize_values(values: &[f64], set: &DiscreteSet, kappa: f64, max_anchors: usize) -> Result<BpResult, Error> {
    if set.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if values.len() != set.len() {
        return Err(Error::Length { what: "functional values", expected: set.len(), got: values.len() });
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Argument("kappa must lie in (0, 1]"));
    }
    if max_anchors == 0 {
        return Err(Error::Argument("max_anchors must be >= 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("functional returned a non-finite value"));
    }
    let params = GaugeParams::new(set.alpha, set.grid().t_end())?;
    let pts = &set.points;
    let phi_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let a0 = values.iter().position(|v| *v <= phi_min + 0.25 * kappa * kappa).unwrap_or(0);
    let mut anchors = vec![a0];
    let mut acc = values.to_vec();
    let (minimizer_index, stationary) = loop {
        let j = anchors.len() - 1;
        let w = kappa * powi(0.5, j as i32);
        let a = &pts[anchors[j]];
        let mu = map_indexed(pts.len(), |i| eval_mu_alpha(&pts[i], a, &params).unwrap_or(f64::INFINITY));
        for (s, m) in acc.iter_mut().zip(mu) {
            *s += w * m;
        }
        let next = first_argmin(&acc);
        if next == anchors[j] {
            break (next, true);
        }
        if anchors.len() == max_anchors {
            break (next, false);
        }
        anchors.push(next);
    };
    let anchor_paths: Vec<SampledPath> = anchors.iter().map(|&i| pts[i].clone()).collect();
    let pert = Perturbation::new(anchor_paths, kappa, params, stationary)?;
    let psi = map_indexed(pts.len(), |i| pert.eval(&pts[i]));
    let psi = psi.into_iter().collect::<Result<Vec<f64>, Error>>()?;
    let total: Vec<f64> = values.iter().zip(&psi).map(|(a, b)| a + b).collect();
    let best = total.iter().copied().fold(f64::INFINITY, f64::min);
    let p_star = pts[minimizer_index].clone();
    let anchor_mu = pert
        .anchors()
        .iter()
        .map(|a| eval_mu_alpha(&p_star, a, &params))
        .collect::<Result<Vec<f64>, Error>>()?;
    let anchor_bounds = (0..anchors.len()).map(|j| kappa * powi(0.5, j as i32)).collect();
    let (dt_psi, grad_psi) = match pert.ci_derivatives(&p_star) {
        Ok((d, g)) => (Some(d), Some(g)),
        Err(_) => (None, None),
    };
    let t_end = set.grid().t_end();
    Ok(BpResult {
        minimizer_index,
        minimizer: p_star,
        perturbation: pert,
        anchor_indices: anchors,
        anchor_mu,
        anchor_bounds,
        phi_min,
        objective: total[minimizer_index],
        minimality_gap: total[minimizer_index] - best,
        psi_min: psi.iter().copied().fold(f64::INFINITY, f64::min),
        psi_max: psi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        psi_bound: 2.0 * params.c_alpha() * kappa,
        dt_psi,
        grad_psi,
        dt_bound: 4.0 * t_end * kappa,
        grad_bound: 8.0 * set.alpha * kappa,
    })
}

fn first_argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// `φ(t, x) = ⟨a, x(t)⟩ + m t`; `a = 0, m = 1` is `φ = t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFunctional {
    pub a: Vec<f64>,
    pub m: f64,
}

impl Functional for AffineFunctional {
    fn eval(&self, p: &SampledPath) -> f64 {
        dot(&self.a, p.current()) + self.m * p.t()
    }

    fn tags(&self) -> Tags {
        Tags::LIPSCHITZ
    }
}

/// Controls for [`subgradient_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubgradOptions {
    pub eta: f64,
    /// Penalty scales tried in order; the first attempt meeting every threshold is accepted.
    pub k_schedule: Vec<f64>,
    /// `None` means half the `d₀` estimate.
    pub eps_star: Option<f64>,
    /// Upper bound on the window; `η/(2 + λ_L)` always applies.
    pub delta: Option<f64>,
    /// Membership tolerance of the subdifferential approximation.
    pub tol: f64,
    /// Cap on `|X| · |Y|` evaluations per penalty scale.
    pub budget: u128,
    pub seed: u64,
}

impl SubgradOptions {
    pub fn new(eta: f64, seed: u64) -> Self {
        SubgradOptions {
            eta,
            k_schedule: vec![4.0, 8.0, 16.0],
            eps_star: None,
            delta: None,
            tol: 1e-2,
            budget: 50_000_000,
            seed,
        }
    }
}

/// Candidate `(p₀, p)` for `D⁻φ` at the returned point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SubgradientCandidate {
    pub p0: f64,
    pub p: Vec<f64>,
}

/// One penalty scale of the search.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SubgradAttempt {
    pub k: f64,
    pub kappa: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub point: SampledPath,
    pub t: f64,
    /// The `Y` component: trajectory index and restriction time.
    pub omega: usize,
    pub tau: f64,
    pub anchors: usize,
    /// `Ψ` and `(t − τ)²` at the minimizer next to `β/k` and `β/k⁴`.
    pub penalty_psi: f64,
    pub penalty_psi_bound: f64,
    pub gap2: f64,
    pub gap2_bound: f64,
    pub dt_psi: f64,
    pub grad_psi_norm: f64,
    pub candidate: SubgradientCandidate,
    /// `min_{l ∈ L} p₀ + ⟨p, l⟩`.
    pub margin: f64,
    pub rho_inf: f64,
    pub membership_violation: f64,
    pub member: bool,
    pub penalty_ok: bool,
    pub thresholds_ok: bool,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SubgradReport {
    pub d0_estimate: f64,
    pub eps_star: f64,
    pub lambda_l: f64,
    pub delta: f64,
    pub window_steps: usize,
    /// Spacing of the tube stencil, the covering radius of `X` inside the tube.
    pub tube_spacing: f64,
    pub x_size: usize,
    pub trajectories: usize,
    pub beta: f64,
    pub c_alpha: f64,
    pub attempts: Vec<SubgradAttempt>,
    /// Index into `attempts`.
    pub accepted: Option<usize>,
    pub seed: u64,
}

impl SubgradReport {
    pub fn success(&self) -> bool {
        self.accepted.is_some()
    }

    pub fn accepted_attempt(&self) -> Option<&SubgradAttempt> {
        self.accepted.map(|i| &self.attempts[i])
    }
}

/// Straight directions spanning the trajectory family `Ω` (vertices and centroid, or the axis
/// points of a ball plus its center), duplicates dropped.
fn omega_directions(l: &DirectionSet) -> Vec<Vec<f64>> {
    let n = l.n();
    let mut out: Vec<Vec<f64>> = Vec::new();
    match l.kind() {
        DirectionKind::Polytope { vertices } => {
            out.extend(vertices.iter().cloned());
            let mut c = vec![0.0; n];
            for v in vertices {
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci += vi / vertices.len() as f64;
                }
            }
            out.push(c);
        }
        DirectionKind::Ball { radius } => {
            out.push(vec![0.0; n]);
            for i in 0..n {
                for sgn in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[i] = sgn * radius;
                    out.push(v);
                }
            }
        }
    }
    let mut dedup: Vec<Vec<f64>> = Vec::new();
    for v in out {
        if !dedup.contains(&v) {
            dedup.push(v);
        }
    }
    dedup
}

fn max_norm_of(l: &DirectionSet) -> f64 {
    match l.kind() {
        DirectionKind::Polytope { vertices } => vertices.iter().map(|v| norm(v)).fold(0.0, f64::max),
        DirectionKind::Ball { radius } => *radius,
    }
}

/// `min_{l ∈ L} p₀ + ⟨p, l⟩`, exact for both shapes.
fn margin_over(l: &DirectionSet, c: &SubgradientCandidate) -> f64 {
    match l.kind() {
        DirectionKind::Polytope { vertices } => {
            vertices.iter().map(|v| c.p0 + dot(&c.p, v)).fold(f64::INFINITY, f64::min)
        }
        DirectionKind::Ball { radius } => c.p0 - radius * norm(&c.p),
    }
}

/// `Ψ(x, ω_τ)` for a real `τ`: the restriction of `ω` is frozen between nodes. Both paths agree
/// before node `s0`, so the integral starts there. `τ` is an extra quadrature breakpoint.
fn psi_cont(x: &SampledPath, w: &SampledPath, tau: f64, s0: usize) -> f64 {
    let g = x.grid();
    let n = g.n();
    let end = x.t().max(tau);
    let mut bps: Vec<f64> = (s0..g.nodes()).map(|i| g.node_time(i)).take_while(|s| *s < end).collect();
    bps.push(tau);
    bps.push(end);
    bps.sort_by(|a, b| a.total_cmp(b));
    bps.dedup_by(|a, b| abs(*a - *b) < 1e-14);
    let mut xa = vec![0.0; n];
    let mut ya = vec![0.0; n];
    let mut f = |s: f64| {
        x.eval(s, &mut xa);
        w.eval(s.min(tau), &mut ya);
        dist2(&xa, &ya)
    };
    let mut integral = 0.0;
    let mut prev = f(bps[0]);
    for pair in bps.windows(2) {
        let cur = f(pair[1]);
        integral += 0.5 * (pair[1] - pair[0]) * (prev + cur);
        prev = cur;
    }
    integral += (g.t_end() - end) * prev;
    let mut wt = vec![0.0; n];
    w.eval(tau, &mut wt);
    dist2(x.current(), &wt) + integral
}

/// `∇₁Ψ(x, ω_τ) = 2(x(t) − ω(τ)) + 2∫_t^T (x(t) − ω(ξ∧τ)) dξ`; exact for piecewise-linear `ω`.
fn grad1_psi_cont(x: &SampledPath, w: &SampledPath, tau: f64) -> Vec<f64> {
    let g = x.grid();
    let n = g.n();
    let t = x.t();
    let end = t.max(tau);
    let xt = x.current();
    let mut bps: Vec<f64> = vec![t, tau, end];
    bps.extend((0..g.nodes()).map(|i| g.node_time(i)).filter(|s| *s > t && *s < end));
    bps.retain(|s| *s >= t);
    bps.sort_by(|a, b| a.total_cmp(b));
    bps.dedup_by(|a, b| abs(*a - *b) < 1e-14);
    let mut ya = vec![0.0; n];
    let mut yb = vec![0.0; n];
    let mut out = vec![0.0; n];
    w.eval(tau.min(t.max(tau)), &mut ya);
    for c in 0..n {
        out[c] = 2.0 * (xt[c] - ya[c]);
    }
    for pair in bps.windows(2) {
        w.eval(pair[0].min(tau), &mut ya);
        w.eval(pair[1].min(tau), &mut yb);
        let h = pair[1] - pair[0];
        for c in 0..n {
            out[c] += h * ((xt[c] - ya[c]) + (xt[c] - yb[c]));
        }
    }
    w.eval(tau, &mut ya);
    for c in 0..n {
        out[c] += 2.0 * (g.t_end() - end) * (xt[c] - ya[c]);
    }
    out
}

/// Geometry shared by every penalty scale.
struct Tube<'a> {
    phi: &'a dyn Functional,
    omegas: Vec<SampledPath>,
    t_star: f64,
    s0: usize,
    window: usize,
    dt: f64,
    eps_star: f64,
}

/// Best `Y` component for `x`: `(value, trajectory, τ)` minimizing
/// `kΨ(x, ω_τ) + k⁴(t − τ)² − ε*(τ − t*)`. Node scan, then golden section around the best node.
fn best_y(tube: &Tube<'_>, x: &SampledPath, k: f64) -> (f64, usize, f64) {
    let k4 = k * k * k * k;
    let t = x.t();
    let lo = tube.t_star;
    let hi = tube.t_star + tube.window as f64 * tube.dt;
    let mut best = (f64::INFINITY, 0usize, lo);
    for (wi, w) in tube.omegas.iter().enumerate() {
        let g = |tau: f64| {
            k * psi_cont(x, w, tau, tube.s0) + k4 * (t - tau) * (t - tau) - tube.eps_star * (tau - tube.t_star)
        };
        let mut jb = 0;
        let mut vb = f64::INFINITY;
        for j in 0..=tube.window {
            let v = g(lo + j as f64 * tube.dt);
            if v < vb {
                vb = v;
                jb = j;
            }
        }
        let mut tb = lo + jb as f64 * tube.dt;
        let a = (lo + (jb as f64 - 1.0) * tube.dt).max(lo);
        let b = (lo + (jb as f64 + 1.0) * tube.dt).min(hi);
        let (tg, vg) = golden(&g, a, b);
        if vg < vb {
            vb = vg;
            tb = tg;
        }
        if vb < best.0 {
            best = (vb, wi, tb);
        }
    }
    best
}

fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (sqrt(5.0) - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..48 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn with_last(x: &SampledPath, v: &[f64]) -> SampledPath {
    let mut vals = x.values().to_vec();
    let n = v.len();
    let len = vals.len();
    vals[len - n..].copy_from_slice(v);
    SampledPath::from_flat(*x.grid(), x.step(), vals).expect("same shape")
}

/// Pattern search on the last node of `x` inside the tube ball around `center`.
fn refine_last(
    x: &SampledPath,
    center: &[f64],
    radius: f64,
    f: &dyn Fn(&SampledPath) -> f64,
) -> SampledPath {
    let n = center.len();
    let mut v = x.current().to_vec();
    let mut best = f(x);
    let mut h = 0.25 * radius;
    let floor = 1e-11 * radius.max(1.0);
    let mut iters = 0;
    while h > floor && iters < 20_000 {
        iters += 1;
        let mut improved = false;
        for c in 0..n {
            for sgn in [1.0, -1.0] {
                let mut cand = v.clone();
                cand[c] += sgn * h;
                if sqrt(dist2(&cand, center)) > radius {
                    continue;
                }
                let val = f(&with_last(x, &cand));
                if val < best {
                    best = val;
                    v = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    with_last(x, &v)
}

/// Searches near `p*` for a point and a candidate `(p₀, p) ∈ D⁻φ` with `p₀ + ⟨p, l⟩ > 0` on `L`.
///
/// Requires a positive `d₀` estimate and a non-empty window on which every sampled trajectory of
/// `Ω` satisfies `φ(ω_τ) − φ(p*) ≥ 2ε*(τ − t*)`. `X` is a finite tube around `Ω` (last-node
/// offsets on a stencil), `Y` the `Ω`-restrictions with real `τ`. Per penalty scale `k`, the
/// `X`-marginal of `γ_k` is minimized with [`bp_minimize_values`], the last node of the winner
/// is refined continuously inside the tube, and `(p₀, p)` is read off the first-order terms.
pub fn subgradient_search(
    phi: &dyn Functional,
    p_star: &SampledPath,
    l: &DirectionSet,
    opts: &SubgradOptions,
) -> Result<SubgradReport, Error> {
    if !phi.tags().rho1_lsc {
        return Err(Error::MissingTag("rho1_lsc"));
    }
    if !phi.tags().locally_lipschitz {
        return Err(Error::MissingTag("locally_lipschitz"));
    }
    if !p_star.in_g0() {
        return Err(Error::Terminal);
    }
    if l.n() != p_star.grid().n() {
        return Err(Error::Length { what: "direction set dimension", expected: p_star.grid().n(), got: l.n() });
    }
    if !(opts.eta > 0.0 && opts.eta.is_finite()) {
        return Err(Error::Argument("eta must be finite and > 0"));
    }
    if opts.k_schedule.is_empty() || opts.k_schedule.iter().any(|k| !(*k >= 1.0)) {
        return Err(Error::Argument("k schedule must be non-empty with entries >= 1"));
    }
    let g = *p_star.grid();
    let dt = g.dt();
    let d0 = dir_deriv_d0(phi, p_star, l, &MultiOptions::new(opts.seed))?.estimate;
    if !(d0 > 0.0) {
        return Err(Error::Precondition { what: "d0 > 0", estimate: d0 });
    }
    let eps_star = opts.eps_star.unwrap_or(0.5 * d0);
    if !(eps_star > 0.0) {
        return Err(Error::Argument("eps_star must be > 0"));
    }
    let lambda_l = 1.1 * max_norm_of(l);
    let mut delta_max = opts.eta / (2.0 + lambda_l);
    if let Some(d) = opts.delta {
        delta_max = delta_max.min(d);
    }
    let room = g.horizon_steps() - p_star.step();
    let w_max = ((delta_max / dt + 1e-9) as usize).min(room);
    if w_max == 0 {
        return Err(Error::Precondition { what: "window covers a grid step", estimate: delta_max });
    }
    let dirs = omega_directions(l);
    let omegas = dirs
        .iter()
        .map(|d| straight_extension(p_star, d, w_max))
        .collect::<Result<Vec<SampledPath>, Error>>()?;
    let phi_star = phi.eval(p_star);
    let s0 = g.delay_steps() + p_star.step();
    // Largest window on which the quotient condition holds along every trajectory.
    let mut window = 0;
    let mut worst_quotient = f64::INFINITY;
    'scan: for j in 1..=w_max {
        for w in &omegas {
            let y = crate::path_core::restrict_steps(w, p_star.step() + j)?;
            let q = (phi.eval(&y) - phi_star) / (j as f64 * dt);
            worst_quotient = worst_quotient.min(q);
            if q < 2.0 * eps_star - 1e-9 {
                break 'scan;
            }
        }
        window = j;
    }
    if window == 0 {
        return Err(Error::Precondition { what: "quotient >= 2 eps_star on the first step", estimate: worst_quotient });
    }
    let delta = window as f64 * dt;
    let n = g.n();
    // Tube stencil: no offset, and ±δ/3, ±2δ/3 along each axis.
    let mut stencil: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for c in 0..n {
        for f in [1.0 / 3.0, 2.0 / 3.0] {
            for sgn in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[c] = sgn * f * delta;
                stencil.push(d);
            }
        }
    }
    let mut xs: Vec<SampledPath> = vec![p_star.clone()];
    let mut centers: Vec<Vec<f64>> = vec![p_star.current().to_vec()];
    for w in &omegas {
        for j in 1..=window {
            let base = crate::path_core::restrict_steps(w, p_star.step() + j)?;
            for d in &stencil {
                let v: Vec<f64> = base.current().iter().zip(d).map(|(a, b)| a + b).collect();
                let x = with_last(&base, &v);
                if !xs.contains(&x) {
                    xs.push(x);
                    centers.push(base.current().to_vec());
                }
            }
        }
    }
    let cells = xs.len() as u128 * omegas.len() as u128 * (window as u128 + 100);
    if cells > opts.budget {
        return Err(Error::Budget { needed: cells, budget: opts.budget });
    }
    let alpha = xs.iter().map(sup_norm).fold(0.0, f64::max).max(1e-9) * (1.0 + 1e-12);
    let set = DiscreteSet { points: xs, alpha };
    let c_alpha = GaugeParams::new(alpha, g.t_end())?.c_alpha();
    let beta = 1.0 + 2.0 * c_alpha + eps_star * delta;
    let phi_vals = map_indexed(set.len(), |i| phi.eval(&set.points[i]));
    let tube = Tube { phi, omegas, t_star: p_star.t(), s0, window, dt, eps_star };
    let schedule_seed = opts.seed ^ 0x5347;

    let mut attempts = Vec::with_capacity(opts.k_schedule.len());
    let mut accepted = None;
    for &k in &opts.k_schedule {
        let kappa = (0.5 / k).min(1.0);
        let ys = map_indexed(set.len(), |i| best_y(&tube, &set.points[i], k));
        let phik: Vec<f64> = phi_vals.iter().zip(&ys).map(|(a, b)| a + b.0).collect();
        let bp = bp_minimize_values(&phik, &set, kappa, 8)?;
        let pert = &bp.perturbation;
        let xi = bp.minimizer_index;
        let mut x = set.points[xi].clone();
        let (_, mut wi, mut tau) = ys[xi];
        if x.step() > p_star.step() {
            for _ in 0..3 {
                let w = &tube.omegas[wi];
                let obj = |z: &SampledPath| {
                    tube.phi.eval(z) + k * psi_cont(z, w, tau, s0) + pert.eval(z).unwrap_or(f64::INFINITY)
                };
                x = refine_last(&x, &centers[xi], delta, &obj);
                let (_, w2, t2) = best_y(&tube, &x, k);
                wi = w2;
                tau = t2;
            }
        }
        let w = &tube.omegas[wi];
        let k4 = k * k * k * k;
        let (dpsi, gpsi) = pert.ci_derivatives(&x)?;
        let g1 = grad1_psi_cont(&x, w, tau);
        let candidate = SubgradientCandidate {
            p0: -2.0 * k4 * (x.t() - tau) - dpsi,
            p: g1.iter().zip(&gpsi).map(|(a, b)| -k * a - b).collect(),
        };
        let margin = margin_over(l, &candidate);
        let rho = rho_inf(&x, p_star)?;
        let l_grid = default_l_grid(&x, lambda_l.max(1.0), schedule_seed);
        let approx = approx_subdifferential(phi, &x, &l_grid, &Schedule::dyadic(&x)?, opts.tol)?;
        let violation = approx.violation(candidate.p0, &candidate.p);
        let member = violation <= opts.tol;
        let penalty_psi = psi_cont(&x, w, tau, s0);
        let gap2 = (x.t() - tau) * (x.t() - tau);
        let grad_psi_norm = norm(&gpsi);
        let penalty_ok = penalty_psi <= beta / k && gap2 <= beta / k4;
        let thresholds_ok = 3.0 * lambda_l * abs(x.t() - tau) <= delta
            && abs(dpsi) <= 0.25 * eps_star
            && lambda_l * grad_psi_norm <= 0.25 * eps_star;
        let success = penalty_ok && thresholds_ok && member && margin > 0.0 && rho <= opts.eta;
        if success && accepted.is_none() {
            accepted = Some(attempts.len());
        }
        attempts.push(SubgradAttempt {
            k,
            kappa,
            t: x.t(),
            point: x,
            omega: wi,
            tau,
            anchors: bp.anchor_indices.len(),
            penalty_psi,
            penalty_psi_bound: beta / k,
            gap2,
            gap2_bound: beta / k4,
            dt_psi: dpsi,
            grad_psi_norm,
            candidate,
            margin,
            rho_inf: rho,
            membership_violation: violation,
            member,
            penalty_ok,
            thresholds_ok,
            success,
        });
    }
    Ok(SubgradReport {
        d0_estimate: d0,
        eps_star,
        lambda_l,
        delta,
        window_steps: window,
        tube_spacing: delta / 3.0,
        x_size: set.len(),
        trajectories: tube.omegas.len(),
        beta,
        c_alpha,
        attempts,
        accepted,
        seed: opts.seed,
    })
}

/// One element of a constructed sequence `p_k → q`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConvergenceRow {
    pub k: usize,
    pub mu: f64,
    pub rho_inf: f64,
}

/// Worst margins of the sampled gauge axioms on `G(α)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct GaugeAxiomReport {
    pub alpha: f64,
    pub c_alpha: f64,
    pub samples: usize,
    pub seed: u64,
    /// `min μ_α(p, q)` over random ordered pairs.
    pub nonneg_min: f64,
    /// `max |μ_α(p, p)|`.
    pub diagonal_max: f64,
    /// `min (T² + 2(‖x‖ + ‖y‖)² − μ_α(p, q))` over pairs with `t ≥ τ`.
    pub bound_margin: f64,
    pub bound_pairs: usize,
    pub convergence: Vec<ConvergenceRow>,
    /// `ρ∞` is non-increasing on the second half of the sequence and ends below its start.
    pub monotone_tail: bool,
    /// `min_j μ_α(p_j, q) − μ_α(p, q)` on the last perturbation level, over sampled pairs.
    pub lsc_gap: f64,
    /// Allowed dip: a Lipschitz-type bound times the last perturbation size.
    pub lsc_allowance: f64,
}

impl GaugeAxiomReport {
    pub fn passed(&self) -> bool {
        self.nonneg_min >= 0.0
            && self.diagonal_max == 0.0
            && self.bound_margin >= -1e-12
            && self.monotone_tail
            && self.lsc_gap >= -self.lsc_allowance
    }
}

const LSC_LEVELS: i32 = 10;

/// Sampled checks of non-negativity, the diagonal, the growth bound for `t ≥ τ`, the implication
/// `μ → 0 ⇒ ρ∞ → 0` on a shrinking sequence, and lower semicontinuity under shrinking bumps.
pub fn gauge_axiom_suite(alpha: f64, grid: &GridSpec, samples: usize, seed: u64) -> Result<GaugeAxiomReport, Error> {
    let params = GaugeParams::new(alpha, grid.t_end())?;
    if samples == 0 {
        return Err(Error::Empty("samples"));
    }
    // Half amplitude leaves room for the bumps in the sequences below.
    let set = DiscreteSet::random(*grid, samples, 0.5 * alpha, seed)?;
    let pts = set.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6761);
    let pairs: Vec<(usize, usize)> =
        (0..samples).map(|_| (rng.gen_range(0..pts.len()), rng.gen_range(0..pts.len()))).collect();
    let mus = map_indexed(pairs.len(), |i| eval_mu_alpha(&pts[pairs[i].0], &pts[pairs[i].1], &params));
    let mus = mus.into_iter().collect::<Result<Vec<f64>, Error>>()?;
    let nonneg_min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let mut diagonal_max: f64 = 0.0;
    for p in pts {
        diagonal_max = diagonal_max.max(abs(eval_mu_alpha(p, p, &params)?));
    }
    let t2 = grid.t_end() * grid.t_end();
    let mut bound_margin = f64::INFINITY;
    let mut bound_pairs = 0;
    for (&(i, j), mu) in pairs.iter().zip(&mus) {
        let (p, q) = (&pts[i], &pts[j]);
        if p.step() >= q.step() {
            let s = sup_norm(p) + sup_norm(q);
            bound_margin = bound_margin.min(t2 + 2.0 * s * s - mu);
            bound_pairs += 1;
        }
    }

    // Extension of q shrinking to zero length plus a shrinking bump on the history.
    let q = &pts[0];
    let room = grid.horizon_steps() - q.step();
    let bump = 0.25 * alpha / sqrt(grid.n() as f64);
    let mut convergence = Vec::new();
    for k in 0..16 {
        let steps = room >> k;
        let mut dir = vec![0.0; grid.n()];
        dir[0] = 0.25 * alpha;
        let ext = straight_extension(q, &dir, steps)?;
        let p = bumped(&ext, bump * powi(0.5, k));
        convergence.push(ConvergenceRow {
            k: k as usize,
            mu: eval_mu_alpha(&p, q, &params)?,
            rho_inf: rho_inf(&p, q)?,
        });
    }
    let half = convergence.len() / 2;
    let monotone_tail = convergence[half..].windows(2).all(|w| w[1].rho_inf <= w[0].rho_inf)
        && convergence[convergence.len() - 1].rho_inf < convergence[0].rho_inf;

    // Lower semicontinuity: p_j = p + 2^{-j}·bump with t ≥ τ.
    let mut lsc_gap = f64::INFINITY;
    for &(i, j) in pairs.iter().take((samples / 10).max(1)) {
        let (p, q) = if pts[i].step() >= pts[j].step() { (&pts[i], &pts[j]) } else { (&pts[j], &pts[i]) };
        let base = eval_mu_alpha(p, q, &params)?;
        let last = eval_mu_alpha(&bumped(p, bump * powi(0.5, LSC_LEVELS)), q, &params)?;
        lsc_gap = lsc_gap.min(last - base);
    }
    let lsc_allowance = 8.0 * (2.0 * alpha + 1.0) * bump * powi(0.5, LSC_LEVELS);
    Ok(GaugeAxiomReport {
        alpha,
        c_alpha: params.c_alpha(),
        samples,
        seed,
        nonneg_min,
        diagonal_max,
        bound_margin,
        bound_pairs,
        convergence,
        monotone_tail,
        lsc_gap,
        lsc_allowance,
    })
}

/// Adds `amp · sin(i)` to the first coordinate of every node.
fn bumped(p: &SampledPath, amp: f64) -> SampledPath {
    let n = p.grid().n();
    let mut vals = p.values().to_vec();
    for (i, row) in vals.chunks_exact_mut(n).enumerate() {
        row[0] += amp * libm::sin(i as f64);
    }
    SampledPath::from_flat(*p.grid(), p.step(), vals).expect("same shape")
}
