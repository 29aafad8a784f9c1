//! The smooth gauge functional `V`, its two-argument variants `V̄`, `μ_α` and `Ψ`, closed-form
//! coinvariant derivatives, bound certificates, and the direction-dependence probe.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::math::{abs, dist2, norm2, sqrt};
use crate::path_core::{restrict_steps, straight_extension, GridSpec, SampledPath};

/// Below this sup-norm `V` takes its zero branch.
pub const ZERO_BRANCH: f64 = 1e-14;

/// `(3 − √5)/2`, the lower constant in the two-sided bound on `V`.
pub fn v_lower_constant() -> f64 {
    (3.0 - sqrt(5.0)) / 2.0
}

/// Radius `α` and horizon `T`; `c_α = T² + 8α² + 1` is derived on demand.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct GaugeParams {
    alpha: f64,
    t_end: f64,
}

impl GaugeParams {
    pub fn new(alpha: f64, t_end: f64) -> Result<Self, Error> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Argument("alpha must be finite and > 0"));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Argument("T must be finite and > 0"));
        }
        Ok(GaugeParams { alpha, t_end })
    }

    pub fn for_grid(alpha: f64, grid: &GridSpec) -> Result<Self, Error> {
        Self::new(alpha, grid.t_end())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn c_alpha(&self) -> f64 {
        self.t_end * self.t_end + 8.0 * self.alpha * self.alpha + 1.0
    }
}

/// `V` from `‖x‖²_{[-h,t]}` and `‖x(t)‖²`.
fn v_from(sup2: f64, cur2: f64) -> f64 {
    if sup2 < ZERO_BRANCH * ZERO_BRANCH {
        return 0.0;
    }
    let d = sup2 - cur2;
    d * d / sup2 + cur2
}

/// Squared sup-norm over nodes `0..=last` of `x(·∧t) − y(·∧τ)`, and the squared norm at `last`.
fn diff_stats(x: &SampledPath, y: &SampledPath, last: usize) -> (f64, f64) {
    let mut sup2: f64 = 0.0;
    let mut cur2 = 0.0;
    for i in 0..=last {
        cur2 = dist2(x.frozen(i), y.frozen(i));
        sup2 = sup2.max(cur2);
    }
    (sup2, cur2)
}

fn same_grid(p: &SampledPath, q: &SampledPath) -> Result<(), Error> {
    if p.grid() == q.grid() {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `V(t, x) = (‖x‖² − ‖x(t)‖²)²/‖x‖² + ‖x(t)‖²`, zero for the zero path.
pub fn eval_v(p: &SampledPath) -> f64 {
    let sup2 = crate::path_core::sup_norm2(p);
    v_from(sup2, norm2(p.current()))
}

/// `∂_t V = 0` on `G₀`.
pub fn dt_v(p: &SampledPath) -> Result<f64, Error> {
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    Ok(0.0)
}

/// `∇V = (2 − 4(‖x‖² − ‖x(t)‖²)/‖x‖²) x(t)` on `G₀`.
pub fn grad_v(p: &SampledPath) -> Result<Vec<f64>, Error> {
    if !p.in_g0() {
        return Err(Error::Terminal);
    }
    Ok(grad_v_unchecked(p))
}

fn grad_from(sup2: f64, cur: &[f64]) -> Vec<f64> {
    if sup2 < ZERO_BRANCH * ZERO_BRANCH {
        return vec![0.0; cur.len()];
    }
    let factor = 2.0 - 4.0 * (sup2 - norm2(cur)) / sup2;
    cur.iter().map(|c| factor * c).collect()
}

pub(crate) fn grad_v_unchecked(p: &SampledPath) -> Vec<f64> {
    grad_from(crate::path_core::sup_norm2(p), p.current())
}

/// Margins `(V − (3−√5)/2 ‖x‖², 2‖x‖² − V)`; both are non-negative up to rounding.
pub fn check_v_bounds(p: &SampledPath) -> (f64, f64) {
    let sup2 = crate::path_core::sup_norm2(p);
    let v = v_from(sup2, norm2(p.current()));
    (v - v_lower_constant() * sup2, 2.0 * sup2 - v)
}

/// Margin `2‖x(t)‖ − ‖∇V‖`, non-negative up to rounding.
pub fn check_grad_v_bound(p: &SampledPath) -> f64 {
    let g = grad_v_unchecked(p);
    2.0 * sqrt(norm2(p.current())) - sqrt(norm2(&g))
}

/// `V̄(p, q) = V(T, x(·∧t) − y(·∧τ))`.
pub fn eval_vbar(p: &SampledPath, q: &SampledPath) -> Result<f64, Error> {
    same_grid(p, q)?;
    let (sup2, cur2) = diff_stats(p, q, p.grid().nodes() - 1);
    Ok(v_from(sup2, cur2))
}

/// `μ_α(p, q) = (t − τ)² + V(t, x(·) − y_t(·∧τ))` if `t ≥ τ`, else `c_α`.
pub fn eval_mu_alpha(p: &SampledPath, q: &SampledPath, g: &GaugeParams) -> Result<f64, Error> {
    same_grid(p, q)?;
    if p.step() < q.step() {
        return Ok(g.c_alpha());
    }
    let (sup2, cur2) = diff_stats(p, q, p.len() - 1);
    let dt = p.t() - q.t();
    Ok(dt * dt + v_from(sup2, cur2))
}

/// `∇V(t, x(·) − y_t(·∧τ))` for `t ≥ τ`: the spatial gradient of `μ_α(·, q)` at `p`.
pub(crate) fn grad_mu_space(p: &SampledPath, q: &SampledPath) -> Vec<f64> {
    let (sup2, _) = diff_stats(p, q, p.len() - 1);
    let cur: Vec<f64> = p.current().iter().zip(q.current()).map(|(a, b)| a - b).collect();
    grad_from(sup2, &cur)
}

/// `Ψ(p, q) = ‖x(t) − y(τ)‖² + ∫_{-h}^{T} ‖x(ξ∧t) − y(ξ∧τ)‖² dξ` (trapezoid rule).
pub fn eval_psi(p: &SampledPath, q: &SampledPath) -> Result<f64, Error> {
    same_grid(p, q)?;
    Ok(psi_from(p, q, 0))
}

/// `Ψ` skipping nodes before `from` where both paths are known to agree.
pub(crate) fn psi_from(p: &SampledPath, q: &SampledPath, from: usize) -> f64 {
    let g = p.grid();
    let dt = g.dt();
    let m = p.len().max(q.len()) - 1;
    let from = from.min(m);
    let mut integral = 0.0;
    let mut prev = dist2(p.frozen(from), q.frozen(from));
    for i in from + 1..=m {
        let cur = dist2(p.frozen(i), q.frozen(i));
        integral += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    integral += (g.t_end() - g.node_time(m)) * prev;
    dist2(p.current(), q.current()) + integral
}

/// `∇₁Ψ = 2(x(t) − y(τ)) + 2∫_t^T (x(t) − y(ξ∧τ)) dξ` (trapezoid rule).
pub fn grad1_psi(p: &SampledPath, q: &SampledPath) -> Result<Vec<f64>, Error> {
    same_grid(p, q)?;
    let g = p.grid();
    let n = g.n();
    let dt = g.dt();
    let x_t = p.current();
    let mut out: Vec<f64> = x_t.iter().zip(q.current()).map(|(a, b)| 2.0 * (a - b)).collect();
    let first = p.len() - 1;
    let m = first.max(q.len() - 1);
    // Integrand x(t) − y(ξ∧τ) varies only up to node m and is constant afterwards.
    for i in first..m {
        let (ya, yb) = (q.frozen(i), q.frozen(i + 1));
        for c in 0..n {
            out[c] += 2.0 * 0.5 * dt * ((x_t[c] - ya[c]) + (x_t[c] - yb[c]));
        }
    }
    let tail = g.t_end() - g.node_time(m);
    let y_end = q.frozen(m);
    for c in 0..n {
        out[c] += 2.0 * tail * (x_t[c] - y_end[c]);
    }
    Ok(out)
}

/// `∇₂Ψ(p, q) = ∇₁Ψ(q, p)`.
pub fn grad2_psi(p: &SampledPath, q: &SampledPath) -> Result<Vec<f64>, Error> {
    grad1_psi(q, p)
}

/// `∂_t Ψ(·, q) = 0`.
pub fn dt_psi(p: &SampledPath, q: &SampledPath) -> Result<f64, Error> {
    same_grid(p, q)?;
    Ok(0.0)
}

/// Agreement tolerance for the probe's last three limit estimates.
pub const PROBE_TOL: f64 = 1e-3;

/// Difference quotients of `V̄*` along `z^{[l]}` and their limit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ProbeResult {
    pub l: f64,
    pub taus: Vec<f64>,
    /// `[V̄*(τ, z_τ) − V̄*(0, x*)]/τ`.
    pub quotients: Vec<f64>,
    /// Two-point extrapolations of the quotients to `τ = 0`, rescaled to the implied gradient
    /// `quotient / l` (or left as the time derivative when `l = 0`). The first entry has no
    /// predecessor and repeats the scaled raw quotient.
    pub estimates: Vec<f64>,
    /// The last estimate.
    pub limit: f64,
    /// The last three estimates agree within [`PROBE_TOL`].
    pub converged: bool,
}

/// Default probe schedule `τ = 2^{-k}`, `k = 4..12`.
pub fn default_probe_taus() -> Vec<f64> {
    (4..=12).map(|k| 1.0 / (1u64 << k) as f64).collect()
}

/// Probe of `V̄*(τ, z) = V̄((τ, z), (1, y*))` at `t* = 0`, `x* ≡ 1`, `y*(ξ) = max(ξ, 0)`
/// (`n = 1`, `T = h = 1`) along `z^{[l]}`.
///
/// `l > 1` estimates the would-be gradient `lim [V̄*(τ, z_τ) − V̄*(0, x*)]/(τ l)`; `l = 0`
/// estimates the would-be time derivative. `taus` must be decreasing powers of two.
pub fn counterexample_probe(l: f64, taus: &[f64]) -> Result<ProbeResult, Error> {
    if !(l == 0.0 || l > 1.0) || !l.is_finite() {
        return Err(Error::Argument("probe direction must satisfy l > 1 (or l = 0 for the time probe)"));
    }
    if taus.is_empty() {
        return Err(Error::Empty("probe schedule"));
    }
    if taus.windows(2).any(|w| !(w[1] < w[0])) || taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::Argument("probe schedule must be strictly decreasing in (0, 1]"));
    }
    let dt = taus[taus.len() - 1];
    let grid = GridSpec::new(1.0, 1.0, dt, 1)?;
    let steps: Vec<usize> = taus.iter().map(|t| grid.step_of_named(*t, "tau")).collect::<Result<_, _>>()?;
    let x_star = SampledPath::constant(grid, 0, &[1.0]);
    let y_star = SampledPath::from_fn(grid, grid.horizon_steps(), |xi, out| out[0] = xi.max(0.0));
    let base = eval_vbar(&x_star, &y_star)?;
    let z = straight_extension(&x_star, &[l], steps[0])?;
    let scale = if l == 0.0 { 1.0 } else { l };
    let mut quotients = Vec::with_capacity(taus.len());
    for (&tau, &k) in taus.iter().zip(&steps) {
        let z_tau = restrict_steps(&z, k)?;
        quotients.push((eval_vbar(&z_tau, &y_star)? - base) / tau);
    }
    let mut estimates = Vec::with_capacity(taus.len());
    estimates.push(quotients[0] / scale);
    for j in 1..taus.len() {
        let (t0, t1) = (taus[j - 1], taus[j]);
        let e = (t0 * quotients[j] - t1 * quotients[j - 1]) / (t0 - t1);
        estimates.push(e / scale);
    }
    let limit = estimates[estimates.len() - 1];
    let tail = &estimates[estimates.len().saturating_sub(3)..];
    let converged = tail.len() == 3 && tail.iter().all(|e| abs(e - limit) <= PROBE_TOL);
    Ok(ProbeResult { l, taus: taus.to_vec(), quotients, estimates, limit, converged })
}
