//! History paths on a uniform grid, the two path metrics, restriction and extension operators.
//!
//! A path `x: [-h, t] -> R^n` is stored by its values at the nodes `-h, -h + dt, ..., t` and is
//! linear between nodes. Every time argument is a node, so restriction and extension are exact.
//! Node `i` (counted from `-h`) sits at time `(i - h/dt) * dt`; step `k` (counted from `0`) is
//! node `h/dt + k`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Error;
use crate::math::{abs, dist, dist2, norm, norm2, round, sqrt};

/// Relative tolerance used to decide that a ratio of times is an integer.
const NODE_TOL: f64 = 1e-9;

/// Uniform time grid over `[-h, T]` for `R^n`-valued paths.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct GridSpec {
    h: f64,
    t_end: f64,
    dt: f64,
    n: usize,
    delay_steps: usize,
    horizon_steps: usize,
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = round(r);
    if k >= 0.0 && abs(r - k) <= NODE_TOL * if k > 1.0 { k } else { 1.0 } {
        Some(k as usize)
    } else {
        None
    }
}

impl GridSpec {
    /// Validates `h > 0`, `T > 0`, `dt > 0`, `n >= 1`, that `h/dt` and `T/dt` are integers and
    /// that `dt <= T/4`.
    pub fn new(h: f64, t_end: f64, dt: f64, n: usize) -> Result<Self, Error> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Grid { field: "h", reason: "must be finite and > 0" });
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Grid { field: "T", reason: "must be finite and > 0" });
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Grid { field: "dt", reason: "must be finite and > 0" });
        }
        if n == 0 {
            return Err(Error::Grid { field: "n", reason: "must be a positive integer" });
        }
        let delay_steps = integer_ratio(h, dt)
            .ok_or(Error::Grid { field: "dt", reason: "h/dt must be an integer" })?;
        let horizon_steps = integer_ratio(t_end, dt)
            .ok_or(Error::Grid { field: "dt", reason: "T/dt must be an integer" })?;
        if horizon_steps < 4 {
            return Err(Error::Grid { field: "dt", reason: "dt must not exceed T/4" });
        }
        Ok(GridSpec { h, t_end, dt, n, delay_steps, horizon_steps })
    }

    /// Grid with `h = delay_steps * dt` and `T = horizon_steps * dt`.
    pub fn from_steps(delay_steps: usize, horizon_steps: usize, dt: f64, n: usize) -> Result<Self, Error> {
        Self::new(delay_steps as f64 * dt, horizon_steps as f64 * dt, dt, n)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `h / dt`.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// `T / dt`.
    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// Number of nodes on `[-h, T]`.
    pub fn nodes(&self) -> usize {
        self.delay_steps + self.horizon_steps + 1
    }

    /// Time of node `i` counted from `-h`.
    pub fn node_time(&self, i: usize) -> f64 {
        (i as f64 - self.delay_steps as f64) * self.dt
    }

    /// Time of step `k` counted from `0`.
    pub fn step_time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Step index of a time in `[0, T]` that must be a node.
    pub fn step_of(&self, t: f64) -> Result<usize, Error> {
        self.step_of_named(t, "t")
    }

    pub(crate) fn step_of_named(&self, t: f64, what: &'static str) -> Result<usize, Error> {
        if !t.is_finite() || t < -NODE_TOL * self.dt {
            return Err(Error::NotANode { what, value: t });
        }
        match integer_ratio(t.max(0.0), self.dt) {
            Some(k) if k <= self.horizon_steps => Ok(k),
            _ => Err(Error::NotANode { what, value: t }),
        }
    }
}

/// A history `x(·)` on `[-h, t]`, stored node-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    grid: GridSpec,
    step: usize,
    values: Vec<f64>,
}

/// The pair `(t, x(·))`. A sampled path carries its own current time, so the pair is the path.
pub type PathPoint = SampledPath;

impl SampledPath {
    /// Path ending at step `step` from row-major values (`(h/dt + step + 1) * n` numbers).
    pub fn from_flat(grid: GridSpec, step: usize, values: Vec<f64>) -> Result<Self, Error> {
        if step > grid.horizon_steps {
            return Err(Error::NotANode { what: "t", value: grid.step_time(step) });
        }
        let expected = (grid.delay_steps + step + 1) * grid.n;
        if values.len() != expected {
            return Err(Error::Length { what: "values", expected, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("path values must be finite"));
        }
        Ok(SampledPath { grid, step, values })
    }

    /// Path ending at time `t` from one row per node.
    pub fn from_rows(grid: GridSpec, t: f64, rows: &[Vec<f64>]) -> Result<Self, Error> {
        let step = grid.step_of(t)?;
        let expected = grid.delay_steps + step + 1;
        if rows.len() != expected {
            return Err(Error::Length { what: "values", expected, got: rows.len() });
        }
        let mut values = Vec::with_capacity(expected * grid.n);
        for row in rows {
            if row.len() != grid.n {
                return Err(Error::Length { what: "values row", expected: grid.n, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(grid, step, values)
    }

    /// Path ending at step `step` sampled from `f(time, out)` at every node.
    pub fn from_fn(grid: GridSpec, step: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        assert!(step <= grid.horizon_steps, "step beyond horizon");
        let rows = grid.delay_steps + step + 1;
        let mut values = vec![0.0; rows * grid.n];
        for (i, row) in values.chunks_exact_mut(grid.n).enumerate() {
            f(grid.node_time(i), row);
        }
        SampledPath { grid, step, values }
    }

    /// Constant path `x ≡ c` ending at step `step`.
    pub fn constant(grid: GridSpec, step: usize, c: &[f64]) -> Self {
        assert_eq!(c.len(), grid.n, "constant has wrong dimension");
        Self::from_fn(grid, step, |_, out| out.copy_from_slice(c))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Current time `t`.
    pub fn t(&self) -> f64 {
        self.grid.step_time(self.step)
    }

    /// Current step `t / dt`.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of stored nodes, `(t + h)/dt + 1`.
    pub fn len(&self) -> usize {
        self.values.len() / self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at node `i` (counted from `-h`).
    pub fn node(&self, i: usize) -> &[f64] {
        let n = self.grid.n;
        &self.values[i * n..(i + 1) * n]
    }

    /// `x(t)`.
    pub fn current(&self) -> &[f64] {
        self.node(self.len() - 1)
    }

    /// `x(ξ_i ∧ t)`: the value at node `i`, frozen at `x(t)` beyond the current time.
    pub fn frozen(&self, i: usize) -> &[f64] {
        self.node(i.min(self.len() - 1))
    }

    /// Linear interpolation at `time ∈ [-h, t]`.
    pub fn eval(&self, time: f64, out: &mut [f64]) {
        let g = &self.grid;
        let pos = ((time + g.h) / g.dt).clamp(0.0, (self.len() - 1) as f64);
        let i = pos as usize;
        if i + 1 >= self.len() {
            out.copy_from_slice(self.node(self.len() - 1));
            return;
        }
        let w = pos - i as f64;
        for ((o, a), b) in out.iter_mut().zip(self.node(i)).zip(self.node(i + 1)) {
            *o = (1.0 - w) * a + w * b;
        }
    }

    /// Membership in `G₀` (`t < T`).
    pub fn in_g0(&self) -> bool {
        self.step < self.grid.horizon_steps
    }

    /// Membership in `G(α)` (sup-norm at most `α`).
    pub fn in_g_alpha(&self, alpha: f64) -> bool {
        sup_norm(self) <= alpha
    }

    pub(crate) fn push_node(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.grid.n);
        debug_assert!(self.step < self.grid.horizon_steps);
        self.values.extend_from_slice(row);
        self.step += 1;
    }

    pub(crate) fn truncate_to_step(&mut self, step: usize) {
        debug_assert!(step <= self.step);
        self.values.truncate((self.grid.delay_steps + step + 1) * self.grid.n);
        self.step = step;
    }
}

fn same_grid(p: &SampledPath, q: &SampledPath) -> Result<(), Error> {
    if p.grid == q.grid {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Node-wise maximum of `‖x(ξ)‖` over `[-h, t]`.
pub fn sup_norm(p: &SampledPath) -> f64 {
    sqrt(sup_norm2(p))
}

pub(crate) fn sup_norm2(p: &SampledPath) -> f64 {
    p.values.chunks_exact(p.grid.n).map(norm2).fold(0.0, f64::max)
}

/// `x(·∧t)` on `[-h, to]`.
pub fn constant_extension(p: &SampledPath, to: f64) -> Result<SampledPath, Error> {
    let to_step = p.grid.step_of_named(to, "to")?;
    constant_extension_steps(p, to_step)
}

/// [`constant_extension`] with the target given as a step index.
pub fn constant_extension_steps(p: &SampledPath, to_step: usize) -> Result<SampledPath, Error> {
    if to_step < p.step {
        return Err(Error::TimeOrder { what: "extension target precedes the current time" });
    }
    if to_step > p.grid.horizon_steps {
        return Err(Error::NotANode { what: "to", value: p.grid.step_time(to_step) });
    }
    let mut out = p.clone();
    let last = p.current().to_vec();
    out.values.reserve((to_step - p.step) * p.grid.n);
    for _ in p.step..to_step {
        out.push_node(&last);
    }
    Ok(out)
}

/// Restriction `z_t(·)` of a path to `[-h, t]`.
pub fn restrict(z: &SampledPath, t: f64) -> Result<SampledPath, Error> {
    let k = z.grid.step_of(t)?;
    restrict_steps(z, k)
}

/// [`restrict`] with the time given as a step index.
pub fn restrict_steps(z: &SampledPath, step: usize) -> Result<SampledPath, Error> {
    if step > z.step {
        return Err(Error::TimeOrder { what: "restriction time beyond the path's end" });
    }
    let rows = z.grid.delay_steps + step + 1;
    Ok(SampledPath { grid: z.grid, step, values: z.values[..rows * z.grid.n].to_vec() })
}

/// Index of the last node at which `x(·∧t)` and `y(·∧τ)` can still differ non-constantly.
fn joint_last_node(p: &SampledPath, q: &SampledPath) -> usize {
    p.len().max(q.len()) - 1
}

/// `ρ∞ = |t − τ| + max_ξ ‖x(ξ∧t) − y(ξ∧τ)‖` over `[-h, T]`.
pub fn rho_inf(p: &SampledPath, q: &SampledPath) -> Result<f64, Error> {
    same_grid(p, q)?;
    let m = joint_last_node(p, q);
    let sup2 = (0..=m).map(|i| dist2(p.frozen(i), q.frozen(i))).fold(0.0, f64::max);
    Ok(abs(p.t() - q.t()) + sqrt(sup2))
}

/// `ρ₁ = |t − τ| + ‖x(t) − y(τ)‖ + ∫_{-h}^{T} ‖x(ξ∧t) − y(ξ∧τ)‖ dξ` (trapezoid rule).
pub fn rho_1(p: &SampledPath, q: &SampledPath) -> Result<f64, Error> {
    same_grid(p, q)?;
    let g = &p.grid;
    let m = joint_last_node(p, q);
    let mut integral = 0.0;
    let mut prev = dist(p.frozen(0), q.frozen(0));
    for i in 1..=m {
        let cur = dist(p.frozen(i), q.frozen(i));
        integral += 0.5 * g.dt * (prev + cur);
        prev = cur;
    }
    // Both arguments are frozen beyond node m, so the integrand is constant there.
    integral += (g.t_end - g.node_time(m)) * prev;
    Ok(abs(p.t() - q.t()) + dist(p.current(), q.current()) + integral)
}

/// Extends `p` by `derivs.len() / n` steps with `z(node + dt) = z(node) + dt * deriv`.
/// `derivs` is row-major, one `R^n` vector per step.
pub fn extend_by(p: &SampledPath, derivs: &[f64]) -> Result<SampledPath, Error> {
    let n = p.grid.n;
    if !derivs.len().is_multiple_of(n) {
        return Err(Error::Length { what: "derivatives", expected: n * (derivs.len() / n + 1), got: derivs.len() });
    }
    let steps = derivs.len() / n;
    if p.step + steps > p.grid.horizon_steps {
        return Err(Error::Length {
            what: "derivatives",
            expected: (p.grid.horizon_steps - p.step) * n,
            got: derivs.len(),
        });
    }
    let mut out = p.clone();
    out.values.reserve(derivs.len());
    let mut row = p.current().to_vec();
    let dt = p.grid.dt;
    for d in derivs.chunks_exact(n) {
        for (r, v) in row.iter_mut().zip(d) {
            *r += dt * v;
        }
        out.push_node(&row);
    }
    Ok(out)
}

/// Lipschitz extension of `p` to `[-h, T]` with one derivative vector per step of `[t, T]`
/// (row-major).
pub fn make_extension(p: &SampledPath, derivs: &[f64]) -> Result<SampledPath, Error> {
    let expected = (p.grid.horizon_steps - p.step) * p.grid.n;
    if derivs.len() != expected {
        return Err(Error::Length { what: "derivatives", expected, got: derivs.len() });
    }
    extend_by(p, derivs)
}

/// Straight extension `z^{[l]}(τ) = x(t) + (τ − t) l` over the next `steps` steps.
pub fn straight_extension(p: &SampledPath, l: &[f64], steps: usize) -> Result<SampledPath, Error> {
    if l.len() != p.grid.n {
        return Err(Error::Length { what: "direction", expected: p.grid.n, got: l.len() });
    }
    let mut derivs = Vec::with_capacity(steps * l.len());
    for _ in 0..steps {
        derivs.extend_from_slice(l);
    }
    extend_by(p, &derivs)
}

/// Trapezoid rule over node samples `f` on `[a, b]`. `f[i]` is the sample at node `i` counted
/// from `-h`; it must cover every node up to `b`.
pub fn integrate_scalar(grid: &GridSpec, f: &[f64], a: f64, b: f64) -> Result<f64, Error> {
    let ia = node_index(grid, a, "a")?;
    let ib = node_index(grid, b, "b")?;
    if ib < ia {
        return Err(Error::TimeOrder { what: "integration bounds are reversed" });
    }
    if f.len() <= ib {
        return Err(Error::Length { what: "samples", expected: ib + 1, got: f.len() });
    }
    Ok(trapezoid(&f[ia..=ib], grid.dt))
}

fn node_index(grid: &GridSpec, t: f64, what: &'static str) -> Result<usize, Error> {
    let shifted = t + grid.h;
    if !shifted.is_finite() || shifted < -NODE_TOL * grid.dt {
        return Err(Error::NotANode { what, value: t });
    }
    match integer_ratio(shifted.max(0.0), grid.dt) {
        Some(i) if i < grid.nodes() => Ok(i),
        _ => Err(Error::NotANode { what, value: t }),
    }
}

pub(crate) fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    samples.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum()
}

/// Random piecewise-affine path ending at step `step`: `knots` breakpoints on nodes of
/// `[-h, t]`, values uniform in `[-amplitude, amplitude]^n`, linear in between.
pub fn random_piecewise_affine<R: Rng + ?Sized>(
    grid: GridSpec,
    step: usize,
    knots: usize,
    amplitude: f64,
    rng: &mut R,
) -> SampledPath {
    let n = grid.n;
    let last = grid.delay_steps + step;
    let mut idx: Vec<usize> = vec![0, last];
    for _ in 0..knots.saturating_sub(2) {
        idx.push(rng.gen_range(0..=last));
    }
    idx.sort_unstable();
    idx.dedup();
    let knot_vals: Vec<f64> = (0..idx.len() * n).map(|_| rng.gen_range(-amplitude..=amplitude)).collect();
    let mut values = vec![0.0; (last + 1) * n];
    let mut seg = 0;
    for i in 0..=last {
        while seg + 1 < idx.len() - 1 && i > idx[seg + 1] {
            seg += 1;
        }
        let (i0, i1) = (idx[seg], idx[(seg + 1).min(idx.len() - 1)]);
        let w = if i1 > i0 { (i - i0) as f64 / (i1 - i0) as f64 } else { 0.0 };
        for c in 0..n {
            let a = knot_vals[seg * n + c];
            let b = knot_vals[(seg + 1).min(idx.len() - 1) * n + c];
            values[i * n + c] = (1.0 - w) * a + w * b;
        }
    }
    SampledPath { grid, step, values }
}

/// Largest step-to-step slope `‖z(ξ_{i+1}) − z(ξ_i)‖ / dt` on `[t_from, end]`, from step index.
pub fn lipschitz_constant_from(z: &SampledPath, from_step: usize) -> f64 {
    let g = &z.grid;
    let start = g.delay_steps + from_step;
    (start..z.len() - 1).map(|i| dist(z.node(i), z.node(i + 1)) / g.dt).fold(0.0, f64::max)
}

/// Euclidean norm re-exported for callers working with raw rows.
pub fn euclid(v: &[f64]) -> f64 {
    norm(v)
}
