//! Margin checks for the upper/lower minimax and viscosity criteria and their infinitesimal
//! reformulations, plus a cross-validation harness.
//!
//! Every check reports a margin; `margin ≤ tol` is PASS. All margins are estimates from finite
//! samples. Infimum-type margins (minimax, multi-valued derivatives) are upper bounds of the
//! true value, so their PASS verdicts are certified by the witness they report and their FAIL
//! verdicts are evidence. Viscosity margins are maxima over accepted subgradients, so there a
//! FAIL is the certified direction (up to derivative-estimate error).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::ci_calculus::{
    approx_subdifferential, approx_superdifferential, default_l_grid, dir_deriv_d0, dir_deriv_multi,
    dir_deriv_single, lower_right_derivative, random_unit, shift_by_s, stream_rng, DirectionSet, Functional,
    MultiOptions, PolyhedralApprox, Schedule, Side,
};
use crate::delay_control::{integrate_partial, value, velocities, DelayControlProblem, ValueMode};
use crate::error::Error;
use crate::hj_model::{char_ball_radius, characteristic_excess, sample_characteristics_to, Hamiltonian};
use crate::math::{dot, norm};
use crate::par::map_indexed;
use crate::path_core::{extend_by, restrict_steps, SampledPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum CriterionId {
    #[cfg_attr(feature = "serde", serde(rename = "UM"))]
    Um,
    #[cfg_attr(feature = "serde", serde(rename = "LM"))]
    Lm,
    #[cfg_attr(feature = "serde", serde(rename = "UV"))]
    Uv,
    #[cfg_attr(feature = "serde", serde(rename = "LV"))]
    Lv,
    #[cfg_attr(feature = "serde", serde(rename = "UM_MULTI"))]
    UmMulti,
    #[cfg_attr(feature = "serde", serde(rename = "UV_INFEXT"))]
    UvInfext,
    #[cfg_attr(feature = "serde", serde(rename = "UM_LIP"))]
    UmLip,
    #[cfg_attr(feature = "serde", serde(rename = "UM_D0"))]
    UmD0,
}

impl CriterionId {
    pub const ALL: [CriterionId; 8] = [
        CriterionId::Um,
        CriterionId::Lm,
        CriterionId::Uv,
        CriterionId::Lv,
        CriterionId::UmMulti,
        CriterionId::UvInfext,
        CriterionId::UmLip,
        CriterionId::UmD0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionId::Um => "UM",
            CriterionId::Lm => "LM",
            CriterionId::Uv => "UV",
            CriterionId::Lv => "LV",
            CriterionId::UmMulti => "UM_MULTI",
            CriterionId::UvInfext => "UV_INFEXT",
            CriterionId::UmLip => "UM_LIP",
            CriterionId::UmD0 => "UM_D0",
        }
    }

    /// Upper (supersolution-side) criteria; the rest are lower.
    pub fn is_upper(self) -> bool {
        !matches!(self, CriterionId::Lm | CriterionId::Lv)
    }

    /// Integral criteria need a `τ`.
    pub fn needs_tau(self) -> bool {
        matches!(self, CriterionId::Um | CriterionId::Lm)
    }

    /// Criteria built on the finite-direction ci-differentials.
    pub fn needs_lipschitz(self) -> bool {
        matches!(self, CriterionId::Uv | CriterionId::Lv | CriterionId::UmLip)
    }

    /// Whether PASS (rather than FAIL) is the certified verdict.
    fn pass_is_certified(self) -> bool {
        !matches!(self, CriterionId::Uv | CriterionId::Lv)
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or(Error::Argument("unknown criterion id"))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CriterionReport {
    pub id: CriterionId,
    pub t: f64,
    /// `x(t)`.
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub tau: Option<f64>,
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
    /// The verdict is the certified direction for this criterion (see the module docs).
    pub certified: bool,
    /// No subgradient was accepted; the viscosity inequality holds vacuously.
    pub vacuous: bool,
    pub one_sided: bool,
    /// Extensions, directions or subgradients examined.
    pub candidates: usize,
    pub seed: u64,
    /// Per-step derivatives of the best extension, or `(p₀, p)` of the worst subgradient.
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    /// PASS iff `margin ≤ tol`.
    pub tol: f64,
    /// Slack of the polyhedral ci-differential approximations.
    pub approx_tol: f64,
    /// Sampled characteristics per integral check.
    pub characteristics: usize,
    /// Candidate budget per `ε` of the multi-valued estimators.
    pub multi_budget: usize,
    pub seed: u64,
    /// Time offsets; `None` means [`Schedule::dyadic`]. Quotients are always plain.
    pub schedule: Option<Schedule>,
    /// Directions for the finite-direction differentials; `None` means [`default_l_grid`].
    pub l_grid: Option<Vec<Vec<f64>>>,
}

impl CheckConfig {
    pub fn new(seed: u64) -> Self {
        CheckConfig {
            tol: 1e-2,
            approx_tol: 1e-6,
            characteristics: 64,
            multi_budget: 128,
            seed,
            schedule: None,
            l_grid: None,
        }
    }

    /// `1e-2` at `dt = T/64`, scaled linearly in `dt`.
    pub fn scaled_tol(grid: &crate::GridSpec) -> f64 {
        1e-2 * grid.dt() * 64.0 / grid.t_end()
    }
}

/// Extra candidates a checker should try besides its own samples, e.g. optimal-control motions.
pub trait WitnessSource: Sync {
    /// Extensions of `p` that end at `to_step`. Those leaving `Lip_{c_H}` are discarded.
    fn motions(&self, p: &SampledPath, to_step: usize) -> Vec<SampledPath>;

    /// Directions for straight-line probes.
    fn directions(&self, _p: &SampledPath) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

/// Motions of a control problem: every constant control and the optimal signal's prefix.
pub struct ControlWitnesses<'a> {
    pub prob: &'a DelayControlProblem,
    pub mode: ValueMode,
    pub budget: u128,
}

impl WitnessSource for ControlWitnesses<'_> {
    fn motions(&self, p: &SampledPath, to_step: usize) -> Vec<SampledPath> {
        let Some(k) = to_step.checked_sub(p.step()) else {
            return Vec::new();
        };
        let mut out: Vec<SampledPath> = (0..self.prob.controls().len())
            .filter_map(|c| integrate_partial(self.prob, p, &vec![c; k]).ok())
            .collect();
        if let Ok(best) = value(self.prob, p, self.mode, self.budget) {
            if let Ok(z) = integrate_partial(self.prob, p, &best.witness[..k.min(best.witness.len())]) {
                out.push(z);
            }
        }
        out
    }

    fn directions(&self, p: &SampledPath) -> Vec<Vec<f64>> {
        velocities(self.prob, p)
    }
}

/// `{0, ±eᵢ, ±2eᵢ}` and `2n` random points on the sphere of radius `max(1, c_H)`.
pub fn default_s_grid(n: usize, c_h: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    for scale in [1.0, 2.0] {
        for i in 0..n {
            for sgn in [1.0, -1.0] {
                let mut v = vec![0.0; n];
                v[i] = sgn * scale;
                out.push(v);
            }
        }
    }
    let r = c_h.max(1.0);
    let mut rng = stream_rng(seed, 0x7367);
    for _ in 0..2 * n {
        out.push(random_unit(n, &mut rng).into_iter().map(|c| c * r).collect());
    }
    out
}

fn derivs_between(z: &SampledPath, from_step: usize, steps: usize) -> Vec<f64> {
    let g = z.grid();
    let start = g.delay_steps() + from_step;
    let mut out = Vec::with_capacity(steps * g.n());
    for i in start..start + steps {
        for (a, b) in z.node(i + 1).iter().zip(z.node(i)) {
            out.push((a - b) / g.dt());
        }
    }
    out
}

/// Axis central differences `(d(a eᵢ) − d(−a eᵢ)) / 2a` of the approximation data, oriented
/// for `φ`; `None` when some axis pair is missing.
fn fitted_gradient(approx: &PolyhedralApprox, n: usize) -> Option<Vec<f64>> {
    let sign = match approx.side {
        Side::Sub => 1.0,
        Side::Super => -1.0,
    };
    let axis = |l: &[f64], i: usize| l.iter().enumerate().all(|(j, c)| (j == i) == (*c != 0.0));
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = None;
        for (a, l) in approx.directions.iter().enumerate() {
            if !axis(l, i) || l[i] <= 0.0 {
                continue;
            }
            if let Some(b) = approx.directions.iter().position(|m| axis(m, i) && m[i] == -l[i]) {
                found = Some(sign * (approx.values[a] - approx.values[b]) / (2.0 * l[i]));
                break;
            }
        }
        g.push(found?);
    }
    Some(g)
}

/// A functional, a Hamiltonian and sampling settings.
pub struct Checker<'a> {
    pub phi: &'a dyn Functional,
    pub h: &'a dyn Hamiltonian,
    pub witnesses: Option<&'a dyn WitnessSource>,
    pub cfg: CheckConfig,
}

impl<'a> Checker<'a> {
    pub fn new(phi: &'a dyn Functional, h: &'a dyn Hamiltonian, cfg: CheckConfig) -> Self {
        Checker { phi, h, witnesses: None, cfg }
    }

    pub fn with_witnesses(mut self, w: &'a dyn WitnessSource) -> Self {
        self.witnesses = Some(w);
        self
    }

    fn reseeded(&self, seed: u64) -> Checker<'a> {
        let mut cfg = self.cfg.clone();
        cfg.seed = seed;
        Checker { phi: self.phi, h: self.h, witnesses: self.witnesses, cfg }
    }

    fn schedule(&self, p: &SampledPath) -> Result<Schedule, Error> {
        match &self.cfg.schedule {
            Some(s) => Ok(s.plain()),
            None => Schedule::dyadic(p),
        }
    }

    fn report(&self, id: CriterionId, p: &SampledPath, s: &[f64], tau: Option<f64>, margin: f64) -> Result<CriterionReport, Error> {
        if !margin.is_finite() {
            return Err(Error::Precondition { what: "finite margin", estimate: margin });
        }
        let pass = margin <= self.cfg.tol;
        Ok(CriterionReport {
            id,
            t: p.t(),
            x: p.current().to_vec(),
            s: s.to_vec(),
            tau,
            margin,
            tol: self.cfg.tol,
            pass,
            certified: pass == id.pass_is_certified(),
            vacuous: false,
            one_sided: true,
            candidates: 0,
            seed: self.cfg.seed,
            witness: None,
        })
    }

    fn check_s(&self, p: &SampledPath, s: &[f64]) -> Result<(), Error> {
        if s.len() != p.grid().n() {
            return Err(Error::Length { what: "s", expected: p.grid().n(), got: s.len() });
        }
        if !p.in_g0() {
            return Err(Error::Terminal);
        }
        Ok(())
    }

    /// Sampled characteristics to `to_step` plus admissible witness motions.
    fn extensions(&self, p: &SampledPath, to_step: usize, c_h: f64) -> Result<Vec<SampledPath>, Error> {
        let mut out = sample_characteristics_to(p, c_h, to_step, self.cfg.characteristics.max(1), self.cfg.seed)?;
        if let Some(w) = self.witnesses {
            for z in w.motions(p, to_step) {
                if z.step() == to_step && characteristic_excess(&z, p.step(), c_h) <= 1e-9 {
                    out.push(z);
                }
            }
        }
        Ok(out)
    }

    /// `(φ_s(τ, z_τ) + ∫_t^τ H(ξ, z_ξ, s) dξ)` per extension, and `φ_s(t, x)`.
    fn integral_terms(&self, p: &SampledPath, tau: f64, s: &[f64]) -> Result<(Vec<f64>, Vec<SampledPath>, f64, usize), Error> {
        self.check_s(p, s)?;
        let k = p.grid().step_of_named(tau, "tau")?;
        if k <= p.step() {
            return Err(Error::TimeOrder { what: "tau must follow the point's time" });
        }
        let c_h = self.h.c_h();
        let zs = self.extensions(p, k, c_h)?;
        let phi_s = shift_by_s(self.phi, s);
        let dt = p.grid().dt();
        let vals = map_indexed(zs.len(), |i| {
            let z = &zs[i];
            let hs: Vec<f64> =
                (p.step()..=k).map(|j| self.h.eval(&restrict_steps(z, j).expect("covers"), s)).collect();
            let integral: f64 = hs.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum();
            phi_s.eval(z) + integral
        });
        Ok((vals, zs, phi_s.eval(p), k))
    }

    /// Upper minimax inequality at `(p, τ, s)`: `min_z [φ_s(τ, z_τ) + ∫H] − φ_s(t, x)`.
    pub fn check_upper_minimax(&self, p: &SampledPath, tau: f64, s: &[f64]) -> Result<CriterionReport, Error> {
        let (vals, zs, base, k) = self.integral_terms(p, tau, s)?;
        let best = argbest(&vals, |a, b| a < b);
        let mut r = self.report(CriterionId::Um, p, s, Some(tau), vals[best] - base)?;
        r.candidates = vals.len();
        r.witness = Some(derivs_between(&zs[best], p.step(), k - p.step()));
        Ok(r)
    }

    /// Lower minimax inequality: `φ_s(t, x) − max_z [φ_s(τ, z_τ) + ∫H]`.
    pub fn check_lower_minimax(&self, p: &SampledPath, tau: f64, s: &[f64]) -> Result<CriterionReport, Error> {
        let (vals, zs, base, k) = self.integral_terms(p, tau, s)?;
        let best = argbest(&vals, |a, b| a > b);
        let mut r = self.report(CriterionId::Lm, p, s, Some(tau), base - vals[best])?;
        r.candidates = vals.len();
        r.witness = Some(derivs_between(&zs[best], p.step(), k - p.step()));
        Ok(r)
    }

    fn l_grid(&self, p: &SampledPath) -> Vec<Vec<f64>> {
        let mut grid = match &self.cfg.l_grid {
            Some(g) => g.clone(),
            None => default_l_grid(p, self.h.c_h(), self.cfg.seed),
        };
        if let Some(w) = self.witnesses {
            for d in w.directions(p) {
                if !grid.contains(&d) {
                    grid.push(d);
                }
            }
        }
        grid
    }

    fn viscosity(&self, id: CriterionId, p: &SampledPath) -> Result<CriterionReport, Error> {
        if !p.in_g0() {
            return Err(Error::Terminal);
        }
        let n = p.grid().n();
        let schedule = self.schedule(p)?;
        let grid = self.l_grid(p);
        let approx = match id {
            CriterionId::Uv => approx_subdifferential(self.phi, p, &grid, &schedule, self.cfg.approx_tol)?,
            _ => approx_superdifferential(self.phi, p, &grid, &schedule, self.cfg.approx_tol)?,
        };
        let mut cands = default_s_grid(n, self.h.c_h(), self.cfg.seed);
        if let Some(g) = fitted_gradient(&approx, n) {
            cands.push(g);
        }
        let mut worst: Option<(f64, Vec<f64>)> = None;
        for q in &cands {
            let Some(q0) = approx.extreme_p0(q) else { continue };
            if !approx.contains(q0, q) {
                continue;
            }
            let hv = self.h.eval(p, q);
            let m = match id {
                CriterionId::Uv => q0 + hv,
                _ => -(q0 + hv),
            };
            if worst.as_ref().is_none_or(|(w, _)| m > *w) {
                let mut wit = vec![q0];
                wit.extend_from_slice(q);
                worst = Some((m, wit));
            }
        }
        let s = vec![0.0; n];
        let mut r = match worst {
            Some((m, wit)) => {
                let mut r = self.report(id, p, &s, None, m)?;
                r.witness = Some(wit);
                r
            }
            None => {
                let mut r = self.report(id, p, &s, None, 0.0)?;
                r.vacuous = true;
                r
            }
        };
        r.s = Vec::new();
        r.candidates = cands.len();
        r.one_sided = false;
        Ok(r)
    }

    /// `max p₀ + H(t, x, p)` over `(p₀, p)` accepted by the subdifferential approximation. The
    /// candidate `p` are the default `s`-grid and the fitted gradient; `p₀` is the largest
    /// admissible value for each.
    pub fn check_upper_viscosity(&self, p: &SampledPath) -> Result<CriterionReport, Error> {
        self.viscosity(CriterionId::Uv, p)
    }

    /// `max −(q₀ + H(t, x, q))` over `(q₀, q)` accepted by the superdifferential approximation.
    pub fn check_lower_viscosity(&self, p: &SampledPath) -> Result<CriterionReport, Error> {
        self.viscosity(CriterionId::Lv, p)
    }

    fn multi_options(&self, p: &SampledPath, schedule: &Schedule, radius: f64) -> MultiOptions {
        let mut opts = MultiOptions::new(self.cfg.seed).with_budget(self.cfg.multi_budget);
        opts.schedule = Some(schedule.clone());
        if let Some(w) = self.witnesses {
            let k = schedule.reach();
            let n = p.grid().n();
            for z in w.motions(p, p.step() + k) {
                let d = derivs_between(&z, p.step(), k);
                if d.chunks_exact(n).all(|v| norm(v) <= radius) && !opts.extra.contains(&d) {
                    opts.extra.push(d);
                }
            }
        }
        opts
    }

    fn multi(&self, id: CriterionId, p: &SampledPath, s: &[f64]) -> Result<CriterionReport, Error> {
        self.check_s(p, s)?;
        let schedule = self.schedule(p)?;
        let radius = char_ball_radius(p, self.h.c_h());
        let ball = DirectionSet::ball(p.grid().n(), radius)?;
        let opts = self.multi_options(p, &schedule, radius);
        let phi_s = shift_by_s(self.phi, s);
        let est = match id {
            CriterionId::UmD0 => dir_deriv_d0(&phi_s, p, &ball, &opts)?,
            _ => dir_deriv_multi(&phi_s, p, &ball, &opts)?,
        };
        let mut r = self.report(id, p, s, None, est.estimate + self.h.eval(p, s))?;
        r.candidates = est.evaluations;
        r.witness = est.witness;
        Ok(r)
    }

    /// `d⁻φ_s(p; B_{c_H}(p)) + H(p, s)`.
    pub fn check_um_multi(&self, p: &SampledPath, s: &[f64]) -> Result<CriterionReport, Error> {
        self.multi(CriterionId::UmMulti, p, s)
    }

    /// `d₀φ_s(p; B_{c_H}(p)) + H(p, s)`; never above [`Checker::check_um_multi`].
    pub fn check_um_d0(&self, p: &SampledPath, s: &[f64]) -> Result<CriterionReport, Error> {
        self.multi(CriterionId::UmD0, p, s)
    }

    /// `min over extensions of ∂⁻φ_s(p; z) + H(p, s)`. The pool holds the multi-valued
    /// estimator's best extension, so this never exceeds [`Checker::check_um_multi`], plus
    /// characteristics at four times `c_H` (extensions here need not stay in `Lip_{c_H}`).
    pub fn check_uv_infext(&self, p: &SampledPath, s: &[f64]) -> Result<CriterionReport, Error> {
        let multi = self.check_um_multi(p, s)?;
        let schedule = self.schedule(p)?;
        let k = p.step() + schedule.reach();
        let mut pool = vec![extend_by(p, multi.witness.as_deref().expect("multi reports a witness"))?];
        pool.extend(self.extensions(p, k, self.h.c_h())?);
        pool.extend(sample_characteristics_to(p, 4.0 * self.h.c_h(), k, self.cfg.characteristics.max(1), self.cfg.seed ^ 1)?);
        let phi_s = shift_by_s(self.phi, s);
        let ests = map_indexed(pool.len(), |i| lower_right_derivative(&phi_s, p, &pool[i], &schedule).map(|e| e.estimate));
        let ests = ests.into_iter().collect::<Result<Vec<f64>, Error>>()?;
        let best = argbest(&ests, |a, b| a < b);
        let mut r = self.report(CriterionId::UvInfext, p, s, None, ests[best] + self.h.eval(p, s))?;
        r.candidates = pool.len();
        r.witness = Some(derivs_between(&pool[best], p.step(), schedule.reach()));
        Ok(r)
    }

    /// `min over l in the direction grid of [∂⁻φ(p; l) − ⟨s, l⟩] + H(p, s)`; requires the
    /// `locally_lipschitz` tag.
    pub fn check_um_lip(&self, p: &SampledPath, s: &[f64]) -> Result<CriterionReport, Error> {
        self.check_s(p, s)?;
        if !self.phi.tags().locally_lipschitz {
            return Err(Error::MissingTag("locally_lipschitz"));
        }
        let schedule = self.schedule(p)?;
        let grid = self.l_grid(p);
        let vals = map_indexed(grid.len(), |i| {
            dir_deriv_single(self.phi, p, &grid[i], &schedule).map(|e| e.estimate - dot(s, &grid[i]))
        });
        let vals = vals.into_iter().collect::<Result<Vec<f64>, Error>>()?;
        let best = argbest(&vals, |a, b| a < b);
        let mut r = self.report(CriterionId::UmLip, p, s, None, vals[best] + self.h.eval(p, s))?;
        r.candidates = grid.len();
        r.witness = Some(grid[best].clone());
        Ok(r)
    }

    /// Runs one criterion; `tau` is required for the integral criteria and ignored otherwise.
    pub fn check(&self, id: CriterionId, p: &SampledPath, s: &[f64], tau: Option<f64>) -> Result<CriterionReport, Error> {
        match id {
            CriterionId::Um => self.check_upper_minimax(p, tau.ok_or(Error::Argument("UM needs tau"))?, s),
            CriterionId::Lm => self.check_lower_minimax(p, tau.ok_or(Error::Argument("LM needs tau"))?, s),
            CriterionId::Uv => self.check_upper_viscosity(p),
            CriterionId::Lv => self.check_lower_viscosity(p),
            CriterionId::UmMulti => self.check_um_multi(p, s),
            CriterionId::UvInfext => self.check_uv_infext(p, s),
            CriterionId::UmLip => self.check_um_lip(p, s),
            CriterionId::UmD0 => self.check_um_d0(p, s),
        }
    }
}

/// First index of the best value under `better`; ties keep the lowest index.
fn argbest(vals: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate().skip(1) {
        if better(v, vals[best]) {
            best = i;
        }
    }
    best
}

/// How `τ` is chosen per point.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum TauChoice {
    /// `t + k·dt`.
    Steps(usize),
    /// A fixed time; skipped at points with `t ≥ τ`.
    Time(f64),
}

impl TauChoice {
    fn resolve(self, p: &SampledPath) -> Option<f64> {
        let g = p.grid();
        match self {
            TauChoice::Steps(k) if k > 0 && p.step() + k <= g.horizon_steps() => Some(g.step_time(p.step() + k)),
            TauChoice::Time(t) if t > p.t() && t <= g.t_end() => Some(t),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CriterionSummary {
    pub id: CriterionId,
    pub runs: usize,
    pub passes: usize,
    /// Every run passed.
    pub pass: bool,
    pub max_margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CrossReport {
    pub reports: Vec<CriterionReport>,
    pub summary: Vec<CriterionSummary>,
    /// UM and UV aggregate verdicts coincide (when both ran).
    pub upper_agree: Option<bool>,
    /// LM and LV aggregate verdicts coincide (when both ran).
    pub lower_agree: Option<bool>,
    pub skipped: Vec<String>,
}

impl CrossReport {
    pub fn verdict(&self, id: CriterionId) -> Option<bool> {
        self.summary.iter().find(|s| s.id == id).map(|s| s.pass)
    }
}

/// Runs `criteria` at every `(point, s)` pair (and every applicable `τ` for the integral
/// criteria). Pair `j` uses seed `cfg.seed + j·φ₆₄`, so results do not depend on scheduling.
/// Criteria needing the `locally_lipschitz` tag are skipped for untagged functionals.
pub fn cross_validate_pairs(
    checker: &Checker<'_>,
    pairs: &[(SampledPath, Vec<f64>)],
    taus: &[TauChoice],
    criteria: &[CriterionId],
) -> Result<CrossReport, Error> {
    let lipschitz = checker.phi.tags().locally_lipschitz;
    let mut skipped = Vec::new();
    let active: Vec<CriterionId> = criteria
        .iter()
        .copied()
        .filter(|c| {
            let ok = lipschitz || !c.needs_lipschitz();
            if !ok {
                skipped.push(String::from(c.name()));
            }
            ok
        })
        .collect();
    let jobs = map_indexed(pairs.len(), |j| {
        let (p, s) = &pairs[j];
        let c = checker.reseeded(checker.cfg.seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut out = Vec::new();
        for &id in &active {
            if id.needs_tau() {
                for tau in taus.iter().filter_map(|t| t.resolve(p)) {
                    out.push(c.check(id, p, s, Some(tau))?);
                }
            } else {
                out.push(c.check(id, p, s, None)?);
            }
        }
        Ok::<_, Error>(out)
    });
    let mut reports = Vec::new();
    for j in jobs {
        reports.extend(j?);
    }
    let summary: Vec<CriterionSummary> = active
        .iter()
        .map(|&id| {
            let rs: Vec<&CriterionReport> = reports.iter().filter(|r| r.id == id).collect();
            let passes = rs.iter().filter(|r| r.pass).count();
            CriterionSummary {
                id,
                runs: rs.len(),
                passes,
                pass: passes == rs.len(),
                max_margin: rs.iter().map(|r| r.margin).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let verdict = |id| summary.iter().find(|s| s.id == id && s.runs > 0).map(|s| s.pass);
    let agree = |a, b| match (verdict(a), verdict(b)) {
        (Some(x), Some(y)) => Some(x == y),
        _ => None,
    };
    Ok(CrossReport {
        upper_agree: agree(CriterionId::Um, CriterionId::Uv),
        lower_agree: agree(CriterionId::Lm, CriterionId::Lv),
        reports,
        summary,
        skipped,
    })
}

/// [`cross_validate_pairs`] over every point crossed with every `s`.
pub fn cross_validate(
    checker: &Checker<'_>,
    points: &[SampledPath],
    s_grid: &[Vec<f64>],
    taus: &[TauChoice],
    criteria: &[CriterionId],
) -> Result<CrossReport, Error> {
    let pairs: Vec<(SampledPath, Vec<f64>)> =
        points.iter().flat_map(|p| s_grid.iter().map(move |s| (p.clone(), s.clone()))).collect();
    cross_validate_pairs(checker, &pairs, taus, criteria)
}
