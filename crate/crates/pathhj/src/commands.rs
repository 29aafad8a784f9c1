//! Subcommands. Each returns an [`Outcome`] whose failure pointers index into the report.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pathhj_core::bp_lab::{
    bp_minimize, subgradient_search, BpResult, DiscreteSet, SubgradOptions,
};
use pathhj_core::delay_control::{
    dpp_residual, integrate_motion, regularity_report, value, DelayControlProblem, ValueMode,
};
use pathhj_core::gauge::{check_grad_v_bound, check_v_bounds, counterexample_probe, default_probe_taus, PROBE_TOL};
use pathhj_core::path_core::{random_piecewise_affine, sup_norm};
use pathhj_core::solution_checkers::{
    cross_validate, cross_validate_pairs, default_s_grid, CheckConfig, Checker, ControlWitnesses, CriterionId,
};
use pathhj_core::{Error, GridSpec, SampledPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::builtins::{build_hamiltonian, build_phi, parse_directions, parse_mode, parse_phi, parse_taus};
use crate::input::{self, In, InputError, PointEntry, ProblemInfo, Schema};
use crate::output::{Outcome, Table};

/// Enumeration budget of the value functional when `--budget` is not its budget.
pub const VALUE_BUDGET: u128 = 10_000_000;

#[derive(Debug, Parser)]
#[command(name = "pathhj", version, about = "Numerical experiments for path-dependent Hamilton-Jacobi equations")]
pub struct Cli {
    /// Seed for every random choice; identical seeds give identical reports.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override the grid step of every input (paths are resampled linearly).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Override the command's pass tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Override the command's budget (see the README for what each command counts).
    #[arg(long, global = true)]
    pub budget: Option<u128>,
    /// Output file; `.csv` receives the trace table, anything else the JSON report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so reports are byte-identical across runs.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Worker threads for the parallel sweeps (default: all cores). Reports do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-sided bounds of the gauge V and its gradient on given or random paths.
    GaugeCheck(GaugeCheckArgs),
    /// Difference quotients of the gauge-based probe along straight extensions of slope l.
    Counterexample(CounterexampleArgs),
    /// Value functional of a delay control problem at one point.
    Value(ValueArgs),
    /// Dynamic programming residual at one point for a list of intermediate times.
    Dpp(DppArgs),
    /// Run solution criteria at listed points.
    CheckSolution(CheckArgs),
    /// Run criteria on points crossed with co-states and compare upper and lower verdicts.
    CrossValidate(CrossArgs),
    /// Perturbed minimization over a finite set of paths.
    BpDemo(BpArgs),
    /// Search for a subgradient through perturbed penalized minimization.
    SubgradSearch(SubgradArgs),
    /// Growth and modulus diagnostics of a delay control value functional.
    Regularity(RegularityArgs),
}

#[derive(Debug, Args)]
pub struct SynthGrid {
    /// Delay length of generated paths.
    #[arg(long, default_value_t = 0.25)]
    pub h: f64,
    /// Terminal time of generated paths.
    #[arg(long = "t-end", default_value_t = 1.0)]
    pub t_end: f64,
    /// State dimension of generated paths.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
}

impl SynthGrid {
    /// `dt` defaults to `T/64`.
    fn grid(&self, dt: Option<f64>) -> In<GridSpec> {
        GridSpec::new(self.h, self.t_end, dt.unwrap_or(self.t_end / 64.0), self.n).map_err(|e| {
            let flag = match &e {
                Error::Grid { field: "T", .. } => "t-end",
                Error::Grid { field, .. } => field,
                _ => "dt",
            };
            InputError::arg(flag, e.to_string())
        })
    }
}

#[derive(Debug, Args)]
pub struct GaugeCheckArgs {
    /// Paths document; random paths are drawn when absent.
    #[arg(long)]
    pub paths: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Amplitude of the random paths.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[command(flatten)]
    pub grid: SynthGrid,
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    /// Slopes to probe (repeatable); `0` probes the time derivative.
    #[arg(long = "l", default_values_t = [2.0])]
    pub l: Vec<f64>,
    /// Minimum pairwise gap between limits when several slopes are probed.
    #[arg(long, default_value_t = 0.1)]
    pub min_gap: f64,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Delay control problem document.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// `exhaustive` or `beam:W`.
    #[arg(long, default_value = "exhaustive")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct ValueArgs {
    #[command(flatten)]
    pub prob: ProblemArgs,
    /// Path literal of the start point.
    #[arg(long)]
    pub point: PathBuf,
}

#[derive(Debug, Args)]
pub struct DppArgs {
    #[command(flatten)]
    pub prob: ProblemArgs,
    #[arg(long)]
    pub point: PathBuf,
    /// Intermediate times; `2s` counts grid steps. Default: every later node.
    #[arg(long)]
    pub taus: Option<String>,
}

#[derive(Debug, Args)]
pub struct FunctionalArgs {
    #[command(flatten)]
    pub prob: ProblemArgs,
    /// Functional: value, value_plus:c, value_minus:c, v, time, affine:a..,m, abs, neg_abs, sup, delayed.
    #[arg(long, default_value = "value")]
    pub phi: String,
    /// Hamiltonian: bellman, zero[:c], linear:b.., norm_scaled:c. Default bellman with a problem.
    #[arg(long = "H")]
    pub hamiltonian: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub f: FunctionalArgs,
    /// Points document; entries may carry `s` (default 0) and `tau` (default the next node).
    #[arg(long)]
    pub points: PathBuf,
    /// Comma-separated criteria; default all.
    #[arg(long)]
    pub criteria: Option<String>,
}

#[derive(Debug, Args)]
pub struct CrossArgs {
    #[command(flatten)]
    pub f: FunctionalArgs,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub criteria: Option<String>,
    /// Co-states separated by `;`, coordinates by `,`. Default: axes and random sphere points.
    #[arg(long)]
    pub s: Option<String>,
    /// Horizons for the integral criteria; `2s` counts grid steps.
    #[arg(long, default_value = "1s,2s")]
    pub taus: String,
}

#[derive(Debug, Args)]
pub struct BpArgs {
    /// Bound on the sup-norm of the set (a set document's own `alpha` wins).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    pub kappa: f64,
    /// Set document; a random set of `--count` paths otherwise.
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub max_anchors: usize,
    #[command(flatten)]
    pub f: FunctionalArgsNoH,
    #[command(flatten)]
    pub grid: SynthGrid,
}

#[derive(Debug, Args)]
pub struct FunctionalArgsNoH {
    #[command(flatten)]
    pub prob: ProblemArgs,
    #[arg(long, default_value = "sup")]
    pub phi: String,
}

#[derive(Debug, Args)]
pub struct SubgradArgs {
    #[command(flatten)]
    pub prob: ProblemArgs,
    #[arg(long)]
    pub phi: String,
    #[arg(long)]
    pub point: PathBuf,
    /// Direction set: `ball:r` or `polytope:[[..],..]`.
    #[arg(long = "L", default_value = "ball:1")]
    pub l: String,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Penalty scales tried in order.
    #[arg(long, default_value = "4,8,16")]
    pub k: String,
}

#[derive(Debug, Args)]
pub struct RegularityArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GaugeCheck(_) => "gauge-check",
            Command::Counterexample(_) => "counterexample",
            Command::Value(_) => "value",
            Command::Dpp(_) => "dpp",
            Command::CheckSolution(_) => "check-solution",
            Command::CrossValidate(_) => "cross-validate",
            Command::BpDemo(_) => "bp-demo",
            Command::SubgradSearch(_) => "subgrad-search",
            Command::Regularity(_) => "regularity",
        }
    }
}

pub fn run(cli: &Cli) -> In<Outcome> {
    match &cli.command {
        Command::GaugeCheck(a) => gauge_check(cli, a),
        Command::Counterexample(a) => counterexample(cli, a),
        Command::Value(a) => value_cmd(cli, a),
        Command::Dpp(a) => dpp(cli, a),
        Command::CheckSolution(a) => check_solution(cli, a),
        Command::CrossValidate(a) => cross(cli, a),
        Command::BpDemo(a) => bp_demo(cli, a),
        Command::SubgradSearch(a) => subgrad(cli, a),
        Command::Regularity(a) => regularity(cli, a),
    }
}

fn load_problem(path: &Path, dt: Option<f64>) -> In<(DelayControlProblem, ProblemInfo)> {
    let doc = input::read_doc(path, Schema::Problem)?;
    input::parse_problem(&doc, dt)
}

fn load_point(path: &Path, dt: Option<f64>) -> In<SampledPath> {
    let doc = input::read_doc(path, Schema::Path)?;
    input::parse_point_doc(&doc, dt)
}

fn optional_problem(a: &ProblemArgs, dt: Option<f64>) -> In<Option<(DelayControlProblem, ProblemInfo)>> {
    a.problem.as_deref().map(|p| load_problem(p, dt)).transpose()
}

fn require_problem(a: &ProblemArgs, dt: Option<f64>) -> In<(DelayControlProblem, ProblemInfo)> {
    optional_problem(a, dt)?.ok_or_else(|| InputError::arg("problem", "this command needs --problem"))
}

fn same_grid(prob: &DelayControlProblem, grid: &GridSpec) -> In<()> {
    if prob.grid() != grid {
        return Err(InputError::new("/grid", "problem grid differs from the grid of the supplied points"));
    }
    Ok(())
}

fn budget_error(e: Error) -> InputError {
    match e {
        Error::Budget { .. } => InputError::arg("budget", e.to_string()),
        other => InputError::new("", other.to_string()),
    }
}

fn gauge_check(cli: &Cli, a: &GaugeCheckArgs) -> In<Outcome> {
    let tol = cli.tol.unwrap_or(1e-12);
    let paths = match &a.paths {
        Some(file) => input::parse_paths(&input::read_doc(file, Schema::Paths)?, cli.dt)?,
        None => {
            if !(a.amplitude > 0.0) || !a.amplitude.is_finite() {
                return Err(InputError::arg("amplitude", "must be finite and > 0"));
            }
            let grid = a.grid.grid(cli.dt)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            (0..a.count)
                .map(|_| {
                    let step = rng.gen_range(0..=grid.horizon_steps());
                    random_piecewise_affine(grid, step, 4, a.amplitude, &mut rng)
                })
                .collect()
        }
    };
    let mut table = Table::new(&["index", "t", "sup_norm", "v_lower", "v_upper", "grad_margin"]);
    let mut rows = Vec::with_capacity(paths.len());
    let mut out = Outcome::new(Value::Null, tol);
    let mut worst = [f64::INFINITY; 3];
    for (i, p) in paths.iter().enumerate() {
        let (lo, hi) = check_v_bounds(p);
        let g = check_grad_v_bound(p);
        for (w, m) in worst.iter_mut().zip([lo, hi, g]) {
            *w = w.min(m);
        }
        for (key, m) in [("v_lower", lo), ("v_upper", hi), ("grad_margin", g)] {
            out.fail_if(m < -tol, format!("/report/rows/{i}/{key}"));
        }
        table.rows.push(vec![i as f64, p.t(), sup_norm(p), lo, hi, g]);
        rows.push(json!({ "t": p.t(), "sup_norm": sup_norm(p), "v_lower": lo, "v_upper": hi, "grad_margin": g }));
    }
    out.report = json!({
        "count": paths.len(),
        "min_v_lower": finite_or_null(worst[0]),
        "min_v_upper": finite_or_null(worst[1]),
        "min_grad_margin": finite_or_null(worst[2]),
        "rows": rows,
    });
    out.table = Some(table);
    Ok(out)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn counterexample(cli: &Cli, a: &CounterexampleArgs) -> In<Outcome> {
    let tol = cli.tol.unwrap_or(PROBE_TOL);
    let taus = match cli.dt {
        // The finest probe time is the grid step.
        Some(dt) => {
            let last = (1.0 / dt).log2().round();
            if !(dt > 0.0) || (1.0 / dt - last.exp2()).abs() > 1e-9 * last.exp2() || last < 5.0 {
                return Err(InputError::arg("dt", "probe step must be 2^-k with k >= 5"));
            }
            (4..=last as u32).map(|k| 1.0 / (1u64 << k) as f64).collect()
        }
        None => default_probe_taus(),
    };
    let mut out = Outcome::new(Value::Null, tol);
    let mut table = Table::new(&["l", "tau", "quotient", "estimate"]);
    let mut probes = Vec::new();
    for (i, &l) in a.l.iter().enumerate() {
        let r = counterexample_probe(l, &taus).map_err(|e| InputError::new(format!("/args/l/{i}"), e.to_string()))?;
        let expected = if l == 0.0 { Value::Null } else { json!(2.0 * (l - 1.0) / l) };
        if let Some(x) = expected.as_f64() {
            out.fail_if((r.limit - x).abs() > tol, format!("/report/probes/{i}/probe/limit"));
        }
        for k in 0..r.taus.len() {
            table.rows.push(vec![l, r.taus[k], r.quotients[k], r.estimates[k]]);
        }
        probes.push(json!({ "probe": r, "expected": expected }));
    }
    let limits: Vec<f64> = probes.iter().map(|p| p["probe"]["limit"].as_f64().unwrap_or(f64::NAN)).collect();
    let mut gap = Value::Null;
    if limits.len() > 1 {
        let mut g = f64::INFINITY;
        for i in 0..limits.len() {
            for j in i + 1..limits.len() {
                g = g.min((limits[i] - limits[j]).abs());
            }
        }
        out.fail_if(!(g > a.min_gap), "/report/min_gap");
        gap = json!(g);
    }
    out.report = json!({ "probes": probes, "min_gap": gap, "required_gap": a.min_gap });
    out.table = Some(table);
    Ok(out)
}

/// `min_j |x + j dt|` over `|j| ≤ m`: the exact optimum for the scalar integrator with controls
/// `{−1, 0, 1}`, no running cost and `σ = |z(T)|`.
fn integrator_lattice(x: f64, dt: f64, m: usize) -> f64 {
    let j = (-x / dt).round().clamp(-(m as f64), m as f64);
    let mut best = (x + j * dt).abs();
    for d in [-1.0, 1.0] {
        let jj = j + d;
        if jj.abs() <= m as f64 {
            best = best.min((x + jj * dt).abs());
        }
    }
    best
}

fn is_scalar_integrator(prob: &DelayControlProblem, info: &ProblemInfo) -> bool {
    let mut us: Vec<f64> = prob.controls().iter().map(|u| u[0]).collect();
    us.sort_by(f64::total_cmp);
    prob.grid().n() == 1
        && info.f == "integrator"
        && info.chi == 0.0
        && info.sigma == "norm"
        && us == [-1.0, 0.0, 1.0]
}

fn path_table(p: &SampledPath) -> Table {
    let n = p.grid().n();
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    let rows = (0..p.len())
        .map(|i| {
            let mut r = vec![p.grid().node_time(i)];
            r.extend_from_slice(p.node(i));
            r
        })
        .collect();
    Table { header, rows }
}

fn value_cmd(cli: &Cli, a: &ValueArgs) -> In<Outcome> {
    let tol = cli.tol.unwrap_or(1e-9);
    let budget = cli.budget.unwrap_or(VALUE_BUDGET);
    let mode = parse_mode(&a.prob.mode)?;
    let (prob, info) = require_problem(&a.prob, cli.dt)?;
    let p = load_point(&a.point, cli.dt)?;
    same_grid(&prob, p.grid())?;
    let r = value(&prob, &p, mode, budget).map_err(budget_error)?;
    let motion = integrate_motion(&prob, &p, &r.witness).map_err(|e| InputError::new("", e.to_string()))?;
    let mut out = Outcome::new(Value::Null, tol);
    out.budget = json!(budget);
    out.one_sided = !r.exact;
    let oracle = if is_scalar_integrator(&prob, &info) {
        let g = prob.grid();
        let x = p.current()[0];
        let m = g.horizon_steps() - p.step();
        let lattice = integrator_lattice(x, g.dt(), m);
        let continuum = (x.abs() - (g.t_end() - p.t())).max(0.0);
        let lattice_error = (r.value - lattice).abs();
        let continuum_error = (r.value - continuum).abs();
        // Off the dt-lattice the discrete optimum can sit up to one step from the continuum one.
        out.fail_if(r.exact && lattice_error > tol, "/report/oracle/lattice_error");
        out.fail_if(continuum_error > g.dt() + tol, "/report/oracle/continuum_error");
        json!({
            "lattice": lattice,
            "lattice_error": lattice_error,
            "continuum": continuum,
            "continuum_error": continuum_error,
            "continuum_allowance": g.dt() + tol,
        })
    } else {
        Value::Null
    };
    out.report = json!({
        "t": p.t(),
        "x": p.current(),
        "estimate": r.value,
        "result": r,
        "oracle": oracle,
        "motion": input::path_json(&motion),
    });
    out.table = Some(path_table(&motion));
    Ok(out)
}

fn dpp(cli: &Cli, a: &DppArgs) -> In<Outcome> {
    use pathhj_core::solution_checkers::TauChoice;
    let tol = cli.tol.unwrap_or(1e-9);
    let budget = cli.budget.unwrap_or(VALUE_BUDGET);
    let mode = parse_mode(&a.prob.mode)?;
    let (prob, _) = require_problem(&a.prob, cli.dt)?;
    let p = load_point(&a.point, cli.dt)?;
    same_grid(&prob, p.grid())?;
    let g = *prob.grid();
    if p.step() >= g.horizon_steps() {
        return Err(InputError::new("/t", "the point must precede T"));
    }
    let taus: Vec<f64> = match &a.taus {
        None => (p.step() + 1..=g.horizon_steps()).map(|k| g.step_time(k)).collect(),
        Some(s) => parse_taus(s)?
            .into_iter()
            .map(|c| match c {
                TauChoice::Steps(k) => g.step_time(p.step() + k),
                TauChoice::Time(t) => t,
            })
            .collect(),
    };
    let mut out = Outcome::new(Value::Null, tol);
    out.budget = json!(budget);
    out.one_sided = mode != ValueMode::Exhaustive;
    let mut table = Table::new(&["tau", "residual"]);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, &tau) in taus.iter().enumerate() {
        let r = dpp_residual(&prob, &p, tau, mode, budget).map_err(|e| match e {
            Error::Budget { .. } => InputError::arg("budget", e.to_string()),
            other => InputError::new(format!("/args/taus/{i}"), other.to_string()),
        })?;
        out.fail_if(!(r <= tol), format!("/report/rows/{i}/residual"));
        worst = worst.max(r);
        table.rows.push(vec![tau, r]);
        rows.push(json!({ "tau": tau, "residual": r }));
    }
    out.report = json!({ "t": p.t(), "estimate": worst, "max_residual": worst, "rows": rows });
    out.table = Some(table);
    Ok(out)
}

fn parse_criteria(arg: Option<&str>) -> In<Vec<CriterionId>> {
    match arg {
        None => Ok(CriterionId::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .map(|c| c.trim().parse::<CriterionId>().map_err(|_| InputError::arg("criteria", format!("unknown criterion `{c}`"))))
            .collect(),
    }
}

fn load_points(path: &Path, dt: Option<f64>) -> In<Vec<PointEntry>> {
    let doc = input::read_doc(path, Schema::Points)?;
    let pts = input::parse_points(&doc, dt)?;
    if pts.is_empty() {
        return Err(InputError::new("", "no points"));
    }
    Ok(pts)
}

fn check_solution(cli: &Cli, a: &CheckArgs) -> In<Outcome> {
    let entries = load_points(&a.points, cli.dt)?;
    let grid = *entries[0].point.grid();
    let problem = optional_problem(&a.f.prob, cli.dt)?;
    if let Some((prob, _)) = &problem {
        same_grid(prob, &grid)?;
    }
    let prob = problem.as_ref().map(|(p, _)| p);
    let budget = cli.budget.unwrap_or(VALUE_BUDGET);
    let mode = parse_mode(&a.f.prob.mode)?;
    let phi = build_phi(&parse_phi(&a.f.phi)?, grid.n(), prob, mode, budget)?;
    let h = build_hamiltonian(a.f.hamiltonian.as_deref(), grid.n(), prob)?;
    let criteria = parse_criteria(a.criteria.as_deref())?;
    let mut cfg = CheckConfig::new(cli.seed);
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    let witnesses = prob.map(|prob| ControlWitnesses { prob, mode, budget });
    let mut checker = Checker::new(&*phi, &*h, cfg.clone());
    if let Some(w) = &witnesses {
        checker = checker.with_witnesses(w);
    }
    let mut out = Outcome::new(Value::Null, cfg.tol);
    out.budget = json!(budget);
    let mut results = Vec::new();
    let mut table = Table::new(&["point", "criterion", "t", "tau", "margin", "pass"]);
    for (i, e) in entries.iter().enumerate() {
        let s = e.s.clone().unwrap_or_else(|| vec![0.0; grid.n()]);
        for (ci, &id) in criteria.iter().enumerate() {
            let tau = id.needs_tau().then(|| e.tau.unwrap_or_else(|| grid.step_time(e.point.step() + 1)));
            let r = checker.check(id, &e.point, &s, tau).map_err(|err| InputError::core(&e.pointer, err))?;
            out.fail_if(!r.pass, format!("/report/results/{}/margin", results.len()));
            out.one_sided |= r.one_sided;
            table.rows.push(vec![i as f64, ci as f64, r.t, r.tau.unwrap_or(f64::NAN), r.margin, f64::from(u8::from(r.pass))]);
            results.push(r);
        }
    }
    let estimate = results.iter().map(|r| r.margin).fold(f64::NEG_INFINITY, f64::max);
    out.report = json!({
        "criteria": criteria,
        "estimate": finite_or_null(estimate),
        "all_pass": out.failures.is_empty(),
        "results": results,
    });
    out.table = Some(table);
    Ok(out)
}

fn parse_s_list(arg: &str, n: usize) -> In<Vec<Vec<f64>>> {
    arg.split(';')
        .enumerate()
        .map(|(i, part)| {
            let v = part
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| InputError::new(format!("/args/s/{i}"), format!("`{part}` is not a number list")))?;
            if v.len() != n {
                return Err(InputError::new(format!("/args/s/{i}"), format!("expected {n} coordinates")));
            }
            Ok(v)
        })
        .collect()
}

fn cross(cli: &Cli, a: &CrossArgs) -> In<Outcome> {
    let entries = load_points(&a.points, cli.dt)?;
    let grid = *entries[0].point.grid();
    let problem = optional_problem(&a.f.prob, cli.dt)?;
    if let Some((prob, _)) = &problem {
        same_grid(prob, &grid)?;
    }
    let prob = problem.as_ref().map(|(p, _)| p);
    let budget = cli.budget.unwrap_or(VALUE_BUDGET);
    let mode = parse_mode(&a.f.prob.mode)?;
    let phi = build_phi(&parse_phi(&a.f.phi)?, grid.n(), prob, mode, budget)?;
    let h = build_hamiltonian(a.f.hamiltonian.as_deref(), grid.n(), prob)?;
    let criteria = parse_criteria(a.criteria.as_deref())?;
    let taus = parse_taus(&a.taus)?;
    let mut cfg = CheckConfig::new(cli.seed);
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    let witnesses = prob.map(|prob| ControlWitnesses { prob, mode, budget });
    let mut checker = Checker::new(&*phi, &*h, cfg.clone());
    if let Some(w) = &witnesses {
        checker = checker.with_witnesses(w);
    }
    let err = |e: Error| InputError::new("", e.to_string());
    let rep = if entries.iter().all(|e| e.s.is_some()) {
        let pairs: Vec<(SampledPath, Vec<f64>)> =
            entries.iter().map(|e| (e.point.clone(), e.s.clone().expect("checked"))).collect();
        cross_validate_pairs(&checker, &pairs, &taus, &criteria).map_err(err)?
    } else {
        let s_grid = match &a.s {
            Some(s) => parse_s_list(s, grid.n())?,
            None => default_s_grid(grid.n(), h.c_h(), cli.seed),
        };
        let points: Vec<SampledPath> = entries.iter().map(|e| e.point.clone()).collect();
        cross_validate(&checker, &points, &s_grid, &taus, &criteria).map_err(err)?
    };
    let mut out = Outcome::new(Value::Null, cfg.tol);
    out.budget = json!(budget);
    out.one_sided = rep.reports.iter().any(|r| r.one_sided);
    out.fail_if(rep.upper_agree == Some(false), "/report/upper_agree");
    out.fail_if(rep.lower_agree == Some(false), "/report/lower_agree");
    let mut table = Table::new(&["criterion", "runs", "passes", "max_margin"]);
    for (i, s) in rep.summary.iter().enumerate() {
        table.rows.push(vec![i as f64, s.runs as f64, s.passes as f64, s.max_margin]);
    }
    let solution = rep.summary.iter().all(|s| s.pass);
    let estimate = rep.summary.iter().map(|s| s.max_margin).fold(f64::NEG_INFINITY, f64::max);
    out.report = json!({ "estimate": finite_or_null(estimate), "solution": solution, "cross": rep });
    out.table = Some(table);
    Ok(out)
}

fn bp_json(r: &BpResult, set: &DiscreteSet) -> Value {
    let pert = &r.perturbation;
    json!({
        "minimizer_index": r.minimizer_index,
        "minimizer": input::path_json(&r.minimizer),
        "anchor_indices": r.anchor_indices,
        "weights": pert.weights(),
        "kappa": pert.kappa(),
        "c_alpha": pert.params().c_alpha(),
        "stationary_tail": pert.stationary_tail(),
        "tail_bound": pert.tail_bound(),
        "anchor_mu": r.anchor_mu,
        "anchor_bounds": r.anchor_bounds,
        "phi_min": r.phi_min,
        "objective": r.objective,
        "minimality_gap": r.minimality_gap,
        "psi_min": r.psi_min,
        "psi_max": r.psi_max,
        "psi_bound": r.psi_bound,
        "dt_psi": r.dt_psi,
        "grad_psi": r.grad_psi,
        "dt_bound": r.dt_bound,
        "grad_bound": r.grad_bound,
        "clauses": r.clauses(),
        "set_size": set.len(),
        "alpha": set.alpha(),
    })
}

fn bp_demo(cli: &Cli, a: &BpArgs) -> In<Outcome> {
    let (points, alpha) = match &a.set {
        Some(file) => {
            let (pts, alpha) = input::parse_set(&input::read_doc(file, Schema::Set)?, cli.dt)?;
            (Some(pts), alpha.unwrap_or(a.alpha))
        }
        None => (None, a.alpha),
    };
    let set = match points {
        Some(pts) => DiscreteSet::new(pts, alpha).map_err(|e| InputError::new("", e.to_string()))?,
        None => {
            let grid = a.grid.grid(cli.dt)?;
            DiscreteSet::random(grid, a.count, alpha, cli.seed).map_err(|e| InputError::arg("count", e.to_string()))?
        }
    };
    let grid = *set.grid();
    let problem = optional_problem(&a.f.prob, cli.dt)?;
    if let Some((prob, _)) = &problem {
        same_grid(prob, &grid)?;
    }
    let budget = cli.budget.unwrap_or(VALUE_BUDGET);
    let mode = parse_mode(&a.f.prob.mode)?;
    let phi = build_phi(&parse_phi(&a.f.phi)?, grid.n(), problem.as_ref().map(|(p, _)| p), mode, budget)?;
    let r = bp_minimize(&*phi, &set, a.kappa, a.max_anchors).map_err(|e| match e {
        Error::Precondition { .. } | Error::Argument(_) => InputError::arg("kappa", e.to_string()),
        other => InputError::new("", other.to_string()),
    })?;
    let clauses = r.clauses();
    let mut out = Outcome::new(Value::Null, 1e-12);
    out.budget = json!(a.max_anchors);
    out.fail_if(!clauses.psi_range, "/report/clauses/psi_range");
    out.fail_if(!clauses.derivative_bounds, "/report/clauses/derivative_bounds");
    out.fail_if(!clauses.minimality, "/report/clauses/minimality");
    out.fail_if(!clauses.anchors, "/report/clauses/anchors");
    let mut report = bp_json(&r, &set);
    report["estimate"] = json!(r.objective);
    out.report = report;
    Ok(out)
}

fn subgrad(cli: &Cli, a: &SubgradArgs) -> In<Outcome> {
    let p = load_point(&a.point, cli.dt)?;
    let grid = *p.grid();
    let problem = optional_problem(&a.prob, cli.dt)?;
    if let Some((prob, _)) = &problem {
        same_grid(prob, &grid)?;
    }
    let mode = parse_mode(&a.prob.mode)?;
    let phi = build_phi(&parse_phi(&a.phi)?, grid.n(), problem.as_ref().map(|(p, _)| p), mode, VALUE_BUDGET)?;
    let l = parse_directions(&a.l, grid.n())?;
    let mut opts = SubgradOptions::new(a.eta, cli.seed);
    opts.k_schedule = a
        .k
        .split(',')
        .map(|k| k.trim().parse::<f64>().ok().filter(|k| *k > 0.0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| InputError::arg("k", "expected positive numbers separated by commas"))?;
    if let Some(t) = cli.tol {
        opts.tol = t;
    }
    if let Some(b) = cli.budget {
        opts.budget = b;
    }
    let rep = subgradient_search(&*phi, &p, &l, &opts).map_err(|e| match e {
        Error::MissingTag(_) => InputError::arg("phi", e.to_string()),
        Error::Precondition { what, .. } if what.contains("d0") => InputError::arg("phi", e.to_string()),
        Error::Precondition { .. } | Error::Argument(_) => InputError::arg("eta", e.to_string()),
        Error::Budget { .. } => InputError::arg("budget", e.to_string()),
        other => InputError::new("/t", other.to_string()),
    })?;
    let mut out = Outcome::new(Value::Null, opts.tol);
    out.budget = json!(opts.budget);
    out.fail_if(!rep.success(), "/report/search/accepted");
    let estimate = rep.accepted_attempt().map(|at| json!(at.candidate));
    out.report = json!({ "estimate": estimate, "search": rep });
    Ok(out)
}

fn regularity(cli: &Cli, a: &RegularityArgs) -> In<Outcome> {
    let (prob, _) = load_problem(&a.problem, cli.dt)?;
    let budget = cli.budget.unwrap_or(64);
    let budget = usize::try_from(budget).map_err(|_| InputError::arg("budget", "too large"))?;
    let r = regularity_report(&prob, a.alpha, budget, cli.seed).map_err(|e| match e {
        Error::Argument(m) if m.contains("alpha") => InputError::arg("alpha", e.to_string()),
        other => InputError::arg("budget", other.to_string()),
    })?;
    let mut out = Outcome::new(Value::Null, 1e-12);
    out.budget = json!(budget);
    out.fail_if(!r.within_gronwall, "/report/within_gronwall");
    out.fail_if(r.modulus_violation, "/report/modulus_violation");
    let mut table = Table::new(&["scale", "rho_1", "delta_value"]);
    for b in &r.bins {
        for (rho, dv) in &b.pairs {
            table.rows.push(vec![b.scale, *rho, *dv]);
        }
    }
    out.report = json!({ "estimate": r.alpha_star, "regularity": r });
    out.table = Some(table);
    Ok(out)
}
