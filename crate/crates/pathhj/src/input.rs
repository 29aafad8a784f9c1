//! JSON ingestion. Documents are first validated against the shipped schemas, then parsed into
//! core types; every failure carries a JSON pointer into the offending document.

use std::fmt;
use std::path::Path;

use pathhj_core::delay_control::{
    ConstCost, DelayControlProblem, Dynamics, IndicatorTerminal, Integrator, LinearDelay, NormTerminal,
    QuadraticTerminal, RunningCost, Still, TerminalCost,
};
use pathhj_core::{Error, GridSpec, SampledPath};
use serde_json::Value;

/// An input that cannot be used, located by a JSON pointer (or `/args/<flag>` for flags).
#[derive(Clone, Debug, PartialEq)]
pub struct InputError {
    pub pointer: String,
    pub message: String,
}

impl InputError {
    pub fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        InputError { pointer: pointer.into(), message: message.into() }
    }

    pub fn arg(flag: &str, message: impl Into<String>) -> Self {
        Self::new(format!("/args/{flag}"), message)
    }

    /// Core errors raised while building an object at `base`.
    pub fn core(base: &str, e: Error) -> Self {
        let pointer = match &e {
            Error::Grid { field, .. } => format!("{base}/{field}"),
            Error::NotANode { .. } => format!("{base}/t"),
            _ => base.to_string(),
        };
        Self::new(pointer, e.to_string())
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

pub type In<T> = Result<T, InputError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Grid,
    Path,
    Paths,
    Points,
    Set,
    Problem,
}

impl Schema {
    pub const ALL: [Schema; 6] = [Schema::Grid, Schema::Path, Schema::Paths, Schema::Points, Schema::Set, Schema::Problem];

    pub fn source(self) -> &'static str {
        match self {
            Schema::Grid => include_str!("../../../schemas/grid.schema.json"),
            Schema::Path => include_str!("../../../schemas/path.schema.json"),
            Schema::Paths => include_str!("../../../schemas/paths.schema.json"),
            Schema::Points => include_str!("../../../schemas/points.schema.json"),
            Schema::Set => include_str!("../../../schemas/set.schema.json"),
            Schema::Problem => include_str!("../../../schemas/problem.schema.json"),
        }
    }
}

pub fn validate(doc: &Value, schema: Schema) -> In<()> {
    let schema: Value = serde_json::from_str(schema.source()).expect("shipped schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("shipped schema compiles");
    validator
        .validate(doc)
        .map_err(|e| InputError::new(e.instance_path().as_str().to_string(), e.to_string()))
}

/// Reads, parses and schema-validates a JSON file.
pub fn read_doc(path: &Path, schema: Schema) -> In<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError::new("", format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| InputError::new("", format!("{} is not valid JSON: {e}", path.display())))?;
    validate(&doc, schema)?;
    Ok(doc)
}

fn get<'a>(v: &'a Value, base: &str, key: &str) -> In<&'a Value> {
    v.get(key).ok_or_else(|| InputError::new(format!("{base}/{key}"), "missing"))
}

fn num(v: &Value, ptr: &str) -> In<f64> {
    v.as_f64().ok_or_else(|| InputError::new(ptr, "expected a number"))
}

fn vector(v: &Value, ptr: &str) -> In<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| InputError::new(ptr, "expected an array of numbers"))?;
    arr.iter().enumerate().map(|(i, x)| num(x, &format!("{ptr}/{i}"))).collect()
}

fn matrix(v: &Value, ptr: &str) -> In<Vec<Vec<f64>>> {
    let arr = v.as_array().ok_or_else(|| InputError::new(ptr, "expected an array of rows"))?;
    arr.iter().enumerate().map(|(i, r)| vector(r, &format!("{ptr}/{i}"))).collect()
}

/// Row-major flattening of an `rows × cols` matrix.
fn flat_matrix(v: &Value, ptr: &str, rows: usize, cols: usize) -> In<Vec<f64>> {
    let m = matrix(v, ptr)?;
    if m.len() != rows {
        return Err(InputError::new(ptr, format!("expected {rows} rows, got {}", m.len())));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (i, r) in m.iter().enumerate() {
        if r.len() != cols {
            return Err(InputError::new(format!("{ptr}/{i}"), format!("expected {cols} columns, got {}", r.len())));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

/// Grid fields `h`, `T`, `dt`, `n` of the object at `base`, with an optional `dt` override.
pub fn parse_grid(v: &Value, base: &str, dt_override: Option<f64>) -> In<GridSpec> {
    let h = num(get(v, base, "h")?, &format!("{base}/h"))?;
    let t_end = num(get(v, base, "T")?, &format!("{base}/T"))?;
    let dt = num(get(v, base, "dt")?, &format!("{base}/dt"))?;
    let n = get(v, base, "n")?
        .as_u64()
        .ok_or_else(|| InputError::new(format!("{base}/n"), "expected a positive integer"))? as usize;
    let file_grid = GridSpec::new(h, t_end, dt, n).map_err(|e| InputError::core(base, e))?;
    match dt_override {
        Some(dt) => GridSpec::new(h, t_end, dt, n).map_err(|e| InputError::arg("dt", e.to_string())),
        None => Ok(file_grid),
    }
}

/// A path literal at `base`. With a `dt` override the path is resampled by linear interpolation.
pub fn parse_path(v: &Value, base: &str, dt_override: Option<f64>) -> In<SampledPath> {
    let grid = parse_grid(v, base, None)?;
    let t = num(get(v, base, "t")?, &format!("{base}/t"))?;
    let rows = matrix(get(v, base, "values")?, &format!("{base}/values"))?;
    let p = SampledPath::from_rows(grid, t, &rows).map_err(|e| match e {
        Error::Length { .. } => InputError::new(format!("{base}/values"), e.to_string()),
        other => InputError::core(base, other),
    })?;
    match dt_override {
        Some(dt) if dt != grid.dt() => resample(&p, dt),
        _ => Ok(p),
    }
}

fn resample(p: &SampledPath, dt: f64) -> In<SampledPath> {
    let g = p.grid();
    let fine = GridSpec::new(g.h(), g.t_end(), dt, g.n()).map_err(|e| InputError::arg("dt", e.to_string()))?;
    let step = fine.step_of(p.t()).map_err(|e| InputError::arg("dt", e.to_string()))?;
    Ok(SampledPath::from_fn(fine, step, |time, out| p.eval(time, out)))
}

/// All paths share the grid of the first; mismatches are reported at the offending entry.
fn same_grid(paths: &[SampledPath], ptrs: &[String]) -> In<()> {
    if let Some(first) = paths.first() {
        for (p, ptr) in paths.iter().zip(ptrs) {
            if p.grid() != first.grid() {
                return Err(InputError::new(ptr.clone(), "grid differs from the first entry"));
            }
        }
    }
    Ok(())
}

/// Top-level array, or an object holding the array under `key`.
fn listed<'a>(doc: &'a Value, key: &str) -> (&'a [Value], String) {
    match doc {
        Value::Array(a) => (a.as_slice(), String::new()),
        Value::Object(o) => match o.get(key) {
            Some(Value::Array(a)) => (a.as_slice(), format!("/{key}")),
            _ => (&[], format!("/{key}")),
        },
        _ => (&[], String::new()),
    }
}

pub fn parse_paths(doc: &Value, dt_override: Option<f64>) -> In<Vec<SampledPath>> {
    let (items, base) = listed(doc, "paths");
    let ptrs: Vec<String> = (0..items.len()).map(|i| format!("{base}/{i}")).collect();
    let paths = items
        .iter()
        .zip(&ptrs)
        .map(|(v, ptr)| parse_path(v, ptr, dt_override))
        .collect::<In<Vec<_>>>()?;
    same_grid(&paths, &ptrs)?;
    Ok(paths)
}

/// An evaluation point with optional co-state and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEntry {
    /// Where the entry sits in its document.
    pub pointer: String,
    pub point: SampledPath,
    pub s: Option<Vec<f64>>,
    pub tau: Option<f64>,
}

pub fn parse_points(doc: &Value, dt_override: Option<f64>) -> In<Vec<PointEntry>> {
    let (items, base) = listed(doc, "points");
    let mut out = Vec::with_capacity(items.len());
    let mut ptrs = Vec::with_capacity(items.len());
    for (i, v) in items.iter().enumerate() {
        let ptr = format!("{base}/{i}");
        let entry = if let Some(pv) = v.get("point") {
            let point = parse_path(pv, &format!("{ptr}/point"), dt_override)?;
            let s = match v.get("s") {
                Some(sv) => {
                    let s = vector(sv, &format!("{ptr}/s"))?;
                    if s.len() != point.grid().n() {
                        return Err(InputError::new(format!("{ptr}/s"), format!("expected {} entries", point.grid().n())));
                    }
                    Some(s)
                }
                None => None,
            };
            let tau = v.get("tau").map(|t| num(t, &format!("{ptr}/tau"))).transpose()?;
            PointEntry { pointer: ptr.clone(), point, s, tau }
        } else {
            PointEntry { pointer: ptr.clone(), point: parse_path(v, &ptr, dt_override)?, s: None, tau: None }
        };
        out.push(entry);
        ptrs.push(ptr);
    }
    let paths: Vec<SampledPath> = out.iter().map(|e| e.point.clone()).collect();
    same_grid(&paths, &ptrs)?;
    Ok(out)
}

/// Points of a set document and its optional `alpha`.
pub fn parse_set(doc: &Value, dt_override: Option<f64>) -> In<(Vec<SampledPath>, Option<f64>)> {
    let (items, base) = listed(doc, "points");
    let ptrs: Vec<String> = (0..items.len()).map(|i| format!("{base}/{i}")).collect();
    let paths = items
        .iter()
        .zip(&ptrs)
        .map(|(v, ptr)| parse_path(v, ptr, dt_override))
        .collect::<In<Vec<_>>>()?;
    same_grid(&paths, &ptrs)?;
    let alpha = doc.get("alpha").map(|a| num(a, "/alpha")).transpose()?;
    Ok((paths, alpha))
}

/// Builtin names recorded next to a parsed problem, for oracles that only apply to some of them.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInfo {
    pub f: String,
    pub chi: f64,
    pub sigma: String,
}

pub fn parse_problem(doc: &Value, dt_override: Option<f64>) -> In<(DelayControlProblem, ProblemInfo)> {
    let grid = parse_grid(get(doc, "", "grid")?, "/grid", dt_override)?;
    let n = grid.n();
    let controls = matrix(get(doc, "", "U")?, "/U")?;
    let m = controls.first().map(Vec::len).unwrap_or(0);
    if let Some(i) = controls.iter().position(|u| u.len() != m) {
        return Err(InputError::new(format!("/U/{i}"), "control vectors must share one dimension"));
    }
    let fv = get(doc, "", "f")?;
    let f_name = fv.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
    let mut growth = None;
    let f: Box<dyn Dynamics> = match f_name.as_str() {
        "integrator" => {
            if m != n {
                return Err(InputError::new("/U", format!("the integrator needs controls of dimension {n}")));
            }
            Box::new(Integrator { n })
        }
        "still" => Box::new(Still),
        "linear_delay" => {
            let ld = LinearDelay::new(
                n,
                m,
                flat_matrix(get(fv, "/f", "a0")?, "/f/a0", n, n)?,
                flat_matrix(get(fv, "/f", "a1")?, "/f/a1", n, n)?,
                flat_matrix(get(fv, "/f", "b")?, "/f/b", n, m)?,
            )
            .map_err(|e| InputError::core("/f", e))?;
            growth = Some(ld.growth_constant(&controls));
            Box::new(ld)
        }
        other => return Err(InputError::new("/f/name", format!("unknown dynamics `{other}`"))),
    };
    let chi_c = match doc.get("chi") {
        Some(c) => c.get("c").map(|v| num(v, "/chi/c")).transpose()?.unwrap_or(0.0),
        None => 0.0,
    };
    let chi: Box<dyn RunningCost> = Box::new(ConstCost(chi_c));
    let (sigma_name, sigma): (String, Box<dyn TerminalCost>) = match doc.get("sigma") {
        None => ("norm".into(), Box::new(NormTerminal)),
        Some(s) => {
            let name = s.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
            let b: Box<dyn TerminalCost> = match name.as_str() {
                "norm" => Box::new(NormTerminal),
                "quadratic" => Box::new(QuadraticTerminal),
                "indicator" => {
                    let t = num(get(s, "/sigma", "t")?, "/sigma/t")?;
                    let step = grid.step_of(t).map_err(|e| InputError::new("/sigma/t", e.to_string()))?;
                    let coord = s.get("coord").and_then(Value::as_u64).unwrap_or(0) as usize;
                    if coord >= n {
                        return Err(InputError::new("/sigma/coord", format!("must be < {n}")));
                    }
                    Box::new(IndicatorTerminal { step, coord })
                }
                other => return Err(InputError::new("/sigma/name", format!("unknown terminal cost `{other}`"))),
            };
            (name, b)
        }
    };
    let c_fchi = match doc.get("c_fchi") {
        Some(c) => num(c, "/c_fchi")?,
        None => {
            let umax = controls.iter().map(|u| u.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max);
            let g = growth.unwrap_or(if f_name == "integrator" { umax } else { 0.0 }) + chi_c.abs();
            if g > 0.0 {
                g
            } else {
                1.0
            }
        }
    };
    let prob = DelayControlProblem::new(grid, controls, f, chi, sigma, c_fchi).map_err(|e| match e {
        Error::Length { what, .. } if what.starts_with("dynamics") => InputError::new("/U", e.to_string()),
        Error::Argument(a) if a.contains("c_fchi") => InputError::new("/c_fchi", e.to_string()),
        other => InputError::core("", other),
    })?;
    Ok((prob, ProblemInfo { f: f_name, chi: chi_c, sigma: sigma_name }))
}

/// Parses a path-literal document at the root.
pub fn parse_point_doc(doc: &Value, dt_override: Option<f64>) -> In<SampledPath> {
    parse_path(doc, "", dt_override)
}

/// JSON literal of a path in the input format.
pub fn path_json(p: &SampledPath) -> Value {
    let g = p.grid();
    let n = g.n();
    let rows: Vec<Value> = p.values().chunks_exact(n).map(|r| Value::from(r.to_vec())).collect();
    serde_json::json!({ "h": g.h(), "T": g.t_end(), "dt": g.dt(), "n": n, "t": p.t(), "values": rows })
}
