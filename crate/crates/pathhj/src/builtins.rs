//! Named functionals, Hamiltonians and direction sets accepted on the command line.

use pathhj_core::bp_lab::AffineFunctional;
use pathhj_core::ci_calculus::{DirectionSet, FnFunctional, Functional, Tags};
use pathhj_core::delay_control::{BellmanHamiltonian, DelayControlProblem, ValueFunctional, ValueMode};
use pathhj_core::gauge::eval_v;
use pathhj_core::hj_model::{Hamiltonian, LinearHamiltonian, NormScaledHamiltonian, ZeroHamiltonian};
use pathhj_core::path_core::sup_norm;
use pathhj_core::SampledPath;
use serde_json::Value;

use crate::input::{In, InputError};

#[derive(Clone, Debug, PartialEq)]
pub enum PhiKind {
    /// The value functional of `--problem`.
    Value,
    /// `value + c (T − t)`.
    ValuePlus(f64),
    /// The smooth gauge `V`.
    V,
    Time,
    Affine { a: Vec<f64>, m: f64 },
    Abs,
    NegAbs,
    Sup,
    /// First coordinate of `x(t − h)`.
    Delayed,
}

fn numbers(list: &str, flag: &str) -> In<Vec<f64>> {
    list.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| InputError::arg(flag, format!("`{s}` is not a number"))))
        .collect()
}

/// `[builtin:]name[:args]`.
pub fn parse_phi(arg: &str) -> In<PhiKind> {
    let body = arg.strip_prefix("builtin:").unwrap_or(arg);
    let (name, args) = match body.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (body, None),
    };
    let no_args = |s: PhiKind| match args {
        None => Ok(s),
        Some(_) => Err(InputError::arg("phi", format!("`{name}` takes no arguments"))),
    };
    match name {
        "value" => no_args(PhiKind::Value),
        "value_plus" | "value_minus" => {
            let c = numbers(args.unwrap_or(""), "phi")?;
            if c.len() != 1 {
                return Err(InputError::arg("phi", format!("`{name}:c` takes one number")));
            }
            Ok(PhiKind::ValuePlus(if name == "value_plus" { c[0] } else { -c[0] }))
        }
        "v" => no_args(PhiKind::V),
        "time" => no_args(PhiKind::Time),
        "affine" => {
            let mut v = numbers(args.unwrap_or(""), "phi")?;
            if v.len() < 2 {
                return Err(InputError::arg("phi", "`affine:a_1,..,a_n,m` needs at least two numbers"));
            }
            let m = v.pop().expect("non-empty");
            Ok(PhiKind::Affine { a: v, m })
        }
        "abs" => no_args(PhiKind::Abs),
        "neg_abs" => no_args(PhiKind::NegAbs),
        "sup" => no_args(PhiKind::Sup),
        "delayed" => no_args(PhiKind::Delayed),
        other => Err(InputError::arg("phi", format!("unknown functional `{other}`"))),
    }
}

pub type BoxedPhi<'a> = Box<dyn Functional + Send + 'a>;

/// Instantiates `kind` for paths in `R^n`.
pub fn build_phi<'a>(
    kind: &PhiKind,
    n: usize,
    prob: Option<&'a DelayControlProblem>,
    mode: ValueMode,
    budget: u128,
) -> In<BoxedPhi<'a>> {
    let lip = Tags::LIPSCHITZ;
    let value = |prob: Option<&'a DelayControlProblem>| -> In<ValueFunctional<'a>> {
        let prob = prob.ok_or_else(|| InputError::arg("problem", "the value functional needs --problem"))?;
        ValueFunctional::new(prob, mode, budget, lip).map_err(|e| InputError::arg("budget", e.to_string()))
    };
    Ok(match kind {
        PhiKind::Value => Box::new(value(prob)?),
        PhiKind::ValuePlus(c) => {
            let vf = value(prob)?;
            let (c, t_end) = (*c, vf.problem().grid().t_end());
            Box::new(FnFunctional::new(move |p: &SampledPath| vf.eval(p) + c * (t_end - p.t()), lip))
        }
        PhiKind::V => Box::new(FnFunctional::new(eval_v, lip)),
        PhiKind::Time => Box::new(AffineFunctional { a: vec![0.0; n], m: 1.0 }),
        PhiKind::Affine { a, m } => {
            if a.len() != n {
                return Err(InputError::arg("phi", format!("affine needs {n} coefficients before m, got {}", a.len())));
            }
            Box::new(AffineFunctional { a: a.clone(), m: *m })
        }
        PhiKind::Abs => Box::new(FnFunctional::new(|p: &SampledPath| p.current()[0].abs(), lip)),
        PhiKind::NegAbs => Box::new(FnFunctional::new(|p: &SampledPath| -p.current()[0].abs(), lip)),
        PhiKind::Sup => Box::new(FnFunctional::new(sup_norm, lip)),
        PhiKind::Delayed => Box::new(FnFunctional::new(
            |p: &SampledPath| p.node(p.len() - 1 - p.grid().delay_steps())[0],
            lip,
        )),
    })
}

/// `bellman`, `zero[:c]`, `linear:b_1,..` or `norm_scaled:c`.
pub fn build_hamiltonian<'a>(
    arg: Option<&str>,
    n: usize,
    prob: Option<&'a DelayControlProblem>,
) -> In<Box<dyn Hamiltonian + 'a>> {
    let arg = match (arg, prob) {
        (Some(s), _) => s,
        (None, Some(_)) => "bellman",
        (None, None) => "zero",
    };
    let (name, args) = match arg.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (arg, None),
    };
    let scalar = |args: Option<&str>, default: Option<f64>| -> In<f64> {
        match args {
            None => default.ok_or_else(|| InputError::arg("H", format!("`{name}:c` needs a constant"))),
            Some(a) => {
                let v = numbers(a, "H")?;
                match v.as_slice() {
                    [c] if *c > 0.0 => Ok(*c),
                    _ => Err(InputError::arg("H", "expected one positive constant")),
                }
            }
        }
    };
    Ok(match name {
        "bellman" => {
            let prob = prob.ok_or_else(|| InputError::arg("H", "the Bellman Hamiltonian needs --problem"))?;
            Box::new(BellmanHamiltonian::new(prob))
        }
        "zero" => Box::new(ZeroHamiltonian { c_h: scalar(args, Some(1.0))? }),
        "linear" => {
            let b = numbers(args.unwrap_or(""), "H")?;
            if b.len() != n {
                return Err(InputError::arg("H", format!("linear needs {n} coefficients")));
            }
            Box::new(LinearHamiltonian::new(b))
        }
        "norm_scaled" => Box::new(NormScaledHamiltonian { c_h: scalar(args, None)? }),
        other => return Err(InputError::arg("H", format!("unknown Hamiltonian `{other}`"))),
    })
}

/// `ball:r` or `polytope:[[..],..]`.
pub fn parse_directions(arg: &str, n: usize) -> In<DirectionSet> {
    let bad = |m: String| InputError::arg("L", m);
    if let Some(r) = arg.strip_prefix("ball:") {
        let r: f64 = r.trim().parse().map_err(|_| bad(format!("`{r}` is not a radius")))?;
        return DirectionSet::ball(n, r).map_err(|e| bad(e.to_string()));
    }
    if let Some(v) = arg.strip_prefix("polytope:") {
        let verts: Value = serde_json::from_str(v).map_err(|e| bad(format!("vertex list: {e}")))?;
        let verts: Vec<Vec<f64>> = serde_json::from_value(verts).map_err(|e| bad(format!("vertex list: {e}")))?;
        if verts.iter().any(|v| v.len() != n) {
            return Err(bad(format!("every vertex needs {n} coordinates")));
        }
        return DirectionSet::polytope(verts).map_err(|e| bad(e.to_string()));
    }
    Err(bad(format!("expected ball:r or polytope:[[..]], got `{arg}`")))
}

/// `--mode exhaustive` or `--mode beam:W`.
pub fn parse_mode(arg: &str) -> In<ValueMode> {
    match arg {
        "exhaustive" => Ok(ValueMode::Exhaustive),
        _ => match arg.strip_prefix("beam:").map(str::parse::<usize>) {
            Some(Ok(width)) if width > 0 => Ok(ValueMode::Beam { width }),
            _ => Err(InputError::arg("mode", format!("expected exhaustive or beam:W, got `{arg}`"))),
        },
    }
}

/// Comma list; a trailing `s` counts grid steps, otherwise an absolute time.
pub fn parse_taus(arg: &str) -> In<Vec<pathhj_core::solution_checkers::TauChoice>> {
    use pathhj_core::solution_checkers::TauChoice;
    arg.split(',')
        .map(|s| {
            let s = s.trim();
            let bad = || InputError::arg("taus", format!("`{s}` is neither a step count like 2s nor a time"));
            match s.strip_suffix('s') {
                Some(k) => k.parse::<usize>().map(TauChoice::Steps).map_err(|_| bad()),
                None => s.parse::<f64>().map(TauChoice::Time).map_err(|_| bad()),
            }
        })
        .collect()
}
