//! Report emission. JSON goes to stdout unless `--out` names a file; a `.csv` target receives the
//! command's trace table instead.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::input::{In, InputError};

/// A plot-ready table: one header row, numeric rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }
}

/// What a command produced. `failures` are JSON pointers into the emitted document.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Value,
    pub table: Option<Table>,
    pub failures: Vec<String>,
    pub tolerance: f64,
    pub budget: Value,
    pub one_sided: bool,
}

impl Outcome {
    pub fn new(report: Value, tolerance: f64) -> Self {
        Outcome { report, table: None, failures: Vec::new(), tolerance, budget: Value::Null, one_sided: false }
    }

    pub fn fail_if(&mut self, bad: bool, pointer: impl Into<String>) {
        if bad {
            self.failures.push(pointer.into());
        }
    }
}

/// The full JSON document for an outcome. Object keys are emitted sorted.
pub fn document(command: &str, seed: u64, timestamp: bool, o: &Outcome) -> Value {
    let mut doc = json!({
        "command": command,
        "seed": seed,
        "tolerance": o.tolerance,
        "budget": o.budget,
        "one_sided": o.one_sided,
        "ok": o.failures.is_empty(),
        "failures": o.failures,
        "report": o.report,
    });
    if timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        doc["timestamp"] = json!(secs);
    }
    doc
}

pub fn write_csv(table: &Table, out: &mut dyn Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes the outcome where `out` says and returns where the JSON report went. A failing run with
/// a CSV target also leaves the report in `<out>.report.json` so failure pointers resolve.
pub fn emit(command: &str, seed: u64, timestamp: bool, out: Option<&Path>, o: &Outcome) -> In<String> {
    let io = |e: std::io::Error| InputError::arg("out", e.to_string());
    match out {
        Some(path) if is_csv(path) => {
            let table = o
                .table
                .as_ref()
                .ok_or_else(|| InputError::arg("out", format!("{command} emits JSON only; use a .json target")))?;
            let mut f = std::fs::File::create(path).map_err(io)?;
            write_csv(table, &mut f).map_err(|e| InputError::arg("out", e.to_string()))?;
            if o.failures.is_empty() {
                return Ok(path.display().to_string());
            }
            let mut side = path.as_os_str().to_owned();
            side.push(".report.json");
            let text = serde_json::to_string_pretty(&document(command, seed, timestamp, o)).expect("JSON values serialize");
            std::fs::write(&side, text + "\n").map_err(io)?;
            Ok(Path::new(&side).display().to_string())
        }
        Some(path) => {
            let text = serde_json::to_string_pretty(&document(command, seed, timestamp, o)).expect("JSON values serialize");
            std::fs::write(path, text + "\n").map_err(io)?;
            Ok(path.display().to_string())
        }
        None => {
            let text = serde_json::to_string_pretty(&document(command, seed, timestamp, o)).expect("JSON values serialize");
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(io)?;
            Ok("stdout".into())
        }
    }
}
