//! Command-line front end for `pathhj-core`: JSON ingestion with schema validation, builtin
//! functionals and Hamiltonians, and JSON/CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtins;
pub mod commands;
pub mod input;
pub mod output;

use clap::Parser;

pub use commands::Cli;

/// Parses `args`, runs the command and returns the process exit code: 0 when every asserted
/// invariant held, 1 when one failed, 2 for unusable input.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("input error at /args/workers: must be at least 1");
            return 2;
        }
        // A second initialisation in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let name = cli.command.name();
    let outcome = match commands::run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("input error at {e}");
            return 2;
        }
    };
    let target = match output::emit(name, cli.seed, !cli.no_timestamp, cli.out.as_deref(), &outcome) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("input error at {e}");
            return 2;
        }
    };
    if outcome.failures.is_empty() {
        return 0;
    }
    for f in &outcome.failures {
        eprintln!("assertion failed: {target}#{f}");
    }
    1
}
