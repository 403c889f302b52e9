//! `rsl verify`: runs the built-in invariant checks.

use crate::CliError;

pub fn run(quick: bool) -> Result<(), CliError> {
    let results = rsl_core::verify::run_checks(quick);
    let mut failed = 0;
    for r in &results {
        println!("{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(CliError::Run(format!("{failed} checks failed")));
    }
    Ok(())
}
