//! Runs the finite-difference gradient suite and prints the worst error.
use cofuse::diagnostics::{gradcheck_suite, FD_TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let results = gradcheck_suite(0)?;
    for r in &results {
        println!("{:<36} {:.2e} {}", r.name, r.report.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
    }
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    println!("{} checks, worst relative error {worst:.2e} (tolerance {FD_TOLERANCE:e})", results.len());
    Ok(())
}
