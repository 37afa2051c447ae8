//! Finite-difference gradient checks for every layer and the attention module.

use bam::diagnostics::{bam_suite, layer_suite};

pub fn main() -> bam::Result<()> {
    let mut checks = layer_suite(0, 1e-5)?;
    checks.extend(bam_suite(0, 1e-5)?);
    for c in &checks {
        let status = if c.max_error < 1e-4 { "ok" } else { "FAIL" };
        println!("{:<24} {:>10.2e}  {status}", c.name, c.max_error);
    }
    Ok(())
}
