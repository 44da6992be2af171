//! Chooses the number of factors with the eigenvalue-ratio and threshold
//! selectors, and shows how they behave as the sample grows.
//!
//! ```bash
//! cargo run --release --example select_factors
//! ```

use regpca::montecarlo::oracle_spec;
use regpca::{default_lambda_nt, first_stage, select_k_ratio, select_k_threshold, simulate, DgpParams};

pub fn run_example() -> regpca::Result<()> {
    for &(n, t) in &[(50, 10), (200, 10), (100, 50), (500, 100)] {
        let draw = simulate(&DgpParams::new(n, t, 1.0, 0.5, 0.3, 3))?;
        let managed = first_stage(&draw.panel, &oracle_spec())?;
        let ev = managed.eigenvalues()?;
        let lambda = default_lambda_nt(managed.nbar);
        let shown: Vec<String> = ev.iter().take(4).map(|v| format!("{v:.3}")).collect();
        println!(
            "N = {n:>3}, T = {t:>3}: eigenvalues [{}], ratio K = {}, threshold K = {} (lambda {lambda:.3})",
            shown.join(", "),
            select_k_ratio(&managed)?,
            select_k_threshold(&managed, lambda)?,
        );
    }
    Ok(())
}

fn main() -> regpca::Result<()> {
    run_example()
}
