//! Estimates a conditional factor model on a simulated panel and compares
//! the estimates with the truth that generated it.
//!
//! ```bash
//! cargo run --release --example fit_factor_model
//! ```

use regpca::montecarlo::oracle_spec;
use regpca::{first_stage, fit, r2_insample, rotation, simulate, DgpParams, SieveSpec};

pub fn run_example() -> regpca::Result<()> {
    let params = DgpParams::new(300, 60, 1.0, 0.5, 0.3, 7);
    let draw = simulate(&params)?;
    let panel = &draw.panel;
    println!(
        "panel: {} assets, {} periods, {} characteristics",
        panel.n_assets(),
        panel.n_periods(),
        panel.n_chars()
    );

    // the design's own basis, where alpha and beta are exactly representable
    let managed = first_stage(panel, &oracle_spec())?;
    let est = fit(&managed, 2)?;
    let top: Vec<String> = est.eigenvalues.iter().take(4).map(|v| format!("{v:.4}")).collect();
    println!("leading eigenvalues: {}", top.join(", "));
    println!("a_hat: {:.3}", est.a_hat.transpose());
    println!("a:     {:.3}", draw.a_true.transpose());

    // factors are identified up to an invertible K x K rotation
    let h = rotation(&draw.f_true, &est)?.h;
    let fitted = &est.f_hat * h.transpose();
    let err = (&fitted - &draw.f_true).norm() / draw.f_true.norm();
    println!("relative factor error after rotation: {err:.4}");

    let z = [0.4, -0.2, 0.1];
    println!("alpha_hat({z:?}) = {:.4}", est.eval_alpha(&z)?);
    println!("beta_hat({z:?})  = {:.4}", est.eval_beta(&z)?.transpose());

    // a flexible spline sieve needs no knowledge of the functional form
    let spline = SieveSpec::bspline(panel.n_chars(), 3, true);
    let est = fit(&first_stage(panel, &spline)?, 2)?;
    let r2 = r2_insample(panel, &est)?;
    println!(
        "B-spline sieve (dim {}): total R2 {:.3}, without alpha {:.3}",
        spline.total_dim(),
        r2.r2_total,
        r2.r2f_total
    );
    Ok(())
}

fn main() -> regpca::Result<()> {
    run_example()
}
