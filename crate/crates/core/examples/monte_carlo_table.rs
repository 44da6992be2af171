//! Small versions of the simulation tables: estimation error, factor-count
//! selection, and the bootstrap alpha test's rejection rate.
//!
//! ```bash
//! cargo run --release --example monte_carlo_table -- 200
//! ```

use regpca::montecarlo::{kselect_experiment, mse_experiment, rejection_experiment, TestKind, TestSettings};
use regpca::DgpParams;

const SEED: u64 = 11;

pub fn run_example(reps: u64) -> regpca::Result<()> {
    println!(
        "{:>4} {:>4} {:>4} {:>9} {:>9} {:>9} {:>6} {:>6}",
        "N", "T", "rho", "mse_a", "mse_b", "mse_f", "K^", "K~"
    );
    for &(n, t) in &[(50, 10), (200, 10), (100, 50)] {
        for &rho in &[0.0, 0.7] {
            let p = DgpParams::new(n, t, 1.0, 0.5, rho, SEED);
            let mse = mse_experiment(&p, reps, 2)?;
            let (khat, ktilde) = kselect_experiment(&p, reps)?;
            println!(
                "{n:>4} {t:>4} {rho:>4} {:>9.4} {:>9.4} {:>9.4} {khat:>6.3} {ktilde:>6.3}",
                mse.a, mse.b, mse.f
            );
        }
    }

    let grid: Vec<DgpParams> = [0.0, 0.1]
        .iter()
        .map(|&theta| DgpParams::new(200, 10, theta, 0.0, 0.3, SEED))
        .collect();
    let settings = TestSettings {
        n_boot: 199,
        level: 0.05,
    };
    for (p, rate) in rejection_experiment(&grid, TestKind::Alpha, reps.min(100), &settings)? {
        println!("alpha test, theta = {}: rejection rate {rate:.3}", p.theta);
    }
    Ok(())
}

fn main() -> regpca::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    run_example(reps)
}
