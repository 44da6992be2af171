//! Expanding-window evaluation: return forecasts, the arbitrage portfolio
//! built from estimated alpha, and the mean-variance efficient combination
//! of out-of-sample factors.
//!
//! ```bash
//! cargo run --release --example out_of_sample
//! ```

use regpca::evaluation::MONTHS_PER_YEAR;
use regpca::montecarlo::oracle_spec;
use regpca::{expanding_fits, mve_portfolio, simulate, DgpParams, PortfolioSeries};

pub fn run_example() -> regpca::Result<()> {
    let draw = simulate(&DgpParams::new(200, 60, 1.0, 0.5, 0.3, 21))?;
    let panel = &draw.panel;
    let (k, t0) = (2, 30);
    let fits = expanding_fits(panel, &oracle_spec(), k, t0)?;

    let pred = fits.predict_r2(panel)?;
    println!(
        "predictive R2: total {:.4}, time series {:.4}, cross section {:.4}",
        pred.total, pred.tn, pred.nt
    );

    let factors = fits.realized_factors(panel)?;
    let fr2 = fits.realized_factor_r2(panel, &factors)?;
    println!("realized factor R2: total {:.4}", fr2.total);

    let periods: Vec<usize> = fits.periods().collect();
    let arb = PortfolioSeries::new(periods.clone(), fits.arbitrage_returns(panel)?, MONTHS_PER_YEAR);
    println!(
        "arbitrage portfolio: mean {:.3}, std {:.3}, Sharpe {:.2}",
        arb.ann_mean, arb.ann_std, arb.sharpe
    );

    let mve = mve_portfolio(&factors, &periods, k + 2, MONTHS_PER_YEAR)?;
    println!(
        "factor MVE portfolio: Sharpe {:.2} over {} periods",
        mve.sharpe,
        mve.returns.len()
    );
    Ok(())
}

fn main() -> regpca::Result<()> {
    run_example()
}
