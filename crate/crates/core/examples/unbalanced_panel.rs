//! Reads an unbalanced long-format panel, drops thin periods, converts
//! characteristics to cross-sectional ranks, and fits the model.
//!
//! ```bash
//! cargo run --release --example unbalanced_panel
//! ```

use regpca::{filter_min_cross_section, first_stage, fit, load_csv, rank_transform, read_csv, ColumnSchema, SieveSpec};

const TOY_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy5.csv");

pub fn run_example() -> regpca::Result<()> {
    let panel = load_csv(TOY_CSV, &ColumnSchema::default())?;
    println!(
        "{}: {} assets x {} periods, characteristics {:?}",
        TOY_CSV.rsplit('/').next().unwrap_or(TOY_CSV),
        panel.n_assets(),
        panel.n_periods(),
        panel.char_names()
    );
    let est = fit(&first_stage(&panel, &SieveSpec::linear(panel.n_chars(), true))?, 1)?;
    println!("one factor, linear sieve: a_hat {:.4}", est.a_hat.transpose());

    // rows are missing at random; column names differ from the defaults
    let mut text = String::from("month,permno,ret,size,bm\n");
    let mut state = 17u64;
    for t in 0..8 {
        for i in 0..12 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            if t == 7 && i > 3 || u < 0.15 {
                continue;
            }
            let size = (i as f64 * 0.7 + t as f64 * 0.1).sin();
            let bm = u - 0.5;
            let ret = 0.01 * size + 0.02 * (t as f64).cos() * (1.0 + bm) + 0.001 * u;
            text.push_str(&format!("{t},{},{ret:.6},{size:.4},{bm:.4}\n", 10000 + i));
        }
    }
    let schema = ColumnSchema {
        period: "month".into(),
        asset: "permno".into(),
        ret: "ret".into(),
        chars: None,
    };
    let panel = read_csv(text.as_bytes(), &schema)?;
    println!("observed per period: {:?}", panel.n_obs_all());

    let panel = filter_min_cross_section(&panel, 8)?;
    println!(
        "after dropping periods with fewer than 8 assets: {} periods",
        panel.n_periods()
    );

    let panel = rank_transform(&panel);
    let spec = SieveSpec::bspline(panel.n_chars(), 1, true);
    let managed = first_stage(&panel, &spec)?;
    let est = fit(&managed, 1)?;
    println!(
        "rank characteristics, B-spline sieve: nbar = {}, eigenvalues {:.5?}",
        managed.nbar, est.eigenvalues
    );
    Ok(())
}

fn main() -> regpca::Result<()> {
    run_example()
}
