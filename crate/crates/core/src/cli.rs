//! Batch command-line interface.
//!
//! Every command validates its arguments, does its work, and writes its
//! outputs plus a `manifest.json` into `--out`. Failures print a JSON error
//! object on stderr and exit with 1 (numeric) or 2 (configuration / IO).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, ErrorKind, Result};
use crate::estimator::{
    default_lambda_nt, first_stage, fit, select_k_ratio_from_eigenvalues, select_k_threshold_from_eigenvalues,
    FactorFit, ManagedPanel,
};
use crate::evaluation::{self, r2_insample, PortfolioSeries};
use crate::inference::{alpha_test, coefficient_test, linearity_test, CoefTarget, TestReport};
use crate::montecarlo::{self, CellRun, DgpParams, Experiment, TestSettings};
use crate::panel::{filter_min_cross_section, load_csv, rank_transform, ColumnSchema, Panel};
use crate::sieve::SieveSpec;

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(
    name = "regpca",
    version,
    about = "Regressed-PCA factor model estimation and inference"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "REGPCA_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a panel from the simulation design and write it with its truth.
    Simulate(SimulateArgs),
    /// Estimate the factor model.
    Fit(FitArgs),
    /// Run a bootstrap test.
    Test(TestArgs),
    /// In-sample and out-of-sample evaluation.
    Evaluate(EvaluateArgs),
    /// Run or merge a Monte Carlo table experiment.
    McTable(McTableArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON column mapping; the column flags below override it.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub period_col: Option<String>,
    #[arg(long)]
    pub asset_col: Option<String>,
    #[arg(long)]
    pub return_col: Option<String>,
    /// Comma-separated characteristic columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    pub char_cols: Option<Vec<String>>,
    /// Replace characteristics by centered cross-sectional ranks.
    #[arg(long)]
    pub rank_transform: bool,
    /// Keep only the periods with at least this many complete rows.
    #[arg(long)]
    pub min_cross_section: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// `linear`, `bspline:<knots>`, `quadratic`, or a JSON spec file.
    #[arg(long, default_value = "bspline:3")]
    pub spec: String,
    /// Drop the intercept column from a shorthand spec.
    #[arg(long)]
    pub no_intercept: bool,
    /// Number of factors, or `auto:ratio` / `auto:threshold`.
    #[arg(long, default_value = "auto:ratio")]
    pub k: KChoice,
    /// Threshold for `auto:threshold` (default `1 / ln N`).
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    Fixed(usize),
    Ratio,
    Threshold,
}

impl FromStr for KChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto:ratio" | "auto" => Ok(KChoice::Ratio),
            "auto:threshold" => Ok(KChoice::Threshold),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .map(KChoice::Fixed)
                .ok_or_else(|| format!("expected a positive integer or auto:ratio|auto:threshold, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub t: usize,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestWhich {
    Alpha,
    Linearity,
    Coef,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    pub which: TestWhich,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 499)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Sieve rows of `a` tested by `coef` (comma-separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "beta_rows")]
    pub alpha_rows: Option<Vec<usize>>,
    /// Sieve rows of `B` tested by `coef` (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub beta_rows: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// First out-of-sample period (number of estimation periods).
    #[arg(long, default_value_t = evaluation::DEFAULT_T0)]
    pub t0: usize,
    #[arg(long, default_value_t = evaluation::MONTHS_PER_YEAR)]
    pub periods_per_year: f64,
    /// Out-of-sample periods used to estimate the first MVE weights
    /// (default K + 2).
    #[arg(long)]
    pub mve_burn_in: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McTableArgs {
    /// Experiment config JSON.
    #[arg(long, required_unless_present = "merge")]
    pub config: Option<PathBuf>,
    /// Merge the `runs.json` of earlier runs over disjoint replication ranges.
    #[arg(long, num_args = 1.., conflicts_with = "config")]
    pub merge: Vec<PathBuf>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub rep_start: Option<u64>,
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Abort on the first failed replication.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// One grid cell of an experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub rho: f64,
}

fn default_reps() -> u64 {
    1000
}
fn default_boot() -> usize {
    499
}
fn default_level() -> f64 {
    0.05
}
fn default_k() -> usize {
    montecarlo::N_FACTORS
}
fn default_scale() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub grid: Vec<GridCell>,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default)]
    pub rep_start: u64,
    #[serde(default = "default_boot")]
    pub boot: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Invalid("experiment grid is empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::Invalid("reps must be positive".into()));
        }
        check_level(self.level)?;
        if self.boot == 0 {
            return Err(Error::Invalid("boot must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Invalid("k must be positive".into()));
        }
        for p in self.cells() {
            p.validate()?;
        }
        Ok(())
    }

    /// Every cell shares the config seed, so cells that differ only in one
    /// parameter see the same random draws.
    pub fn cells(&self) -> Vec<DgpParams> {
        self.grid
            .iter()
            .map(|c| DgpParams {
                noise_scale: self.noise_scale,
                ..DgpParams::new(c.n, c.t, c.theta, c.delta, c.rho, self.seed)
            })
            .collect()
    }

    pub fn run(&self, strict: bool) -> Result<Vec<CellRun>> {
        self.validate()?;
        let tests = TestSettings {
            n_boot: self.boot,
            level: self.level,
        };
        let reps = self.rep_start..self.rep_start + self.reps;
        self.cells()
            .iter()
            .map(|p| montecarlo::run_cell(self.experiment, p, reps.clone(), self.k, &tests, strict))
            .collect()
    }
}

/// Table CSV with one row per cell.
pub fn write_table<W: Write>(runs: &[CellRun], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header_done = false;
    for run in runs {
        let s = run.summary();
        if !header_done {
            let mut header = vec!["n", "t", "theta", "delta", "rho", "reps", "failures"];
            header.extend(s.metrics.iter().map(|(k, _)| k.as_str()));
            w.write_record(&header)?;
            header_done = true;
        }
        let p = s.params;
        let mut row = vec![
            p.n.to_string(),
            p.t.to_string(),
            p.theta.to_string(),
            p.delta.to_string(),
            p.rho.to_string(),
            s.reps.to_string(),
            s.failures.to_string(),
        ];
        row.extend(s.metrics.iter().map(|(_, v)| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

/// Merges per-cell runs from several partial executions.
pub fn merge_runs(parts: Vec<Vec<CellRun>>) -> Result<Vec<CellRun>> {
    let mut iter = parts.into_iter();
    let mut merged = iter.next().ok_or_else(|| Error::Invalid("nothing to merge".into()))?;
    for part in iter {
        if part.len() != merged.len() {
            return Err(Error::Invalid("merged runs have different grids".into()));
        }
        merged = merged
            .into_iter()
            .zip(part)
            .map(|(a, b)| a.merge(b))
            .collect::<Result<_>>()?;
    }
    Ok(merged)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("level must lie in (0, 1), got {level}")))
    }
}

/// Parses `--spec`: a shorthand or the path of a JSON `SieveSpec`.
pub fn parse_spec(arg: &str, n_chars: usize, intercept: bool) -> Result<SieveSpec> {
    let spec = match arg {
        "linear" => SieveSpec::linear(n_chars, intercept),
        "quadratic" => SieveSpec::quadratic(n_chars, intercept),
        _ => {
            if let Some(knots) = arg.strip_prefix("bspline:") {
                let knots = knots
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad knot count in `{arg}`")))?;
                SieveSpec::bspline(n_chars, knots, intercept)
            } else {
                let text = fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?;
                let spec: SieveSpec = serde_json::from_str(&text)?;
                if spec.n_chars != n_chars {
                    return Err(Error::DimensionMismatch {
                        expected: n_chars,
                        got: spec.n_chars,
                    });
                }
                spec
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

impl InputArgs {
    fn schema(&self) -> Result<ColumnSchema> {
        let mut schema = match &self.schema {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)?
            }
            None => ColumnSchema::default(),
        };
        if let Some(c) = &self.period_col {
            schema.period = c.clone();
        }
        if let Some(c) = &self.asset_col {
            schema.asset = c.clone();
        }
        if let Some(c) = &self.return_col {
            schema.ret = c.clone();
        }
        if let Some(c) = &self.char_cols {
            schema.chars = Some(c.clone());
        }
        Ok(schema)
    }

    fn load(&self) -> Result<Panel> {
        let mut panel = load_csv(&self.input, &self.schema()?)?;
        if let Some(n_min) = self.min_cross_section {
            panel = filter_min_cross_section(&panel, n_min)?;
        }
        if self.rank_transform {
            panel = rank_transform(&panel);
        }
        Ok(panel)
    }

    fn checksums(&self) -> Result<Value> {
        let mut out = serde_json::Map::new();
        out.insert(self.input.display().to_string(), json!(sha256_file(&self.input)?));
        if let Some(p) = &self.schema {
            out.insert(p.display().to_string(), json!(sha256_file(p)?));
        }
        Ok(Value::Object(out))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Chosen number of factors and how it was chosen.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    k: usize,
    selector: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl ModelArgs {
    fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Invalid(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }

    fn spec(&self, panel: &Panel) -> Result<SieveSpec> {
        parse_spec(&self.spec, panel.n_chars(), !self.no_intercept)
    }

    fn resolve_k(&self, managed: &ManagedPanel) -> Result<Resolved> {
        Ok(match self.k {
            KChoice::Fixed(k) => Resolved {
                k,
                selector: "fixed",
                lambda: None,
            },
            KChoice::Ratio => Resolved {
                k: select_k_ratio_from_eigenvalues(&managed.eigenvalues()?)?,
                selector: "ratio",
                lambda: None,
            },
            KChoice::Threshold => {
                let lambda = self.lambda.unwrap_or_else(|| default_lambda_nt(managed.nbar));
                let k = select_k_threshold_from_eigenvalues(&managed.eigenvalues()?, lambda);
                if k == 0 {
                    return Err(Error::Invalid(format!(
                        "no eigenvalue reaches the threshold {lambda}; pass an explicit --k"
                    )));
                }
                Resolved {
                    k,
                    selector: "threshold",
                    lambda: Some(lambda),
                }
            }
        })
    }

    fn estimate(&self, panel: &Panel) -> Result<(SieveSpec, ManagedPanel, Resolved, FactorFit)> {
        let spec = self.spec(panel)?;
        let managed = first_stage(panel, &spec)?;
        let resolved = self.resolve_k(&managed)?;
        let est = fit(&managed, resolved.k)?;
        Ok((spec, managed, resolved, est))
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: &impl Serialize,
    seed: Option<u64>,
    inputs: Value,
    results: Value,
    started: Instant,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seed": seed,
        "threads": rayon::current_num_threads(),
        "inputs": inputs,
        "results": results,
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    write_json(&out.join("manifest.json"), &manifest)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let params = DgpParams {
        noise_scale: args.noise_scale,
        ..DgpParams::new(args.n, args.t, args.theta, args.delta, args.rho, args.seed)
    };
    params.validate()?;
    let draw = montecarlo::simulate(&params)?;
    create_out(&args.out)?;
    draw.panel.save_csv(args.out.join("panel.csv"))?;
    let truth = json!({
        "params": params,
        "a_true": draw.a_true.as_slice(),
        "b_true": draw.b_true.column_iter().map(|c| c.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "f_true": matrix_rows(&draw.f_true),
    });
    write_json(&args.out.join("truth.json"), &truth)?;
    write_manifest(
        &args.out,
        "simulate",
        args,
        Some(args.seed),
        json!({}),
        json!({}),
        started,
    )
}

fn write_fit_outputs(out: &Path, panel: &Panel, managed: &ManagedPanel, est: &FactorFit) -> Result<()> {
    write_json(&out.join("fit.json"), est)?;

    let mut w = csv::Writer::from_path(out.join("eigenvalues.csv"))?;
    w.write_record(["index", "eigenvalue"])?;
    for (j, v) in est.eigenvalues.iter().enumerate() {
        w.write_record([(j + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(out.join("eigenvalues.csv"), e))?;

    let path = out.join("managed_panel.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["period".to_string()];
    header.extend((0..managed.dim()).map(|j| format!("phi_{j}")));
    w.write_record(&header)?;
    for (t, col) in managed.ytilde.column_iter().enumerate() {
        let mut row = vec![panel.period_labels()[t].clone()];
        row.extend(col.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    args.model.validate()?;
    let panel = args.input.load()?;
    let (_, managed, resolved, est) = args.model.estimate(&panel)?;
    if est.near_tie {
        log::warn!(
            "eigenvalue {} is nearly tied with the next; loadings are poorly identified",
            est.k
        );
    }
    create_out(&args.out)?;
    write_fit_outputs(&args.out, &panel, &managed, &est)?;
    println!("K = {} ({})", resolved.k, resolved.selector);
    write_manifest(
        &args.out,
        "fit",
        args,
        None,
        args.input.checksums()?,
        json!({ "k": resolved }),
        started,
    )
}

fn cmd_test(args: &TestArgs) -> Result<()> {
    let started = Instant::now();
    check_level(args.level)?;
    if args.boot == 0 {
        return Err(Error::Invalid("boot must be positive".into()));
    }
    args.model.validate()?;
    let target = match (args.which, &args.alpha_rows, &args.beta_rows) {
        (TestWhich::Coef, Some(rows), None) => Some(CoefTarget::AlphaRows(rows.clone())),
        (TestWhich::Coef, None, Some(rows)) => Some(CoefTarget::BetaRows(rows.clone())),
        (TestWhich::Coef, _, _) => {
            return Err(Error::Invalid(
                "coef test needs exactly one of --alpha-rows, --beta-rows".into(),
            ))
        }
        _ => None,
    };
    let panel = args.input.load()?;
    let (spec, _, resolved, est) = args.model.estimate(&panel)?;
    let report: TestReport = match (args.which, target) {
        (TestWhich::Alpha, _) => alpha_test(&panel, &spec, &est, args.boot, args.level, args.seed)?,
        (TestWhich::Linearity, _) => linearity_test(&panel, &spec, &est, args.boot, args.level, args.seed)?,
        (TestWhich::Coef, Some(t)) => coefficient_test(&panel, &spec, &est, &t, args.boot, args.level, args.seed)?,
        (TestWhich::Coef, None) => unreachable!("target checked above"),
    };
    create_out(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    println!("{}", report.verdict());
    write_manifest(
        &args.out,
        "test",
        args,
        Some(args.seed),
        args.input.checksums()?,
        json!({ "k": resolved, "reject": report.reject }),
        started,
    )
}

fn write_series(path: &Path, panel: &Panel, s: &PortfolioSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["period", "value"])?;
    for (&t, r) in s.periods.iter().zip(&s.returns) {
        w.write_record([panel.period_labels()[t].clone(), r.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    args.model.validate()?;
    if !(args.periods_per_year > 0.0) {
        return Err(Error::Invalid("periods-per-year must be positive".into()));
    }
    let panel = args.input.load()?;
    let (spec, _, resolved, est) = args.model.estimate(&panel)?;
    let k = resolved.k;
    let ins = r2_insample(&panel, &est)?;
    let fits = evaluation::expanding_fits(&panel, &spec, k, args.t0)?;
    let pred = fits.predict_r2(&panel)?;
    let factors = fits.realized_factors(&panel)?;
    let fac_r2 = fits.realized_factor_r2(&panel, &factors)?;
    let periods: Vec<usize> = fits.periods().collect();
    let arb = PortfolioSeries::new(periods.clone(), fits.arbitrage_returns(&panel)?, args.periods_per_year);
    let burn_in = args.mve_burn_in.unwrap_or(k + 2);
    let mve = evaluation::mve_portfolio(&factors, &periods, burn_in, args.periods_per_year)?;

    let metrics: Vec<(&str, f64)> = vec![
        ("k", k as f64),
        ("r2_total", ins.r2_total),
        ("r2_tn", ins.r2_tn),
        ("r2_nt", ins.r2_nt),
        ("r2f_total", ins.r2f_total),
        ("r2f_tn", ins.r2f_tn),
        ("r2f_nt", ins.r2f_nt),
        ("oos_pred_r2_total", pred.total),
        ("oos_pred_r2_tn", pred.tn),
        ("oos_pred_r2_nt", pred.nt),
        ("oos_factor_r2_total", fac_r2.total),
        ("oos_factor_r2_tn", fac_r2.tn),
        ("oos_factor_r2_nt", fac_r2.nt),
        ("arbitrage_mean", arb.ann_mean),
        ("arbitrage_std", arb.ann_std),
        ("arbitrage_sharpe", arb.sharpe),
        ("mve_mean", mve.ann_mean),
        ("mve_std", mve.ann_std),
        ("mve_sharpe", mve.sharpe),
    ];

    create_out(&args.out)?;
    let obj: serde_json::Map<String, Value> = metrics.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    write_json(&args.out.join("metrics.json"), &obj)?;
    let path = args.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["metric", "value"])?;
    for (name, v) in &metrics {
        w.write_record([name.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_series(&args.out.join("arbitrage.csv"), &panel, &arb)?;
    write_series(&args.out.join("mve.csv"), &panel, &mve)?;

    let path = args.out.join("factors_oos.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["period".to_string()];
    header.extend((1..=k).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (s, row) in factors.row_iter().enumerate() {
        let mut rec = vec![panel.period_labels()[periods[s]].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    println!(
        "K = {k}: in-sample R2 {:.4}, out-of-sample arbitrage Sharpe {:.3}",
        ins.r2_total, arb.sharpe
    );
    write_manifest(
        &args.out,
        "evaluate",
        args,
        None,
        args.input.checksums()?,
        json!({ "k": resolved }),
        started,
    )
}

fn load_runs(dir: &Path) -> Result<Vec<CellRun>> {
    let path = if dir.is_dir() {
        dir.join("runs.json")
    } else {
        dir.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_mc_table(args: &McTableArgs) -> Result<()> {
    let started = Instant::now();
    let (runs, config, inputs, seed) = if args.merge.is_empty() {
        let path = args.config.as_ref().expect("clap requires --config without --merge");
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        if let Some(v) = args.reps {
            config.reps = v;
        }
        if let Some(v) = args.rep_start {
            config.rep_start = v;
        }
        if let Some(v) = args.boot {
            config.boot = v;
        }
        if let Some(v) = args.level {
            config.level = v;
        }
        if let Some(v) = args.seed {
            config.seed = v;
        }
        config.validate()?;
        let runs = config.run(args.strict)?;
        let inputs = json!({ path.display().to_string(): sha256_file(path)? });
        (runs, serde_json::to_value(&config)?, inputs, Some(config.seed))
    } else {
        let mut parts = Vec::new();
        let mut inputs = serde_json::Map::new();
        for dir in &args.merge {
            parts.push(load_runs(dir)?);
            inputs.insert(dir.display().to_string(), Value::Null);
        }
        (
            merge_runs(parts)?,
            json!({ "merge": args.merge }),
            Value::Object(inputs),
            None,
        )
    };

    create_out(&args.out)?;
    let mut table = Vec::new();
    write_table(&runs, &mut table)?;
    write_file(&args.out.join("table.csv"), &table)?;
    write_json(&args.out.join("runs.json"), &runs)?;
    let failures: usize = runs.iter().map(|r| r.summary().failures).sum();
    std::io::stdout()
        .write_all(&table)
        .map_err(|e| Error::io("<stdout>", e))?;
    write_manifest(
        &args.out,
        "mc-table",
        &json!({ "args": args, "experiment": config }),
        seed,
        inputs,
        json!({ "failures": failures }),
        started,
    )
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::McTable(a) => cmd_mc_table(a),
    }
}

fn report_error(kind: ErrorKind, message: &str) -> i32 {
    let obj = json!({ "kind": kind.as_str(), "message": message });
    eprintln!("{obj}");
    kind.exit_code()
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(
                e.kind(),
                K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return 0;
            }
            return report_error(ErrorKind::Config, &e.to_string());
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Invalid("threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => report_error(e.kind(), &e.to_string()),
    }
}
