//! Simulation design with two latent factors and three characteristics, and
//! the replication experiments built on it.
//!
//! The design: `alpha(z) = theta z1 + delta z1^2`,
//! `beta(z) = (z2 + delta z2^2, 2 z3 + 2 delta z3^2)`, with `z1 = sigma_t u1`,
//! `z2` an AR(1) with coefficient 0.3, `z3` i.i.d. normal, AR(1) factors with
//! coefficient 0.3 started from their stationary law, and AR(`rho`) errors
//! started from theirs. The basis `(z1, z1^2, z2, z2^2, z3, z3^2)` spans both
//! functions exactly.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    default_lambda_nt, first_stage, fit, rotation, select_k_ratio_from_eigenvalues, select_k_threshold_from_eigenvalues,
};
use crate::inference::{alpha_test, linearity_test};
use crate::linalg;
use crate::panel::Panel;
use crate::rng;
use crate::sieve::SieveSpec;

pub const N_FACTORS: usize = 2;
pub const N_CHARS: usize = 3;
const FACTOR_AR: f64 = 0.3;
const CHAR_AR: f64 = 0.3;

// stream labels under a replication seed
const S_SIGMA: u64 = 0;
const S_U: u64 = 1;
const S_Z2_INIT: u64 = 2;
const S_FACTORS: u64 = 3;
const S_NOISE: u64 = 4;
const S_BOOT: u64 = 5;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub n: usize,
    pub t: usize,
    pub theta: f64,
    pub delta: f64,
    pub rho: f64,
    pub seed: u64,
    /// Multiplier on the idiosyncratic errors; 0 gives an exact factor model.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

impl DgpParams {
    pub fn new(n: usize, t: usize, theta: f64, delta: f64, rho: f64, seed: u64) -> Self {
        Self {
            n,
            t,
            theta,
            delta,
            rho,
            seed,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Invalid("N and T must be positive".into()));
        }
        if !(self.theta >= 0.0 && self.delta >= 0.0) {
            return Err(Error::Invalid("theta and delta must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Invalid("noise_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Parameters of replication `rep`: same design, derived seed.
    pub fn replication(&self, rep: u64) -> DgpParams {
        DgpParams {
            seed: rng::child_seed(self.seed, &[rep]),
            ..*self
        }
    }

    /// Sieve coefficients of `alpha` on the exact basis.
    pub fn a_true(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.theta, self.delta, 0.0, 0.0, 0.0, 0.0])
    }

    /// Sieve coefficients of `beta` on the exact basis, `6 x 2`.
    pub fn b_true(&self) -> DMatrix<f64> {
        let d = self.delta;
        DMatrix::from_column_slice(6, 2, &[0.0, 0.0, 1.0, d, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0 * d])
    }
}

/// The basis that makes the design's sieve error zero.
pub fn oracle_spec() -> SieveSpec {
    SieveSpec::quadratic(N_CHARS, false)
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: Panel,
    /// `T x 2`
    pub f_true: DMatrix<f64>,
    pub a_true: DVector<f64>,
    pub b_true: DMatrix<f64>,
    /// Idiosyncratic errors, `T x N`.
    pub eps: DMatrix<f64>,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn simulate(params: &DgpParams) -> Result<SimDraw> {
    params.validate()?;
    let DgpParams {
        n,
        t: periods,
        theta,
        delta,
        rho,
        seed,
        noise_scale,
    } = *params;

    let mut sigma_rng = rng::stream(seed, &[S_SIGMA]);
    let sigma: Vec<f64> = (0..periods).map(|_| sigma_rng.random_range(1.0..2.0)).collect();

    let mut f_rng = rng::stream(seed, &[S_FACTORS]);
    let stationary_sd = (1.0 - FACTOR_AR * FACTOR_AR).sqrt();
    let mut f_prev = [normal(&mut f_rng) / stationary_sd, normal(&mut f_rng) / stationary_sd];
    let mut f_true = DMatrix::zeros(periods, N_FACTORS);
    for t in 0..periods {
        for k in 0..N_FACTORS {
            f_prev[k] = FACTOR_AR * f_prev[k] + normal(&mut f_rng);
            f_true[(t, k)] = f_prev[k];
        }
    }

    let mut noise_rng = rng::stream(seed, &[S_NOISE]);
    let eps_sd0 = 1.0 / (1.0 - rho * rho).sqrt();
    let mut eps_prev: Vec<f64> = (0..n).map(|_| normal(&mut noise_rng) * eps_sd0).collect();
    let mut eps = DMatrix::zeros(periods, n);
    for t in 0..periods {
        for i in 0..n {
            eps_prev[i] = rho * eps_prev[i] + normal(&mut noise_rng);
            eps[(t, i)] = noise_scale * eps_prev[i];
        }
    }

    let mut z2_rng = rng::stream(seed, &[S_Z2_INIT]);
    let mut z2_prev: Vec<f64> = (0..n).map(|_| normal(&mut z2_rng)).collect();
    let mut u_rng = rng::stream(seed, &[S_U]);
    let mut returns = vec![vec![0.0; n]; periods];
    let mut chars = vec![vec![0.0; n * N_CHARS]; periods];
    for t in 0..periods {
        let (f1, f2) = (f_true[(t, 0)], f_true[(t, 1)]);
        for i in 0..n {
            let u1 = normal(&mut u_rng);
            let u2 = normal(&mut u_rng);
            let u3 = normal(&mut u_rng);
            let z1 = sigma[t] * u1;
            let z2 = CHAR_AR * z2_prev[i] + u2;
            z2_prev[i] = z2;
            let z3 = u3;
            let alpha = theta * z1 + delta * z1 * z1;
            let beta1 = z2 + delta * z2 * z2;
            let beta2 = 2.0 * z3 + 2.0 * delta * z3 * z3;
            returns[t][i] = alpha + beta1 * f1 + beta2 * f2 + eps[(t, i)];
            chars[t][i * N_CHARS..(i + 1) * N_CHARS].copy_from_slice(&[z1, z2, z3]);
        }
    }
    let panel = Panel::new(returns, chars, vec![vec![true; n]; periods], N_CHARS)?.with_labels(
        (1..=periods).map(|t| t.to_string()).collect(),
        (0..n).map(|i| i.to_string()).collect(),
        vec!["z1".into(), "z2".into(), "z3".into()],
    )?;
    Ok(SimDraw {
        panel,
        f_true,
        a_true: params.a_true(),
        b_true: params.b_true(),
        eps,
    })
}

/// Squared estimation errors of one replication, after rotating the truth
/// into the estimate's normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSample {
    pub a: f64,
    pub b: f64,
    pub f: f64,
}

pub fn estimation_errors(draw: &SimDraw, k: usize) -> Result<MseSample> {
    let spec = oracle_spec();
    let managed = first_stage(&draw.panel, &spec)?;
    let est = fit(&managed, k)?;
    if k != N_FACTORS {
        return Err(Error::Invalid(format!(
            "estimation errors need the true number of factors ({N_FACTORS}), got {k}"
        )));
    }
    let h = rotation(&draw.f_true, &est)?.h;
    let h_t_inv = linalg::inverse(&h.transpose(), "H'")?;
    let t = draw.panel.n_periods() as f64;
    Ok(MseSample {
        a: (&est.a_hat - &draw.a_true).norm_squared(),
        b: (&est.b_hat - &draw.b_true * &h).norm_squared(),
        f: (&est.f_hat - &draw.f_true * h_t_inv).norm_squared() / t,
    })
}

/// Which experiment a table row summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Mse,
    Kselect,
    Alpha,
    Linearity,
}

/// Result of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepOutcome {
    Mse(MseSample),
    Kselect { khat: usize, ktilde: usize },
    Reject(bool),
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub n_boot: usize,
    pub level: f64,
}

impl Default for TestSettings {
    fn default() -> Self {
        Self {
            n_boot: 499,
            level: 0.05,
        }
    }
}

pub fn run_replication(
    experiment: Experiment,
    params: &DgpParams,
    rep: u64,
    k: usize,
    tests: &TestSettings,
) -> Result<RepOutcome> {
    let rep_params = params.replication(rep);
    let draw = simulate(&rep_params)?;
    let spec = oracle_spec();
    match experiment {
        Experiment::Mse => Ok(RepOutcome::Mse(estimation_errors(&draw, k)?)),
        Experiment::Kselect => {
            let managed = first_stage(&draw.panel, &spec)?;
            let ev = managed.eigenvalues()?;
            Ok(RepOutcome::Kselect {
                khat: select_k_ratio_from_eigenvalues(&ev)?,
                ktilde: select_k_threshold_from_eigenvalues(&ev, default_lambda_nt(managed.nbar)),
            })
        }
        Experiment::Alpha | Experiment::Linearity => {
            let managed = first_stage(&draw.panel, &spec)?;
            let est = fit(&managed, k)?;
            let boot_seed = rng::child_seed(rep_params.seed, &[S_BOOT]);
            let report = if experiment == Experiment::Alpha {
                alpha_test(&draw.panel, &spec, &est, tests.n_boot, tests.level, boot_seed)?
            } else {
                linearity_test(&draw.panel, &spec, &est, tests.n_boot, tests.level, boot_seed)?
            };
            Ok(RepOutcome::Reject(report.reject))
        }
    }
}

/// Per-replication outcomes of one grid cell over a range of replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub experiment: Experiment,
    pub params: DgpParams,
    pub k: usize,
    pub reps: Vec<(u64, RepOutcome)>,
}

/// Runs replications `reps` of one cell. Results are ordered by replication
/// index whatever the thread schedule. Failures are recorded, not raised,
/// unless `strict`.
pub fn run_cell(
    experiment: Experiment,
    params: &DgpParams,
    reps: Range<u64>,
    k: usize,
    tests: &TestSettings,
    strict: bool,
) -> Result<CellRun> {
    params.validate()?;
    let outcomes: Vec<(u64, Result<RepOutcome>)> = reps
        .into_par_iter()
        .map(|rep| (rep, run_replication(experiment, params, rep, k, tests)))
        .collect();
    let mut out = Vec::with_capacity(outcomes.len());
    for (rep, res) in outcomes {
        match res {
            Ok(o) => out.push((rep, o)),
            Err(e) if strict => {
                return Err(Error::Invalid(format!("replication {rep} failed: {e}")));
            }
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                out.push((rep, RepOutcome::Failed(e.to_string())));
            }
        }
    }
    Ok(CellRun {
        experiment,
        params: *params,
        k,
        reps: out,
    })
}

impl CellRun {
    /// Combines runs over disjoint replication ranges of the same cell.
    pub fn merge(mut self, other: CellRun) -> Result<CellRun> {
        if self.experiment != other.experiment || self.params != other.params || self.k != other.k {
            return Err(Error::Invalid("cannot merge runs of different cells".into()));
        }
        self.reps.extend(other.reps);
        self.reps.sort_by_key(|(rep, _)| *rep);
        if self.reps.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invalid("merged runs overlap in replication indices".into()));
        }
        Ok(self)
    }

    pub fn summary(&self) -> CellSummary {
        let mut failures = 0;
        let mut count = 0usize;
        let mut sums = [0.0f64; 3];
        for (_, o) in &self.reps {
            match o {
                RepOutcome::Failed(_) => failures += 1,
                RepOutcome::Mse(m) => {
                    count += 1;
                    sums[0] += m.a;
                    sums[1] += m.b;
                    sums[2] += m.f;
                }
                RepOutcome::Kselect { khat, ktilde } => {
                    count += 1;
                    sums[0] += f64::from(u8::from(*khat == N_FACTORS));
                    sums[1] += f64::from(u8::from(*ktilde == N_FACTORS));
                }
                RepOutcome::Reject(r) => {
                    count += 1;
                    sums[0] += f64::from(u8::from(*r));
                }
            }
        }
        let c = count as f64;
        let metrics = match self.experiment {
            Experiment::Mse => vec![("mse_a", sums[0] / c), ("mse_b", sums[1] / c), ("mse_f", sums[2] / c)],
            Experiment::Kselect => vec![("rate_khat", sums[0] / c), ("rate_ktilde", sums[1] / c)],
            Experiment::Alpha | Experiment::Linearity => vec![("rejection_rate", sums[0] / c)],
        };
        CellSummary {
            params: self.params,
            reps: count,
            failures,
            metrics: metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub params: DgpParams,
    pub reps: usize,
    pub failures: usize,
    pub metrics: Vec<(String, f64)>,
}

impl CellSummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Average squared errors over `n_reps` replications.
pub fn mse_experiment(params: &DgpParams, n_reps: u64, k: usize) -> Result<MseSample> {
    let s = run_cell(Experiment::Mse, params, 0..n_reps, k, &TestSettings::default(), true)?.summary();
    Ok(MseSample {
        a: s.metric("mse_a").unwrap_or(f64::NAN),
        b: s.metric("mse_b").unwrap_or(f64::NAN),
        f: s.metric("mse_f").unwrap_or(f64::NAN),
    })
}

/// Fractions of replications where the ratio and threshold selectors
/// return the true number of factors.
pub fn kselect_experiment(params: &DgpParams, n_reps: u64) -> Result<(f64, f64)> {
    let s = run_cell(
        Experiment::Kselect,
        params,
        0..n_reps,
        N_FACTORS,
        &TestSettings::default(),
        true,
    )?
    .summary();
    Ok((
        s.metric("rate_khat").unwrap_or(f64::NAN),
        s.metric("rate_ktilde").unwrap_or(f64::NAN),
    ))
}

/// Which bootstrap test a rejection experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Alpha,
    Linearity,
}

/// Rejection rate per grid cell.
pub fn rejection_experiment(
    grid: &[DgpParams],
    test: TestKind,
    n_reps: u64,
    tests: &TestSettings,
) -> Result<Vec<(DgpParams, f64)>> {
    let experiment = match test {
        TestKind::Alpha => Experiment::Alpha,
        TestKind::Linearity => Experiment::Linearity,
    };
    grid.iter()
        .map(|p| {
            let s = run_cell(experiment, p, 0..n_reps, N_FACTORS, tests, true)?.summary();
            Ok((*p, s.metric("rejection_rate").unwrap_or(f64::NAN)))
        })
        .collect()
}
