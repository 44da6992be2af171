//! Weighted-bootstrap inference for the sieve coefficients.
//!
//! Each bootstrap draw reweights every asset by an i.i.d. standard
//! exponential weight, held fixed across periods, reruns the first stage
//! with the weighted design and re-estimates the loadings against the
//! original factor estimates. Tests compare a statistic computed on the
//! sample with the centered bootstrap analogues.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{check_spec, managed_columns, FactorFit};
use crate::linalg;
use crate::panel::Panel;
use crate::rng;
use crate::sieve::{period_designs, PeriodDesign, SieveSpec};

/// Variance of the bootstrap weights (standard exponential).
pub const OMEGA0: f64 = 1.0;

/// i.i.d. Exp(1) weights by inversion, `w = -ln(1 - U)`.
pub fn draw_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect()
}

/// One bootstrap replicate of the sieve coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraw {
    pub a_star: DVector<f64>,
    pub b_star: DMatrix<f64>,
    /// Linear-null intercept coefficients, linearity test only.
    pub gamma_star: Option<DVector<f64>>,
    /// Linear-null loading coefficients, linearity test only.
    pub gamma_mat_star: Option<DMatrix<f64>>,
}

/// Linear-null estimates on the original sample.
#[derive(Debug, Clone)]
struct LinearNull {
    spec: SieveSpec,
    designs: Vec<PeriodDesign>,
    gamma: DVector<f64>,
    gamma_mat: DMatrix<f64>,
}

/// Everything a bootstrap draw needs that does not depend on the weights.
#[derive(Debug, Clone)]
pub struct Bootstrap<'a> {
    fit: &'a FactorFit,
    designs: Vec<PeriodDesign>,
    /// `M_T F_hat (F_hat' M_T F_hat)^{-1}`, `T x K`.
    projector: DMatrix<f64>,
    n_assets: usize,
    n_periods: usize,
    nbar: usize,
    /// Statistics at or below this level are round-off noise.
    roundoff: f64,
    null: Option<LinearNull>,
}

impl<'a> Bootstrap<'a> {
    pub fn new(panel: &Panel, spec: &SieveSpec, fit: &'a FactorFit) -> Result<Self> {
        check_spec(panel, spec)?;
        if spec != &fit.spec {
            return Err(Error::Invalid("fit was produced with a different sieve spec".into()));
        }
        if fit.n_periods() != panel.n_periods() {
            return Err(Error::DimensionMismatch {
                expected: panel.n_periods(),
                got: fit.n_periods(),
            });
        }
        let designs = period_designs(spec, panel)?;
        let centered = linalg::demean_rows(&fit.f_hat);
        let gram_inv = linalg::spd_inverse(&(centered.transpose() * &centered), "F_hat' M_T F_hat")?;
        let projector = centered * gram_inv;
        let nbar = designs.iter().map(PeriodDesign::n_obs).max().unwrap_or(0);
        let ymax = managed_columns(&designs, None)?.amax();
        let roundoff = (nbar * panel.n_periods()) as f64 * f64::EPSILON * ymax * ymax;
        Ok(Self {
            fit,
            designs,
            projector,
            n_assets: panel.n_assets(),
            n_periods: panel.n_periods(),
            nbar,
            roundoff,
            null: None,
        })
    }

    /// Adds the linear-null regression needed by the linearity test.
    ///
    /// `Gamma_hat = Yvec M_T F_hat (F_hat' M_T F_hat)^{-1}` and
    /// `gamma_hat = mean(Yvec) - Gamma_hat B_hat' mean(Ytilde)`, with the
    /// factors taken from the unrestricted fit.
    pub fn with_linear_null(mut self, panel: &Panel) -> Result<Self> {
        let spec = self.fit.spec.linear_null();
        let designs = period_designs(&spec, panel)?;
        let yvec = managed_columns(&designs, None)?;
        let ytilde = managed_columns(&self.designs, None)?;
        let gamma_mat = &yvec * &self.projector;
        let gamma =
            linalg::column_mean(&yvec) - &gamma_mat * (self.fit.b_hat.transpose() * linalg::column_mean(&ytilde));
        self.null = Some(LinearNull {
            spec,
            designs,
            gamma,
            gamma_mat,
        });
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn nbar(&self) -> usize {
        self.nbar
    }

    /// Maps a sample statistic indistinguishable from round-off to zero,
    /// so exactly-null noiseless data never rejects.
    pub fn floor_statistic(&self, statistic: f64) -> f64 {
        if statistic <= self.roundoff {
            0.0
        } else {
            statistic
        }
    }

    /// Bootstrap estimates for one weight vector (indexed by asset id).
    pub fn draw(&self, weights: &[f64]) -> Result<BootstrapDraw> {
        if weights.len() != self.n_assets {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets,
                got: weights.len(),
            });
        }
        let ytilde = managed_columns(&self.designs, Some(weights))?;
        let b_star = &ytilde * &self.projector;
        let btb_inv = linalg::spd_inverse(&(b_star.transpose() * &b_star), "B*' B*")?;
        let mean = linalg::column_mean(&ytilde);
        let a_star = &mean - &b_star * (&btb_inv * (b_star.transpose() * &mean));
        let (gamma_star, gamma_mat_star) = match &self.null {
            None => (None, None),
            Some(null) => {
                let yvec = managed_columns(&null.designs, Some(weights))?;
                let gamma_mat = &yvec * &self.projector;
                let gamma = linalg::column_mean(&yvec) - &gamma_mat * (&btb_inv * (b_star.transpose() * &mean));
                (Some(gamma), Some(gamma_mat))
            }
        };
        Ok(BootstrapDraw {
            a_star,
            b_star,
            gamma_star,
            gamma_mat_star,
        })
    }

    /// Draws `n_boot` replicates with weights from stream `(seed, b)` and maps
    /// each through `stat`. Output order follows the draw index.
    fn replicate<F>(&self, n_boot: usize, seed: u64, stat: F) -> Result<Vec<f64>>
    where
        F: Fn(&BootstrapDraw) -> f64 + Sync,
    {
        let results: Vec<Result<f64>> = (0..n_boot)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(seed, &[b as u64]);
                let weights = draw_weights(self.n_assets, &mut rng);
                self.draw(&weights).map(|d| stat(&d)).map_err(|e| Error::BootstrapDraw {
                    draw: b,
                    source: Box::new(e),
                })
            })
            .collect();
        results.into_iter().collect()
    }
}

/// Convenience wrapper: a single draw without the linear-null part.
pub fn bootstrap_fit(panel: &Panel, spec: &SieveSpec, fit: &FactorFit, weights: &[f64]) -> Result<BootstrapDraw> {
    Bootstrap::new(panel, spec, fit)?.draw(weights)
}

/// Outcome of a bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub boot_stats: Vec<f64>,
    /// The `ceil((B + 1)(1 - level))`-th smallest bootstrap statistic;
    /// infinite (serialized as null) when that index exceeds `B`.
    pub critical_value: Option<f64>,
    pub p_value: f64,
    pub level: f64,
    pub reject: bool,
    pub n_boot: usize,
    pub seed: u64,
}

impl TestReport {
    pub fn from_draws(test: &str, statistic: f64, boot_stats: Vec<f64>, level: f64, seed: u64) -> Self {
        let n_boot = boot_stats.len();
        let mut sorted = boot_stats.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = critical_rank(n_boot, level);
        let critical_value = (rank <= n_boot).then(|| sorted[rank - 1]);
        let exceed = boot_stats.iter().filter(|&&s| s >= statistic).count();
        let p_value = (1 + exceed) as f64 / (n_boot + 1) as f64;
        let reject = critical_value.is_some_and(|c| statistic > c);
        Self {
            test: test.to_string(),
            statistic,
            boot_stats,
            critical_value,
            p_value,
            level,
            reject,
            n_boot,
            seed,
        }
    }

    pub fn verdict(&self) -> String {
        format!(
            "{}: statistic={:.6} critical={} p={:.4} -> {}",
            self.test,
            self.statistic,
            self.critical_value
                .map_or_else(|| "inf".to_string(), |c| format!("{c:.6}")),
            self.p_value,
            if self.reject { "reject" } else { "do not reject" }
        )
    }
}

/// 1-based order statistic used as the critical value.
pub fn critical_rank(n_boot: usize, level: f64) -> usize {
    // guard against 0.95 * 500 = 474.99999...
    (((n_boot + 1) as f64) * (1.0 - level) - 1e-9).ceil().max(1.0) as usize
}

fn check_test_args(n_boot: usize, level: f64) -> Result<()> {
    if n_boot == 0 {
        return Err(Error::Invalid("number of bootstrap draws must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn nt_scale(boot: &Bootstrap<'_>) -> f64 {
    (boot.nbar * boot.n_periods) as f64
}

/// Test of `alpha(.) = 0`: `N T |a_hat|^2` against the bootstrap law of
/// `N T |a* - a_hat|^2 / omega_0`.
pub fn alpha_test(
    panel: &Panel,
    spec: &SieveSpec,
    fit: &FactorFit,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<TestReport> {
    check_test_args(n_boot, level)?;
    let boot = Bootstrap::new(panel, spec, fit)?;
    let scale = nt_scale(&boot);
    let statistic = boot.floor_statistic(scale * fit.a_hat.norm_squared());
    let draws = boot.replicate(n_boot, seed, |d| {
        scale * (&d.a_star - &fit.a_hat).norm_squared() / OMEGA0
    })?;
    Ok(TestReport::from_draws("alpha", statistic, draws, level, seed))
}

/// Rows of the sieve coefficients whose joint significance is tested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefTarget {
    AlphaRows(Vec<usize>),
    BetaRows(Vec<usize>),
}

pub fn coefficient_test(
    panel: &Panel,
    spec: &SieveSpec,
    fit: &FactorFit,
    target: &CoefTarget,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<TestReport> {
    check_test_args(n_boot, level)?;
    let d = fit.dim();
    let rows = match target {
        CoefTarget::AlphaRows(r) | CoefTarget::BetaRows(r) => r,
    };
    if rows.is_empty() {
        return Err(Error::Invalid("coefficient test needs at least one row".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= d) {
        return Err(Error::Invalid(format!("row {bad} outside basis dimension {d}")));
    }
    let mut uniq = rows.clone();
    uniq.sort_unstable();
    uniq.dedup();
    let is_beta = matches!(target, CoefTarget::BetaRows(_));
    if is_beta && uniq.len() == d {
        return Err(Error::Invalid(
            "testing every loading row (beta = 0) is not supported".into(),
        ));
    }
    let boot = Bootstrap::new(panel, spec, fit)?;
    let scale = nt_scale(&boot);
    let selected_sq = |a: &DVector<f64>, b: &DMatrix<f64>| -> f64 {
        if is_beta {
            uniq.iter().map(|&r| b.row(r).norm_squared()).sum()
        } else {
            uniq.iter().map(|&r| a[r] * a[r]).sum()
        }
    };
    let statistic = boot.floor_statistic(scale * selected_sq(&fit.a_hat, &fit.b_hat));
    let draws = boot.replicate(n_boot, seed, |dr| {
        scale * selected_sq(&(&dr.a_star - &fit.a_hat), &(&dr.b_star - &fit.b_hat)) / OMEGA0
    })?;
    let name = if is_beta { "coef_beta" } else { "coef_alpha" };
    Ok(TestReport::from_draws(name, statistic, draws, level, seed))
}

/// Stacked regressor pairs `(x_it, phi(z_it))` over observed cells, used to
/// evaluate sums of squared fitted-function gaps.
struct PairGram {
    /// `sum_it v v'` with `v = (x_it; phi_it)`.
    gram: DMatrix<f64>,
    null_dim: usize,
}

impl PairGram {
    fn build(null: &LinearNull, designs: &[PeriodDesign]) -> Self {
        let p = null.spec.total_dim();
        let d = designs.first().map_or(0, |d| d.dim);
        let n = p + d;
        let mut gram = DMatrix::zeros(n, n);
        let mut v = vec![0.0; n];
        for (zd, pd) in null.designs.iter().zip(designs) {
            for r in 0..pd.n_obs() {
                v[..p].copy_from_slice(zd.row(r));
                v[p..].copy_from_slice(pd.row(r));
                for a in 0..n {
                    for b in a..n {
                        gram[(a, b)] += v[a] * v[b];
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        Self { gram, null_dim: p }
    }

    /// `sum_it |dg' x - da' phi|^2 + |dG' x - dB' phi|^2`.
    fn gap(&self, dg: &DVector<f64>, dgm: &DMatrix<f64>, da: &DVector<f64>, db: &DMatrix<f64>) -> f64 {
        let p = self.null_dim;
        let n = self.gram.nrows();
        let k = dgm.ncols();
        let mut c = DMatrix::zeros(n, k + 1);
        c.view_mut((0, 0), (p, 1)).copy_from(dg);
        c.view_mut((p, 0), (n - p, 1)).copy_from(&(-da));
        c.view_mut((0, 1), (p, k)).copy_from(dgm);
        c.view_mut((p, 1), (n - p, k)).copy_from(&(-db));
        (c.transpose() * &self.gram * &c).trace()
    }
}

/// Linearity statistic `S` computed term by term over observed cells.
pub fn linearity_statistic(panel: &Panel, fit: &FactorFit) -> Result<f64> {
    let boot = Bootstrap::new(panel, &fit.spec, fit)?.with_linear_null(panel)?;
    Ok(sample_linearity_statistic(&boot, panel))
}

fn sample_linearity_statistic(boot: &Bootstrap<'_>, panel: &Panel) -> f64 {
    let null = boot.null.as_ref().expect("linear null present");
    let fit = boot.fit;
    let j = fit.spec.per_char_dim() as f64;
    let mut total = 0.0;
    for (zd, pd) in null.designs.iter().zip(&boot.designs) {
        for r in 0..pd.n_obs() {
            let x = zd.row(r);
            let phi = pd.row(r);
            let lin_alpha: f64 = x.iter().zip(null.gamma.iter()).map(|(a, b)| a * b).sum();
            let da = lin_alpha - fit.alpha_from_basis(phi);
            let beta = fit.beta_from_basis(phi);
            let mut sq = da * da;
            for k in 0..fit.k {
                let lin: f64 = x.iter().zip(null.gamma_mat.column(k).iter()).map(|(a, b)| a * b).sum();
                sq += (lin - beta[k]).powi(2);
            }
            total += sq;
        }
    }
    debug_assert_eq!(boot.n_periods, panel.n_periods());
    total / j
}

/// Joint test that `alpha(.)` and `beta(.)` are linear in the characteristics.
pub fn linearity_test(
    panel: &Panel,
    spec: &SieveSpec,
    fit: &FactorFit,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<TestReport> {
    check_test_args(n_boot, level)?;
    if spec.is_linear() {
        return Err(Error::Invalid(
            "linearity test needs a nonlinear sieve; the null equals the alternative".into(),
        ));
    }
    let boot = Bootstrap::new(panel, spec, fit)?.with_linear_null(panel)?;
    let statistic = boot.floor_statistic(sample_linearity_statistic(&boot, panel));
    let null = boot.null.as_ref().expect("linear null present");
    let pairs = PairGram::build(null, &boot.designs);
    let j = spec.per_char_dim() as f64;
    let draws = boot.replicate(n_boot, seed, |d| {
        let dg = d.gamma_star.as_ref().expect("null draw") - &null.gamma;
        let dgm = d.gamma_mat_star.as_ref().expect("null draw") - &null.gamma_mat;
        let da = &d.a_star - &fit.a_hat;
        let db = &d.b_star - &fit.b_hat;
        pairs.gap(&dg, &dgm, &da, &db) / (j * OMEGA0)
    })?;
    Ok(TestReport::from_draws("linearity", statistic, draws, level, seed))
}
