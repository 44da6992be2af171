//! Goodness of fit and portfolio diagnostics.
//!
//! Characteristics stored at period `t` are the ones known before the
//! period-`t` return is realized, so every prediction of `r_it` uses `z_it`
//! as stored in the panel. Out-of-sample quantities for period `t` come from
//! an expanding-window fit on periods `0..t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{check_spec, first_stage, fit, FactorFit, ManagedPanel};
use crate::linalg;
use crate::panel::Panel;
use crate::sieve::{PeriodDesign, SieveSpec};

/// Default first out-of-sample period (ten years of monthly data).
pub const DEFAULT_T0: usize = 120;

/// Monthly data annualization.
pub const MONTHS_PER_YEAR: f64 = 12.0;

/// In-sample R² measures: total, time-series average across assets,
/// cross-sectional average across periods, each with and without alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Suite {
    pub r2_total: f64,
    pub r2_tn: f64,
    pub r2_nt: f64,
    pub r2f_total: f64,
    pub r2f_tn: f64,
    pub r2f_nt: f64,
}

/// The three R² aggregations of one residual definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Triple {
    pub total: f64,
    pub tn: f64,
    pub nt: f64,
}

/// Accumulates squared residuals and squared returns by asset and period.
struct R2Acc {
    resid_asset: Vec<f64>,
    ret_asset: Vec<f64>,
    resid_period: Vec<f64>,
    ret_period: Vec<f64>,
}

impl R2Acc {
    fn new(n_assets: usize, n_periods: usize) -> Self {
        Self {
            resid_asset: vec![0.0; n_assets],
            ret_asset: vec![0.0; n_assets],
            resid_period: vec![0.0; n_periods],
            ret_period: vec![0.0; n_periods],
        }
    }

    fn add(&mut self, i: usize, t: usize, r: f64, resid: f64) {
        self.resid_asset[i] += resid * resid;
        self.ret_asset[i] += r * r;
        self.resid_period[t] += resid * resid;
        self.ret_period[t] += r * r;
    }

    /// Assets and periods with a zero return sum of squares (in particular
    /// those never observed) are left out of the averages.
    fn finish(&self) -> Result<R2Triple> {
        let num: f64 = self.resid_period.iter().sum();
        let den: f64 = self.ret_period.iter().sum();
        if den <= 0.0 {
            return Err(Error::Invalid("sum of squared returns is zero".into()));
        }
        let avg_ratio = |resid: &[f64], ret: &[f64]| {
            let (sum, count) = resid
                .iter()
                .zip(ret)
                .filter(|(_, &d)| d > 0.0)
                .fold((0.0, 0usize), |(s, c), (n, d)| (s + n / d, c + 1));
            1.0 - sum / count as f64
        };
        Ok(R2Triple {
            total: 1.0 - num / den,
            tn: avg_ratio(&self.resid_asset, &self.ret_asset),
            nt: avg_ratio(&self.resid_period, &self.ret_period),
        })
    }
}

pub fn r2_insample(panel: &Panel, fit: &FactorFit) -> Result<R2Suite> {
    check_spec(panel, &fit.spec)?;
    if fit.n_periods() != panel.n_periods() {
        return Err(Error::DimensionMismatch {
            expected: panel.n_periods(),
            got: fit.n_periods(),
        });
    }
    let mut full = R2Acc::new(panel.n_assets(), panel.n_periods());
    let mut factor_only = R2Acc::new(panel.n_assets(), panel.n_periods());
    let mut phi = vec![0.0; fit.dim()];
    for t in 0..panel.n_periods() {
        let f_t = fit.f_hat.row(t).transpose();
        for i in panel.observed(t) {
            fit.spec.eval_into(panel.z(t, i), &mut phi)?;
            let r = panel.returns(t)[i];
            let common = fit.beta_from_basis(&phi).dot(&f_t);
            let alpha = fit.alpha_from_basis(&phi);
            full.add(i, t, r, r - alpha - common);
            factor_only.add(i, t, r, r - common);
        }
    }
    let a = full.finish()?;
    let f = factor_only.finish()?;
    Ok(R2Suite {
        r2_total: a.total,
        r2_tn: a.tn,
        r2_nt: a.nt,
        r2f_total: f.total,
        r2f_tn: f.tn,
        r2f_nt: f.nt,
    })
}

/// Expanding-window fits: entry `s` is estimated on periods `0..t0 + s` and
/// used to evaluate period `t0 + s`.
#[derive(Debug, Clone)]
pub struct ExpandingFits {
    pub t0: usize,
    pub k: usize,
    pub fits: Vec<FactorFit>,
    pub managed: ManagedPanel,
}

impl ExpandingFits {
    pub fn periods(&self) -> std::ops::Range<usize> {
        self.t0..self.t0 + self.fits.len()
    }

    /// Fit for evaluating period `t`.
    pub fn fit_for(&self, t: usize) -> &FactorFit {
        &self.fits[t - self.t0]
    }
}

pub fn expanding_fits(panel: &Panel, spec: &SieveSpec, k: usize, t0: usize) -> Result<ExpandingFits> {
    check_spec(panel, spec)?;
    let t_total = panel.n_periods();
    if t0 < k + 2 {
        return Err(Error::Invalid(format!(
            "burn-in {t0} too short for {k} factors (need at least {})",
            k + 2
        )));
    }
    if t0 >= t_total {
        return Err(Error::Invalid(format!(
            "burn-in {t0} leaves no out-of-sample periods in a panel of {t_total}"
        )));
    }
    // each period's first-stage regression depends only on that period, so
    // the full-sample managed panel restricted to 0..t is the window's own
    let managed = first_stage(panel, spec)?;
    let fits = (t0..t_total)
        .into_par_iter()
        .map(|t| fit(&managed.window(t)?, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpandingFits { t0, k, fits, managed })
}

impl ExpandingFits {
    /// Predictive R²: `r_it` forecast by `alpha(z) + beta(z)' lambda_t` with
    /// `lambda_t` the window mean of the estimated factors.
    pub fn predict_r2(&self, panel: &Panel) -> Result<R2Triple> {
        let mut acc = R2Acc::new(panel.n_assets(), panel.n_periods());
        for t in self.periods() {
            let f = self.fit_for(t);
            let lambda = f.mean_factor();
            let mut phi = vec![0.0; f.dim()];
            for i in panel.observed(t) {
                f.spec.eval_into(panel.z(t, i), &mut phi)?;
                let pred = f.alpha_from_basis(&phi) + f.beta_from_basis(&phi).dot(&lambda);
                let r = panel.returns(t)[i];
                acc.add(i, t, r, r - pred);
            }
        }
        acc.finish()
    }

    /// Realized factor returns from cross-sectional regression of
    /// alpha-adjusted returns on the window's loadings. Row `s` belongs to
    /// period `t0 + s`.
    pub fn realized_factors(&self, panel: &Panel) -> Result<DMatrix<f64>> {
        let rows = self
            .periods()
            .map(|t| {
                let f = self.fit_for(t);
                let design = PeriodDesign::build(&f.spec, panel, t)?;
                let mut gram = DMatrix::zeros(f.k, f.k);
                let mut rhs = DVector::zeros(f.k);
                for (r, &i) in design.assets.iter().enumerate() {
                    let phi = design.row(r);
                    let beta = f.beta_from_basis(phi);
                    gram += &beta * beta.transpose();
                    rhs += &beta * (panel.returns(t)[i] - f.alpha_from_basis(phi));
                }
                let sol = gram
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .ok_or_else(|| Error::Singular(format!("loading Gram at period {t}")))?;
                Ok(sol.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_rows(&rows))
    }

    /// R² of returns explained by `beta(z)' f_{t-1,t}` with the realized factors.
    pub fn realized_factor_r2(&self, panel: &Panel, factors: &DMatrix<f64>) -> Result<R2Triple> {
        let mut acc = R2Acc::new(panel.n_assets(), panel.n_periods());
        for (s, t) in self.periods().enumerate() {
            let f = self.fit_for(t);
            let ft = factors.row(s).transpose();
            let mut phi = vec![0.0; f.dim()];
            for i in panel.observed(t) {
                f.spec.eval_into(panel.z(t, i), &mut phi)?;
                let r = panel.returns(t)[i];
                acc.add(i, t, r, r - f.beta_from_basis(&phi).dot(&ft));
            }
        }
        acc.finish()
    }

    /// Pure-alpha portfolio: weights `Phi_t (Phi_t' Phi_t)^{-1} a_hat` from
    /// the previous window, applied to the period-`t` returns.
    pub fn arbitrage_returns(&self, panel: &Panel) -> Result<Vec<f64>> {
        self.periods()
            .map(|t| {
                let f = self.fit_for(t);
                let design = PeriodDesign::build(&f.spec, panel, t)?;
                let (gram, _) = design.weighted_normal_equations(None);
                let coef = linalg::solve_spd(&gram, &f.a_hat, t)?;
                Ok(design
                    .assets
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| {
                        let w: f64 = design.row(r).iter().zip(coef.iter()).map(|(p, c)| p * c).sum();
                        w * panel.returns(t)[i]
                    })
                    .sum())
            })
            .collect()
    }
}

/// Out-of-sample predictive R² (total, per asset, per period).
pub fn oos_predict(panel: &Panel, spec: &SieveSpec, k: usize, t0: usize) -> Result<R2Triple> {
    expanding_fits(panel, spec, k, t0)?.predict_r2(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OosFactors {
    /// Row `s` is the realized factor vector for period `t0 + s`.
    pub factors: DMatrix<f64>,
    pub t0: usize,
    pub r2: R2Triple,
}

pub fn oos_factor_fit(panel: &Panel, spec: &SieveSpec, k: usize, t0: usize) -> Result<OosFactors> {
    let fits = expanding_fits(panel, spec, k, t0)?;
    let factors = fits.realized_factors(panel)?;
    let r2 = fits.realized_factor_r2(panel, &factors)?;
    Ok(OosFactors { factors, t0, r2 })
}

/// Per-period returns with annualized moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSeries {
    /// Panel period index of each return.
    pub periods: Vec<usize>,
    pub returns: Vec<f64>,
    pub ann_mean: f64,
    pub ann_std: f64,
    /// `ann_mean / ann_std`; NaN (null in JSON) when the std is zero.
    pub sharpe: f64,
}

impl PortfolioSeries {
    pub fn new(periods: Vec<usize>, returns: Vec<f64>, periods_per_year: f64) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let constant = returns.windows(2).all(|w| w[0] == w[1]);
        let var = if returns.len() > 1 && !constant {
            returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let ann_mean = periods_per_year * mean;
        let ann_std = periods_per_year.sqrt() * var.sqrt();
        let sharpe = if ann_std > 0.0 { ann_mean / ann_std } else { f64::NAN };
        Self {
            periods,
            returns,
            ann_mean,
            ann_std,
            sharpe,
        }
    }
}

pub fn arbitrage_portfolio(
    panel: &Panel,
    spec: &SieveSpec,
    k: usize,
    t0: usize,
    periods_per_year: f64,
) -> Result<PortfolioSeries> {
    let fits = expanding_fits(panel, spec, k, t0)?;
    let returns = fits.arbitrage_returns(panel)?;
    Ok(PortfolioSeries::new(
        fits.periods().collect(),
        returns,
        periods_per_year,
    ))
}

/// Out-of-sample mean-variance efficient combination of factor returns.
///
/// Row `s` of `factors` is the factor return for `periods[s]`. The weight
/// applied at row `s` is `cov^{-1} mean` over rows `0..s` (covariance with
/// denominator `s - 1`); evaluation starts at row `burn_in >= K + 2`.
pub fn mve_portfolio(
    factors: &DMatrix<f64>,
    periods: &[usize],
    burn_in: usize,
    periods_per_year: f64,
) -> Result<PortfolioSeries> {
    let (n, k) = factors.shape();
    if periods.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: periods.len(),
        });
    }
    if burn_in < k + 2 {
        return Err(Error::Invalid(format!(
            "MVE burn-in {burn_in} shorter than K + 2 = {}",
            k + 2
        )));
    }
    if burn_in >= n {
        return Err(Error::Invalid(format!(
            "MVE burn-in {burn_in} leaves no evaluation periods out of {n}"
        )));
    }
    let mut returns = Vec::with_capacity(n - burn_in);
    let mut sum = DVector::<f64>::zeros(k);
    for s in 0..burn_in {
        sum += factors.row(s).transpose();
    }
    for s in burn_in..n {
        let hist = factors.rows(0, s);
        let mean = &sum / s as f64;
        let mut cov = DMatrix::<f64>::zeros(k, k);
        for row in hist.row_iter() {
            let dev = row.transpose() - &mean;
            cov += &dev * dev.transpose();
        }
        cov /= (s - 1) as f64;
        let w = cov
            .cholesky()
            .map(|c| c.solve(&mean))
            .ok_or_else(|| Error::Singular(format!("factor covariance at period {}", periods[s])))?;
        returns.push(w.dot(&factors.row(s).transpose()));
        sum += factors.row(s).transpose();
    }
    Ok(PortfolioSeries::new(
        periods[burn_in..].to_vec(),
        returns,
        periods_per_year,
    ))
}
