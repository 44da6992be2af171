//! Regressed-PCA: per-period cross-sectional regressions on the sieve basis
//! followed by PCA of the resulting managed-portfolio panel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::Panel;
use crate::sieve::{period_designs, PeriodDesign, SieveSpec};

/// Relative gap below which the K-th and (K+1)-th eigenvalues count as tied.
pub const NEAR_TIE_TOL: f64 = 1e-12;

/// Eigenvalues below this fraction of the largest are floored in the ratio
/// selector's denominator.
pub const RATIO_FLOOR: f64 = 1e-14;

/// First-stage output: one column of sieve-regression coefficients per period.
#[derive(Debug, Clone, PartialEq)]
pub struct ManagedPanel {
    /// `total_dim x T`; column `t` is the managed-portfolio return vector.
    pub ytilde: DMatrix<f64>,
    pub n_obs: Vec<usize>,
    pub spec: SieveSpec,
    /// Cross-section size used wherever a single `N` is needed (`max_t N_t`).
    pub nbar: usize,
}

impl ManagedPanel {
    pub fn dim(&self) -> usize {
        self.ytilde.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.ytilde.ncols()
    }

    /// Time-series mean of the managed portfolios.
    pub fn mean(&self) -> DVector<f64> {
        linalg::column_mean(&self.ytilde)
    }

    /// The first `end` periods only.
    pub fn window(&self, end: usize) -> Result<ManagedPanel> {
        if end == 0 || end > self.n_periods() {
            return Err(Error::Invalid(format!(
                "window end {end} outside 1..={}",
                self.n_periods()
            )));
        }
        let n_obs = self.n_obs[..end].to_vec();
        Ok(ManagedPanel {
            ytilde: self.ytilde.columns(0, end).into_owned(),
            nbar: n_obs.iter().copied().max().unwrap_or(0),
            n_obs,
            spec: self.spec.clone(),
        })
    }

    /// All eigenvalues of `Ytilde M_T Ytilde' / T`, descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let s = self.covariance();
        Ok(linalg::sym_eigen_desc(&s)?.0)
    }

    fn covariance(&self) -> DMatrix<f64> {
        let t = self.n_periods() as f64;
        let mean = self.mean();
        let mut demeaned = self.ytilde.clone();
        for mut col in demeaned.column_iter_mut() {
            col -= &mean;
        }
        (&demeaned * demeaned.transpose()) / t
    }
}

pub(crate) fn check_spec(panel: &Panel, spec: &SieveSpec) -> Result<()> {
    spec.validate()?;
    if spec.n_chars != panel.n_chars() {
        return Err(Error::DimensionMismatch {
            expected: panel.n_chars(),
            got: spec.n_chars,
        });
    }
    Ok(())
}

/// Solves every period's (optionally weighted) normal equations and stacks
/// the coefficient vectors as columns.
pub(crate) fn managed_columns(designs: &[PeriodDesign], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let dim = designs.first().map_or(0, |d| d.dim);
    let cols: Vec<DVector<f64>> = designs
        .par_iter()
        .enumerate()
        .map(|(t, design)| {
            if design.n_obs() < dim {
                return Err(Error::TooFewObservations {
                    period: t,
                    n_obs: design.n_obs(),
                    dim,
                });
            }
            let (gram, rhs) = design.weighted_normal_equations(weights);
            linalg::solve_spd(&gram, &rhs, t)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `Ytilde_t = (Phi_t' Phi_t)^{-1} Phi_t' Y_t` for every period.
pub fn first_stage(panel: &Panel, spec: &SieveSpec) -> Result<ManagedPanel> {
    check_spec(panel, spec)?;
    let designs = period_designs(spec, panel)?;
    managed_from_designs(&designs, spec)
}

pub(crate) fn managed_from_designs(designs: &[PeriodDesign], spec: &SieveSpec) -> Result<ManagedPanel> {
    let ytilde = managed_columns(designs, None)?;
    let n_obs: Vec<usize> = designs.iter().map(PeriodDesign::n_obs).collect();
    Ok(ManagedPanel {
        ytilde,
        nbar: n_obs.iter().copied().max().unwrap_or(0),
        n_obs,
        spec: spec.clone(),
    })
}

/// Complete regressed-PCA estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FactorFitJson", try_from = "FactorFitJson")]
pub struct FactorFit {
    pub k: usize,
    pub a_hat: DVector<f64>,
    /// `total_dim x K`, orthonormal columns.
    pub b_hat: DMatrix<f64>,
    /// `T x K`.
    pub f_hat: DMatrix<f64>,
    /// Every eigenvalue of the managed-panel covariance, descending.
    pub eigenvalues: Vec<f64>,
    pub spec: SieveSpec,
    /// Set when the K-th eigenvalue is nearly tied with the next one, in
    /// which case `b_hat` is not well identified.
    pub near_tie: bool,
}

impl FactorFit {
    pub fn dim(&self) -> usize {
        self.a_hat.len()
    }

    pub fn n_periods(&self) -> usize {
        self.f_hat.nrows()
    }

    /// `alpha_hat(z) = a_hat' phi(z)`
    pub fn eval_alpha(&self, z: &[f64]) -> Result<f64> {
        let phi = self.spec.eval_basis(z)?;
        Ok(self.alpha_from_basis(phi.as_slice()))
    }

    /// `beta_hat(z) = B_hat' phi(z)`
    pub fn eval_beta(&self, z: &[f64]) -> Result<DVector<f64>> {
        let phi = self.spec.eval_basis(z)?;
        Ok(self.beta_from_basis(phi.as_slice()))
    }

    pub(crate) fn alpha_from_basis(&self, phi: &[f64]) -> f64 {
        phi.iter().zip(self.a_hat.iter()).map(|(p, a)| p * a).sum()
    }

    pub(crate) fn beta_from_basis(&self, phi: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        for (k, col) in self.b_hat.column_iter().enumerate() {
            out[k] = phi.iter().zip(col.iter()).map(|(p, b)| p * b).sum();
        }
        out
    }

    /// Time-series mean of the estimated factors, `F_hat' 1_T / T`.
    pub fn mean_factor(&self) -> DVector<f64> {
        self.f_hat.row_mean().transpose()
    }

    /// `F_hat' M_T F_hat`
    pub fn factor_gram(&self) -> DMatrix<f64> {
        let centered = linalg::demean_rows(&self.f_hat);
        centered.transpose() * centered
    }
}

#[derive(Serialize, Deserialize)]
struct FactorFitJson {
    k: usize,
    a_hat: Vec<f64>,
    /// one inner vector per factor (column-major)
    b_hat: Vec<Vec<f64>>,
    /// one inner vector per period
    f_hat: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    spec: SieveSpec,
    near_tie: bool,
}

impl From<FactorFit> for FactorFitJson {
    fn from(f: FactorFit) -> Self {
        Self {
            k: f.k,
            a_hat: f.a_hat.iter().copied().collect(),
            b_hat: f.b_hat.column_iter().map(|c| c.iter().copied().collect()).collect(),
            f_hat: f.f_hat.row_iter().map(|r| r.iter().copied().collect()).collect(),
            eigenvalues: f.eigenvalues,
            spec: f.spec,
            near_tie: f.near_tie,
        }
    }
}

impl TryFrom<FactorFitJson> for FactorFit {
    type Error = String;

    fn try_from(j: FactorFitJson) -> std::result::Result<Self, String> {
        let d = j.a_hat.len();
        if j.b_hat.len() != j.k || j.b_hat.iter().any(|c| c.len() != d) {
            return Err("b_hat shape does not match k and a_hat".into());
        }
        if j.f_hat.iter().any(|r| r.len() != j.k) {
            return Err("f_hat rows must have k entries".into());
        }
        let b_hat = DMatrix::from_iterator(d, j.k, j.b_hat.into_iter().flatten());
        let t = j.f_hat.len();
        let f_hat = DMatrix::from_row_iterator(t, j.k, j.f_hat.into_iter().flatten());
        Ok(FactorFit {
            k: j.k,
            a_hat: DVector::from_vec(j.a_hat),
            b_hat,
            f_hat,
            eigenvalues: j.eigenvalues,
            spec: j.spec,
            near_tie: j.near_tie,
        })
    }
}

/// Second stage: PCA of the demeaned managed panel.
///
/// `B_hat` holds the top-`k` eigenvectors of `Ytilde M_T Ytilde' / T`,
/// `a_hat = (I - B_hat B_hat') mean(Ytilde)` and `F_hat = Ytilde' B_hat`.
pub fn fit(managed: &ManagedPanel, k: usize) -> Result<FactorFit> {
    let d = managed.dim();
    let t = managed.n_periods();
    if k == 0 || k > d {
        return Err(Error::Invalid(format!("number of factors {k} outside 1..={d}")));
    }
    if t < k + 1 {
        return Err(Error::Invalid(format!(
            "{t} periods are too few for {k} factors (need at least {})",
            k + 1
        )));
    }
    let (eigenvalues, vectors) = linalg::sym_eigen_desc(&managed.covariance())?;
    let b_hat = vectors.columns(0, k).into_owned();
    let mean = managed.mean();
    let a_hat = &mean - &b_hat * (b_hat.transpose() * &mean);
    let f_hat = managed.ytilde.transpose() * &b_hat;
    let near_tie = k < d && eigenvalues[k - 1] - eigenvalues[k] < NEAR_TIE_TOL * eigenvalues[0].abs();
    if near_tie {
        log::warn!(
            "eigenvalues {} and {} are nearly tied ({:e} vs {:e})",
            k,
            k + 1,
            eigenvalues[k - 1],
            eigenvalues[k]
        );
    }
    Ok(FactorFit {
        k,
        a_hat,
        b_hat,
        f_hat,
        eigenvalues,
        spec: managed.spec.clone(),
        near_tie,
    })
}

/// `H = (F' M_T F_hat)(F_hat' M_T F_hat)^{-1}`, relating estimated and true
/// factors.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    pub h: DMatrix<f64>,
}

pub fn rotation(f_true: &DMatrix<f64>, fit: &FactorFit) -> Result<RotationMatrix> {
    if f_true.shape() != fit.f_hat.shape() {
        return Err(Error::Invalid(format!(
            "true factors are {:?} but estimated factors are {:?}",
            f_true.shape(),
            fit.f_hat.shape()
        )));
    }
    let fc = linalg::demean_rows(f_true);
    let fhc = linalg::demean_rows(&fit.f_hat);
    let cross = fc.transpose() * &fhc;
    let gram_inv = linalg::spd_inverse(&(fhc.transpose() * &fhc), "F_hat' M_T F_hat")?;
    Ok(RotationMatrix { h: cross * gram_inv })
}

/// Flips factors with negative sample mean (and their loading columns) so
/// every factor carries a positive average premium. `a_hat` is untouched.
pub fn fix_factor_signs(fit: &FactorFit) -> FactorFit {
    let mut out = fit.clone();
    for k in 0..fit.k {
        if fit.f_hat.column(k).mean() < 0.0 {
            out.f_hat.column_mut(k).neg_mut();
            out.b_hat.column_mut(k).neg_mut();
        }
    }
    out
}

/// Eigenvalue-ratio estimator over `1 <= k <= floor(len / 2)`.
pub fn select_k_ratio_from_eigenvalues(eigenvalues: &[f64]) -> Result<usize> {
    let d = eigenvalues.len();
    if d < 2 {
        return Err(Error::Invalid("ratio selector needs at least two eigenvalues".into()));
    }
    let floor = RATIO_FLOOR * eigenvalues[0];
    let mut best = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for k in 1..=d / 2 {
        let denom = if eigenvalues[k] < floor { floor } else { eigenvalues[k] };
        let ratio = eigenvalues[k - 1] / denom;
        if ratio > best_ratio {
            best_ratio = ratio;
            best = k;
        }
    }
    Ok(best)
}

pub fn select_k_ratio(managed: &ManagedPanel) -> Result<usize> {
    if managed.dim() < 2 {
        return Err(Error::Invalid(
            "ratio selector needs a basis of dimension at least 2".into(),
        ));
    }
    if managed.n_periods() < 2 {
        return Err(Error::Invalid("ratio selector needs at least two periods".into()));
    }
    select_k_ratio_from_eigenvalues(&managed.eigenvalues()?)
}

/// Number of eigenvalues at or above `lambda_nt`.
pub fn select_k_threshold_from_eigenvalues(eigenvalues: &[f64], lambda_nt: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l >= lambda_nt).count()
}

pub fn select_k_threshold(managed: &ManagedPanel, lambda_nt: f64) -> Result<usize> {
    if !(lambda_nt > 0.0) {
        return Err(Error::Invalid(format!("threshold must be positive, got {lambda_nt}")));
    }
    Ok(select_k_threshold_from_eigenvalues(&managed.eigenvalues()?, lambda_nt))
}

/// Default threshold `1 / ln(N)`.
pub fn default_lambda_nt(nbar: usize) -> f64 {
    1.0 / (nbar as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn managed(ytilde: DMatrix<f64>) -> ManagedPanel {
        let t = ytilde.ncols();
        let d = ytilde.nrows();
        ManagedPanel {
            ytilde,
            n_obs: vec![10; t],
            spec: SieveSpec::linear(d - 1, true),
            nbar: 10,
        }
    }

    #[test]
    fn simple_regression_first_stage() {
        let panel = Panel::new(
            vec![vec![1.0, 2.0, 3.0]],
            vec![vec![0.0, 1.0, 2.0]],
            vec![vec![true; 3]],
            1,
        )
        .unwrap();
        let m = first_stage(&panel, &SieveSpec::linear(1, true)).unwrap();
        assert!((m.ytilde[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((m.ytilde[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn too_few_observations() {
        let panel = Panel::new(vec![vec![1.0, 2.0]], vec![vec![0.0, 1.0]], vec![vec![true, false]], 1).unwrap();
        assert!(matches!(
            first_stage(&panel, &SieveSpec::linear(1, true)),
            Err(Error::TooFewObservations {
                period: 0,
                n_obs: 1,
                dim: 2
            })
        ));
    }

    #[test]
    fn singular_period_reports_index() {
        // every observed z identical -> collinear with the intercept
        let panel = Panel::new(
            vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]],
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]],
            vec![vec![true; 3]; 2],
            1,
        )
        .unwrap();
        assert!(matches!(
            first_stage(&panel, &SieveSpec::linear(1, true)),
            Err(Error::SingularGram { period: 1, .. })
        ));
    }

    #[test]
    fn two_period_single_factor_closed_form() {
        let y = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0]);
        let f = fit(&managed(y.clone()), 1).unwrap();
        let diff = y.column(0) - y.column(1);
        let expected = &diff / diff.norm();
        let sign = if (f.b_hat.column(0) - &expected).norm() < 1e-12 {
            1.0
        } else {
            -1.0
        };
        assert!((f.b_hat.column(0) - expected * sign).norm() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_k() {
        let y = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0]);
        assert!(fit(&managed(y.clone()), 0).is_err());
        assert!(fit(&managed(y.clone()), 2).is_err()); // T < k + 1
        assert!(fit(&managed(y), 4).is_err());
    }

    #[test]
    fn ratio_selector_examples() {
        let ev = [10.0, 5.0, 0.1, 0.05, 0.01, 0.005];
        assert_eq!(select_k_ratio_from_eigenvalues(&ev).unwrap(), 2);
        // ties resolve to the smallest k
        assert_eq!(select_k_ratio_from_eigenvalues(&[8.0, 4.0, 2.0, 1.0]).unwrap(), 1);
        // zero tail eigenvalues are floored rather than dividing by zero
        assert_eq!(select_k_ratio_from_eigenvalues(&[3.0, 1.0, 0.0, 0.0]).unwrap(), 2);
        assert!(select_k_ratio_from_eigenvalues(&[1.0]).is_err());
    }

    #[test]
    fn threshold_selector_examples() {
        assert_eq!(select_k_threshold_from_eigenvalues(&[3.0, 2.0, 0.01], 0.2), 2);
        assert_eq!(select_k_threshold_from_eigenvalues(&[3.0, 2.0, 0.01], 5.0), 0);
    }

    #[test]
    fn alpha_eval() {
        let y = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0]);
        let mut f = fit(&managed(y), 1).unwrap();
        f.spec = SieveSpec::linear(2, true);
        f.a_hat = DVector::from_vec(vec![0.5, 1.0, -1.0]);
        assert!((f.eval_alpha(&[0.2, 0.3]).unwrap() - 0.4).abs() < 1e-15);
        f.a_hat.fill(0.0);
        assert_eq!(f.eval_alpha(&[0.7, -0.3]).unwrap(), 0.0);
        assert!(f.eval_alpha(&[0.2]).is_err());
    }

    #[test]
    fn sign_fix() {
        let y = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 2.0, 0.1, 4.0, -0.1]);
        let f = fit(&managed(y), 1).unwrap();
        let mut neg = f.clone();
        neg.f_hat.neg_mut();
        neg.b_hat.neg_mut();
        let fixed = fix_factor_signs(&neg);
        assert!(fixed.f_hat.column(0).mean() >= 0.0);
        assert_eq!(fixed.a_hat, neg.a_hat);
        assert_eq!(
            &fixed.b_hat * fixed.f_hat.transpose(),
            &neg.b_hat * neg.f_hat.transpose()
        );
        let again = fix_factor_signs(&fixed);
        assert_eq!(again, fixed);
    }

    #[test]
    fn json_shape() {
        let y = DMatrix::from_column_slice(3, 3, &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0, 0.3, 0.2, 0.1]);
        let f = fit(&managed(y), 1).unwrap();
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["b_hat"].as_array().unwrap().len(), 1);
        assert_eq!(v["b_hat"][0].as_array().unwrap().len(), 3);
        assert_eq!(v["f_hat"].as_array().unwrap().len(), 3);
        let back: FactorFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
