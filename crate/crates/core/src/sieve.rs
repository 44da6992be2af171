//! Sieve bases `phi(z)` for the pricing-error and loading functions.
//!
//! The basis is additive across characteristics: an optional global
//! intercept followed by one block of `J` terms per characteristic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SieveKind {
    /// `phi(z) = (1, z')'`, one term per characteristic.
    Linear,
    /// Piecewise-linear hat functions on equidistant knots over `domain`.
    #[serde(rename = "bspline_linear")]
    BSplineLinear,
    /// `(z_m, z_m^2)` per characteristic. Exact for the simulation design.
    Quadratic,
}

fn default_domain() -> (f64, f64) {
    (-0.5, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub kind: SieveKind,
    pub n_chars: usize,
    pub include_intercept: bool,
    #[serde(default)]
    pub n_internal_knots: usize,
    #[serde(default = "default_domain")]
    pub domain: (f64, f64),
}

impl SieveSpec {
    pub fn linear(n_chars: usize, include_intercept: bool) -> Self {
        Self {
            kind: SieveKind::Linear,
            n_chars,
            include_intercept,
            n_internal_knots: 0,
            domain: default_domain(),
        }
    }

    pub fn bspline(n_chars: usize, n_internal_knots: usize, include_intercept: bool) -> Self {
        Self {
            kind: SieveKind::BSplineLinear,
            n_chars,
            include_intercept,
            n_internal_knots,
            domain: default_domain(),
        }
    }

    pub fn quadratic(n_chars: usize, include_intercept: bool) -> Self {
        Self {
            kind: SieveKind::Quadratic,
            n_chars,
            include_intercept,
            n_internal_knots: 0,
            domain: default_domain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chars == 0 {
            return Err(Error::Invalid("sieve needs at least one characteristic".into()));
        }
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Invalid(format!("invalid sieve domain [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Terms per characteristic, `J`.
    pub fn per_char_dim(&self) -> usize {
        match self.kind {
            SieveKind::Linear => 1,
            SieveKind::BSplineLinear => self.n_internal_knots + 1,
            SieveKind::Quadratic => 2,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.per_char_dim() * self.n_chars + usize::from(self.include_intercept)
    }

    pub fn is_linear(&self) -> bool {
        self.kind == SieveKind::Linear
    }

    /// The linear specification nested in this one (same intercept choice).
    pub fn linear_null(&self) -> SieveSpec {
        SieveSpec {
            kind: SieveKind::Linear,
            n_internal_knots: 0,
            ..self.clone()
        }
    }

    /// Writes `phi(z)` into `out` (length `total_dim`).
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.n_chars {
            return Err(Error::DimensionMismatch {
                expected: self.n_chars,
                got: z.len(),
            });
        }
        if out.len() != self.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.total_dim(),
                got: out.len(),
            });
        }
        let mut pos = 0;
        if self.include_intercept {
            out[0] = 1.0;
            pos = 1;
        }
        let j = self.per_char_dim();
        for &zm in z {
            let block = &mut out[pos..pos + j];
            match self.kind {
                SieveKind::Linear => block[0] = zm,
                SieveKind::Quadratic => {
                    block[0] = zm;
                    block[1] = zm * zm;
                }
                SieveKind::BSplineLinear => hat_block(zm, self.domain, block),
            }
            pos += j;
        }
        Ok(())
    }

    pub fn eval_basis(&self, z: &[f64]) -> Result<BasisVector> {
        let mut out = vec![0.0; self.total_dim()];
        self.eval_into(z, &mut out)?;
        Ok(BasisVector(out))
    }
}

/// Linear hat functions `psi_1..psi_J` on knots `lo = k_0 < ... < k_J = hi`.
///
/// For `j < J`, `psi_j` rises on `(k_{j-1}, k_j]` and falls on
/// `(k_j, k_{j+1}]`; `psi_J` only rises on `(k_{J-1}, k_J]`. Intervals are
/// half-open on the left, so every `psi_j` vanishes at `lo`. Inputs outside
/// the domain are clamped.
fn hat_block(z: f64, (lo, hi): (f64, f64), out: &mut [f64]) {
    out.fill(0.0);
    let j_total = out.len();
    let z = z.clamp(lo, hi);
    if z <= lo {
        return;
    }
    let h = (hi - lo) / j_total as f64;
    let knot = |k: usize| if k == j_total { hi } else { lo + k as f64 * h };
    // piece p satisfies knot(p) < z <= knot(p + 1)
    let mut p = (((z - lo) / h).ceil() as usize).clamp(1, j_total) - 1;
    while p > 0 && z <= knot(p) {
        p -= 1;
    }
    while p + 1 < j_total && z > knot(p + 1) {
        p += 1;
    }
    out[p] = (z - knot(p)) / h;
    if p > 0 {
        out[p - 1] = (knot(p + 1) - z) / h;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector(pub Vec<f64>);

impl BasisVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `Phi(Z_t)`: row `i` is `phi(z_it)` when observed and all-zero otherwise.
pub fn design_matrix(spec: &SieveSpec, panel: &Panel, t: usize) -> Result<DMatrix<f64>> {
    if t >= panel.n_periods() {
        return Err(Error::Invalid(format!(
            "period {t} out of range ({} periods)",
            panel.n_periods()
        )));
    }
    let d = spec.total_dim();
    let mut phi = DMatrix::zeros(panel.n_assets(), d);
    let mut row = vec![0.0; d];
    for i in panel.observed(t) {
        spec.eval_into(panel.z(t, i), &mut row)?;
        for (c, v) in row.iter().enumerate() {
            phi[(i, c)] = *v;
        }
    }
    Ok(phi)
}

/// Observed rows of one period in compact form: asset indices, the
/// row-major basis matrix and the matching returns.
#[derive(Debug, Clone)]
pub(crate) struct PeriodDesign {
    pub assets: Vec<usize>,
    /// `assets.len() * dim`, row-major.
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
    pub dim: usize,
}

impl PeriodDesign {
    pub fn build(spec: &SieveSpec, panel: &Panel, t: usize) -> Result<Self> {
        let dim = spec.total_dim();
        let assets: Vec<usize> = panel.observed(t).collect();
        let mut phi = vec![0.0; assets.len() * dim];
        let mut y = Vec::with_capacity(assets.len());
        for (r, &i) in assets.iter().enumerate() {
            spec.eval_into(panel.z(t, i), &mut phi[r * dim..(r + 1) * dim])?;
            y.push(panel.returns(t)[i]);
        }
        Ok(Self { assets, phi, y, dim })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.phi[r * self.dim..(r + 1) * self.dim]
    }

    pub fn n_obs(&self) -> usize {
        self.assets.len()
    }

    /// `sum_i w_i phi_i phi_i'` and `sum_i w_i phi_i y_i` over observed rows.
    /// `weights` is indexed by asset id; `None` means unit weights.
    pub fn weighted_normal_equations(&self, weights: Option<&[f64]>) -> (DMatrix<f64>, nalgebra::DVector<f64>) {
        let d = self.dim;
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = nalgebra::DVector::zeros(d);
        for (r, &i) in self.assets.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            let row = self.row(r);
            let wy = w * self.y[r];
            for a in 0..d {
                let wa = w * row[a];
                rhs[a] += row[a] * wy;
                for b in a..d {
                    gram[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        (gram, rhs)
    }
}

pub(crate) fn period_designs(spec: &SieveSpec, panel: &Panel) -> Result<Vec<PeriodDesign>> {
    (0..panel.n_periods())
        .map(|t| PeriodDesign::build(spec, panel, t))
        .collect()
}
