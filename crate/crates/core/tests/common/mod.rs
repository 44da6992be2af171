//! Brute-force reference implementations used as test oracles. Everything
//! here works on plain `Vec`s and re-derives the estimator from its
//! definition, sharing no code with the library beyond the input types.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regpca::{Panel, SieveKind, SieveSpec};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps this independent of rand_distr
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return vec![];
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut c = zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a.clone(), e)
        })
        .collect();
    transpose(&cols)
}

/// Cyclic Jacobi eigen decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with eigenvectors as columns.
pub fn jacobi_eigen(s: &Mat) -> (Vec<f64>, Mat) {
    let n = s.len();
    let mut a = s.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - sn * vq;
                    row[q] = sn * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}

/// Basis evaluation written straight from the definitions.
pub fn basis(spec: &SieveSpec, z: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    if spec.include_intercept {
        out.push(1.0);
    }
    for &x in z {
        match spec.kind {
            SieveKind::Linear => out.push(x),
            SieveKind::Quadratic => {
                out.push(x);
                out.push(x * x);
            }
            SieveKind::BSplineLinear => {
                let (lo, hi) = spec.domain;
                let x = x.clamp(lo, hi);
                let j_total = spec.n_internal_knots + 1;
                let h = (hi - lo) / j_total as f64;
                let knots: Vec<f64> = (0..=j_total).map(|k| lo + k as f64 * h).collect();
                for j in 0..j_total {
                    // psi_{j+1} rises on (k_j, k_{j+1}], falls on (k_{j+1}, k_{j+2}]
                    let v = if x > knots[j] && x <= knots[j + 1] {
                        (x - knots[j]) / h
                    } else if j + 2 <= j_total && x > knots[j + 1] && x <= knots[j + 2] {
                        (knots[j + 2] - x) / h
                    } else {
                        0.0
                    };
                    out.push(v);
                }
            }
        }
    }
    out
}

/// Per-period least-squares coefficients; returns `T` columns of length `d`.
pub fn first_stage(panel: &Panel, spec: &SieveSpec) -> Mat {
    (0..panel.n_periods())
        .map(|t| {
            let rows: Vec<(Vec<f64>, f64)> = (0..panel.n_assets())
                .filter(|&i| panel.mask(t)[i])
                .map(|i| (basis(spec, panel.z(t, i)), panel.returns(t)[i]))
                .collect();
            let d = rows[0].0.len();
            let mut g = zeros(d, d);
            let mut b = vec![0.0; d];
            for (phi, y) in &rows {
                for a in 0..d {
                    b[a] += phi[a] * y;
                    for c in 0..d {
                        g[a][c] += phi[a] * phi[c];
                    }
                }
            }
            solve(g, b)
        })
        .collect()
}

/// Weighted first stage with asset weights `w`.
pub fn first_stage_weighted(panel: &Panel, spec: &SieveSpec, w: &[f64]) -> Mat {
    (0..panel.n_periods())
        .map(|t| {
            let d = spec.total_dim();
            let mut g = zeros(d, d);
            let mut b = vec![0.0; d];
            for i in (0..panel.n_assets()).filter(|&i| panel.mask(t)[i]) {
                let phi = basis(spec, panel.z(t, i));
                let y = panel.returns(t)[i];
                for a in 0..d {
                    b[a] += w[i] * phi[a] * y;
                    for c in 0..d {
                        g[a][c] += w[i] * phi[a] * phi[c];
                    }
                }
            }
            solve(g, b)
        })
        .collect()
}

pub fn mean_cols(cols: &Mat) -> Vec<f64> {
    let t = cols.len() as f64;
    let d = cols[0].len();
    (0..d).map(|j| cols.iter().map(|c| c[j]).sum::<f64>() / t).collect()
}

/// `Ytilde M_T Ytilde' / T` from columns.
pub fn covariance(cols: &Mat) -> Mat {
    let mean = mean_cols(cols);
    let d = mean.len();
    let t = cols.len() as f64;
    let mut s = zeros(d, d);
    for c in cols {
        for a in 0..d {
            for b in 0..d {
                s[a][b] += (c[a] - mean[a]) * (c[b] - mean[b]) / t;
            }
        }
    }
    s
}

/// Reference estimate: (a_hat, B_hat columns, F_hat rows, eigenvalues).
pub struct RefFit {
    pub a: Vec<f64>,
    pub b: Mat,
    pub f: Mat,
    pub eigenvalues: Vec<f64>,
}

pub fn reference_fit(cols: &Mat, k: usize) -> RefFit {
    let (values, vectors) = jacobi_eigen(&covariance(cols));
    let d = values.len();
    let b: Mat = (0..k)
        .map(|j| {
            let mut v: Vec<f64> = (0..d).map(|r| vectors[r][j]).collect();
            let big = v.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap();
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let mean = mean_cols(cols);
    let proj: Vec<f64> = b.iter().map(|bj| dot(bj, &mean)).collect();
    let a: Vec<f64> = (0..d)
        .map(|r| mean[r] - b.iter().zip(&proj).map(|(bj, p)| bj[r] * p).sum::<f64>())
        .collect();
    let f = cols.iter().map(|c| b.iter().map(|bj| dot(bj, c)).collect()).collect();
    RefFit {
        a,
        b,
        f,
        eigenvalues: values,
    }
}

/// R² triple (total, per-asset average, per-period average) from residuals.
pub fn r2(panel: &Panel, resid: impl Fn(usize, usize) -> f64) -> (f64, f64, f64) {
    let (n, t_len) = (panel.n_assets(), panel.n_periods());
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..t_len {
        for i in 0..n {
            if panel.mask(t)[i] {
                num += resid(t, i).powi(2);
                den += panel.returns(t)[i].powi(2);
            }
        }
    }
    let mut tn = Vec::new();
    for i in 0..n {
        let obs: Vec<usize> = (0..t_len).filter(|&t| panel.mask(t)[i]).collect();
        let d: f64 = obs.iter().map(|&t| panel.returns(t)[i].powi(2)).sum();
        if d > 0.0 {
            tn.push(obs.iter().map(|&t| resid(t, i).powi(2)).sum::<f64>() / d);
        }
    }
    let mut nt = Vec::new();
    for t in 0..t_len {
        let obs: Vec<usize> = (0..n).filter(|&i| panel.mask(t)[i]).collect();
        let d: f64 = obs.iter().map(|&i| panel.returns(t)[i].powi(2)).sum();
        if d > 0.0 {
            nt.push(obs.iter().map(|&i| resid(t, i).powi(2)).sum::<f64>() / d);
        }
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (1.0 - num / den, 1.0 - avg(&tn), 1.0 - avg(&nt))
}

/// Linearity statistic from its definition, with the null regression on
/// the same intercept convention as `spec`.
pub fn linearity_statistic(panel: &Panel, spec: &SieveSpec, k: usize) -> f64 {
    let null_spec = spec.linear_null();
    let cols = first_stage(panel, spec);
    let vcols = first_stage(panel, &null_spec);
    let fit = reference_fit(&cols, k);
    let t_len = cols.len();
    // centered F_hat and (F' M F)^{-1}
    let fbar: Vec<f64> = (0..k)
        .map(|j| fit.f.iter().map(|r| r[j]).sum::<f64>() / t_len as f64)
        .collect();
    let fc: Mat = fit.f.iter().map(|r| (0..k).map(|j| r[j] - fbar[j]).collect()).collect();
    let ginv = inverse(&matmul(&transpose(&fc), &fc));
    let proj = matmul(&fc, &ginv); // T x K
    let p = vcols[0].len();
    let gamma_mat: Mat = (0..p)
        .map(|r| {
            (0..k)
                .map(|j| (0..t_len).map(|t| vcols[t][r] * proj[t][j]).sum())
                .collect()
        })
        .collect();
    let vmean = mean_cols(&vcols);
    let fhat_mean: Vec<f64> = fit.b.iter().map(|bj| dot(bj, &mean_cols(&cols))).collect();
    let gamma: Vec<f64> = (0..p).map(|r| vmean[r] - dot(&gamma_mat[r], &fhat_mean)).collect();
    let mut s = 0.0;
    for t in 0..t_len {
        for i in (0..panel.n_assets()).filter(|&i| panel.mask(t)[i]) {
            let z = panel.z(t, i);
            let x = basis(&null_spec, z);
            let phi = basis(spec, z);
            s += (dot(&gamma, &x) - dot(&fit.a, &phi)).powi(2);
            for j in 0..k {
                let lin: f64 = (0..p).map(|r| gamma_mat[r][j] * x[r]).sum();
                let beta = dot(&fit.b[j], &phi);
                s += (lin - beta).powi(2);
            }
        }
    }
    s / spec.per_char_dim() as f64
}

/// Random panel with optional missing cells. At least `min_obs` assets are
/// observed in every period.
pub fn random_panel(r: &mut ChaCha8Rng, n: usize, t: usize, m: usize, missing: f64, min_obs: usize) -> Panel {
    let mut returns = vec![vec![0.0; n]; t];
    let mut chars = vec![vec![0.0; n * m]; t];
    let mut mask = vec![vec![true; n]; t];
    for s in 0..t {
        for i in 0..n {
            returns[s][i] = normal(r);
            for c in 0..m {
                chars[s][i * m + c] = r.random_range(-0.5..0.5);
            }
            if i >= min_obs && r.random::<f64>() < missing {
                mask[s][i] = false;
            }
        }
    }
    Panel::new(returns, chars, mask, m).expect("valid random panel")
}

/// Panel generated exactly by `y = a'phi + (B'phi)' f_t`.
pub fn noiseless_panel(r: &mut ChaCha8Rng, spec: &SieveSpec, n: usize, t: usize, a: &[f64], b: &Mat, f: &Mat) -> Panel {
    let m = spec.n_chars;
    let mut returns = vec![vec![0.0; n]; t];
    let mut chars = vec![vec![0.0; n * m]; t];
    for s in 0..t {
        for i in 0..n {
            let z: Vec<f64> = (0..m).map(|_| r.random_range(-0.5..0.5)).collect();
            let phi = basis(spec, &z);
            let mut y = dot(a, &phi);
            for (j, bj) in b.iter().enumerate() {
                y += dot(bj, &phi) * f[s][j];
            }
            returns[s][i] = y;
            chars[s][i * m..(i + 1) * m].copy_from_slice(&z);
        }
    }
    Panel::new(returns, chars, vec![vec![true; n]; t], m).unwrap()
}

/// Gram-Schmidt orthonormalization of columns.
pub fn orthonormalize(cols: &Mat) -> Mat {
    let mut out: Mat = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for q in &out {
            let p = dot(q, &v);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        out.push(v.iter().map(|x| x / norm).collect());
    }
    out
}

/// Sine of the largest principal angle between two column spans
/// (orthonormal inputs): the spectral norm of `(I - Q1 Q1') Q2`.
pub fn max_principal_sine(q1: &Mat, q2: &Mat) -> f64 {
    let resid: Mat = q2
        .iter()
        .map(|v| {
            let mut r = v.clone();
            for q in q1 {
                let p = dot(q, v);
                r.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
            }
            r
        })
        .collect();
    let gram: Mat = resid
        .iter()
        .map(|a| resid.iter().map(|b| dot(a, b)).collect())
        .collect();
    let (vals, _) = jacobi_eigen(&gram);
    vals[0].max(0.0).sqrt()
}

/// Small random sieve spec with total dimension at most 4.
pub fn small_spec(r: &mut ChaCha8Rng) -> SieveSpec {
    match r.random_range(0..4) {
        0 => SieveSpec::linear(r.random_range(1..=3), r.random()),
        1 => SieveSpec::quadratic(r.random_range(1..=2), false),
        2 => SieveSpec::quadratic(1, true),
        _ => SieveSpec::bspline(1, r.random_range(0..=1), r.random()),
    }
}

/// Draws random panels until the first stage is well posed in every period.
pub fn well_posed_panel(
    r: &mut ChaCha8Rng,
    spec: &SieveSpec,
    n: usize,
    t: usize,
    missing: f64,
    min_obs: usize,
) -> (Panel, regpca::ManagedPanel) {
    for _ in 0..1000 {
        let panel = random_panel(r, n, t, spec.n_chars, missing, min_obs);
        if let Ok(m) = regpca::first_stage(&panel, spec) {
            return (panel, m);
        }
    }
    panic!("no well-posed panel for {spec:?} with n = {n}");
}
