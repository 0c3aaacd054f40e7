//! Gaussian and finite discrete measures over parameter space, their KL
//! divergences, pushforwards under linear or support maps, and the
//! two-term decomposition of a KL divergence under a projection.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Eigenvalues at or below this are treated as zero when identifying the
/// image of a covariance.
pub const RANK_TOL: f64 = 1e-10;
/// Mean differences larger than this outside the reference image give `+∞`.
pub const NULL_MEAN_TOL: f64 = 1e-8;
pub const IDEMPOTENCY_TOL: f64 = 1e-10;

/// `N(mean, covariance)` on `R^p`; the covariance may be singular.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, got: cov.nrows() });
        }
        let scale = cov.amax().max(1.0);
        for i in 0..p {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let is_diagonal = (0..p).all(|i| (0..p).all(|j| i == j || cov[(i, j)] == 0.0));
        if is_diagonal {
            if (0..p).any(|i| cov[(i, i)] < -RANK_TOL) {
                return Err(Error::InvalidArgument("covariance has a negative variance".into()));
            }
            let cov = DMatrix::from_fn(p, p, |i, j| if i == j { cov[(i, i)].max(0.0) } else { 0.0 });
            return Ok(Self { mean, cov });
        }
        let eig = SymmetricEigen::new(cov.clone());
        if eig.eigenvalues.iter().any(|&l| l < -RANK_TOL) {
            return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
        }
        let cov = if eig.eigenvalues.iter().any(|&l| l < 0.0) {
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
        } else {
            cov
        };
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Self {
        let p = mean.len();
        Self { mean, cov: DMatrix::identity(p, p) * (sigma * sigma) }
    }

    pub fn diagonal(mean: DVector<f64>, stds: &[f64]) -> Result<Self> {
        if stds.len() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: stds.len() });
        }
        let var = DVector::from_iterator(stds.len(), stds.iter().map(|s| s * s));
        Self::new(mean, DMatrix::from_diagonal(&var))
    }

    pub fn point_mass(mean: DVector<f64>) -> Self {
        let p = mean.len();
        Self { mean, cov: DMatrix::zeros(p, p) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        let p = self.dim();
        (0..p).all(|i| (0..p).all(|j| i == j || self.cov[(i, j)] == 0.0))
    }

    /// A matrix `L` with `L Lᵀ = Σ`, valid for singular covariances.
    pub fn sampling_factor(&self) -> DMatrix<f64> {
        if self.is_diagonal() {
            return DMatrix::from_diagonal(&self.cov.diagonal().map(|v| v.max(0.0).sqrt()));
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        eig.eigenvectors * DMatrix::from_diagonal(&roots)
    }

    /// One mean row, then covariance rows, after a `dim,<p>` header.
    pub fn to_csv(&self) -> String {
        let p = self.dim();
        let mut out = format!("dim,{p}\n");
        let row = |it: &mut dyn Iterator<Item = f64>| it.map(fmt_f64).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "{}", row(&mut self.mean.iter().copied()));
        for i in 0..p {
            let _ = writeln!(out, "{}", row(&mut self.cov.row(i).iter().copied()));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let rows = parse_matrix_csv(text, path)?;
        let p = rows.dim;
        if rows.rows.len() != p + 1 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: rows.rows.len() + 2,
                msg: format!("expected {} data rows, found {}", p + 1, rows.rows.len()),
            });
        }
        let mean = DVector::from_vec(rows.rows[0].clone());
        let cov = DMatrix::from_fn(p, p, |i, j| rows.rows[i + 1][j]);
        Self::new(mean, cov)
    }
}

pub(crate) struct MatrixCsv {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Parses `dim,<p>` followed by rows of `p` numbers.
pub(crate) fn parse_matrix_csv(text: &str, path: &Path) -> Result<MatrixCsv> {
    let schema = |line: usize, msg: String| Error::Schema { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, h)) => h
            .strip_prefix("dim,")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .ok_or_else(|| schema(1, "expected header `dim,<p>`".into()))?,
        None => return Err(schema(1, "empty file".into())),
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|_| schema(i + 1, "non-numeric field".into()))?;
        if vals.len() != dim {
            return Err(schema(i + 1, format!("expected {dim} fields, found {}", vals.len())));
        }
        rows.push(vals);
    }
    Ok(MatrixCsv { dim, rows })
}

/// Row-major CSV of a square matrix after a `dim,<p>` header.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = format!("dim,{}\n", m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn matrix_from_csv(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let parsed = parse_matrix_csv(text, path)?;
    let p = parsed.dim;
    if parsed.rows.len() != p {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: parsed.rows.len() + 2,
            msg: format!("expected {p} rows, found {}", parsed.rows.len()),
        });
    }
    Ok(DMatrix::from_fn(p, p, |i, j| parsed.rows[i][j]))
}

/// Orthonormal basis (columns) of the image of a symmetric PSD matrix.
fn psd_image_basis(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let p = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let cols: Vec<DVector<f64>> =
        (0..p).filter(|&i| eig.eigenvalues[i] > RANK_TOL).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
    if cols.is_empty() {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn logdet_and_inverse(m: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let chol = m.clone().cholesky()?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some((logdet, chol.inverse()))
}

fn kl_full_rank(d: &DVector<f64>, s_nu: &DMatrix<f64>, s_mu: &DMatrix<f64>) -> f64 {
    let r = d.len();
    if r == 0 {
        return 0.0;
    }
    let Some((ld_mu, inv_mu)) = logdet_and_inverse(s_mu) else { return f64::INFINITY };
    let Some((ld_nu, _)) = logdet_and_inverse(s_nu) else { return f64::INFINITY };
    let trace = (&inv_mu * s_nu).trace();
    let quad = d.dot(&(&inv_mu * d));
    0.5 * (trace + quad - r as f64 + ld_mu - ld_nu)
}

/// `KL(ν ‖ μ)` in closed form.
///
/// Singular covariances are handled on their image subspace. When the two
/// images differ, or the mean difference leaves `μ`'s image, `ν` is not
/// absolutely continuous with respect to `μ` and the result is `+∞`.
pub fn kl_gaussian(nu: &GaussianMeasure, mu: &GaussianMeasure) -> Result<f64> {
    let p = mu.dim();
    if nu.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: nu.dim() });
    }
    let d = &nu.mean - &mu.mean;
    if nu.is_diagonal() && mu.is_diagonal() {
        let mut kl = 0.0;
        for i in 0..p {
            let (vn, vm) = (nu.cov[(i, i)], mu.cov[(i, i)]);
            match (vn > RANK_TOL, vm > RANK_TOL) {
                (true, true) => kl += 0.5 * (vn / vm + d[i] * d[i] / vm - 1.0 + vm.ln() - vn.ln()),
                (false, false) if d[i].abs() <= NULL_MEAN_TOL => {}
                _ => return Ok(f64::INFINITY),
            }
        }
        return Ok(kl);
    }
    let u_mu = psd_image_basis(&mu.cov);
    let u_nu = psd_image_basis(&nu.cov);
    if u_mu.ncols() != u_nu.ncols() {
        return Ok(f64::INFINITY);
    }
    let proj_mu = &u_mu * u_mu.transpose();
    let proj_nu = &u_nu * u_nu.transpose();
    if (&proj_mu - &proj_nu).amax() > 1e-6 {
        return Ok(f64::INFINITY);
    }
    if (&d - &proj_mu * &d).norm() > NULL_MEAN_TOL {
        return Ok(f64::INFINITY);
    }
    let ut = u_mu.transpose();
    let s_mu = &ut * &mu.cov * &u_mu;
    let s_nu = &ut * &nu.cov * &u_mu;
    let d_r = &ut * &d;
    let s_nu = (&s_nu + s_nu.transpose()) * 0.5;
    let s_mu = (&s_mu + s_mu.transpose()) * 0.5;
    Ok(kl_full_rank(&d_r, &s_nu, &s_mu))
}

/// `N(A·mean, A·Σ·Aᵀ)`.
pub fn pushforward_gaussian(a: &DMatrix<f64>, m: &GaussianMeasure) -> Result<GaussianMeasure> {
    if a.ncols() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), got: a.ncols() });
    }
    let mean = a * &m.mean;
    let cov = a * &m.cov * a.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianMeasure { mean, cov })
}

/// `max |A² − A|`.
pub fn idempotency_deviation(a: &DMatrix<f64>) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    (a * a - a).amax()
}

/// The split `KL = KL(pushforwards) + residual`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlDecomposition {
    pub total: f64,
    pub pushforward_kl: f64,
    pub residual: f64,
    /// Residual from an independent route (conditional KL or direct sum), when available.
    pub residual_crosscheck: Option<f64>,
}

fn subtract_kl(total: f64, push: f64) -> f64 {
    if total.is_infinite() {
        f64::INFINITY
    } else {
        total - push
    }
}

/// Orthonormal basis of the column space of `a`.
fn column_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    psd_image_basis(&(a * a.transpose()))
}

/// Expected KL between the conditionals of `ν` and `μ` given `A·w`, under
/// `A∗ν`. Requires both covariances to be non-singular.
fn conditional_residual(nu: &GaussianMeasure, mu: &GaussianMeasure, a: &DMatrix<f64>) -> Option<f64> {
    let p = a.nrows();
    let b_im = column_space(a);
    let b_ker = column_space(&(DMatrix::identity(p, p) - a));
    let (r, q) = (b_im.ncols(), b_ker.ncols());
    if r + q != p {
        return None;
    }
    if q == 0 {
        return Some(0.0);
    }
    let mut t = DMatrix::zeros(p, p);
    t.view_mut((0, 0), (p, r)).copy_from(&b_im);
    t.view_mut((0, r), (p, q)).copy_from(&b_ker);
    let t_inv = t.try_inverse()?;

    struct Conditional {
        offset: DVector<f64>,
        slope: DMatrix<f64>,
        cov: DMatrix<f64>,
        u_mean: DVector<f64>,
        u_cov: DMatrix<f64>,
    }
    let split = |m: &GaussianMeasure| -> Option<Conditional> {
        let c_mean = &t_inv * &m.mean;
        let c_cov = &t_inv * &m.cov * t_inv.transpose();
        let c_cov = (&c_cov + c_cov.transpose()) * 0.5;
        let m_u = c_mean.rows(0, r).into_owned();
        let m_v = c_mean.rows(r, q).into_owned();
        let s_uu = c_cov.view((0, 0), (r, r)).into_owned();
        let s_vu = c_cov.view((r, 0), (q, r)).into_owned();
        let s_vv = c_cov.view((r, r), (q, q)).into_owned();
        let (slope, cov) = if r == 0 {
            (DMatrix::zeros(q, 0), s_vv)
        } else {
            let inv_uu = s_uu.clone().cholesky()?.inverse();
            let slope = &s_vu * &inv_uu;
            let cov = &s_vv - &slope * s_vu.transpose();
            (slope, cov)
        };
        let offset = &m_v - &slope * &m_u;
        Some(Conditional { offset, slope, cov: (&cov + cov.transpose()) * 0.5, u_mean: m_u, u_cov: s_uu })
    };
    let cn = split(nu)?;
    let cm = split(mu)?;
    let (ld_m, inv_m) = logdet_and_inverse(&cm.cov)?;
    let (ld_n, _) = logdet_and_inverse(&cn.cov)?;
    let d_slope = &cn.slope - &cm.slope;
    let delta = &cn.offset - &cm.offset + &d_slope * &cn.u_mean;
    let spread = (&inv_m * &d_slope * &cn.u_cov * d_slope.transpose()).trace();
    Some(0.5 * ((&inv_m * &cn.cov).trace() - q as f64 + ld_m - ld_n + delta.dot(&(&inv_m * &delta)) + spread))
}

/// Splits `KL(ν ‖ μ)` through an idempotent linear map `A`.
///
/// The residual is `total − pushforward`. When both covariances are
/// non-singular it is recomputed as the expected KL between the
/// conditionals on `ker A` given `A·w`, and the two must agree.
pub fn kl_decompose_gaussian(nu: &GaussianMeasure, mu: &GaussianMeasure, a: &DMatrix<f64>) -> Result<KlDecomposition> {
    let p = mu.dim();
    if a.nrows() != p || a.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: a.nrows() });
    }
    let deviation = idempotency_deviation(a);
    if deviation > IDEMPOTENCY_TOL {
        return Err(Error::NonIdempotent { deviation });
    }
    let total = kl_gaussian(nu, mu)?;
    let pushforward_kl = kl_gaussian(&pushforward_gaussian(a, nu)?, &pushforward_gaussian(a, mu)?)?;
    let residual = subtract_kl(total, pushforward_kl);
    let scale = total.abs().max(1.0);
    if residual < -1e-12 * scale {
        return Err(Error::Numerical(format!("negative KL residual {residual:e}")));
    }
    let full_rank = |m: &GaussianMeasure| m.cov.clone().cholesky().is_some();
    let residual_crosscheck =
        if total.is_finite() && full_rank(nu) && full_rank(mu) { conditional_residual(nu, mu, a) } else { None };
    if let Some(c) = residual_crosscheck {
        if (c - residual).abs() > 1e-9 * scale {
            return Err(Error::Numerical(format!("residual {residual} disagrees with conditional KL {c}")));
        }
    }
    Ok(KlDecomposition { total, pushforward_kl, residual, residual_crosscheck })
}

/// A probability vector over atoms `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("discrete measure needs at least one atom".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary non-negative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("total mass must be positive".into()));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn point_mass(n: usize, atom: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[atom] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `KL(ν ‖ μ) = Σ ν(s) log(ν(s)/μ(s))`, `+∞` without absolute continuity.
pub fn kl_discrete(nu: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
    if nu.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: nu.len() });
    }
    let mut kl = 0.0;
    for (&n, &m) in nu.weights.iter().zip(&mu.weights) {
        if n > 0.0 {
            if m <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += n * (n / m).ln();
        }
    }
    Ok(kl)
}

/// Law of `α(s)` for `s ~ m`, on atoms `0..target_len`.
pub fn pushforward_discrete(alpha: &[usize], target_len: usize, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if alpha.len() != m.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), got: alpha.len() });
    }
    let mut weights = vec![0.0; target_len];
    for (&t, &w) in alpha.iter().zip(&m.weights) {
        *weights.get_mut(t).ok_or_else(|| Error::InvalidArgument(format!("map sends an atom to {t}")))? += w;
    }
    Ok(DiscreteMeasure { weights })
}

/// Exact decomposition through a support map. The residual is summed
/// directly from the two likelihood ratios and checked against
/// `total − pushforward`.
pub fn kl_decompose_discrete(
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    alpha: &[usize],
    target_len: usize,
) -> Result<KlDecomposition> {
    let total = kl_discrete(nu, mu)?;
    let push_nu = pushforward_discrete(alpha, target_len, nu)?;
    let push_mu = pushforward_discrete(alpha, target_len, mu)?;
    let pushforward_kl = kl_discrete(&push_nu, &push_mu)?;
    let mut residual = 0.0;
    for (s, (&n, &m)) in nu.weights.iter().zip(&mu.weights).enumerate() {
        if n <= 0.0 {
            continue;
        }
        if m <= 0.0 {
            residual = f64::INFINITY;
            break;
        }
        let t = alpha[s];
        let outer = push_nu.weights[t] / push_mu.weights[t];
        residual += n * ((n / m) / outer).ln();
    }
    let by_subtraction = subtract_kl(total, pushforward_kl);
    if total.is_finite() && (by_subtraction - residual).abs() > 1e-9 * total.max(1.0) {
        return Err(Error::Numerical(format!("direct residual {residual} vs subtraction {by_subtraction}")));
    }
    Ok(KlDecomposition { total, pushforward_kl, residual, residual_crosscheck: Some(by_subtraction) })
}
