//! PAC-Bayes certificates: McAllester's right-hand side on raw posteriors,
//! on posteriors pushed through the averaging projection, and with the
//! empirical term taken on orbit representatives.

pub mod optimize;
pub mod pipeline;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::averaging::{Family, Features, ParameterProjection};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::group::OrbitResolver;
use crate::measures::{kl_gaussian, pushforward_gaussian, GaussianMeasure, KlDecomposition};
use crate::risk::{posterior_risk_mc, Loss, WeightedRows};

/// The additive constant inside McAllester's radical.
pub const MCALLESTER_CONSTANT: f64 = 2.0;
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_N_MODELS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub empirical: f64,
    pub kl: f64,
    pub n: usize,
    pub delta: f64,
}

fn check_n_delta(n: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence parameter {delta} outside (0, 1)")));
    }
    Ok(())
}

/// `sqrt((kl + ln(1/δ) + ln n + 2) / (2n − 1))`; infinite KL gives `+∞`.
pub fn complexity_term(kl: f64, n: usize, delta: f64) -> Result<f64> {
    check_n_delta(n, delta)?;
    if kl.is_nan() || kl < 0.0 {
        return Err(Error::InvalidArgument(format!("KL divergence {kl} is not a non-negative number")));
    }
    if kl.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    Ok(((kl + (1.0 / delta).ln() + nf.ln() + MCALLESTER_CONSTANT) / (2.0 * nf - 1.0)).sqrt())
}

/// `d complexity / d kl`.
pub fn complexity_slope(kl: f64, n: usize, delta: f64) -> Result<f64> {
    let c = complexity_term(kl, n, delta)?;
    Ok(1.0 / (2.0 * (2.0 * n as f64 - 1.0) * c))
}

pub fn mcallester_rhs(inputs: BoundInputs) -> Result<f64> {
    if !(0.0..=1.0).contains(&inputs.empirical) {
        return Err(Error::InvalidArgument(format!("empirical risk {} outside [0, 1]", inputs.empirical)));
    }
    Ok(inputs.empirical + complexity_term(inputs.kl, inputs.n, inputs.delta)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    McAllester,
    Improved,
    Representative,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::McAllester, Variant::Improved, Variant::Representative];

    pub fn name(self) -> &'static str {
        match self {
            Variant::McAllester => "mcallester",
            Variant::Improved => "improved",
            Variant::Representative => "representative",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlProvenance {
    ClosedForm,
    DiscreteExact,
}

impl fmt::Display for KlProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlProvenance::ClosedForm => "closed-form",
            KlProvenance::DiscreteExact => "discrete-exact",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleProvenance {
    Full,
    Representatives,
}

impl fmt::Display for SampleProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleProvenance::Full => "full",
            SampleProvenance::Representatives => "representatives",
        })
    }
}

/// Shared settings for evaluating a certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSettings {
    pub delta: f64,
    pub n_models: usize,
    pub seed: u64,
    pub loss: Loss,
}

impl BoundSettings {
    fn check(&self) -> Result<()> {
        if !self.loss.flags().bounded01 {
            return Err(Error::UnsupportedLoss(format!("{} is not bounded in [0, 1]", self.loss)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub variant: Variant,
    pub rhs: f64,
    pub empirical_term: f64,
    pub complexity_term: f64,
    pub kl: f64,
    pub n: usize,
    pub delta: f64,
    pub n_models: usize,
    pub seed: u64,
    pub std_error: f64,
    /// `rhs` with the empirical term raised by three standard errors.
    pub conservative_rhs: f64,
    pub kl_provenance: KlProvenance,
    pub sample_provenance: SampleProvenance,
    /// For projected variants: the same empirical term with `KL(Q‖P)`.
    pub unprojected_rhs: Option<f64>,
    pub decomposition: Option<KlDecomposition>,
}

impl BoundReport {
    /// `rhs` recomputed from the stored components.
    pub fn rederived_rhs(&self) -> f64 {
        self.empirical_term + self.complexity_term
    }
}

/// `KL(C∗Q ‖ C∗P)` for diagonal `Q` against a fixed diagonal `P`, with
/// gradients in the mean and variance of `Q`.
///
/// `C` is a coefficient matrix of full row rank; when its rows have
/// disjoint supports the divergence splits into one-dimensional terms.
#[derive(Clone, Debug)]
pub struct KlTerm {
    rows: Vec<Vec<(usize, f64)>>,
    dim: usize,
    prior_mean: DVector<f64>,
    prior_var: Vec<f64>,
    separable: bool,
    /// Dense path: `C`, `S_P⁻¹`, `ln det S_P`, `C·m_P`.
    dense: Option<(DMatrix<f64>, DMatrix<f64>, f64, DVector<f64>)>,
}

/// Factors an idempotent `A` as `B·C` with `B` a set of independent
/// columns of `A`, so `A·w = B·(C·w)` and `C` keeps `A`'s sparsity.
pub fn coefficient_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let norm = col.norm();
        if norm <= 1e-12 {
            continue;
        }
        let mut r = col.clone();
        for q in &basis {
            let c = q.dot(&r);
            r -= q * c;
        }
        if r.norm() > 1e-9 * norm {
            basis.push(&r / r.norm());
            chosen.push(j);
        }
    }
    if chosen.is_empty() {
        return DMatrix::zeros(0, a.ncols());
    }
    let b = DMatrix::from_fn(p, chosen.len(), |i, k| a[(i, chosen[k])]);
    let gram = b.transpose() * &b;
    let mut c = gram.cholesky().expect("independent columns").solve(&(b.transpose() * a));
    c.iter_mut().filter(|v| v.abs() < 1e-14).for_each(|v| *v = 0.0);
    c
}

impl KlTerm {
    pub fn new(coefficients: &DMatrix<f64>, prior: &GaussianMeasure) -> Result<Self> {
        if !prior.is_diagonal() {
            return Err(Error::InvalidArgument("the trainable KL term needs a diagonal prior".into()));
        }
        let dim = coefficients.ncols();
        if prior.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: prior.dim() });
        }
        let rows: Vec<Vec<(usize, f64)>> = (0..coefficients.nrows())
            .map(|k| (0..dim).filter(|&j| coefficients[(k, j)] != 0.0).map(|j| (j, coefficients[(k, j)])).collect())
            .collect();
        let mut owner = vec![usize::MAX; dim];
        let mut separable = true;
        for (k, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                if owner[j] != usize::MAX && owner[j] != k {
                    separable = false;
                }
                owner[j] = k;
            }
        }
        let prior_var = prior.cov().diagonal().as_slice().to_vec();
        if prior_var.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument("prior variances must be positive".into()));
        }
        let dense = if separable {
            None
        } else {
            let sp = coefficients * prior.cov() * coefficients.transpose();
            let chol = sp.cholesky().ok_or_else(|| Error::Numerical("projected prior covariance is singular".into()))?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Some((coefficients.clone(), chol.inverse(), logdet, coefficients * prior.mean()))
        };
        Ok(Self { rows, dim, prior_mean: prior.mean().clone(), prior_var, separable, dense })
    }

    /// The unprojected divergence `KL(Q ‖ P)`.
    pub fn identity(prior: &GaussianMeasure) -> Result<Self> {
        Self::new(&DMatrix::identity(prior.dim(), prior.dim()), prior)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Divergence and, when requested, gradients in `(mean, variance)`.
    pub fn evaluate(&self, mean: &[f64], var: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> f64 {
        if let Some((c, sp_inv, ld_p, cm_p)) = &self.dense {
            let m = DVector::from_column_slice(mean);
            let sq = c * DMatrix::from_diagonal(&DVector::from_column_slice(var)) * c.transpose();
            let Some(chol) = sq.clone().cholesky() else { return f64::INFINITY };
            let ld_q = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let d = c * &m - cm_p;
            let r = c.nrows() as f64;
            let kl = 0.5 * ((sp_inv * &sq).trace() + d.dot(&(sp_inv * &d)) - r + ld_p - ld_q);
            if let Some((gm, gv)) = grad {
                let g_mean = c.transpose() * (sp_inv * &d);
                let sq_inv = chol.inverse();
                let pp = c.transpose() * sp_inv * c;
                let qq = c.transpose() * sq_inv * c;
                for j in 0..self.dim {
                    gm[j] += g_mean[j];
                    gv[j] += 0.5 * (pp[(j, j)] - qq[(j, j)]);
                }
            }
            return kl;
        }
        let mut kl = 0.0;
        let mut grad = grad;
        for row in &self.rows {
            let (mut a, mut b, mut sq, mut sp) = (0.0, 0.0, 0.0, 0.0);
            for &(j, c) in row {
                a += c * mean[j];
                b += c * self.prior_mean[j];
                sq += c * c * var[j];
                sp += c * c * self.prior_var[j];
            }
            if sq <= 0.0 {
                return f64::INFINITY;
            }
            kl += 0.5 * (sq / sp + (a - b) * (a - b) / sp - 1.0 + sp.ln() - sq.ln());
            if let Some((gm, gv)) = grad.as_mut() {
                for &(j, c) in row {
                    gm[j] += c * (a - b) / sp;
                    gv[j] += 0.5 * c * c * (1.0 / sp - 1.0 / sq);
                }
            }
        }
        kl
    }

    pub fn is_separable(&self) -> bool {
        self.separable
    }
}

/// `KL(Q ‖ P)`, through the trainable term when both are diagonal.
fn kl_between(posterior: &GaussianMeasure, prior: &GaussianMeasure) -> Result<f64> {
    if posterior.is_diagonal() && prior.is_diagonal() {
        let term = KlTerm::identity(prior)?;
        Ok(term.evaluate(posterior.mean().as_slice(), posterior.cov().diagonal().as_slice(), None))
    } else {
        kl_gaussian(posterior, prior)
    }
}

/// `KL(A∗Q ‖ A∗P)`.
pub fn projected_kl(posterior: &GaussianMeasure, prior: &GaussianMeasure, a: &DMatrix<f64>) -> Result<f64> {
    if posterior.is_diagonal() && prior.is_diagonal() && prior.cov().diagonal().iter().all(|v| *v > 0.0) {
        let term = KlTerm::new(&coefficient_factor(a), prior)?;
        Ok(term.evaluate(posterior.mean().as_slice(), posterior.cov().diagonal().as_slice(), None))
    } else {
        kl_gaussian(&pushforward_gaussian(a, posterior)?, &pushforward_gaussian(a, prior)?)
    }
}

fn assemble(
    variant: Variant,
    empirical: crate::risk::RiskEstimate,
    kl: f64,
    n: usize,
    settings: &BoundSettings,
    sample_provenance: SampleProvenance,
) -> Result<BoundReport> {
    let complexity = complexity_term(kl, n, settings.delta)?;
    let rhs = mcallester_rhs(BoundInputs { empirical: empirical.value, kl, n, delta: settings.delta })?;
    Ok(BoundReport {
        variant,
        rhs,
        empirical_term: empirical.value,
        complexity_term: complexity,
        kl,
        n,
        delta: settings.delta,
        n_models: settings.n_models,
        seed: settings.seed,
        std_error: empirical.std_error,
        conservative_rhs: (empirical.value + 3.0 * empirical.std_error).min(1.0) + complexity,
        kl_provenance: KlProvenance::ClosedForm,
        sample_provenance,
        unprojected_rhs: None,
        decomposition: None,
    })
}

/// McAllester's bound for `Q` itself; `sample` is the certification sample.
pub fn mcallester_bound(
    posterior: &GaussianMeasure,
    prior: &GaussianMeasure,
    rows: &WeightedRows,
    n: usize,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    settings.check()?;
    let empirical = posterior_risk_mc(posterior, rows, settings.loss, settings.n_models, settings.seed)?;
    let kl = kl_between(posterior, prior)?;
    assemble(Variant::McAllester, empirical, kl, n, settings, SampleProvenance::Full)
}

fn projected_bound(
    variant: Variant,
    posterior: &GaussianMeasure,
    prior: &GaussianMeasure,
    projection: &ParameterProjection,
    rows: &WeightedRows,
    n: usize,
    settings: &BoundSettings,
    sample_provenance: SampleProvenance,
) -> Result<BoundReport> {
    settings.check()?;
    let a = &projection.matrix;
    // Parameters drawn from Q and mapped by A have law A∗Q.
    let pulled = rows.pull_back(a);
    let empirical = posterior_risk_mc(posterior, &pulled, settings.loss, settings.n_models, settings.seed)?;
    let kl_push = projected_kl(posterior, prior, a)?;
    let kl_total = kl_between(posterior, prior)?;
    let mut report = assemble(variant, empirical, kl_push, n, settings, sample_provenance)?;
    report.unprojected_rhs = Some(empirical.value + complexity_term(kl_total, n, settings.delta)?);
    let residual = if kl_total.is_infinite() { f64::INFINITY } else { kl_total - kl_push };
    report.decomposition =
        Some(KlDecomposition { total: kl_total, pushforward_kl: kl_push, residual, residual_crosscheck: None });
    Ok(report)
}

/// The bound for `A∗Q` against `A∗P` on the full sample.
pub fn improved_bound(
    posterior: &GaussianMeasure,
    prior: &GaussianMeasure,
    projection: &ParameterProjection,
    rows: &WeightedRows,
    n: usize,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    projected_bound(Variant::Improved, posterior, prior, projection, rows, n, settings, SampleProvenance::Full)
}

/// As [`improved_bound`], with the empirical term on a sample of
/// representatives. Every row must be canonical.
pub fn representative_bound(
    posterior: &GaussianMeasure,
    prior: &GaussianMeasure,
    projection: &ParameterProjection,
    family: &Family,
    sample: &Dataset,
    resolver: &OrbitResolver,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    sample.check_canonical(resolver)?;
    let rows = WeightedRows::from_dataset(family, sample)?;
    projected_bound(
        Variant::Representative,
        posterior,
        prior,
        projection,
        &rows,
        sample.len(),
        settings,
        SampleProvenance::Representatives,
    )
}

/// Prior built on a held-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorReport {
    pub prior: GaussianMeasure,
    pub sigma: f64,
    pub rank_deficient: bool,
}

/// Mean from minimum-norm least squares on the split, covariance `σ²·I`.
pub fn build_prior(split: &Dataset, family: &Family, sigma: f64) -> Result<PriorReport> {
    if split.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("prior scale {sigma} must be positive")));
    }
    let p = family.param_dim();
    let features: Vec<Features> = split.rows.iter().map(|(x, _)| family.features(x)).collect::<Result<_>>()?;
    let (mean, rank_deficient) = if features.iter().all(|f| matches!(f, Features::OneHot(_))) {
        let mut counts = vec![0.0; p];
        let mut sums = vec![0.0; p];
        for (phi, (_, y)) in features.iter().zip(&split.rows) {
            if let Features::OneHot(i) = phi {
                counts[*i] += 1.0;
                sums[*i] += y;
            }
        }
        let mean: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect();
        (DVector::from_vec(mean), counts.contains(&0.0))
    } else {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (phi, (_, y)) in features.iter().zip(&split.rows) {
            let v = DVector::from_vec(phi.to_dense(p));
            gram += &v * v.transpose();
            rhs += &v * *y;
        }
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let cutoff = 1e-10 * top.max(1e-300);
        let inv = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
        let deficient = eig.eigenvalues.iter().any(|&l| l <= cutoff);
        let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        (pinv * rhs, deficient)
    };
    Ok(PriorReport { prior: GaussianMeasure::isotropic(mean, sigma), sigma, rank_deficient })
}
