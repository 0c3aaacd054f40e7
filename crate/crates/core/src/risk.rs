//! Losses with declared properties, empirical and true risk (exact and
//! Monte Carlo), risk on representatives, and posterior-expected risk for
//! Gaussian distributions over parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::averaging::{Family, Features, Hypothesis};
use crate::data::{Atom, Dataset, GenerativeSpec};
use crate::error::{Error, Result};
use crate::group::OrbitResolver;
use crate::measures::GaussianMeasure;
use crate::rng::{rng_for, streams};

/// Clamp for the margin inside the normalized logistic loss.
pub const LOGISTIC_MARGIN: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Loss {
    Squared,
    /// `min((ŷ − y)²/4, 1)`.
    SquaredClipped,
    /// `1[ŷ·y ≤ 0]`.
    ZeroOne,
    /// `log(1 + exp(−clamp(y·ŷ, ±B))) / log(1 + e^B)`.
    LogisticNormalized,
}

/// Declared properties; each is spot-checked by the property suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossFlags {
    /// For the clipped square, on predictions and labels in `[−1, 1]`.
    pub convex_in_first: bool,
    pub g_invariant: bool,
    pub bounded01: bool,
}

impl Loss {
    pub const ALL: [Loss; 4] = [Loss::Squared, Loss::SquaredClipped, Loss::ZeroOne, Loss::LogisticNormalized];

    pub fn name(self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::SquaredClipped => "squared-clipped",
            Loss::ZeroOne => "zero-one",
            Loss::LogisticNormalized => "logistic-normalized",
        }
    }

    pub fn flags(self) -> LossFlags {
        match self {
            Loss::Squared => LossFlags { convex_in_first: true, g_invariant: true, bounded01: false },
            Loss::SquaredClipped => LossFlags { convex_in_first: true, g_invariant: true, bounded01: true },
            Loss::ZeroOne => LossFlags { convex_in_first: false, g_invariant: true, bounded01: true },
            Loss::LogisticNormalized => LossFlags { convex_in_first: false, g_invariant: true, bounded01: true },
        }
    }

    /// `ℓ(ŷ, y)`.
    pub fn value(self, pred: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => (pred - y) * (pred - y),
            Loss::SquaredClipped => ((pred - y) * (pred - y) / 4.0).min(1.0),
            Loss::ZeroOne => {
                if pred * y <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Loss::LogisticNormalized => {
                let m = (y * pred).clamp(-LOGISTIC_MARGIN, LOGISTIC_MARGIN);
                softplus(-m) / softplus(LOGISTIC_MARGIN)
            }
        }
    }

    /// `∂ℓ/∂ŷ`, or `None` for losses without a useful derivative.
    pub fn derivative(self, pred: f64, y: f64) -> Option<f64> {
        match self {
            Loss::Squared => Some(2.0 * (pred - y)),
            Loss::SquaredClipped => Some(if (pred - y).abs() < 2.0 { (pred - y) / 2.0 } else { 0.0 }),
            Loss::ZeroOne => None,
            Loss::LogisticNormalized => {
                let m = y * pred;
                if m.abs() >= LOGISTIC_MARGIN {
                    return Some(0.0);
                }
                let sigmoid = 1.0 / (1.0 + m.exp());
                Some(-y * sigmoid / softplus(LOGISTIC_MARGIN))
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Loss::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| Error::UnsupportedLoss(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskMethod {
    Exact,
    MonteCarlo,
}

impl fmt::Display for RiskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskMethod::Exact => "exact",
            RiskMethod::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub method: RiskMethod,
    /// Zero for exact values and single-sample estimates.
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl RiskEstimate {
    pub fn exact(value: f64, n_samples: usize) -> Self {
        Self { value, method: RiskMethod::Exact, std_error: 0.0, n_samples, seed: 0 }
    }

    /// Mean and standard error of the mean of `values`.
    pub fn from_samples(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { value: mean, method: RiskMethod::MonteCarlo, std_error, n_samples: n, seed }
    }
}

/// `(1/n) Σ ℓ(f(xᵢ), yᵢ)`.
pub fn empirical_risk(f: &(impl Hypothesis + ?Sized), sample: &Dataset, loss: Loss) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for (x, y) in &sample.rows {
        total += loss.value(f.eval(x)?, *y);
    }
    Ok(total / sample.len() as f64)
}

fn weighted_risk(f: &(impl Hypothesis + ?Sized), atoms: &[Atom], loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for a in atoms {
        total += a.weight * loss.value(f.eval(&a.x)?, a.y);
    }
    Ok(total)
}

/// `R(f)` by summing over every `(x_φ, g, ξ)` triple.
pub fn true_risk_enumerate(f: &(impl Hypothesis + ?Sized), spec: &GenerativeSpec, loss: Loss) -> Result<RiskEstimate> {
    let atoms = spec.enumerate()?;
    Ok(RiskEstimate::exact(weighted_risk(f, &atoms, loss)?, atoms.len()))
}

/// Mean loss over `n` fresh pairs; draw `i` uses its own seeded stream.
pub fn true_risk_mc(
    f: &(impl Hypothesis + ?Sized),
    spec: &GenerativeSpec,
    loss: Loss,
    n: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let losses: Vec<Result<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, streams::TRIAL, i);
            let d = spec.sample_pair(&mut rng)?;
            Ok(loss.value(f.eval(&d.x)?, d.y))
        })
        .collect();
    let losses: Vec<f64> = losses.into_iter().collect::<Result<_>>()?;
    Ok(RiskEstimate::from_samples(&losses, seed))
}

/// `R_φ(f)`: the risk with inputs restricted to representatives.
pub fn risk_on_representatives(
    f: &(impl Hypothesis + ?Sized),
    spec: &GenerativeSpec,
    loss: Loss,
) -> Result<RiskEstimate> {
    let atoms = spec.enumerate_representatives()?;
    Ok(RiskEstimate::exact(weighted_risk(f, &atoms, loss)?, atoms.len()))
}

/// Empirical risk on a representative sample; every row must be canonical.
pub fn empirical_risk_on_representatives(
    f: &(impl Hypothesis + ?Sized),
    sample: &Dataset,
    resolver: &OrbitResolver,
    loss: Loss,
) -> Result<f64> {
    sample.check_canonical(resolver)?;
    empirical_risk(f, sample, loss)
}

/// Loss values bucketed at `1e-12`, with their total probability.
pub fn loss_distribution(f: &(impl Hypothesis + ?Sized), atoms: &[Atom], loss: Loss) -> Result<BTreeMap<i64, f64>> {
    let mut out = BTreeMap::new();
    for a in atoms {
        let v = loss.value(f.eval(&a.x)?, a.y);
        *out.entry((v / 1e-12).round() as i64).or_insert(0.0) += a.weight;
    }
    Ok(out)
}

/// Rows as features, labels and weights summing to one; repeated rows merged.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedRows {
    pub features: Vec<Features>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedRows {
    fn build<'a>(family: &Family, rows: impl Iterator<Item = (&'a [f64], f64, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<(Vec<u64>, u64), (Features, f64)> = BTreeMap::new();
        let mut total = 0.0;
        for (x, y, w) in rows {
            let key = (x.iter().map(|v| v.to_bits()).collect(), y.to_bits());
            total += w;
            if let Some(entry) = merged.get_mut(&key) {
                entry.1 += w;
            } else {
                merged.insert(key, (family.features(x)?, w));
            }
        }
        if merged.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut out = WeightedRows { features: Vec::new(), labels: Vec::new(), weights: Vec::new() };
        for ((_, y), (phi, w)) in merged {
            out.features.push(phi);
            out.labels.push(f64::from_bits(y));
            out.weights.push(w / total);
        }
        Ok(out)
    }

    pub fn from_dataset(family: &Family, data: &Dataset) -> Result<Self> {
        Self::build(family, data.rows.iter().map(|(x, y)| (x.as_slice(), *y, 1.0)))
    }

    pub fn from_atoms(family: &Family, atoms: &[Atom]) -> Result<Self> {
        Self::build(family, atoms.iter().map(|a| (a.x.as_slice(), a.y, a.weight)))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The rows seen by `w ↦ f_{A·w}`.
    pub fn pull_back(&self, a: &nalgebra::DMatrix<f64>) -> Self {
        WeightedRows {
            features: self.features.iter().map(|phi| phi.pull_back(a)).collect(),
            labels: self.labels.clone(),
            weights: self.weights.clone(),
        }
    }

    /// Weighted loss of one parameter vector.
    pub fn risk(&self, w: &[f64], loss: Loss) -> f64 {
        self.features
            .iter()
            .zip(&self.labels)
            .zip(&self.weights)
            .map(|((phi, &y), &p)| p * loss.value(phi.dot(w), y))
            .sum()
    }
}

/// `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Predictive mean and variance of `⟨w, φ⟩` for `w ~ N(m, Σ)`.
fn predictive(post: &GaussianMeasure, phi: &Features, diagonal: Option<&[f64]>) -> (f64, f64) {
    let mean = phi.dot(post.mean().as_slice());
    let var = match (phi, diagonal) {
        (_, Some(d)) => phi.quadratic_diag(d),
        (Features::OneHot(i), None) => post.cov()[(*i, *i)],
        (_, None) => {
            let v = DVector::from_vec(phi.to_dense(post.dim()));
            v.dot(&(post.cov() * &v))
        }
    };
    (mean, var.max(0.0))
}

/// `E_{w~N(m,Σ)} ℓ(⟨w, φ⟩, y)` in closed form: `Φ` for zero-one loss, the
/// Gaussian second moment for the square. Other losses are unsupported.
pub fn expected_loss_closed_form(loss: Loss, mean: f64, var: f64, y: f64) -> Result<f64> {
    match loss {
        Loss::Squared => Ok((mean - y) * (mean - y) + var),
        Loss::ZeroOne => {
            if y == 0.0 {
                return Ok(1.0);
            }
            let margin = mean * y.signum();
            if var <= 0.0 {
                return Ok(if margin <= 0.0 { 1.0 } else { 0.0 });
            }
            Ok(normal_cdf(-margin / var.sqrt()))
        }
        other => Err(Error::UnsupportedLoss(format!("no closed form for {other}"))),
    }
}

pub fn has_closed_form(loss: Loss) -> bool {
    matches!(loss, Loss::Squared | Loss::ZeroOne)
}

/// Exact `Q[R̂]` (or `Q[R]` when the rows are an enumerated law).
pub fn posterior_risk_exact(post: &GaussianMeasure, rows: &WeightedRows, loss: Loss) -> Result<f64> {
    let p = post.mean().len();
    let diag: Option<Vec<f64>> = post.is_diagonal().then(|| post.cov().diagonal().as_slice().to_vec());
    let mut total = 0.0;
    for ((phi, &y), &w) in rows.features.iter().zip(&rows.labels).zip(&rows.weights) {
        if let Features::Dense(v) = phi {
            if v.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: v.len() });
            }
        }
        let (m, s2) = predictive(post, phi, diag.as_deref());
        total += w * expected_loss_closed_form(loss, m, s2, y)?;
    }
    Ok(total)
}

/// `Q[R̂]` from `n_models` parameter draws, each with its own stream.
pub fn posterior_risk_mc(
    post: &GaussianMeasure,
    rows: &WeightedRows,
    loss: Loss,
    n_models: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if n_models == 0 {
        return Err(Error::InvalidArgument("n_models must be positive".into()));
    }
    let factor = post.sampling_factor();
    let p = post.dim();
    let risks: Vec<f64> = (0..n_models as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, streams::POSTERIOR_DRAWS, i);
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = post.mean() + &factor * z;
            rows.risk(w.as_slice(), loss)
        })
        .collect();
    Ok(RiskEstimate::from_samples(&risks, seed))
}

/// Exact when a closed form exists for the loss, otherwise Monte Carlo.
pub fn posterior_expected_risk(
    post: &GaussianMeasure,
    rows: &WeightedRows,
    loss: Loss,
    n_models: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if has_closed_form(loss) {
        Ok(RiskEstimate { seed, ..RiskEstimate::exact(posterior_risk_exact(post, rows, loss)?, rows.len()) })
    } else {
        posterior_risk_mc(post, rows, loss, n_models, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::Predictor;
    use crate::data::{builtin_scenario, ScenarioOptions};
    use crate::group::{Element, GroupAction, OutputRep};
    use crate::kernel::GroupKernel;
    use crate::data::Noise;

    #[test]
    fn loss_values() {
        assert_eq!(Loss::Squared.value(0.5, 1.0), 0.25);
        assert_eq!(Loss::SquaredClipped.value(0.0, 1.0), 0.25);
        assert_eq!(Loss::SquaredClipped.value(-3.0, 1.0), 1.0);
        assert_eq!(Loss::ZeroOne.value(0.0, 1.0), 1.0);
        assert_eq!(Loss::ZeroOne.value(-0.2, -1.0), 0.0);
        assert!((Loss::LogisticNormalized.value(-10.0, 1.0) - 1.0).abs() < 1e-15);
        assert!(Loss::LogisticNormalized.value(10.0, 1.0) > 0.0);
        assert_eq!("zero-one".parse::<Loss>().unwrap(), Loss::ZeroOne);
        assert!("hinge".parse::<Loss>().is_err());
    }

    #[test]
    fn empirical_risk_examples() {
        let family = crate::averaging::Family::Linear { dim: 1 };
        let f = Predictor::new(&family, vec![1.0]).unwrap();
        let rows: Vec<(Vec<f64>, f64)> =
            (0..10).map(|i| (vec![1.0], if i < 3 { -1.0 } else { 1.0 })).collect();
        let ds = Dataset::new(1, rows).unwrap();
        assert!((empirical_risk(&f, &ds, Loss::ZeroOne).unwrap() - 0.3).abs() < 1e-15);
        let half = Predictor::new(&family, vec![0.5]).unwrap();
        let single = Dataset::new(1, vec![(vec![1.0], 1.0)]).unwrap();
        assert_eq!(empirical_risk(&half, &single, Loss::Squared).unwrap(), 0.25);
        assert!(empirical_risk(&half, &Dataset::new(1, vec![]).unwrap(), Loss::Squared).is_err());
    }

    #[test]
    fn two_point_flip_scenario_has_risk_p() {
        let resolver = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
        let spec = GenerativeSpec::new(
            "two-point",
            resolver,
            vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            vec![0.5, 0.5],
            GroupKernel::global(vec![(Element(0), 0.6), (Element(1), 0.4)]).unwrap(),
            vec![1.0, -1.0],
            Noise::LabelFlip(0.1),
        )
        .unwrap();
        let family = crate::averaging::Family::Linear { dim: 2 };
        let f = Predictor::new(&family, vec![1.0, 1.0]).unwrap();
        let r = true_risk_enumerate(&f, &spec, Loss::ZeroOne).unwrap();
        assert!((r.value - 0.1).abs() < 1e-15);
        assert_eq!(r.std_error, 0.0);
        let constant = |_: &[f64]| -> Result<f64> { Ok(1.0) };
        assert!((true_risk_enumerate(&constant, &spec, Loss::ZeroOne).unwrap().value - 0.5).abs() < 1e-15);
        let mc = true_risk_mc(&f, &spec, Loss::ZeroOne, 4000, 3).unwrap();
        assert!((mc.value - 0.1).abs() <= 3.0 * mc.std_error);
        assert_eq!(mc, true_risk_mc(&f, &spec, Loss::ZeroOne, 4000, 3).unwrap());
        let one = true_risk_mc(&f, &spec, Loss::ZeroOne, 1, 3).unwrap();
        assert_eq!(one.std_error, 0.0);
    }

    #[test]
    fn posterior_closed_form_matches_monte_carlo() {
        let spec = builtin_scenario("swap-toy", ScenarioOptions::default()).unwrap();
        let family = crate::averaging::Family::Linear { dim: 2 };
        let rows = WeightedRows::from_atoms(&family, &spec.enumerate().unwrap()).unwrap();
        let post = GaussianMeasure::diagonal(DVector::from_vec(vec![0.3, 0.1]), &[0.4, 0.2]).unwrap();
        for loss in [Loss::ZeroOne, Loss::Squared] {
            let exact = posterior_risk_exact(&post, &rows, loss).unwrap();
            let mc = posterior_risk_mc(&post, &rows, loss, 4000, 9).unwrap();
            assert!((exact - mc.value).abs() <= 3.0 * mc.std_error, "{loss}: {exact} vs {mc:?}");
        }
        let point = GaussianMeasure::point_mass(DVector::from_vec(vec![0.3, 0.1]));
        let f = Predictor::new(&family, vec![0.3, 0.1]).unwrap();
        let single = true_risk_enumerate(&f, &spec, Loss::ZeroOne).unwrap().value;
        assert!((posterior_risk_exact(&point, &rows, Loss::ZeroOne).unwrap() - single).abs() < 1e-15);
    }
}
