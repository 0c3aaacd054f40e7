//! Predictor families, the averaging operator in function space, its
//! parameter-space realization for families closed under averaging, and
//! the pointwise property checks (equivariance, idempotency, fixed points).

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::{Element, Group, GroupAction, InputRep, OrbitResolver};
use crate::kernel::GroupKernel;
use crate::measures::{idempotency_deviation, IDEMPOTENCY_TOL};
use crate::rng::{rng_for, streams};

/// Tolerance for pointwise function identities.
pub const FUNCTION_TOL: f64 = 1e-9;
pub const DEFAULT_PROBES: usize = 256;
const MATCH_TOL: f64 = 1e-9;

/// A finite input set `{g·x_φ : x_φ ∈ reps, g ∈ elements}` with one table
/// entry per pair, indexed `rep_index · |elements| + slot`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDomain {
    resolver: OrbitResolver,
    reps: Vec<Vec<f64>>,
    elements: Vec<Element>,
}

impl TabularDomain {
    /// `elements` is sorted and always gains the identity.
    pub fn new(resolver: OrbitResolver, reps: Vec<Vec<f64>>, mut elements: Vec<Element>) -> Result<Self> {
        let action = resolver.action();
        elements.push(action.group().identity());
        elements.sort();
        elements.dedup();
        if reps.is_empty() {
            return Err(Error::InvalidArgument("tabular domain needs at least one representative".into()));
        }
        for (i, rep) in reps.iter().enumerate() {
            if !resolver.is_canonical(rep)? {
                return Err(Error::NotCanonical { index: i });
            }
            for &g in &elements {
                action.act_input(g, rep)?;
            }
        }
        Ok(Self { resolver, reps, elements })
    }

    /// The domain reached by a kernel: every representative moved by every
    /// support element.
    pub fn for_kernel(resolver: OrbitResolver, reps: Vec<Vec<f64>>, kernel: &GroupKernel) -> Result<Self> {
        Self::new(resolver, reps, kernel.support())
    }

    pub fn resolver(&self) -> &OrbitResolver {
        &self.resolver
    }

    pub fn reps(&self) -> &[Vec<f64>] {
        &self.reps
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.reps.len() * self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, rep_index: usize, slot: usize) -> usize {
        rep_index * self.elements.len() + slot
    }

    pub fn slot_of(&self, g: Element) -> Option<usize> {
        self.elements.binary_search(&g).ok()
    }

    pub fn rep_index(&self, rep: &[f64]) -> Option<usize> {
        self.reps.iter().position(|r| r.iter().zip(rep).all(|(a, b)| (a - b).abs() <= MATCH_TOL))
    }

    /// The input stored at a flat index.
    pub fn input(&self, index: usize) -> Vec<f64> {
        let m = self.elements.len();
        self.resolver
            .action()
            .act_input(self.elements[index % m], &self.reps[index / m])
            .expect("validated at construction")
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.input(i)).collect()
    }

    /// Flat index of `x`, or `OutsideDomain`.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        let r = self.resolver.resolve(x)?;
        let i = self.rep_index(&r.representative).ok_or(Error::OutsideDomain)?;
        let slot = self.slot_of(r.group_part).ok_or(Error::OutsideDomain)?;
        Ok(self.index(i, slot))
    }
}

/// Predictors `f_w(x) = ⟨w, φ(x)⟩`, all linear in their parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// One free value per input of a finite domain.
    Tabular(TabularDomain),
    /// `f(x) = ⟨w, x⟩`.
    Linear { dim: usize },
    /// `f(x) = Σ_c w_c · Σ_{i : pattern[i] = c} x_i`.
    TiedLinear { pattern: Vec<usize> },
}

/// Feature vector of one input.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    OneHot(usize),
    Dense(Vec<f64>),
    /// `(index, value)` pairs with distinct indices.
    Sparse(Vec<(usize, f64)>),
}

impl Features {
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Features::OneHot(i) => w[*i],
            Features::Dense(phi) => phi.iter().zip(w).map(|(a, b)| a * b).sum(),
            Features::Sparse(phi) => phi.iter().map(|&(i, v)| v * w[i]).sum(),
        }
    }

    /// Adds `scale · φ` into `out`.
    pub fn add_scaled(&self, scale: f64, out: &mut [f64]) {
        match self {
            Features::OneHot(i) => out[*i] += scale,
            Features::Dense(phi) => out.iter_mut().zip(phi).for_each(|(o, p)| *o += scale * p),
            Features::Sparse(phi) => phi.iter().for_each(|&(i, v)| out[i] += scale * v),
        }
    }

    /// `φᵀ·diag(var)·φ`.
    pub fn quadratic_diag(&self, var: &[f64]) -> f64 {
        match self {
            Features::OneHot(i) => var[*i],
            Features::Dense(phi) => phi.iter().zip(var).map(|(p, v)| p * p * v).sum(),
            Features::Sparse(phi) => phi.iter().map(|&(i, v)| v * v * var[i]).sum(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        match self {
            Features::OneHot(i) => {
                let mut v = vec![0.0; dim];
                v[*i] = 1.0;
                v
            }
            Features::Dense(phi) => phi.clone(),
            Features::Sparse(phi) => {
                let mut v = vec![0.0; dim];
                phi.iter().for_each(|&(i, x)| v[i] = x);
                v
            }
        }
    }

    /// `Aᵀφ`, so that `⟨A·w, φ⟩ = ⟨w, Aᵀφ⟩`. Exact zeros are dropped.
    pub fn pull_back(&self, a: &DMatrix<f64>) -> Features {
        let p = a.ncols();
        let mut out = vec![0.0; p];
        match self {
            Features::OneHot(i) => out.iter_mut().enumerate().for_each(|(j, o)| *o = a[(*i, j)]),
            Features::Dense(phi) => {
                for (i, &x) in phi.iter().enumerate().filter(|(_, x)| **x != 0.0) {
                    out.iter_mut().enumerate().for_each(|(j, o)| *o += x * a[(i, j)]);
                }
            }
            Features::Sparse(phi) => {
                for &(i, x) in phi {
                    out.iter_mut().enumerate().for_each(|(j, o)| *o += x * a[(i, j)]);
                }
            }
        }
        Features::Sparse(out.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect())
    }
}

impl Family {
    pub fn tied_classes(pattern: &[usize]) -> usize {
        pattern.iter().max().map_or(0, |m| m + 1)
    }

    pub fn param_dim(&self) -> usize {
        match self {
            Family::Tabular(d) => d.len(),
            Family::Linear { dim } => *dim,
            Family::TiedLinear { pattern } => Self::tied_classes(pattern),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Family::Tabular(_) => "tabular",
            Family::Linear { .. } => "linear",
            Family::TiedLinear { .. } => "tied-linear",
        }
    }

    pub fn features(&self, x: &[f64]) -> Result<Features> {
        match self {
            Family::Tabular(d) => Ok(Features::OneHot(d.locate(x)?)),
            Family::Linear { dim } => {
                if x.len() != *dim {
                    return Err(Error::DimensionMismatch { expected: *dim, got: x.len() });
                }
                Ok(Features::Dense(x.to_vec()))
            }
            Family::TiedLinear { pattern } => {
                if x.len() != pattern.len() {
                    return Err(Error::DimensionMismatch { expected: pattern.len(), got: x.len() });
                }
                let mut phi = vec![0.0; Self::tied_classes(pattern)];
                for (&c, &v) in pattern.iter().zip(x) {
                    phi[c] += v;
                }
                Ok(Features::Dense(phi))
            }
        }
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> Result<f64> {
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: w.len() });
        }
        Ok(self.features(x)?.dot(w))
    }
}

/// Anything evaluable pointwise.
pub trait Hypothesis: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

impl<F> Hypothesis for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

/// A member of a family with concrete parameters.
#[derive(Clone, Debug)]
pub struct Predictor<'a> {
    pub family: &'a Family,
    pub params: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(family: &'a Family, params: Vec<f64>) -> Result<Self> {
        if params.len() != family.param_dim() {
            return Err(Error::DimensionMismatch { expected: family.param_dim(), got: params.len() });
        }
        Ok(Self { family, params })
    }
}

impl Hypothesis for Predictor<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.family.features(x).map(|phi| phi.dot(&self.params))
    }
}

/// `Q(f)`: `x ↦ π_G(x) · Σ_g κ(x_φ, g) · g⁻¹ · f(g · x_φ)`.
pub struct Averaged<'a, H: ?Sized> {
    inner: &'a H,
    kernel: &'a GroupKernel,
    resolver: &'a OrbitResolver,
}

pub fn average_function<'a, H: Hypothesis + ?Sized>(
    f: &'a H,
    kernel: &'a GroupKernel,
    resolver: &'a OrbitResolver,
) -> Averaged<'a, H> {
    Averaged { inner: f, kernel, resolver }
}

impl<H: Hypothesis + ?Sized> Hypothesis for Averaged<'_, H> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        let action = self.resolver.action();
        let r = self.resolver.resolve(x)?;
        let dist = self
            .kernel
            .distribution(&r.representative)
            .ok_or_else(|| Error::InvalidKernel("no kernel mass for this representative".into()))?;
        let group = action.group();
        let mut sum = 0.0;
        for &(g, w) in dist {
            let moved = action.act_input(g, &r.representative)?;
            sum += w * action.act_output(group.inverse(g)?, self.inner.eval(&moved)?);
        }
        Ok(action.act_output(r.group_part, sum))
    }
}

/// The linear map on parameters realizing `Q` for a family.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterProjection {
    pub matrix: DMatrix<f64>,
    pub family_tag: &'static str,
    pub provenance: String,
    /// Largest parameter-vs-function mismatch seen in the closure witness.
    pub witness_deviation: f64,
}

impl ParameterProjection {
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (&self.matrix * nalgebra::DVector::from_column_slice(w)).as_slice().to_vec()
    }
}

/// `(1/|G|) Σ_g χ(g) ρ(g)ᵀ`, the classical group average of a linear map.
fn linear_average(action: &GroupAction) -> Result<DMatrix<f64>> {
    let elements = action
        .group()
        .elements()
        .ok_or_else(|| Error::ClosureNotCertified("linear averaging needs a finite group".into()))?;
    let d = action.input_dim();
    let mut a = DMatrix::zeros(d, d);
    for &g in &elements {
        let rho = action.matrix(g).ok_or_else(|| Error::ClosureNotCertified("action has no matrix form".into()))?;
        a += rho.transpose() * action.character(g);
    }
    Ok(a / elements.len() as f64)
}

fn linear_certification(action: &GroupAction, kernel: &GroupKernel) -> Result<DMatrix<f64>> {
    if matches!(action.input_rep(), InputRep::Shift { .. }) {
        return Err(Error::ClosureNotCertified("linear family under the shift group".into()));
    }
    if !action.is_orthogonal() {
        return Err(Error::ClosureNotCertified("linear family needs an orthogonal representation".into()));
    }
    if !kernel.is_uniform_over(action.group()) {
        return Err(Error::ClosureNotCertified(
            "linear family with a non-uniform kernel: the average of a linear map need not be linear".into(),
        ));
    }
    linear_average(action)
}

fn tabular_matrix(domain: &TabularDomain, kernel: &GroupKernel) -> Result<DMatrix<f64>> {
    let action = domain.resolver.action();
    let p = domain.len();
    let mut a = DMatrix::zeros(p, p);
    for (i, rep) in domain.reps.iter().enumerate() {
        let dist = kernel
            .distribution(rep)
            .ok_or_else(|| Error::InvalidKernel(format!("no kernel mass for representative {i}")))?;
        for &(g, w) in dist {
            let j = domain.slot_of(g).ok_or_else(|| {
                Error::InvalidKernel(format!("kernel element {g} lies outside the tabular domain"))
            })?;
            for (slot, &h) in domain.elements.iter().enumerate() {
                a[(domain.index(i, slot), domain.index(i, j))] += action.character(h) * action.character(g) * w;
            }
        }
    }
    Ok(a)
}

/// Builds `A` for a family closed under averaging, then verifies `A² = A`
/// and agreement with function-space averaging on random predictors.
///
/// Combinations outside the certified set return `ClosureNotCertified`.
pub fn build_parameter_projection(
    family: &Family,
    resolver: &OrbitResolver,
    kernel: &GroupKernel,
    audit_seed: u64,
) -> Result<ParameterProjection> {
    let action = resolver.action();
    let (matrix, provenance) = match family {
        Family::Tabular(domain) => {
            if domain.resolver.action() != action {
                return Err(Error::InvalidAction("tabular domain was built for a different action".into()));
            }
            (tabular_matrix(domain, kernel)?, "orbit-blocks".to_string())
        }
        Family::Linear { dim } => {
            if *dim != action.input_dim() {
                return Err(Error::DimensionMismatch { expected: action.input_dim(), got: *dim });
            }
            (linear_certification(action, kernel)?, "group-average".to_string())
        }
        Family::TiedLinear { pattern } => {
            if pattern.len() != action.input_dim() {
                return Err(Error::DimensionMismatch { expected: action.input_dim(), got: pattern.len() });
            }
            let a = linear_certification(action, kernel)?;
            let c = Family::tied_classes(pattern);
            let embed = DMatrix::from_fn(pattern.len(), c, |i, k| if pattern[i] == k { 1.0 } else { 0.0 });
            let fixes_ties = (&a * &embed - &embed).amax() <= IDEMPOTENCY_TOL;
            let rank = a.clone().svd(false, false).rank(1e-9);
            if !fixes_ties || rank != c || (0..c).any(|k| !pattern.contains(&k)) {
                return Err(Error::ClosureNotCertified("sharing pattern differs from the equivariant subspace".into()));
            }
            (DMatrix::identity(c, c), "tied-subspace".to_string())
        }
    };
    let deviation = idempotency_deviation(&matrix);
    if deviation > IDEMPOTENCY_TOL {
        return Err(Error::NonIdempotent { deviation });
    }
    let probes = probe_inputs(family, resolver, audit_seed)?;
    let mut rng = rng_for(audit_seed, streams::PROBES, 1);
    let p = family.param_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let raw = Predictor::new(family, w.clone())?;
        let projected = Predictor::new(family, (&matrix * nalgebra::DVector::from_vec(w)).as_slice().to_vec())?;
        let averaged = average_function(&raw, kernel, resolver);
        let dev = sup_distance(&averaged, &projected, &probes)?;
        worst = worst.max(dev);
    }
    if worst > FUNCTION_TOL {
        return Err(Error::ClosureNotCertified(format!(
            "parameter map disagrees with function-space averaging by {worst:e}"
        )));
    }
    Ok(ParameterProjection { matrix, family_tag: family.tag(), provenance, witness_deviation: worst })
}

/// The audit probe set: every domain input for tabular families, otherwise
/// Gaussian draws (or random left-aligned signals for the shift group).
pub fn probe_inputs(family: &Family, resolver: &OrbitResolver, audit_seed: u64) -> Result<Vec<Vec<f64>>> {
    if let Family::Tabular(d) = family {
        return Ok(d.inputs());
    }
    random_probes(resolver.action(), DEFAULT_PROBES, audit_seed)
}

pub fn random_probes(action: &GroupAction, count: usize, audit_seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_for(audit_seed, streams::PROBES, 0);
    let dim = action.input_dim();
    Ok((0..count)
        .map(|_| match action.input_rep() {
            InputRep::Shift { window } => {
                let half = (window / 2).max(1);
                let offset = rng.random_range(0..=(window - half));
                let mut x = vec![0.0; *window];
                for v in &mut x[offset..offset + half] {
                    *v = rng.sample(StandardNormal);
                }
                x
            }
            _ => (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        })
        .collect())
}

/// `max_x |f(x) − h(x)|` over probes, evaluated in parallel.
pub fn sup_distance(f: &(impl Hypothesis + ?Sized), h: &(impl Hypothesis + ?Sized), probes: &[Vec<f64>]) -> Result<f64> {
    let devs: Vec<Result<f64>> = probes.par_iter().map(|x| Ok((f.eval(x)? - h.eval(x)?).abs())).collect();
    devs.into_iter().try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
}

/// Outcome of a pointwise check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub passed: bool,
    pub max_deviation: f64,
    /// Probe index and group element of the worst deviation.
    pub witness: Option<(usize, Element)>,
    /// Pairs skipped because `g·x` left the predictor's domain.
    pub skipped: usize,
}

/// Elements to test equivariance against: the whole group when finite,
/// otherwise shifts within the window.
fn check_elements(action: &GroupAction) -> Vec<Element> {
    match (action.group(), action.input_rep()) {
        (Group::Finite(_), _) => action.group().elements().unwrap_or_default(),
        (Group::Shift, InputRep::Shift { window }) => action.group().elements_within(*window as i64),
        (Group::Shift, _) => action.group().elements_within(4),
    }
}

/// `max |f(g·x) − g·f(x)|` over probes and group elements.
///
/// Pairs where `g·x` leaves the window or the predictor's domain are
/// skipped and counted.
pub fn check_equivariant(f: &(impl Hypothesis + ?Sized), action: &GroupAction, probes: &[Vec<f64>]) -> Result<CheckReport> {
    let elements = check_elements(action);
    let per_probe: Vec<Result<(f64, Option<Element>, usize)>> = probes
        .par_iter()
        .map(|x| {
            let fx = match f.eval(x) {
                Ok(v) => v,
                Err(Error::OutsideDomain) => return Ok((0.0, None, elements.len())),
                Err(e) => return Err(e),
            };
            let mut worst = (0.0f64, None, 0usize);
            for &g in &elements {
                let gx = match action.act_input(g, x) {
                    Ok(v) => v,
                    Err(Error::OutOfWindow { .. }) => {
                        worst.2 += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let fgx = match f.eval(&gx) {
                    Ok(v) => v,
                    Err(Error::OutsideDomain) => {
                        worst.2 += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let dev = (fgx - action.act_output(g, fx)).abs();
                if worst.1.is_none() || dev > worst.0 {
                    worst = (dev, Some(g), worst.2);
                }
            }
            Ok(worst)
        })
        .collect();
    let mut report = CheckReport { passed: true, max_deviation: 0.0, witness: None, skipped: 0 };
    for (i, r) in per_probe.into_iter().enumerate() {
        let (dev, g, skipped) = r?;
        report.skipped += skipped;
        if let Some(g) = g {
            if report.witness.is_none() || dev > report.max_deviation {
                report.max_deviation = dev;
                report.witness = Some((i, g));
            }
        }
    }
    report.passed = report.max_deviation <= FUNCTION_TOL;
    Ok(report)
}

/// `‖Q(Q(f)) − Q(f)‖_∞` over probes for random members of `family`.
pub fn check_idempotent(
    kernel: &GroupKernel,
    resolver: &OrbitResolver,
    family: &Family,
    predictors: usize,
    audit_seed: u64,
) -> Result<CheckReport> {
    let probes = probe_inputs(family, resolver, audit_seed)?;
    let mut rng = rng_for(audit_seed, streams::PROBES, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..predictors {
        let w: Vec<f64> = (0..family.param_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let f = Predictor::new(family, w)?;
        let once = average_function(&f, kernel, resolver);
        let twice = average_function(&once, kernel, resolver);
        worst = worst.max(sup_distance(&twice, &once, &probes)?);
    }
    Ok(CheckReport { passed: worst <= FUNCTION_TOL, max_deviation: worst, witness: None, skipped: 0 })
}

/// `‖Q(f) − f‖_∞` over probes.
pub fn fixed_point_deviation(
    f: &(impl Hypothesis + ?Sized),
    kernel: &GroupKernel,
    resolver: &OrbitResolver,
    probes: &[Vec<f64>],
) -> Result<f64> {
    sup_distance(&average_function(f, kernel, resolver), f, probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::OutputRep;

    fn swap_resolver() -> OrbitResolver {
        OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial))
    }

    fn skewed() -> GroupKernel {
        GroupKernel::global(vec![(Element(0), 0.7), (Element(1), 0.3)]).unwrap()
    }

    #[test]
    fn linear_swap_projection_matches_closed_form() {
        let resolver = swap_resolver();
        let family = Family::Linear { dim: 2 };
        let kernel = GroupKernel::uniform(resolver.action().group()).unwrap();
        let proj = build_parameter_projection(&family, &resolver, &kernel, 7).unwrap();
        assert_eq!(proj.matrix, DMatrix::from_element(2, 2, 0.5));
        let f = Predictor::new(&family, vec![1.0, 0.0]).unwrap();
        let q = average_function(&f, &kernel, &resolver);
        assert!((q.eval(&[3.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tabular_skewed_kernel_example() {
        let resolver = swap_resolver();
        let domain = TabularDomain::new(resolver.clone(), vec![vec![2.0, 1.0]], vec![Element(1)]).unwrap();
        let family = Family::Tabular(domain);
        let Family::Tabular(d) = &family else { unreachable!() };
        let mut w = vec![0.0; 2];
        w[d.locate(&[2.0, 1.0]).unwrap()] = 1.0;
        let f = Predictor::new(&family, w).unwrap();
        let kernel = skewed();
        let q = average_function(&f, &kernel, &resolver);
        assert!((q.eval(&[2.0, 1.0]).unwrap() - 0.7).abs() < 1e-15);
        assert!((q.eval(&[1.0, 2.0]).unwrap() - 0.7).abs() < 1e-15);
        let proj = build_parameter_projection(&family, &resolver, &kernel, 7).unwrap();
        assert!(idempotency_deviation(&proj.matrix) <= 1e-15);
    }

    #[test]
    fn non_uniform_linear_is_refused_with_witness() {
        let resolver = swap_resolver();
        let family = Family::Linear { dim: 2 };
        let kernel = skewed();
        assert!(matches!(
            build_parameter_projection(&family, &resolver, &kernel, 7),
            Err(Error::ClosureNotCertified(_))
        ));
        // The witness: Q(x₁) is not additive, so it is not a linear function.
        let f = Predictor::new(&family, vec![1.0, 0.0]).unwrap();
        let q = average_function(&f, &kernel, &resolver);
        let a = q.eval(&[1.0, 0.0]).unwrap();
        let b = q.eval(&[-1.0, 0.0]).unwrap();
        assert!((a - 0.7).abs() < 1e-15 && (b + 0.3).abs() < 1e-15);
        assert!((a + b).abs() > 0.1);
    }

    #[test]
    fn equivariance_checks() {
        let resolver = swap_resolver();
        let action = resolver.action();
        let family = Family::Linear { dim: 2 };
        let probes = random_probes(action, 64, 3).unwrap();
        let raw = Predictor::new(&family, vec![1.0, 0.0]).unwrap();
        let r = check_equivariant(&raw, action, &probes).unwrap();
        assert!(!r.passed && r.witness.is_some());
        let sym = Predictor::new(&family, vec![1.0, 1.0]).unwrap();
        assert!(check_equivariant(&sym, action, &probes).unwrap().passed);
        let kernel = skewed();
        let q = average_function(&raw, &kernel, &resolver);
        assert!(check_equivariant(&q, action, &probes).unwrap().passed);
        assert!(fixed_point_deviation(&sym, &kernel, &resolver, &probes).unwrap() <= 1e-12);
    }

    #[test]
    fn idempotency_checks() {
        let rot = OrbitResolver::new(GroupAction::cyclic_permutation(4, OutputRep::Trivial).unwrap());
        let kernel = GroupKernel::uniform(rot.action().group()).unwrap();
        let reps = random_probes(rot.action(), 6, 11).unwrap().iter().map(|x| rot.canonicalize(x).unwrap()).collect();
        let family = Family::Tabular(TabularDomain::for_kernel(rot.clone(), reps, &kernel).unwrap());
        assert!(check_idempotent(&kernel, &rot, &family, 5, 1).unwrap().passed);

        let shift = OrbitResolver::new(GroupAction::shift(8, OutputRep::Trivial).unwrap());
        let kernel = GroupKernel::global(vec![(Element(0), 0.5), (Element(1), 0.3), (Element(2), 0.2)]).unwrap();
        let reps = vec![vec![1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.3, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let family = Family::Tabular(TabularDomain::for_kernel(shift.clone(), reps, &kernel).unwrap());
        assert!(check_idempotent(&kernel, &shift, &family, 5, 1).unwrap().passed);

        let broken = GroupKernel::global_unnormalized(vec![(Element(0), 0.9), (Element(1), 0.6)]).unwrap();
        let report = check_idempotent(&broken, &shift, &family, 5, 1).unwrap();
        assert!(!report.passed && report.max_deviation > 1e-3);
    }

    #[test]
    fn tied_linear_certification() {
        let resolver = swap_resolver();
        let kernel = GroupKernel::uniform(resolver.action().group()).unwrap();
        let tied = Family::TiedLinear { pattern: vec![0, 0] };
        let proj = build_parameter_projection(&tied, &resolver, &kernel, 1).unwrap();
        assert_eq!(proj.matrix, DMatrix::identity(1, 1));
        let untied = Family::TiedLinear { pattern: vec![0, 1] };
        assert!(matches!(
            build_parameter_projection(&untied, &resolver, &kernel, 1),
            Err(Error::ClosureNotCertified(_))
        ));
    }
}
