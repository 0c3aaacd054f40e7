//! The property battery behind `axioms-check`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{emit, projection_kernel, scenario, Outcome, EXIT_FAILURE};
use crate::averaging::{
    average_function, build_parameter_projection, check_equivariant, check_idempotent, fixed_point_deviation,
    probe_inputs, Family, Predictor, TabularDomain, FUNCTION_TOL,
};
use crate::bounds::pipeline::build_family;
use crate::config::RunConfig;
use crate::data::{Atom, GenerativeSpec};
use crate::error::{Error, Result};
use crate::group::{verify_group_axioms, Element, FiniteGroupTable, Group, InputRep, DEFAULT_AXIOM_CAP};
use crate::io::{csv_text, fmt_f64, CsvTable};
use crate::kernel::GroupKernel;
use crate::measures::{kl_decompose_discrete, kl_decompose_gaussian, DiscreteMeasure, GaussianMeasure};
use crate::risk::{loss_distribution, risk_on_representatives, true_risk_enumerate, Loss};
use crate::rng::{rng_for, streams};

/// Tolerance for exact-arithmetic identities (risks, divergences).
pub const EXACT_TOL: f64 = 1e-12;
/// Random predictors per suite.
pub const SUITE_PREDICTORS: usize = 20;
/// Random predictors for the risk suites.
pub const RISK_PREDICTORS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub status: Status,
    pub checks: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn judged(suite: &'static str, checks: usize, max_deviation: f64, tolerance: f64, detail: String) -> Self {
        let status = if max_deviation <= tolerance { Status::Pass } else { Status::Fail };
        Self { suite, status, checks, max_deviation, tolerance, detail }
    }

    fn skipped(suite: &'static str, tolerance: f64, reason: String) -> Self {
        Self { suite, status: Status::Skip, checks: 0, max_deviation: 0.0, tolerance, detail: reason }
    }

    fn failed(suite: &'static str, checks: usize, tolerance: f64, detail: String) -> Self {
        Self { suite, status: Status::Fail, checks, max_deviation: f64::INFINITY, tolerance, detail }
    }
}

/// Test-only fault injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Audit a group table with one composition entry overwritten.
    pub corrupt_group: bool,
}

fn corrupted_table(order: usize) -> Result<Group> {
    let n = order.max(2);
    let mut compose: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| (i + j) % n).collect()).collect();
    compose[1][1] = (compose[1][1] + 1) % n;
    let inverse = (0..n).map(|j| (n - j) % n).collect();
    Ok(Group::Finite(FiniteGroupTable::from_raw("corrupted", compose, inverse, 0)?))
}

pub fn group_axioms_suite(spec: &GenerativeSpec, hooks: Hooks) -> Result<SuiteResult> {
    let group = if hooks.corrupt_group {
        corrupted_table(spec.action().group().order().unwrap_or(2))?
    } else {
        spec.action().group().clone()
    };
    let report = verify_group_axioms(&group, DEFAULT_AXIOM_CAP, spec.input_dim() as i64);
    let checks = report.checks.len();
    Ok(match report.first_failure() {
        None => SuiteResult::judged("group-axioms", checks, 0.0, 0.0, format!("group {}", report.group)),
        Some((axiom, [a, b, c])) => SuiteResult::failed(
            "group-axioms",
            checks,
            0.0,
            format!("{axiom} fails on group {} at ({a} {b} {c})", report.group),
        ),
    })
}

fn distinct_inputs(atoms: &[Atom]) -> Vec<Vec<f64>> {
    let mut xs: Vec<Vec<f64>> = atoms.iter().map(|a| a.x.clone()).collect();
    xs.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    xs.dedup();
    xs
}

fn test_elements(spec: &GenerativeSpec) -> Vec<Element> {
    let group = spec.action().group();
    match (group.elements(), spec.action().input_rep()) {
        (Some(e), _) => e,
        (None, InputRep::Shift { window }) => group.elements_within(*window as i64),
        (None, _) => group.elements_within(spec.input_dim() as i64),
    }
}

/// Only the identity fixes any input in the support of the data law.
pub fn free_action_suite(spec: &GenerativeSpec) -> Result<SuiteResult> {
    if !spec.is_enumerable() {
        return Ok(SuiteResult::skipped("free-action", 0.0, "input law is not enumerable".into()));
    }
    let action = spec.action();
    let identity = action.group().identity();
    let elements = test_elements(spec);
    let mut checks = 0;
    for x in distinct_inputs(&spec.enumerate()?) {
        checks += 1;
        if let Err(e) = spec.resolver().resolve(&x) {
            return Ok(SuiteResult::failed("free-action", checks, 0.0, e.to_string()));
        }
        for &g in elements.iter().filter(|&&g| g != identity) {
            let gx = match action.act_input(g, &x) {
                Ok(v) => v,
                Err(Error::OutOfWindow { .. }) => continue,
                Err(e) => return Err(e),
            };
            checks += 1;
            if gx.iter().zip(&x).all(|(a, b)| (a - b).abs() <= EXACT_TOL) {
                return Ok(SuiteResult::failed("free-action", checks, 0.0, format!("element {g} fixes an input")));
            }
        }
    }
    Ok(SuiteResult::judged("free-action", checks, 0.0, 0.0, String::new()))
}

/// `x = π_G(x) · π_φ(x)` with the canonical representative and group part
/// the data law was built from.
pub fn resolver_suite(spec: &GenerativeSpec) -> Result<SuiteResult> {
    const TOL: f64 = 1e-9;
    if !spec.is_enumerable() {
        return Ok(SuiteResult::skipped("resolver-round-trip", TOL, "input law is not enumerable".into()));
    }
    let resolver = spec.resolver();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for atom in spec.enumerate()? {
        checks += 1;
        let r = resolver.resolve(&atom.x)?;
        let back = spec.action().act_input(r.group_part, &r.representative)?;
        let rep = &spec.reps()[atom.rep_index];
        for (a, b) in back.iter().zip(&atom.x).chain(r.representative.iter().zip(rep)) {
            worst = worst.max((a - b).abs());
        }
        if r.group_part != atom.element {
            return Ok(SuiteResult::failed(
                "resolver-round-trip",
                checks,
                TOL,
                format!("group part {} resolved as {}", atom.element, r.group_part),
            ));
        }
        if !resolver.is_canonical(&r.representative)? {
            return Ok(SuiteResult::failed("resolver-round-trip", checks, TOL, "representative is not canonical".into()));
        }
    }
    Ok(SuiteResult::judged("resolver-round-trip", checks, worst, TOL, format!("rule {}", resolver.rule())))
}

fn random_params(family: &Family, rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..family.param_dim()).map(|_| rng.sample(StandardNormal)).collect()
}

/// Equivariance of `Q(f)`, `Q² = Q`, and `Q(f) = f` exactly for equivariant `f`.
pub fn operator_suites(
    spec: &GenerativeSpec,
    family: &Family,
    kernel: &GroupKernel,
    predictors: usize,
    seed: u64,
) -> Result<[SuiteResult; 3]> {
    let resolver = spec.resolver();
    let action = spec.action();
    let probes = probe_inputs(family, resolver, seed)?;
    let mut rng = rng_for(seed, streams::PROBES, 10);

    let mut eq_worst: f64 = 0.0;
    let mut skipped = 0;
    let mut fp_worst: f64 = 0.0;
    let mut mismatches = Vec::new();
    for i in 0..predictors {
        let f = Predictor::new(family, random_params(family, &mut rng))?;
        let q = average_function(&f, kernel, resolver);
        let report = check_equivariant(&q, action, &probes)?;
        eq_worst = eq_worst.max(report.max_deviation);
        skipped += report.skipped;

        let q_fixed = fixed_point_deviation(&q, kernel, resolver, &probes)?;
        fp_worst = fp_worst.max(q_fixed);
        let raw_equivariant = check_equivariant(&f, action, &probes)?.passed;
        let raw_fixed = fixed_point_deviation(&f, kernel, resolver, &probes)? <= FUNCTION_TOL;
        if raw_equivariant != raw_fixed {
            mismatches.push(i);
        }
    }
    let equivariance = SuiteResult::judged(
        "equivariance",
        predictors * probes.len(),
        eq_worst,
        FUNCTION_TOL,
        format!("{skipped} pairs left the domain"),
    );
    let idem = check_idempotent(kernel, resolver, family, predictors, seed)?;
    let idempotency = SuiteResult::judged("idempotency", predictors * probes.len(), idem.max_deviation, FUNCTION_TOL, String::new());
    let fixed_point = if mismatches.is_empty() {
        SuiteResult::judged(
            "fixed-point",
            2 * predictors,
            fp_worst,
            FUNCTION_TOL,
            "Q(f) = f exactly when f is equivariant".into(),
        )
    } else {
        SuiteResult::failed(
            "fixed-point",
            2 * predictors,
            FUNCTION_TOL,
            format!("equivariance and Q(f) = f disagree for predictors {mismatches:?}"),
        )
    };
    Ok([equivariance, idempotency, fixed_point])
}

/// Pushforward KL never exceeds the total: random discrete triples, plus
/// random diagonal Gaussian pairs through `matrix` when given.
pub fn kl_monotonicity_suite(matrix: Option<&DMatrix<f64>>, triples: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, streams::PROBES, 11);
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for _ in 0..triples {
        let m = rng.random_range(2..=8);
        let k = rng.random_range(1..=m);
        let alpha: Vec<usize> = (0..m).map(|s| if s < k { s } else { rng.random_range(0..k) }).collect();
        let nu: Vec<f64> = (0..m).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        if nu.iter().all(|&v| v == 0.0) {
            continue;
        }
        let d = kl_decompose_discrete(&DiscreteMeasure::from_masses(&nu)?, &DiscreteMeasure::from_masses(&mu)?, &alpha, k)?;
        worst = worst.max(d.pushforward_kl - d.total);
        checks += 1;
    }
    if let Some(a) = matrix {
        let p = a.nrows();
        for _ in 0..4 {
            let draw = |rng: &mut crate::rng::Rng| {
                let mean = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let stds: Vec<f64> = (0..p).map(|_| rng.random_range(0.2..2.0)).collect();
                GaussianMeasure::diagonal(mean, &stds)
            };
            let nu = draw(&mut rng)?;
            let mu = draw(&mut rng)?;
            let d = kl_decompose_gaussian(&nu, &mu, a)?;
            worst = worst.max(d.pushforward_kl - d.total);
            checks += 1;
        }
    }
    Ok(SuiteResult::judged("kl-monotonicity", checks, worst.max(0.0), EXACT_TOL, String::new()))
}

fn data_kernel_domain(spec: &GenerativeSpec) -> Result<Family> {
    Ok(Family::Tabular(TabularDomain::for_kernel(spec.resolver().clone(), spec.reps().to_vec(), spec.kernel())?))
}

/// Random tables with values in `[-1, 1]`, where every builtin convex loss
/// is convex.
fn random_tables(family: &Family, count: usize, seed: u64, index: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, streams::PROBES, index);
    (0..count).map(|_| (0..family.param_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

/// Averaging with the data kernel never increases the true risk of a
/// convex, invariant loss.
pub fn averaging_risk_suite(spec: &GenerativeSpec, loss: Loss, predictors: usize, seed: u64) -> Result<SuiteResult> {
    const NAME: &str = "averaging-risk";
    let flags = loss.flags();
    if !flags.convex_in_first || !flags.g_invariant {
        return Ok(SuiteResult::skipped(NAME, EXACT_TOL, format!("loss {loss} is not convex and invariant")));
    }
    if !spec.is_enumerable() {
        return Ok(SuiteResult::skipped(NAME, EXACT_TOL, "input law is not enumerable".into()));
    }
    let family = data_kernel_domain(spec)?;
    let mut worst = f64::NEG_INFINITY;
    for w in random_tables(&family, predictors, seed, 12) {
        let f = Predictor::new(&family, w)?;
        let q = average_function(&f, spec.kernel(), spec.resolver());
        let gap = true_risk_enumerate(&q, spec, loss)?.value - true_risk_enumerate(&f, spec, loss)?.value;
        worst = worst.max(gap);
    }
    Ok(SuiteResult::judged(NAME, predictors, worst.max(0.0), EXACT_TOL, "R(Q(f)) - R(f)".into()))
}

/// The law of the loss of an equivariant predictor is the same on the full
/// data law and on representatives.
pub fn loss_law_suite(spec: &GenerativeSpec, loss: Loss, predictors: usize, seed: u64) -> Result<SuiteResult> {
    const NAME: &str = "loss-law";
    if !spec.is_enumerable() {
        return Ok(SuiteResult::skipped(NAME, EXACT_TOL, "input law is not enumerable".into()));
    }
    let family = data_kernel_domain(spec)?;
    let full = spec.enumerate()?;
    let reps = spec.enumerate_representatives()?;
    let mut worst: f64 = 0.0;
    for w in random_tables(&family, predictors, seed, 13) {
        let f = Predictor::new(&family, w)?;
        let q = average_function(&f, spec.kernel(), spec.resolver());
        let a = loss_distribution(&q, &full, loss)?;
        let b = loss_distribution(&q, &reps, loss)?;
        if a.keys().ne(b.keys()) {
            return Ok(SuiteResult::failed(NAME, predictors, EXACT_TOL, "loss values differ".into()));
        }
        for (x, y) in a.values().zip(b.values()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(SuiteResult::judged(NAME, predictors, worst, EXACT_TOL, "largest mass difference per loss value".into()))
}

/// `R(f) = R_φ(f)` for equivariant predictors.
pub fn representative_risk_suite(spec: &GenerativeSpec, loss: Loss, predictors: usize, seed: u64) -> Result<SuiteResult> {
    const NAME: &str = "representative-risk";
    if !spec.is_enumerable() {
        return Ok(SuiteResult::skipped(NAME, EXACT_TOL, "input law is not enumerable".into()));
    }
    let family = data_kernel_domain(spec)?;
    let mut worst: f64 = 0.0;
    for w in random_tables(&family, predictors, seed, 14) {
        let f = Predictor::new(&family, w)?;
        let q = average_function(&f, spec.kernel(), spec.resolver());
        let gap = true_risk_enumerate(&q, spec, loss)?.value - risk_on_representatives(&q, spec, loss)?.value;
        worst = worst.max(gap.abs());
    }
    Ok(SuiteResult::judged(NAME, predictors, worst, EXACT_TOL, String::new()))
}

pub fn run_suites(cfg: &RunConfig, hooks: Hooks) -> Result<Vec<SuiteResult>> {
    let spec = scenario(cfg)?;
    let train = spec.sample_dataset(cfg.n_train, cfg.seed, streams::TRAIN)?;
    let kernel = projection_kernel(cfg, &spec, &train)?;
    let family = build_family(&spec, &cfg.family, &kernel)?;
    let seed = cfg.seed;

    let mut out = vec![group_axioms_suite(&spec, hooks)?, free_action_suite(&spec)?, resolver_suite(&spec)?];
    out.extend(operator_suites(&spec, &family, &kernel, SUITE_PREDICTORS, seed)?);
    let projection = build_parameter_projection(&family, spec.resolver(), &kernel, seed).ok();
    out.push(kl_monotonicity_suite(projection.as_ref().map(|p| &p.matrix), 200, seed)?);
    out.push(averaging_risk_suite(&spec, cfg.loss, RISK_PREDICTORS, seed)?);
    out.push(loss_law_suite(&spec, cfg.loss, RISK_PREDICTORS, seed)?);
    out.push(representative_risk_suite(&spec, cfg.loss, RISK_PREDICTORS, seed)?);
    Ok(out)
}

pub fn render(results: &[SuiteResult]) -> String {
    let mut table = CsvTable::new(&["suite", "status", "checks", "max_deviation", "tolerance", "detail"]);
    for r in results {
        table.push(vec![
            r.suite.to_string(),
            r.status.to_string(),
            r.checks.to_string(),
            fmt_f64(r.max_deviation),
            fmt_f64(r.tolerance),
            csv_text(&r.detail),
        ]);
    }
    table.render()
}

pub fn run(cfg: &RunConfig, hooks: Hooks) -> Result<Outcome> {
    let results = run_suites(cfg, hooks)?;
    let files = emit(cfg, &[("axioms.csv", render(&results))])?;
    match results.iter().find(|r| r.status == Status::Fail) {
        Some(r) => Ok(Outcome { code: EXIT_FAILURE, message: format!("suite {} failed: {}", r.suite, r.detail), files }),
        None => {
            let skipped = results.iter().filter(|r| r.status == Status::Skip).count();
            Ok(Outcome::ok(format!("{} suites passed, {skipped} skipped", results.len() - skipped), files))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_toy_battery_passes_and_gates_non_convex_losses() {
        let cfg = RunConfig { n_train: 200, ..RunConfig::default() };
        let results = run_suites(&cfg, Hooks::default()).unwrap();
        assert_eq!(results.len(), 10);
        for r in &results {
            assert_eq!(r.status, Status::Pass, "{r:?}");
        }
        let zero_one = RunConfig { loss: Loss::ZeroOne, ..cfg.clone() };
        let results = run_suites(&zero_one, Hooks::default()).unwrap();
        let gated = results.iter().find(|r| r.suite == "averaging-risk").unwrap();
        assert_eq!(gated.status, Status::Skip);
        assert!(results.iter().all(|r| r.status != Status::Fail));
    }

    #[test]
    fn corrupted_table_names_group_axioms() {
        let cfg = RunConfig { n_train: 200, ..RunConfig::default() };
        let results = run_suites(&cfg, Hooks { corrupt_group: true }).unwrap();
        let first = results.iter().find(|r| r.status == Status::Fail).unwrap();
        assert_eq!(first.suite, "group-axioms");
    }
}
