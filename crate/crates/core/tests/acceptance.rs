//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Reference values come from oracles written here, independently of the
//! library paths they check.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqpac::averaging::{average_function, Family, Hypothesis, Predictor, TabularDomain};
use eqpac::bounds::pipeline::{
    build_family, certify, generate_splits, validity_trial, Certification, FamilyChoice, ModelTag, PipelineConfig,
};
use eqpac::bounds::Variant;
use eqpac::config::RunConfig;
use eqpac::data::{builtin_scenario, GenerativeSpec, ScenarioOptions, SCENARIOS};
use eqpac::group::Element;
use eqpac::harness::axioms::{operator_suites, Status};
use eqpac::harness::demo::{decompose, DemoProjection};
use eqpac::harness::experiments::compare_models;
use eqpac::kernel::GroupKernel;
use eqpac::measures::{kl_decompose_discrete, kl_decompose_gaussian, DiscreteMeasure, GaussianMeasure};
use eqpac::risk::{risk_on_representatives, true_risk_enumerate, Loss};

struct Verdict {
    passed: bool,
    summary: String,
}

fn verdict(passed: bool, summary: impl Into<String>) -> Verdict {
    Verdict { passed, summary: summary.into() }
}

fn spec(name: &str) -> GenerativeSpec {
    builtin_scenario(name, ScenarioOptions::default()).unwrap()
}

// ---------------------------------------------------------------- oracles

fn gauss_kl(m1: &DVector<f64>, s1: &DMatrix<f64>, m2: &DVector<f64>, s2: &DMatrix<f64>) -> f64 {
    let d = m1.len() as f64;
    let inv2 = s2.clone().try_inverse().unwrap();
    let diff = m2 - m1;
    0.5 * ((&inv2 * s1).trace() + (diff.transpose() * &inv2 * &diff)[(0, 0)] - d + s2.determinant().ln()
        - s1.determinant().ln())
}

/// `(total, pushforward, residual)` for full-rank Gaussians and the
/// orthogonal projector onto span(U), by the chain rule in the rotated
/// coordinates `(Uᵀw, Vᵀw)`.
fn gauss_chain_rule(
    mn: &DVector<f64>,
    sn: &DMatrix<f64>,
    mm: &DVector<f64>,
    sm: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> (f64, f64, f64) {
    let total = gauss_kl(mn, sn, mm, sm);
    let marg = |m: &DVector<f64>, s: &DMatrix<f64>| (u.transpose() * m, u.transpose() * s * u);
    let (an, pn) = marg(mn, sn);
    let (am, pm) = marg(mm, sm);
    let push = gauss_kl(&an, &pn, &am, &pm);
    if v.ncols() == 0 {
        return (total, push, 0.0);
    }
    let conditional = |m: &DVector<f64>, s: &DMatrix<f64>| {
        let s11 = u.transpose() * s * u;
        let s21 = v.transpose() * s * u;
        let s22 = v.transpose() * s * v;
        let b = &s21 * s11.clone().try_inverse().unwrap();
        let cov = &s22 - &b * s21.transpose();
        (u.transpose() * m, v.transpose() * m, b, cov, s11)
    };
    let (m1n, m2n, bn, cn, s11n) = conditional(mn, sn);
    let (m1m, m2m, bm, cm, _) = conditional(mm, sm);
    let k = v.ncols() as f64;
    let inv = cm.clone().try_inverse().unwrap();
    let c = &m2n - &m2m - &bm * (&m1n - &m1m);
    let dd = &bn - &bm;
    let residual = 0.5
        * ((&inv * &cn).trace() - k + cm.determinant().ln() - cn.determinant().ln()
            + (c.transpose() * &inv * &c)[(0, 0)]
            + (dd.transpose() * &inv * &dd * &s11n).trace());
    (total, push, residual)
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)).qr().q()
}

fn random_discrete_triple(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<usize>, usize) {
    let m = rng.random_range(2..=9);
    let k = rng.random_range(1..=m);
    let alpha: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut nu: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() }).collect();
    nu[0] += 0.1;
    let mu: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
    let (sn, sm): (f64, f64) = (nu.iter().sum(), mu.iter().sum());
    (nu.iter().map(|v| v / sn).collect(), mu.iter().map(|v| v / sm).collect(), alpha, k)
}

fn discrete_oracle(nu: &[f64], mu: &[f64], alpha: &[usize], k: usize) -> (f64, f64, f64) {
    let mut pn = vec![0.0; k];
    let mut pm = vec![0.0; k];
    for s in 0..nu.len() {
        pn[alpha[s]] += nu[s];
        pm[alpha[s]] += mu[s];
    }
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    let residual = (0..nu.len())
        .filter(|&s| nu[s] > 0.0)
        .map(|s| nu[s] * ((nu[s] / mu[s]) / (pn[alpha[s]] / pm[alpha[s]])).ln())
        .sum();
    (kl(nu, mu), kl(&pn, &pm), residual)
}

/// Tabular family over the scenario's own kernel support.
fn data_family(spec: &GenerativeSpec) -> Family {
    Family::Tabular(TabularDomain::for_kernel(spec.resolver().clone(), spec.reps().to_vec(), spec.kernel()).unwrap())
}

fn domain(family: &Family) -> &TabularDomain {
    match family {
        Family::Tabular(d) => d,
        _ => unreachable!(),
    }
}

/// `Q(f)` on representative `i` for a table `w`, straight from the kernel
/// weights. Builtin scenarios have invariant outputs, so no characters.
fn oracle_average(spec: &GenerativeSpec, d: &TabularDomain, w: &[f64], i: usize) -> f64 {
    let rep = &spec.reps()[i];
    spec.kernel()
        .distribution(rep)
        .unwrap()
        .iter()
        .map(|&(g, p)| p * w[d.index(i, d.slot_of(g).unwrap())])
        .sum()
}

// ------------------------------------------------------------- criteria

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let d = decompose(&DemoProjection::Averaging).unwrap();
    let elapsed = t.elapsed();
    let ok = (d.total - 0.5).abs() <= 1e-12
        && (d.pushforward_kl - 0.25).abs() <= 1e-12
        && (d.residual - 0.25).abs() <= 1e-12
        && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "two-dimensional demo: total {:.17}, pushforward {:.17}, residual {:.17} (tol 1e-12), {:?} (< 1 s)",
            d.total, d.pushforward_kl, d.residual, elapsed
        ),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut identity_gap: f64 = 0.0;
    let mut oracle_gap: f64 = 0.0;
    let mut min_residual = f64::INFINITY;
    for _ in 0..200 {
        let d = rng.random_range(2..=6);
        let k = rng.random_range(1..=d);
        let q = random_orthonormal(&mut rng, d);
        let u = q.columns(0, k).into_owned();
        let v = q.columns(k, d - k).into_owned();
        let p = &u * u.transpose();
        let mn = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let mm = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let sn = random_spd(&mut rng, d);
        let sm = random_spd(&mut rng, d);
        let nu = GaussianMeasure::new(mn.clone(), sn.clone()).unwrap();
        let mu = GaussianMeasure::new(mm.clone(), sm.clone()).unwrap();
        let lib = kl_decompose_gaussian(&nu, &mu, &p).unwrap();
        let (total, push, residual) = gauss_chain_rule(&mn, &sn, &mm, &sm, &u, &v);
        let scale = total.max(1.0);
        identity_gap = identity_gap.max((lib.total - lib.pushforward_kl - lib.residual).abs());
        oracle_gap = oracle_gap.max(
            [(lib.total - total), (lib.pushforward_kl - push), (lib.residual - residual)]
                .iter()
                .map(|e| e.abs() / scale)
                .fold(0.0, f64::max),
        );
        min_residual = min_residual.min(lib.residual);
    }
    for _ in 0..200 {
        let (nu, mu, alpha, k) = random_discrete_triple(&mut rng);
        let lib = kl_decompose_discrete(&DiscreteMeasure::new(nu.clone()).unwrap(), &DiscreteMeasure::new(mu.clone()).unwrap(), &alpha, k)
            .unwrap();
        let (total, push, residual) = discrete_oracle(&nu, &mu, &alpha, k);
        identity_gap = identity_gap.max((lib.total - lib.pushforward_kl - lib.residual).abs());
        oracle_gap = oracle_gap
            .max((lib.total - total).abs())
            .max((lib.pushforward_kl - push).abs())
            .max((lib.residual - residual).abs());
        min_residual = min_residual.min(lib.residual);
    }
    let elapsed = t.elapsed();
    let ok = identity_gap <= 1e-9 && oracle_gap <= 1e-9 && min_residual >= -1e-12 && elapsed < Duration::from_secs(10);
    verdict(
        ok,
        format!(
            "200 Gaussian + 200 discrete: max |total - push - residual| {identity_gap:.2e}, max gap to chain-rule oracle {oracle_gap:.2e} (tol 1e-9), min residual {min_residual:.2e} (>= -1e-12), {elapsed:?} (< 10 s)"
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let (nu, mu, alpha, k) = random_discrete_triple(&mut rng);
        let lib = kl_decompose_discrete(&DiscreteMeasure::new(nu).unwrap(), &DiscreteMeasure::new(mu).unwrap(), &alpha, k).unwrap();
        worst = worst.max(lib.pushforward_kl - lib.total);
    }
    verdict(worst <= 1e-12, format!("200 discrete triples: max (pushforward - total) {worst:.2e} (<= 1e-12)"))
}

fn skewed(elements: &[Element]) -> GroupKernel {
    let raw: Vec<f64> = (0..elements.len()).map(|i| 1.0 + i as f64).collect();
    let total: f64 = raw.iter().sum();
    GroupKernel::global(elements.iter().zip(&raw).map(|(&g, &r)| (g, r / total)).collect()).unwrap()
}

fn criterion_4() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in SCENARIOS {
        let s = spec(name);
        let support = match s.action().group().elements() {
            Some(all) => all,
            None => s.kernel().support(),
        };
        let uniform = GroupKernel::uniform_over(&support).unwrap();
        for (label, kernel) in [("uniform", uniform), ("non-uniform", skewed(&support))] {
            let family = build_family(&s, &FamilyChoice::ScenarioDefault, &kernel).unwrap();
            let suites = operator_suites(&s, &family, &kernel, 20, 4).unwrap();
            let worst = suites.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
            let pass = suites.iter().all(|r| r.status == Status::Pass);
            ok &= pass;
            lines.push(format!("{name}/{label} {}{worst:.1e}", if pass { "" } else { "FAILED " }));
        }
    }
    verdict(ok, format!("equivariance, idempotency, fixed point (tol 1e-9): {}", lines.join("; ")))
}

fn criterion_5() -> Verdict {
    let loss = Loss::SquaredClipped;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_crosscheck: f64 = 0.0;
    for name in SCENARIOS {
        let s = spec(name);
        let family = data_family(&s);
        let d = domain(&family);
        let atoms = s.enumerate().unwrap();
        for _ in 0..100 {
            let w: Vec<f64> = (0..family.param_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let averaged: Vec<f64> = (0..s.reps().len()).map(|i| oracle_average(&s, d, &w, i)).collect();
            let mut r_f = 0.0;
            let mut r_q = 0.0;
            for a in &atoms {
                r_f += a.weight * loss.value(w[d.index(a.rep_index, d.slot_of(a.element).unwrap())], a.y);
                r_q += a.weight * loss.value(averaged[a.rep_index], a.y);
            }
            worst_gap = worst_gap.max(r_q - r_f);
            let f = Predictor::new(&family, w.clone()).unwrap();
            let q = average_function(&f, s.kernel(), s.resolver());
            worst_crosscheck = worst_crosscheck
                .max((true_risk_enumerate(&q, &s, loss).unwrap().value - r_q).abs())
                .max((true_risk_enumerate(&f, &s, loss).unwrap().value - r_f).abs());
            for a in atoms.iter().step_by(7) {
                worst_crosscheck = worst_crosscheck.max((q.eval(&a.x).unwrap() - averaged[a.rep_index]).abs());
            }
        }
    }
    verdict(
        worst_gap <= 1e-12 && worst_crosscheck <= 1e-12,
        format!(
            "100 tables x 3 scenarios, {loss}: max R(Q f) - R(f) {worst_gap:.2e} (<= 1e-12), library vs oracle {worst_crosscheck:.2e}"
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut risk_gap: f64 = 0.0;
    let mut mass_gap: f64 = 0.0;
    let mut keys_match = true;
    for name in SCENARIOS {
        let s = spec(name);
        let family = data_family(&s);
        let d = domain(&family);
        let full = s.enumerate().unwrap();
        let reps = s.enumerate_representatives().unwrap();
        for loss in [Loss::SquaredClipped, Loss::ZeroOne, Loss::LogisticNormalized] {
            for _ in 0..100 {
                let values: Vec<f64> = (0..s.reps().len()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let w: Vec<f64> = (0..family.param_dim()).map(|j| values[j / d.elements().len()]).collect();
                let f = Predictor::new(&family, w).unwrap();
                let law = |atoms: &[eqpac::data::Atom]| {
                    let mut m: BTreeMap<u64, f64> = BTreeMap::new();
                    for a in atoms {
                        *m.entry(loss.value(values[a.rep_index], a.y).to_bits()).or_default() += a.weight;
                    }
                    m
                };
                let (a, b) = (law(&full), law(&reps));
                keys_match &= a.keys().eq(b.keys());
                for (x, y) in a.values().zip(b.values()) {
                    mass_gap = mass_gap.max((x - y).abs());
                }
                let r = true_risk_enumerate(&f, &s, loss).unwrap().value;
                let r_phi = risk_on_representatives(&f, &s, loss).unwrap().value;
                let oracle: f64 = reps.iter().map(|a| a.weight * loss.value(values[a.rep_index], a.y)).sum();
                risk_gap = risk_gap.max((r - r_phi).abs()).max((r_phi - oracle).abs());
            }
        }
    }
    verdict(
        risk_gap <= 1e-12 && keys_match && mass_gap <= 1e-12,
        format!(
            "equivariant tables x 3 scenarios x 3 losses: max |R - R_rep| {risk_gap:.2e} (<= 1e-12), loss values identical: {keys_match}, max mass difference {mass_gap:.2e}"
        ),
    )
}

fn ordering_violations(cert: &Certification) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for model in [ModelTag::Baseline, ModelTag::Equivariant] {
        let (Some(plain), Some(improved), Some(rep)) = (
            cert.report(model, Variant::McAllester),
            cert.report(model, Variant::Improved),
            cert.report(model, Variant::Representative),
        ) else {
            continue;
        };
        checked += 1;
        if improved.rhs > plain.rhs + 1e-12 {
            bad.push(format!("{model}: improved rhs {} > mcallester rhs {}", improved.rhs, plain.rhs));
        }
        if improved.rhs > improved.unprojected_rhs.unwrap() + 1e-12 {
            bad.push(format!("{model}: improved rhs exceeds its unprojected rhs"));
        }
        if improved.complexity_term > plain.complexity_term + 1e-12 {
            bad.push(format!("{model}: improved complexity exceeds mcallester complexity"));
        }
        if rep.complexity_term != improved.complexity_term {
            bad.push(format!("{model}: representative and improved complexity terms differ"));
        }
    }
    (checked, bad)
}

fn criterion_7(certs: &[Certification]) -> Verdict {
    let mut checked = 0;
    let mut bad = Vec::new();
    for c in certs {
        let (n, b) = ordering_violations(c);
        checked += n;
        bad.extend(b);
    }
    let detail = if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) };
    verdict(
        bad.is_empty() && checked > 0,
        format!("{checked} certified (Q, P, n, delta): improved <= mcallester, equal representative complexity{detail}"),
    )
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let s = spec("swap-toy");
    let report = validity_trial(&s, s.kernel(), &PipelineConfig::default(), 500, 8).unwrap();
    let elapsed = t.elapsed();
    let limit = 0.05 + 2.0 * (0.05f64 * 0.95 / 500.0).sqrt();
    let cells: Vec<String> = report.cells.iter().map(|c| format!("{}/{} {}/{}", c.model, c.variant, c.violations, c.trials)).collect();
    let ok = report.cells.len() == 6
        && report.cells.iter().all(|c| c.trials == 500 && c.frequency <= limit)
        && elapsed < Duration::from_secs(300);
    verdict(ok, format!("500 swap-toy trials, violations per cell (<= {limit:.4}): {}, {elapsed:?} (< 5 min)", cells.join(", ")))
}

struct Fig1 {
    scenario: &'static str,
    bound_wins: usize,
    error_wins: usize,
    certs: Vec<Certification>,
}

fn run_fig1(name: &'static str) -> Fig1 {
    let s = spec(name);
    let mut out = Fig1 { scenario: name, bound_wins: 0, error_wins: 0, certs: Vec::new() };
    for seed in 0..10 {
        let cfg = RunConfig { scenario: name.into(), seed, ..RunConfig::default() };
        let splits = generate_splits(&s, &cfg.pipeline(), seed).unwrap();
        let cmp = compare_models(&s, &splits, s.kernel(), &cfg).unwrap();
        let base = cmp.model(ModelTag::Baseline).unwrap();
        let eq = cmp.model(ModelTag::Equivariant).unwrap();
        if eq.rhs.unwrap() < base.rhs.unwrap() {
            out.bound_wins += 1;
        }
        if eq.mean_test_error <= base.mean_test_error {
            out.error_wins += 1;
        }
        out.certs.push(cmp.certification);
    }
    out
}

fn criterion_9(runs: &[Fig1]) -> Verdict {
    let ok = runs.iter().all(|r| r.bound_wins >= 9 && r.error_wins >= 8);
    let parts: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: smaller rhs {}/10 (>= 9), test error <= baseline {}/10 (>= 8)", r.scenario, r.bound_wins, r.error_wins))
        .collect();
    verdict(ok, parts.join("; "))
}

fn run_cli(dir: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_eqpac")).current_dir(dir).args(args).output().unwrap().status.code().unwrap()
}

fn collect(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir.join("out")).unwrap() {
        let entry = entry.unwrap();
        files.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path()).unwrap());
    }
    files
}

fn criterion_10() -> Verdict {
    let config = "scenario.name = restricted-rotation\nscenario.n_train = 800\nscenario.n_val = 300\nscenario.n_prior = 300\nscenario.n_representative = 800\nopt.steps = 400\nsweep.n = 100,200\nsweep.mixing = 0,1\n";
    let mut runs = Vec::new();
    let mut codes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.cfg"), config).unwrap();
        for cmd in ["kl-demo", "axioms-check", "gen-data", "certify", "compare", "sweep"] {
            codes.push(run_cli(dir.path(), &["--config", "run.cfg", "--seed", "11", "--out", "out", cmd]));
            let files = collect(dir.path());
            runs.push((cmd, files));
        }
    }
    let (first, second) = runs.split_at(runs.len() / 2);
    let identical = first.iter().zip(second).all(|(a, b)| a.1 == b.1);
    let files = first.last().map_or(0, |r| r.1.len());
    let ok = identical && codes.iter().all(|&c| c == 0) && files >= 12;
    verdict(ok, format!("six commands run twice with seed 11: {files} output files, byte-identical: {identical}, exit codes {codes:?}"))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, Verdict)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3()), (4, criterion_4())];
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    let fig1: Vec<Fig1> = ["restricted-rotation", "shifted-signals"].into_iter().map(run_fig1).collect();
    let mut certs: Vec<Certification> = fig1.iter().flat_map(|r| r.certs.iter().cloned()).collect();
    let toy = spec("swap-toy");
    for seed in 0..5 {
        let cfg = PipelineConfig::default();
        let splits = generate_splits(&toy, &cfg, seed).unwrap();
        certs.push(certify(&toy, &splits, toy.kernel(), &cfg, seed).unwrap());
    }
    results.push((7, criterion_7(&certs)));
    results.push((8, criterion_8()));
    results.push((9, criterion_9(&fig1)));
    results.push((10, criterion_10()));

    println!();
    for (n, v) in &results {
        println!("{} criterion {n}: {}", if v.passed { "PASS" } else { "FAIL" }, v.summary);
    }
    let failed = results.iter().filter(|(_, v)| !v.passed).count();
    println!("acceptance: {} passed, {failed} failed in {:?}", results.len() - failed, started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
