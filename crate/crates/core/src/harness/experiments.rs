//! `gen-data`, `certify` and `compare`.

use rand_distr::{Distribution, StandardNormal};

use super::{emit, load_splits, projection_kernel, scenario, Outcome, EXIT_FAILURE, SPLIT_FILES};
use crate::bounds::pipeline::{certify, exact_true_risk, generate_splits, Certification, ModelTag, Splits};
use crate::bounds::{BoundReport, Variant};
use crate::config::RunConfig;
use crate::data::GenerativeSpec;
use crate::error::Result;
use crate::io::{csv_text, fmt_f64, CsvTable};
use crate::kernel::GroupKernel;
use crate::risk::{posterior_expected_risk, Loss, WeightedRows};
use crate::rng::{rng_for, streams};

const MODELS: [ModelTag; 2] = [ModelTag::Baseline, ModelTag::Equivariant];

pub fn gen_data(cfg: &RunConfig) -> Result<Outcome> {
    let spec = scenario(cfg)?;
    let splits = generate_splits(&spec, &cfg.pipeline(), cfg.seed)?;
    splits.representative.check_canonical(spec.resolver())?;
    let mut manifest = CsvTable::new(&["split", "file", "rows", "seed", "stream"]);
    let parts = [
        ("train", &splits.train, streams::TRAIN),
        ("val", &splits.val, streams::VAL),
        ("prior", &splits.prior, streams::PRIOR),
        ("representative", &splits.representative, streams::REPRESENTATIVE),
    ];
    let mut outputs = Vec::new();
    for ((name, data, stream), file) in parts.into_iter().zip(SPLIT_FILES) {
        manifest.push(vec![name.into(), file.into(), data.len().to_string(), cfg.seed.to_string(), stream.to_string()]);
        outputs.push((file, data.to_csv()));
    }
    outputs.push(("datasets.csv", manifest.render()));
    let files = emit(cfg, &outputs)?;
    let sizes: Vec<String> = parts.iter().map(|(n, d, _)| format!("{n} {}", d.len())).collect();
    Ok(Outcome::ok(format!("{}: {}", spec.name, sizes.join(", ")), files))
}

struct Loaded {
    spec: GenerativeSpec,
    splits: Splits,
    kernel: GroupKernel,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let spec = scenario(cfg)?;
    let splits = load_splits(cfg.data_dir(), &spec)?;
    let kernel = projection_kernel(cfg, &spec, &splits.train)?;
    Ok(Loaded { spec, splits, kernel })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn report_cells(r: &BoundReport) -> Vec<String> {
    vec![
        fmt_f64(r.rhs),
        fmt_f64(r.empirical_term),
        fmt_f64(r.complexity_term),
        fmt_f64(r.kl),
        r.n.to_string(),
        fmt_f64(r.delta),
        r.n_models.to_string(),
        r.seed.to_string(),
        fmt_f64(r.std_error),
        fmt_f64(r.conservative_rhs),
        r.kl_provenance.to_string(),
        r.sample_provenance.to_string(),
        opt_f64(r.unprojected_rhs),
        opt_f64(r.decomposition.as_ref().map(|d| d.pushforward_kl)),
        opt_f64(r.decomposition.as_ref().map(|d| d.residual)),
    ]
}

pub const CERTIFICATE_COLUMNS: [&str; 19] = [
    "model_tag",
    "variant",
    "status",
    "rhs",
    "empirical_term",
    "complexity_term",
    "kl",
    "n",
    "delta",
    "n_models",
    "seed",
    "std_error",
    "conservative_rhs",
    "kl_provenance",
    "sample_provenance",
    "unprojected_rhs",
    "kl_pushforward",
    "kl_residual",
    "detail",
];

pub fn certificates_csv(cert: &Certification) -> String {
    let mut table = CsvTable::new(&CERTIFICATE_COLUMNS);
    for row in &cert.rows {
        let mut cells = vec![row.model.to_string(), row.variant.to_string()];
        match &row.outcome {
            Ok(r) => {
                cells.push("certified".into());
                cells.extend(report_cells(r));
                cells.push(String::new());
            }
            Err(reason) => {
                cells.push("skipped".into());
                cells.extend(std::iter::repeat_n(String::new(), CERTIFICATE_COLUMNS.len() - 4));
                cells.push(csv_text(reason));
            }
        }
        table.push(cells);
    }
    table.render()
}

/// Internal consistency of a certification: `rhs` re-derives from its
/// components, and projecting never loosens the bound.
pub fn certificate_violations(cert: &Certification) -> Vec<String> {
    let mut out = Vec::new();
    for row in &cert.rows {
        let Ok(r) = &row.outcome else { continue };
        let tag = format!("{}/{}", row.model, row.variant);
        if (r.rederived_rhs() - r.rhs).abs() > 1e-12 {
            out.push(format!("{tag}: rhs does not equal its components"));
        }
        if let Some(unprojected) = r.unprojected_rhs {
            if r.rhs > unprojected + 1e-12 {
                out.push(format!("{tag}: projected rhs exceeds the unprojected rhs"));
            }
        }
    }
    for model in MODELS {
        if let (Some(i), Some(r)) = (cert.report(model, Variant::Improved), cert.report(model, Variant::Representative)) {
            if i.complexity_term != r.complexity_term {
                out.push(format!("{model}: representative and improved complexity terms differ"));
            }
        }
    }
    out
}

/// Posterior-expected risks of each trained model, through its effective map.
pub fn risks_csv(spec: &GenerativeSpec, splits: &Splits, cert: &Certification, loss: Loss, seed: u64) -> Result<String> {
    let mut table = CsvTable::new(&["model_tag", "split", "loss", "method", "value", "std_error", "n", "seed"]);
    for model in MODELS {
        let Some(post) = cert.posterior(model) else { continue };
        let matrix = cert.effective_matrix(model);
        for (name, data) in [("train", &splits.train), ("val", &splits.val)] {
            if data.is_empty() {
                continue;
            }
            let rows = WeightedRows::from_dataset(&cert.family, data)?;
            let rows = matrix.map_or(rows.clone(), |a| rows.pull_back(a));
            let est = posterior_expected_risk(post, &rows, loss, cert_models(cert), seed)?;
            table.push(vec![
                model.to_string(),
                name.into(),
                loss.to_string(),
                est.method.to_string(),
                fmt_f64(est.value),
                fmt_f64(est.std_error),
                data.len().to_string(),
                est.seed.to_string(),
            ]);
        }
        if spec.is_enumerable() && crate::risk::has_closed_form(loss) {
            let truth = exact_true_risk(spec, &cert.family, post, matrix, loss)?;
            let row = [model.to_string(), "true".into(), loss.to_string(), "exact".into(), fmt_f64(truth), fmt_f64(0.0)];
            table.push(row.into_iter().chain([String::new(), seed.to_string()]).collect());
        }
    }
    Ok(table.render())
}

fn cert_models(cert: &Certification) -> usize {
    cert.rows.iter().find_map(|r| r.outcome.as_ref().ok().map(|r| r.n_models)).unwrap_or(crate::bounds::DEFAULT_N_MODELS)
}

pub fn certify_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let Loaded { spec, splits, kernel } = load(cfg)?;
    let cert = certify(&spec, &splits, &kernel, &cfg.pipeline(), cfg.seed)?;
    let risks = risks_csv(&spec, &splits, &cert, cfg.bound_loss, cfg.seed)?;
    let files = emit(cfg, &[("certificates.csv", certificates_csv(&cert)), ("risks.csv", risks)])?;
    let violations = certificate_violations(&cert);
    if !violations.is_empty() {
        return Ok(Outcome { code: EXIT_FAILURE, message: violations.join("; "), files });
    }
    let summary: Vec<String> = cert
        .rows
        .iter()
        .map(|r| match &r.outcome {
            Ok(b) => format!("{}/{} {:.4}", r.model, r.variant, b.rhs),
            Err(_) => format!("{}/{} skipped", r.model, r.variant),
        })
        .collect();
    Ok(Outcome::ok(summary.join(", "), files))
}

/// Bound variant drawn next to each model's histogram.
pub fn headline_variant(model: ModelTag) -> Variant {
    match model {
        ModelTag::Baseline => Variant::McAllester,
        ModelTag::Equivariant => Variant::Representative,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSummary {
    pub model: ModelTag,
    pub test_errors: Vec<f64>,
    pub mean_test_error: f64,
    pub variant: Variant,
    pub rhs: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub certification: Certification,
    pub models: Vec<ModelSummary>,
}

impl Comparison {
    pub fn model(&self, tag: ModelTag) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == tag)
    }

    pub fn histogram_csv(&self) -> String {
        let mut table = CsvTable::new(&["model_tag", "sample_index", "test_error"]);
        for m in &self.models {
            for (i, e) in m.test_errors.iter().enumerate() {
                table.push(vec![m.model.to_string(), i.to_string(), fmt_f64(*e)]);
            }
        }
        table.render()
    }

    pub fn summary_csv(&self) -> String {
        let mut table = CsvTable::new(&["model_tag", "n_models", "mean_test_error", "bound_variant", "bound_rhs"]);
        for m in &self.models {
            table.push(vec![
                m.model.to_string(),
                m.test_errors.len().to_string(),
                fmt_f64(m.mean_test_error),
                m.variant.to_string(),
                opt_f64(m.rhs),
            ]);
        }
        table.render()
    }
}

/// Trains and certifies both models, then evaluates the validation
/// zero-one error of `n_models` posterior draws per model.
pub fn compare_models(
    spec: &GenerativeSpec,
    splits: &Splits,
    kernel: &GroupKernel,
    cfg: &RunConfig,
) -> Result<Comparison> {
    let cert = certify(spec, splits, kernel, &cfg.pipeline(), cfg.seed)?;
    let val = WeightedRows::from_dataset(&cert.family, &splits.val)?;
    let mut models = Vec::new();
    for (k, model) in MODELS.into_iter().enumerate() {
        let Some(post) = cert.posterior(model) else { continue };
        let rows = cert.effective_matrix(model).map_or(val.clone(), |a| val.pull_back(a));
        let factor = post.sampling_factor();
        let mut rng = rng_for(cfg.seed, streams::HISTOGRAM, k as u64);
        let mut test_errors = Vec::with_capacity(cfg.n_models);
        for _ in 0..cfg.n_models {
            let z = nalgebra::DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(&mut rng));
            let w = post.mean() + &factor * z;
            test_errors.push(rows.risk(w.as_slice(), Loss::ZeroOne));
        }
        let mean_test_error = test_errors.iter().sum::<f64>() / test_errors.len().max(1) as f64;
        let variant = headline_variant(model);
        let rhs = cert.report(model, variant).map(|r| r.rhs);
        models.push(ModelSummary { model, test_errors, mean_test_error, variant, rhs });
    }
    Ok(Comparison { certification: cert, models })
}

pub fn compare_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let Loaded { spec, splits, kernel } = load(cfg)?;
    if splits.val.is_empty() {
        return Err(crate::error::Error::EmptySample);
    }
    let cmp = compare_models(&spec, &splits, &kernel, cfg)?;
    let files = emit(cfg, &[("histogram.csv", cmp.histogram_csv()), ("summary.csv", cmp.summary_csv())])?;
    let parts: Vec<String> = cmp
        .models
        .iter()
        .map(|m| format!("{}: mean test error {:.4}, {} rhs {}", m.model, m.mean_test_error, m.variant, opt_f64(m.rhs)))
        .collect();
    Ok(Outcome::ok(parts.join("; "), files))
}
