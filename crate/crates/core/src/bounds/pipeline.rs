//! The end-to-end certification pipeline (splits, prior, two posteriors,
//! three bound variants each) and repeated trials of it.

use std::fmt;

use rayon::prelude::*;

use super::optimize::{optimize_posterior, Objective, OptimizerConfig, Trained};
use super::{
    build_prior, coefficient_factor, improved_bound, mcallester_bound, representative_bound, BoundReport,
    BoundSettings, KlTerm, PriorReport, Variant, DEFAULT_DELTA, DEFAULT_N_MODELS, DEFAULT_SIGMA,
};
use crate::averaging::{build_parameter_projection, Family, ParameterProjection, TabularDomain};
use crate::data::{Dataset, GenerativeSpec};
use crate::error::{Error, Result};
use crate::kernel::GroupKernel;
use crate::measures::GaussianMeasure;
use crate::risk::{posterior_risk_exact, Loss, WeightedRows};
use crate::rng::{derive_seed, streams};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FamilyChoice {
    /// Linear for `swap-toy`, tabular otherwise.
    ScenarioDefault,
    Tabular,
    Linear,
    TiedLinear(Vec<usize>),
}

impl FamilyChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(FamilyChoice::ScenarioDefault),
            "tabular" => Ok(FamilyChoice::Tabular),
            "linear" => Ok(FamilyChoice::Linear),
            other => match other.strip_prefix("tied-linear:") {
                Some(p) => {
                    let pattern: std::result::Result<Vec<usize>, _> = p.split('/').map(str::parse).collect();
                    pattern
                        .map(FamilyChoice::TiedLinear)
                        .map_err(|_| Error::InvalidArgument(format!("bad sharing pattern `{p}`")))
                }
                None => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
            },
        }
    }
}

impl fmt::Display for FamilyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyChoice::ScenarioDefault => f.write_str("default"),
            FamilyChoice::Tabular => f.write_str("tabular"),
            FamilyChoice::Linear => f.write_str("linear"),
            FamilyChoice::TiedLinear(p) => {
                let parts: Vec<String> = p.iter().map(usize::to_string).collect();
                write!(f, "tied-linear:{}", parts.join("/"))
            }
        }
    }
}

/// The tabular domain reaches every kernel support element, so the
/// family covers the whole support of the input law.
pub fn build_family(spec: &GenerativeSpec, choice: &FamilyChoice, kernel: &GroupKernel) -> Result<Family> {
    let tabular = || -> Result<Family> {
        let mut elements = spec.kernel().support();
        elements.extend(kernel.support());
        Ok(Family::Tabular(TabularDomain::new(spec.resolver().clone(), spec.reps().to_vec(), elements)?))
    };
    match choice {
        FamilyChoice::ScenarioDefault if spec.name == "swap-toy" => Ok(Family::Linear { dim: spec.input_dim() }),
        FamilyChoice::ScenarioDefault | FamilyChoice::Tabular => tabular(),
        FamilyChoice::Linear => Ok(Family::Linear { dim: spec.input_dim() }),
        FamilyChoice::TiedLinear(p) => {
            if p.len() != spec.input_dim() {
                return Err(Error::DimensionMismatch { expected: spec.input_dim(), got: p.len() });
            }
            Ok(Family::TiedLinear { pattern: p.clone() })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_prior: usize,
    pub n_representative: usize,
    pub sigma: f64,
    pub delta: f64,
    pub n_models: usize,
    pub bound_loss: Loss,
    pub family: FamilyChoice,
    pub opt: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_val: 1000,
            n_prior: 1000,
            n_representative: 4000,
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            n_models: DEFAULT_N_MODELS,
            bound_loss: Loss::ZeroOne,
            family: FamilyChoice::ScenarioDefault,
            opt: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub prior: Dataset,
    pub representative: Dataset,
}

pub fn generate_splits(spec: &GenerativeSpec, cfg: &PipelineConfig, seed: u64) -> Result<Splits> {
    Ok(Splits {
        train: spec.sample_dataset(cfg.n_train, seed, streams::TRAIN)?,
        val: spec.sample_dataset(cfg.n_val, seed, streams::VAL)?,
        prior: spec.sample_dataset(cfg.n_prior, seed, streams::PRIOR)?,
        representative: spec.sample_representative_dataset(cfg.n_representative, seed, streams::REPRESENTATIVE)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelTag {
    /// Trained on McAllester's bound for the raw posterior.
    Baseline,
    /// Trained on the bound for the projected posterior.
    Equivariant,
}

impl ModelTag {
    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Baseline => "baseline",
            ModelTag::Equivariant => "equivariant",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of a certification: a report, or the reason it was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct CertRow {
    pub model: ModelTag,
    pub variant: Variant,
    pub outcome: std::result::Result<BoundReport, String>,
}

#[derive(Clone, Debug)]
pub struct Certification {
    pub family: Family,
    pub projection: std::result::Result<ParameterProjection, String>,
    pub prior: PriorReport,
    pub baseline: Trained,
    pub equivariant: Option<Trained>,
    pub rows: Vec<CertRow>,
}

impl Certification {
    pub fn report(&self, model: ModelTag, variant: Variant) -> Option<&BoundReport> {
        self.rows.iter().find(|r| r.model == model && r.variant == variant).and_then(|r| r.outcome.as_ref().ok())
    }

    pub fn posterior(&self, model: ModelTag) -> Option<&GaussianMeasure> {
        match model {
            ModelTag::Baseline => Some(&self.baseline.posterior),
            ModelTag::Equivariant => self.equivariant.as_ref().map(|t| &t.posterior),
        }
    }

    /// Parameters drawn from a model's posterior act through this map.
    pub fn effective_matrix(&self, model: ModelTag) -> Option<&nalgebra::DMatrix<f64>> {
        match model {
            ModelTag::Baseline => None,
            ModelTag::Equivariant => self.projection.as_ref().ok().map(|p| &p.matrix),
        }
    }
}

/// Prior on the prior split; baseline and equivariant posteriors on the
/// training split; all three bound variants for both.
///
/// `projection_kernel` is the kernel the averaging projection uses.
pub fn certify(
    spec: &GenerativeSpec,
    splits: &Splits,
    projection_kernel: &GroupKernel,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Certification> {
    let family = build_family(spec, &cfg.family, projection_kernel)?;
    let projection = match build_parameter_projection(&family, spec.resolver(), projection_kernel, seed) {
        Ok(p) => Ok(p),
        Err(e @ (Error::ClosureNotCertified(_) | Error::NonIdempotent { .. } | Error::InvalidKernel(_))) => {
            Err(e.to_string())
        }
        Err(e) => return Err(e),
    };
    let prior = build_prior(&splits.prior, &family, cfg.sigma)?;
    let train_rows = WeightedRows::from_dataset(&family, &splits.train)?;
    let n = splits.train.len();

    let plain_kl = KlTerm::identity(&prior.prior)?;
    let objective =
        Objective { rows: &train_rows, kl: &plain_kl, n, delta: cfg.delta, report_loss: cfg.bound_loss };
    let baseline = optimize_posterior(&prior.prior, &objective, &cfg.opt, derive_seed(seed, streams::OPTIMIZER, 0))?;

    let equivariant = match &projection {
        Ok(proj) => {
            let pulled = train_rows.pull_back(&proj.matrix);
            let kl = KlTerm::new(&coefficient_factor(&proj.matrix), &prior.prior)?;
            let objective = Objective { rows: &pulled, kl: &kl, n, delta: cfg.delta, report_loss: cfg.bound_loss };
            Some(optimize_posterior(&prior.prior, &objective, &cfg.opt, derive_seed(seed, streams::OPTIMIZER, 1))?)
        }
        Err(_) => None,
    };

    let settings = BoundSettings {
        delta: cfg.delta,
        n_models: cfg.n_models,
        seed: derive_seed(seed, streams::POSTERIOR_DRAWS, 0),
        loss: cfg.bound_loss,
    };
    let mut rows = Vec::new();
    for (model, trained) in [(ModelTag::Baseline, Some(&baseline)), (ModelTag::Equivariant, equivariant.as_ref())] {
        for variant in Variant::ALL {
            let outcome = match (trained, &projection) {
                (None, Err(reason)) => Err(reason.clone()),
                (None, Ok(_)) => Err("model was not trained".to_string()),
                (Some(t), proj) => {
                    let post = &t.posterior;
                    match (variant, proj) {
                        (Variant::McAllester, _) => Ok(mcallester_bound(post, &prior.prior, &train_rows, n, &settings)?),
                        (_, Err(reason)) => Err(reason.clone()),
                        (Variant::Improved, Ok(p)) => {
                            Ok(improved_bound(post, &prior.prior, p, &train_rows, n, &settings)?)
                        }
                        (Variant::Representative, Ok(p)) => Ok(representative_bound(
                            post,
                            &prior.prior,
                            p,
                            &family,
                            &splits.representative,
                            spec.resolver(),
                            &settings,
                        )?),
                    }
                }
            };
            rows.push(CertRow { model, variant, outcome });
        }
    }
    Ok(Certification { family, projection, prior, baseline, equivariant, rows })
}

/// `Q[R]` (or `A∗Q[R]`) by exact enumeration of the data law.
pub fn exact_true_risk(
    spec: &GenerativeSpec,
    family: &Family,
    posterior: &GaussianMeasure,
    matrix: Option<&nalgebra::DMatrix<f64>>,
    loss: Loss,
) -> Result<f64> {
    let rows = WeightedRows::from_atoms(family, &spec.enumerate()?)?;
    let rows = match matrix {
        Some(a) => rows.pull_back(a),
        None => rows,
    };
    posterior_risk_exact(posterior, &rows, loss)
}

/// Violation counts for one (model, variant) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityCell {
    pub model: ModelTag,
    pub variant: Variant,
    pub trials: usize,
    pub violations: usize,
    pub frequency: f64,
    /// 95% Wilson interval for the violation probability.
    pub interval: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidityReport {
    pub delta: f64,
    pub trials: usize,
    pub cells: Vec<ValidityCell>,
}

fn wilson(k: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// One trial: `(model, variant, exact risk, rhs)` for every certified row.
pub fn run_trial(
    spec: &GenerativeSpec,
    projection_kernel: &GroupKernel,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<(ModelTag, Variant, f64, f64)>> {
    let splits = generate_splits(spec, &PipelineConfig { n_val: 0, ..cfg.clone() }, seed)?;
    let cert = certify(spec, &splits, projection_kernel, cfg, seed)?;
    let mut out = Vec::new();
    for row in &cert.rows {
        let Ok(report) = &row.outcome else { continue };
        let post = cert.posterior(row.model).expect("reported models are trained");
        let matrix = match row.variant {
            Variant::McAllester => None,
            _ => cert.projection.as_ref().ok().map(|p| &p.matrix),
        };
        let truth = exact_true_risk(spec, &cert.family, post, matrix, cfg.bound_loss)?;
        out.push((row.model, row.variant, truth, report.rhs));
    }
    Ok(out)
}

/// Repeats the full pipeline with fresh data per trial and counts how
/// often the exact posterior risk exceeds the certified right-hand side.
pub fn validity_trial(
    spec: &GenerativeSpec,
    projection_kernel: &GroupKernel,
    cfg: &PipelineConfig,
    trials: usize,
    master_seed: u64,
) -> Result<ValidityReport> {
    if !spec.is_enumerable() {
        return Err(Error::NotEnumerable(format!("scenario {} has no finite law", spec.name)));
    }
    let results: Vec<Result<Vec<(ModelTag, Variant, f64, f64)>>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, projection_kernel, cfg, derive_seed(master_seed, streams::TRIAL, t)))
        .collect();
    let mut counts: std::collections::BTreeMap<(ModelTag, Variant), (usize, usize)> = Default::default();
    for r in results {
        for (model, variant, truth, rhs) in r? {
            let c = counts.entry((model, variant)).or_default();
            c.0 += 1;
            if truth > rhs {
                c.1 += 1;
            }
        }
    }
    let cells = counts
        .into_iter()
        .map(|((model, variant), (n, k))| ValidityCell {
            model,
            variant,
            trials: n,
            violations: k,
            frequency: k as f64 / n as f64,
            interval: wilson(k, n),
        })
        .collect();
    Ok(ValidityReport { delta: cfg.delta, trials, cells })
}
