//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment, keys are dotted by module.
//! Unknown and repeated keys are errors. [`RunConfig::render`] writes every
//! key back out, so a resolved file reproduces the run it came from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bounds::optimize::OptimizerConfig;
use crate::bounds::pipeline::{FamilyChoice, PipelineConfig};
use crate::data::{ScenarioOptions, ROTATION_ORDER};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::kernel::Bucketing;
use crate::risk::Loss;

/// Which kernel the averaging projection uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// The kernel of the data law (after any mixing).
    Scenario,
    /// Uniform over the group.
    Uniform,
    /// Read from `kernel.path`.
    Table,
    /// Empirical frequencies on the training split.
    Estimated,
}

impl KernelKind {
    fn name(self) -> &'static str {
        match self {
            KernelKind::Scenario => "scenario",
            KernelKind::Uniform => "uniform",
            KernelKind::Table => "table",
            KernelKind::Estimated => "estimated",
        }
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scenario" => Ok(KernelKind::Scenario),
            "uniform" => Ok(KernelKind::Uniform),
            "table" => Ok(KernelKind::Table),
            "estimated" => Ok(KernelKind::Estimated),
            other => Err(format!("unknown kernel kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Where certify and compare read datasets; the output directory if unset.
    pub data_dir: Option<PathBuf>,

    pub scenario: String,
    pub flip_prob: f64,
    pub pattern_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_prior: usize,
    pub n_representative: usize,
    /// Loss for the property suites.
    pub loss: Loss,

    pub group_order: usize,

    pub kernel_kind: KernelKind,
    pub kernel_path: Option<PathBuf>,
    pub kernel_buckets: Option<u64>,
    /// Weight moved from the data kernel toward the uniform kernel.
    pub kernel_mixing: f64,

    pub delta: f64,
    pub n_models: usize,
    pub bound_loss: Loss,
    pub family: FamilyChoice,
    pub sigma: f64,
    pub trials: usize,

    pub opt: OptimizerConfig,

    pub sweep_n: Vec<usize>,
    pub sweep_delta: Vec<f64>,
    pub sweep_mixing: Vec<f64>,
    pub sweep_group_order: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let scenario = ScenarioOptions::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data_dir: None,
            scenario: "swap-toy".into(),
            flip_prob: scenario.flip_prob,
            pattern_seed: scenario.pattern_seed,
            n_train: pipeline.n_train,
            n_val: pipeline.n_val,
            n_prior: pipeline.n_prior,
            n_representative: pipeline.n_representative,
            loss: Loss::SquaredClipped,
            group_order: ROTATION_ORDER,
            kernel_kind: KernelKind::Scenario,
            kernel_path: None,
            kernel_buckets: None,
            kernel_mixing: 0.0,
            delta: pipeline.delta,
            n_models: pipeline.n_models,
            bound_loss: pipeline.bound_loss,
            family: pipeline.family,
            sigma: pipeline.sigma,
            trials: 500,
            opt: pipeline.opt,
            sweep_n: vec![50, 100, 200, 400],
            sweep_delta: vec![pipeline.delta],
            sweep_mixing: vec![0.0],
            sweep_group_order: vec![ROTATION_ORDER],
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config { line, msg: format!("{key}: cannot parse `{value}`: {e}") })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(line, key, v.trim())).collect()
}

fn parse_optional<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "default" {
        Ok(None)
    } else {
        parse_value(line, key, value).map(Some)
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, found `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(Error::Config { line, msg: format!("{key} already set on line {first}") });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_to_string(path)?)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let loss = |v: &str| -> Result<Loss> {
            v.parse().map_err(|e: Error| Error::Config { line, msg: format!("{key}: {e}") })
        };
        match key {
            "run.seed" => self.seed = parse_value(line, key, value)?,
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.data_dir" => self.data_dir = parse_optional(line, key, value)?,
            "scenario.name" => self.scenario = value.to_string(),
            "scenario.flip_prob" => self.flip_prob = parse_value(line, key, value)?,
            "scenario.pattern_seed" => self.pattern_seed = parse_value(line, key, value)?,
            "scenario.n_train" => self.n_train = parse_value(line, key, value)?,
            "scenario.n_val" => self.n_val = parse_value(line, key, value)?,
            "scenario.n_prior" => self.n_prior = parse_value(line, key, value)?,
            "scenario.n_representative" => self.n_representative = parse_value(line, key, value)?,
            "scenario.loss" => self.loss = loss(value)?,
            "group.order" => self.group_order = parse_value(line, key, value)?,
            "kernel.kind" => {
                self.kernel_kind = value.parse().map_err(|msg: String| Error::Config { line, msg })?;
            }
            "kernel.path" => self.kernel_path = parse_optional(line, key, value)?,
            "kernel.buckets" => self.kernel_buckets = parse_optional(line, key, value)?,
            "kernel.mixing" => self.kernel_mixing = parse_value(line, key, value)?,
            "bound.delta" => self.delta = parse_value(line, key, value)?,
            "bound.n_models" => self.n_models = parse_value(line, key, value)?,
            "bound.loss" => self.bound_loss = loss(value)?,
            "bound.family" => {
                self.family = FamilyChoice::parse(value).map_err(|e| Error::Config { line, msg: e.to_string() })?;
            }
            "bound.sigma" => self.sigma = parse_value(line, key, value)?,
            "bound.trials" => self.trials = parse_value(line, key, value)?,
            "opt.steps" => self.opt.steps = parse_value(line, key, value)?,
            "opt.lr" => self.opt.lr = parse_value(line, key, value)?,
            "opt.draws" => self.opt.draws = parse_value(line, key, value)?,
            "opt.eval_every" => self.opt.eval_every = parse_value(line, key, value)?,
            "opt.surrogate" => self.opt.surrogate = loss(value)?,
            "sweep.n" => self.sweep_n = parse_list(line, key, value)?,
            "sweep.delta" => self.sweep_delta = parse_list(line, key, value)?,
            "sweep.mixing" => self.sweep_mixing = parse_list(line, key, value)?,
            "sweep.group_order" => self.sweep_group_order = parse_list(line, key, value)?,
            other => return Err(Error::Config { line, msg: format!("unknown key `{other}`") }),
        }
        Ok(())
    }

    /// Range checks that do not depend on the scenario.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        if !(0.0..=0.5).contains(&self.flip_prob) {
            return bad(format!("scenario.flip_prob {} outside [0, 0.5]", self.flip_prob));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("bound.delta {} outside (0, 1)", self.delta));
        }
        if self.sweep_delta.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return bad("sweep.delta entries must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.kernel_mixing) || self.sweep_mixing.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("mixing weights must lie in [0, 1]".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("bound.sigma {} must be positive", self.sigma));
        }
        if self.n_models == 0 || self.n_train == 0 || self.n_prior == 0 {
            return bad("n_models, n_train and n_prior must be positive".into());
        }
        if self.sweep_n.contains(&0) {
            return bad("sweep.n entries must be positive".into());
        }
        if self.opt.draws == 0 || self.opt.eval_every == 0 || !(self.opt.lr > 0.0) {
            return bad("opt.draws, opt.eval_every and opt.lr must be positive".into());
        }
        if self.kernel_kind == KernelKind::Table && self.kernel_path.is_none() {
            return bad("kernel.kind = table needs kernel.path".into());
        }
        Ok(())
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions { flip_prob: self.flip_prob, pattern_seed: self.pattern_seed, rotation_order: self.group_order }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n_train: self.n_train,
            n_val: self.n_val,
            n_prior: self.n_prior,
            n_representative: self.n_representative,
            sigma: self.sigma,
            delta: self.delta,
            n_models: self.n_models,
            bound_loss: self.bound_loss,
            family: self.family.clone(),
            opt: self.opt,
        }
    }

    pub fn bucketing(&self) -> Bucketing {
        match self.kernel_buckets {
            Some(buckets) => Bucketing::Hashed { buckets },
            None => Bucketing::Global,
        }
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out_dir)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("default".to_string(), |p| p.display().to_string());
        let mut out = String::from("# resolved configuration\n");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("run.seed", self.seed.to_string());
        put("run.out_dir", self.out_dir.display().to_string());
        put("run.data_dir", path(&self.data_dir));
        put("scenario.name", self.scenario.clone());
        put("scenario.flip_prob", fmt_f64(self.flip_prob));
        put("scenario.pattern_seed", self.pattern_seed.to_string());
        put("scenario.n_train", self.n_train.to_string());
        put("scenario.n_val", self.n_val.to_string());
        put("scenario.n_prior", self.n_prior.to_string());
        put("scenario.n_representative", self.n_representative.to_string());
        put("scenario.loss", self.loss.to_string());
        put("group.order", self.group_order.to_string());
        put("kernel.kind", self.kernel_kind.name().to_string());
        put("kernel.path", path(&self.kernel_path));
        put("kernel.buckets", self.kernel_buckets.map_or("default".to_string(), |b| b.to_string()));
        put("kernel.mixing", fmt_f64(self.kernel_mixing));
        put("bound.delta", fmt_f64(self.delta));
        put("bound.n_models", self.n_models.to_string());
        put("bound.loss", self.bound_loss.to_string());
        put("bound.family", self.family.to_string());
        put("bound.sigma", fmt_f64(self.sigma));
        put("bound.trials", self.trials.to_string());
        put("opt.steps", self.opt.steps.to_string());
        put("opt.lr", fmt_f64(self.opt.lr));
        put("opt.draws", self.opt.draws.to_string());
        put("opt.eval_every", self.opt.eval_every.to_string());
        put("opt.surrogate", self.opt.surrogate.to_string());
        put("sweep.n", join(&self.sweep_n, usize::to_string));
        put("sweep.delta", join(&self.sweep_delta, |d| fmt_f64(*d)));
        put("sweep.mixing", join(&self.sweep_mixing, |m| fmt_f64(*m)));
        put("sweep.group_order", join(&self.sweep_group_order, usize::to_string));
        out
    }
}
