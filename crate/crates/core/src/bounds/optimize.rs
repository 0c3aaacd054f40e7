//! Training a diagonal Gaussian posterior against the bound's right-hand
//! side with reparameterized gradients and Adam.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{complexity_slope, complexity_term, KlTerm};
use crate::error::{Error, Result};
use crate::measures::GaussianMeasure;
use crate::risk::{has_closed_form, posterior_risk_exact, posterior_risk_mc, Loss, WeightedRows};
use crate::rng::{rng_for, streams};

/// Posterior standard deviations never drop below `1e-3`.
pub const MIN_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub lr: f64,
    pub draws: usize,
    pub eval_every: usize,
    pub surrogate: Loss,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 1e-2, draws: 8, eval_every: 50, surrogate: Loss::SquaredClipped }
    }
}

/// What the optimizer minimizes: the empirical term over `rows` plus the
/// complexity term of `kl`.
pub struct Objective<'a> {
    /// Rows as seen by the trained parameters (already pulled back through
    /// the projection for equivariant models).
    pub rows: &'a WeightedRows,
    pub kl: &'a KlTerm,
    pub n: usize,
    pub delta: f64,
    /// Loss of the reported bound; zero-one by default.
    pub report_loss: Loss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub posterior: GaussianMeasure,
    pub best_rhs: f64,
    pub best_step: usize,
    pub initial_rhs: f64,
    /// `(step, exact rhs)` at every evaluation.
    pub trace: Vec<(usize, f64)>,
}

fn diagonal(mean: &[f64], log_std: &[f64]) -> GaussianMeasure {
    let stds: Vec<f64> = log_std.iter().map(|r| r.exp()).collect();
    GaussianMeasure::diagonal(DVector::from_column_slice(mean), &stds).expect("matching lengths")
}

/// The right-hand side for a diagonal posterior, with the empirical term
/// exact when the report loss has a closed form.
pub fn exact_rhs(objective: &Objective<'_>, mean: &[f64], log_std: &[f64]) -> Result<f64> {
    let post = diagonal(mean, log_std);
    let empirical = if has_closed_form(objective.report_loss) {
        posterior_risk_exact(&post, objective.rows, objective.report_loss)?
    } else {
        posterior_risk_mc(&post, objective.rows, objective.report_loss, 256, 0)?.value
    };
    let var: Vec<f64> = log_std.iter().map(|r| (2.0 * r).exp()).collect();
    let kl = objective.kl.evaluate(mean, &var, None);
    Ok(empirical + complexity_term(kl.max(0.0), objective.n, objective.delta)?)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Starts at the prior and returns the iterate with the best exact
/// right-hand side among those evaluated.
pub fn optimize_posterior(
    prior: &GaussianMeasure,
    objective: &Objective<'_>,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<Trained> {
    if config.surrogate.derivative(0.0, 1.0).is_none() {
        return Err(Error::UnsupportedLoss(format!("{} has no gradient to follow", config.surrogate)));
    }
    if !config.surrogate.flags().bounded01 || !objective.report_loss.flags().bounded01 {
        return Err(Error::UnsupportedLoss("bound optimization needs losses bounded in [0, 1]".into()));
    }
    if !prior.is_diagonal() {
        return Err(Error::InvalidArgument("the prior must be diagonal".into()));
    }
    if config.draws == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument("draws and eval_every must be positive".into()));
    }
    let p = prior.dim();
    if objective.kl.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: objective.kl.dim() });
    }
    let min_log_std = MIN_STD.ln();
    let mut mean = prior.mean().as_slice().to_vec();
    let mut log_std: Vec<f64> =
        prior.cov().diagonal().iter().map(|v| (0.5 * v.ln()).max(min_log_std)).collect();
    let mut rng = rng_for(seed, streams::OPTIMIZER, 0);
    let mut adam = Adam::new(2 * p);

    let initial_rhs = exact_rhs(objective, &mean, &log_std)?;
    let mut best = (initial_rhs, 0usize, mean.clone(), log_std.clone());
    let mut trace = vec![(0, initial_rhs)];

    let mut params = vec![0.0; 2 * p];
    let mut grad = vec![0.0; 2 * p];
    let mut g_w = vec![0.0; p];
    let mut eps = vec![0.0; p];
    let mut w = vec![0.0; p];
    for step in 1..=config.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let std: Vec<f64> = log_std.iter().map(|r| r.exp()).collect();
        for _ in 0..config.draws {
            for j in 0..p {
                eps[j] = rng.sample(StandardNormal);
                w[j] = mean[j] + std[j] * eps[j];
            }
            g_w.iter_mut().for_each(|g| *g = 0.0);
            for ((phi, &y), &weight) in objective.rows.features.iter().zip(&objective.rows.labels).zip(&objective.rows.weights) {
                let pred = phi.dot(&w);
                let d = config.surrogate.derivative(pred, y).expect("checked above");
                if d != 0.0 {
                    phi.add_scaled(weight * d, &mut g_w);
                }
            }
            for j in 0..p {
                grad[j] += g_w[j] / config.draws as f64;
                grad[p + j] += g_w[j] * eps[j] * std[j] / config.draws as f64;
            }
        }
        let var: Vec<f64> = std.iter().map(|s| s * s).collect();
        let mut g_mean = vec![0.0; p];
        let mut g_var = vec![0.0; p];
        let kl = objective.kl.evaluate(&mean, &var, Some((&mut g_mean, &mut g_var)));
        let slope = complexity_slope(kl.max(0.0), objective.n, objective.delta)?;
        for j in 0..p {
            grad[j] += slope * g_mean[j];
            grad[p + j] += slope * g_var[j] * 2.0 * var[j];
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            let what = if bad < p { "mean" } else { "log-std" };
            return Err(Error::NonFiniteGradient { step, detail: format!("{what} coordinate {}", bad % p) });
        }
        let lr = config.lr * 0.5 * (1.0 + (PI * (step - 1) as f64 / config.steps as f64).cos());
        params[..p].copy_from_slice(&mean);
        params[p..].copy_from_slice(&log_std);
        adam.step(&mut params, &grad, lr);
        mean.copy_from_slice(&params[..p]);
        for (r, &v) in log_std.iter_mut().zip(&params[p..]) {
            *r = v.max(min_log_std);
        }
        if step % config.eval_every == 0 || step == config.steps {
            let rhs = exact_rhs(objective, &mean, &log_std)?;
            trace.push((step, rhs));
            if rhs < best.0 {
                best = (rhs, step, mean.clone(), log_std.clone());
            }
        }
    }
    let (best_rhs, best_step, m, r) = best;
    Ok(Trained { posterior: diagonal(&m, &r), best_rhs, best_step, initial_rhs, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::Family;
    use crate::bounds::build_prior;
    use crate::data::{builtin_scenario, ScenarioOptions};

    #[test]
    fn optimizer_improves_on_the_prior() {
        let spec = builtin_scenario("swap-toy", ScenarioOptions::default()).unwrap();
        let family = Family::Linear { dim: 2 };
        let prior = build_prior(&spec.sample_dataset(200, 1, 3).unwrap(), &family, 0.05).unwrap().prior;
        let train = spec.sample_dataset(400, 1, 1).unwrap();
        let rows = WeightedRows::from_dataset(&family, &train).unwrap();
        let kl = KlTerm::identity(&prior).unwrap();
        let objective = Objective { rows: &rows, kl: &kl, n: train.len(), delta: 0.05, report_loss: Loss::ZeroOne };
        let cfg = OptimizerConfig { steps: 300, ..OptimizerConfig::default() };
        let trained = optimize_posterior(&prior, &objective, &cfg, 4).unwrap();
        assert!(trained.best_rhs <= trained.initial_rhs);
        let mut best_so_far = f64::INFINITY;
        for &(_, rhs) in &trained.trace {
            best_so_far = best_so_far.min(rhs);
        }
        assert_eq!(best_so_far, trained.best_rhs);
        assert_eq!(kl.evaluate(prior.mean().as_slice(), prior.cov().diagonal().as_slice(), None), 0.0);
        let again = optimize_posterior(&prior, &objective, &cfg, 4).unwrap();
        assert_eq!(again, trained);
        let zero_one = OptimizerConfig { surrogate: Loss::ZeroOne, ..cfg };
        assert!(optimize_posterior(&prior, &objective, &zero_one, 4).is_err());
    }
}
