//! The two-dimensional KL decomposition demo.
//!
//! `ν = N((1, 0), I)` and `μ = N(0, I)` on the parameters of linear
//! predictors on `R²`, projected by averaging over the coordinate swap.
//! The divergence `1/2` splits into `1/4` that survives the projection and
//! a residual of `1/4`.

use nalgebra::{DMatrix, DVector};

use super::{emit, Outcome, EXIT_FAILURE};
use crate::averaging::{build_parameter_projection, Family};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::group::{GroupAction, OrbitResolver, OutputRep};
use crate::io::{fmt_f64, CsvTable};
use crate::kernel::GroupKernel;
use crate::measures::{kl_decompose_gaussian, GaussianMeasure, KlDecomposition};

pub const DEMO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum DemoProjection {
    /// Swap averaging built by the averaging module.
    Averaging,
    Identity,
    /// A user-supplied 2×2 matrix, rows separated by `;`.
    Matrix(DMatrix<f64>),
}

impl DemoProjection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "averaging" => Ok(DemoProjection::Averaging),
            "identity" => Ok(DemoProjection::Identity),
            other => {
                let rows: Vec<Vec<f64>> = other
                    .split(';')
                    .map(|r| r.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<_, _>>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::InvalidArgument(format!("cannot parse projection `{other}`")))?;
                if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
                    return Err(Error::InvalidArgument(format!("projection `{other}` is not a 2x2 matrix")));
                }
                Ok(DemoProjection::Matrix(DMatrix::from_fn(2, 2, |i, j| rows[i][j])))
            }
        }
    }

    fn label(&self) -> String {
        match self {
            DemoProjection::Averaging => "averaging".into(),
            DemoProjection::Identity => "identity".into(),
            DemoProjection::Matrix(m) => {
                format!("{} {};{} {}", fmt_f64(m[(0, 0)]), fmt_f64(m[(0, 1)]), fmt_f64(m[(1, 0)]), fmt_f64(m[(1, 1)]))
            }
        }
    }

    /// `(total, pushforward, residual)` the demo must reproduce.
    pub fn expected(&self) -> Option<[f64; 3]> {
        match self {
            DemoProjection::Averaging => Some([0.5, 0.25, 0.25]),
            DemoProjection::Identity => Some([0.5, 0.5, 0.0]),
            DemoProjection::Matrix(_) => None,
        }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            DemoProjection::Averaging => {
                let resolver = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
                let kernel = GroupKernel::uniform(resolver.action().group())?;
                Ok(build_parameter_projection(&Family::Linear { dim: 2 }, &resolver, &kernel, 0)?.matrix)
            }
            DemoProjection::Identity => Ok(DMatrix::identity(2, 2)),
            DemoProjection::Matrix(m) => Ok(m.clone()),
        }
    }
}

pub fn demo_pair() -> (GaussianMeasure, GaussianMeasure) {
    let nu = GaussianMeasure::isotropic(DVector::from_vec(vec![1.0, 0.0]), 1.0);
    let mu = GaussianMeasure::isotropic(DVector::zeros(2), 1.0);
    (nu, mu)
}

pub fn decompose(projection: &DemoProjection) -> Result<KlDecomposition> {
    let (nu, mu) = demo_pair();
    kl_decompose_gaussian(&nu, &mu, &projection.matrix()?)
}

/// Non-idempotent matrices abort with `NonIdempotent` (exit 2).
pub fn run(cfg: &RunConfig, projection: &DemoProjection) -> Result<Outcome> {
    let d = decompose(projection)?;
    let got = [d.total, d.pushforward_kl, d.residual];
    let expected = projection.expected();
    let passed = expected.is_none_or(|e| got.iter().zip(&e).all(|(g, e)| (g - e).abs() <= DEMO_TOL));
    let mut table = CsvTable::new(&[
        "projection",
        "total_kl",
        "pushforward_kl",
        "residual",
        "residual_crosscheck",
        "expected_total",
        "expected_pushforward",
        "expected_residual",
        "status",
    ]);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    table.push(vec![
        projection.label(),
        fmt_f64(d.total),
        fmt_f64(d.pushforward_kl),
        fmt_f64(d.residual),
        opt(d.residual_crosscheck),
        opt(expected.map(|e| e[0])),
        opt(expected.map(|e| e[1])),
        opt(expected.map(|e| e[2])),
        match (expected, passed) {
            (None, _) => "computed",
            (Some(_), true) => "pass",
            (Some(_), false) => "fail",
        }
        .to_string(),
    ]);
    let files = emit(cfg, &[("kl_demo.csv", table.render())])?;
    let message = format!("total {} = pushforward {} + residual {}", d.total, d.pushforward_kl, d.residual);
    if passed {
        Ok(Outcome::ok(message, files))
    } else {
        Ok(Outcome { code: EXIT_FAILURE, message: format!("mismatch: {message}"), files })
    }
}
