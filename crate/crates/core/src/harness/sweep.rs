//! `sweep`: one certification per grid point over sample size, confidence,
//! kernel mixing and rotation order.
//!
//! The sample size sets both the training and the representative split;
//! the rotation order only affects `restricted-rotation`.

use super::{emit, projection_kernel, scenario, Outcome};
use crate::bounds::pipeline::{certify, generate_splits, ModelTag};
use crate::bounds::Variant;
use crate::config::RunConfig;
use crate::error::Result;
use crate::io::{csv_text, fmt_f64, CsvTable};

pub const SWEEP_COLUMNS: [&str; 16] = [
    "point",
    "scenario",
    "n",
    "delta",
    "mixing",
    "group_order",
    "status",
    "invariance_defect",
    "baseline_rhs",
    "complexity_term",
    "kl",
    "kl_pushforward",
    "kl_residual",
    "improved_rhs",
    "equivariant_rhs",
    "detail",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub delta: f64,
    pub mixing: f64,
    pub group_order: usize,
}

/// Row-major over `(group order, mixing, δ, n)`; empty if any axis is.
pub fn grid(cfg: &RunConfig) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &group_order in &cfg.sweep_group_order {
        for &mixing in &cfg.sweep_mixing {
            for &delta in &cfg.sweep_delta {
                for &n in &cfg.sweep_n {
                    out.push(GridPoint { n, delta, mixing, group_order });
                }
            }
        }
    }
    out
}

/// The baseline posterior's KL split by the projection, the equivariant
/// model's certified rhs, and the data law's invariance defect.
fn evaluate(cfg: &RunConfig, point: &GridPoint) -> Result<Vec<String>> {
    let cfg = RunConfig {
        n_train: point.n,
        n_representative: point.n,
        delta: point.delta,
        kernel_mixing: point.mixing,
        group_order: point.group_order,
        ..cfg.clone()
    };
    let spec = scenario(&cfg)?;
    let defect = if spec.is_enumerable() { fmt_f64(spec.invariance_defect()?) } else { String::new() };
    let splits = generate_splits(&spec, &cfg.pipeline(), cfg.seed)?;
    let kernel = projection_kernel(&cfg, &spec, &splits.train)?;
    let cert = certify(&spec, &splits, &kernel, &cfg.pipeline(), cfg.seed)?;
    let plain = cert.report(ModelTag::Baseline, Variant::McAllester);
    let improved = cert.report(ModelTag::Baseline, Variant::Improved);
    let equivariant = cert.report(ModelTag::Equivariant, Variant::Representative);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let detail = match &cert.projection {
        Ok(_) => String::new(),
        Err(reason) => csv_text(reason),
    };
    Ok(vec![
        "ok".into(),
        defect,
        opt(plain.map(|r| r.rhs)),
        opt(plain.map(|r| r.complexity_term)),
        opt(plain.map(|r| r.kl)),
        opt(improved.and_then(|r| r.decomposition.as_ref()).map(|d| d.pushforward_kl)),
        opt(improved.and_then(|r| r.decomposition.as_ref()).map(|d| d.residual)),
        opt(improved.map(|r| r.rhs)),
        opt(equivariant.map(|r| r.rhs)),
        detail,
    ])
}

/// Failures at one grid point become a `failed` row; the sweep continues.
pub fn sweep_csv(cfg: &RunConfig) -> (String, usize) {
    let mut table = CsvTable::new(&SWEEP_COLUMNS);
    let mut failed = 0;
    for (i, point) in grid(cfg).iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            cfg.scenario.clone(),
            point.n.to_string(),
            fmt_f64(point.delta),
            fmt_f64(point.mixing),
            point.group_order.to_string(),
        ];
        match evaluate(cfg, point) {
            Ok(cells) => row.extend(cells),
            Err(e) => {
                failed += 1;
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), SWEEP_COLUMNS.len() - 8));
                row.push(csv_text(&e.to_string()));
            }
        }
        table.push(row);
    }
    (table.render(), failed)
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let (csv, failed) = sweep_csv(cfg);
    let points = grid(cfg).len();
    let files = emit(cfg, &[("sweep.csv", csv)])?;
    Ok(Outcome::ok(format!("{points} grid points, {failed} failed"), files))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_axis_gives_header_only() {
        let cfg = RunConfig { sweep_n: Vec::new(), ..RunConfig::default() };
        assert!(grid(&cfg).is_empty());
        let (csv, failed) = sweep_csv(&cfg);
        assert_eq!(csv, format!("{}\n", SWEEP_COLUMNS.join(",")));
        assert_eq!(failed, 0);
    }

    #[test]
    fn mixing_on_the_shift_group_fails_per_row() {
        let cfg = RunConfig {
            scenario: "shifted-signals".into(),
            sweep_n: vec![20],
            sweep_mixing: vec![0.5],
            ..RunConfig::default()
        };
        let (csv, failed) = sweep_csv(&cfg);
        assert_eq!(failed, 1);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().contains(",failed,"));
    }
}
