//! Generative specifications `Y = f*(X, Ξ)` with `X = g·x_φ`, the builtin
//! desk-scale scenarios, sampling, exact enumeration, and dataset CSV I/O.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::{Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::group::{Element, GroupAction, OrbitResolver, OutputRep};
use crate::io::fmt_f64;
use crate::kernel::GroupKernel;
use crate::rng::{rng_for, streams, Rng};

pub const SCENARIOS: [&str; 3] = ["swap-toy", "restricted-rotation", "shifted-signals"];

/// Noise `Ξ`, applied to the representative-level output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Noise {
    None,
    /// Flip the sign of the target with this probability.
    LabelFlip(f64),
    /// Add `N(0, σ²)`.
    Gaussian(f64),
}

impl Noise {
    /// Finite noise atoms as `(flipped, probability)`, or `None` when continuous.
    fn atoms(&self) -> Option<Vec<(bool, f64)>> {
        match *self {
            Noise::None => Some(vec![(false, 1.0)]),
            Noise::LabelFlip(0.0) => Some(vec![(false, 1.0)]),
            Noise::LabelFlip(p) => Some(vec![(false, 1.0 - p), (true, p)]),
            Noise::Gaussian(_) => None,
        }
    }
}

/// A finite distribution over canonical patterns, a kernel, a target table
/// on representatives and a noise model.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeSpec {
    pub name: String,
    resolver: OrbitResolver,
    reps: Vec<Vec<f64>>,
    rep_weights: Vec<f64>,
    kernel: GroupKernel,
    targets: Vec<f64>,
    noise: Noise,
}

/// One point of the enumerated law of `(X, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub rep_index: usize,
    pub element: Element,
    pub x: Vec<f64>,
    pub y: f64,
    /// `y_φ`, the output at the representative with the same noise draw.
    pub y_rep: f64,
    pub weight: f64,
}

/// A sampled row together with its latent decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub x: Vec<f64>,
    pub y: f64,
    pub rep_index: usize,
    pub element: Element,
}

impl GenerativeSpec {
    pub fn new(
        name: impl Into<String>,
        resolver: OrbitResolver,
        reps: Vec<Vec<f64>>,
        rep_weights: Vec<f64>,
        kernel: GroupKernel,
        targets: Vec<f64>,
        noise: Noise,
    ) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::EmptySample);
        }
        if rep_weights.len() != reps.len() || targets.len() != reps.len() {
            return Err(Error::DimensionMismatch { expected: reps.len(), got: rep_weights.len().min(targets.len()) });
        }
        let total: f64 = rep_weights.iter().sum();
        if rep_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("representative weights must form a distribution".into()));
        }
        match noise {
            Noise::LabelFlip(p) if !(0.0..=1.0).contains(&p) => {
                return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")))
            }
            Noise::Gaussian(s) if !(s >= 0.0) => return Err(Error::InvalidArgument(format!("noise scale {s}"))),
            _ => {}
        }
        for (i, rep) in reps.iter().enumerate() {
            if !resolver.is_canonical(rep)? {
                return Err(Error::NotCanonical { index: i });
            }
            kernel.validate_for(resolver.action(), rep)?;
        }
        Ok(Self { name: name.into(), resolver, reps, rep_weights, kernel, targets, noise })
    }

    pub fn resolver(&self) -> &OrbitResolver {
        &self.resolver
    }

    pub fn action(&self) -> &GroupAction {
        self.resolver.action()
    }

    pub fn reps(&self) -> &[Vec<f64>] {
        &self.reps
    }

    pub fn rep_weights(&self) -> &[f64] {
        &self.rep_weights
    }

    pub fn kernel(&self) -> &GroupKernel {
        &self.kernel
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn input_dim(&self) -> usize {
        self.action().input_dim()
    }

    /// The same scenario with another kernel.
    pub fn with_kernel(&self, kernel: GroupKernel) -> Result<Self> {
        let s = self.clone();
        Self::new(s.name, s.resolver, s.reps, s.rep_weights, kernel, s.targets, s.noise)
    }

    pub fn with_noise(&self, noise: Noise) -> Result<Self> {
        let s = self.clone();
        Self::new(s.name, s.resolver, s.reps, s.rep_weights, s.kernel, s.targets, noise)
    }

    /// `f*(x_φ, ξ)` for a representative and one noise outcome.
    fn target_with(&self, rep_index: usize, flipped: bool, additive: f64) -> f64 {
        let t = self.targets[rep_index];
        (if flipped { -t } else { t }) + additive
    }

    fn draw_noise(&self, rng: &mut Rng) -> (bool, f64) {
        match self.noise {
            Noise::None => (false, 0.0),
            Noise::LabelFlip(p) => (rng.random::<f64>() < p, 0.0),
            Noise::Gaussian(s) => (false, Normal::new(0.0, s).map(|n| n.sample(rng)).unwrap_or(0.0)),
        }
    }

    fn draw_rep(&self, rng: &mut Rng) -> usize {
        WeightedIndex::new(&self.rep_weights).expect("validated weights").sample(rng)
    }

    /// Draws `x_φ`, `g ~ κ(x_φ, ·)`, `ξ`, and returns `(g·x_φ, g·f*(x_φ, ξ))`.
    pub fn sample_pair(&self, rng: &mut Rng) -> Result<Draw> {
        let i = self.draw_rep(rng);
        let g = self.kernel.sample(&self.reps[i], rng)?;
        let (flip, add) = self.draw_noise(rng);
        let action = self.action();
        let x = action.act_input(g, &self.reps[i])?;
        let y = action.act_output(g, self.target_with(i, flip, add));
        Ok(Draw { x, y, rep_index: i, element: g })
    }

    /// Like [`GenerativeSpec::sample_pair`] with the group part forced to the identity.
    pub fn sample_representative_pair(&self, rng: &mut Rng) -> Result<Draw> {
        let i = self.draw_rep(rng);
        let (flip, add) = self.draw_noise(rng);
        Ok(Draw {
            x: self.reps[i].clone(),
            y: self.target_with(i, flip, add),
            rep_index: i,
            element: self.action().group().identity(),
        })
    }

    pub fn is_enumerable(&self) -> bool {
        self.noise.atoms().is_some() && self.reps.iter().all(|r| self.kernel.distribution(r).is_some())
    }

    /// The exact law of `(X, Y)` over `(x_φ, g, ξ)` triples with product weights.
    pub fn enumerate(&self) -> Result<Vec<Atom>> {
        let noise = self
            .noise
            .atoms()
            .ok_or_else(|| Error::NotEnumerable("continuous noise has no finite support".into()))?;
        let action = self.action();
        let mut atoms = Vec::new();
        for (i, rep) in self.reps.iter().enumerate() {
            let dist = self
                .kernel
                .distribution(rep)
                .ok_or_else(|| Error::InvalidKernel(format!("no kernel mass for representative {i}")))?;
            for &(g, wg) in dist {
                let x = action.act_input(g, rep)?;
                for &(flip, wn) in &noise {
                    let y_rep = self.target_with(i, flip, 0.0);
                    atoms.push(Atom {
                        rep_index: i,
                        element: g,
                        x: x.clone(),
                        y: action.act_output(g, y_rep),
                        y_rep,
                        weight: self.rep_weights[i] * wg * wn,
                    });
                }
            }
        }
        Ok(atoms)
    }

    /// The law of `(X_φ, Y_φ)`: group part forced to the identity.
    pub fn enumerate_representatives(&self) -> Result<Vec<Atom>> {
        let noise = self
            .noise
            .atoms()
            .ok_or_else(|| Error::NotEnumerable("continuous noise has no finite support".into()))?;
        let e = self.action().group().identity();
        let mut atoms = Vec::new();
        for (i, rep) in self.reps.iter().enumerate() {
            for &(flip, wn) in &noise {
                let y = self.target_with(i, flip, 0.0);
                atoms.push(Atom { rep_index: i, element: e, x: rep.clone(), y, y_rep: y, weight: self.rep_weights[i] * wn });
            }
        }
        Ok(atoms)
    }

    /// The law of `X` keyed by `(representative, group part)`.
    pub fn input_law(&self) -> Result<BTreeMap<(usize, Element), f64>> {
        let mut law = BTreeMap::new();
        for (i, rep) in self.reps.iter().enumerate() {
            let dist = self
                .kernel
                .distribution(rep)
                .ok_or_else(|| Error::InvalidKernel(format!("no kernel mass for representative {i}")))?;
            for &(g, w) in dist {
                *law.entry((i, g)).or_insert(0.0) += self.rep_weights[i] * w;
            }
        }
        Ok(law)
    }

    /// `max_g TV(P_X, g∗P_X)`; zero exactly when the input law is invariant.
    pub fn invariance_defect(&self) -> Result<f64> {
        let law = self.input_law()?;
        let group = self.action().group();
        let elements = match group.elements() {
            Some(e) => e,
            None => group.elements_within(self.input_dim() as i64),
        };
        let mut worst: f64 = 0.0;
        for &g in &elements {
            let mut moved: BTreeMap<(usize, Element), f64> = BTreeMap::new();
            for (&(i, h), &w) in &law {
                *moved.entry((i, group.compose(g, h)?)).or_insert(0.0) += w;
            }
            let mut keys: Vec<&(usize, Element)> = law.keys().chain(moved.keys()).collect();
            keys.sort();
            keys.dedup();
            let tv = 0.5
                * keys
                    .iter()
                    .map(|k| (law.get(k).copied().unwrap_or(0.0) - moved.get(k).copied().unwrap_or(0.0)).abs())
                    .sum::<f64>();
            worst = worst.max(tv);
        }
        Ok(worst)
    }

    pub fn sample_dataset(&self, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
        let mut rng = rng_for(seed, stream, 0);
        let rows = (0..n).map(|_| self.sample_pair(&mut rng).map(|d| (d.x, d.y))).collect::<Result<_>>()?;
        Ok(Dataset { dim: self.input_dim(), rows })
    }

    pub fn sample_representative_dataset(&self, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
        let mut rng = rng_for(seed, stream, 0);
        let rows =
            (0..n).map(|_| self.sample_representative_pair(&mut rng).map(|d| (d.x, d.y))).collect::<Result<_>>()?;
        Ok(Dataset { dim: self.input_dim(), rows })
    }
}

/// Rows `(x, y)` of a fixed input dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub rows: Vec<(Vec<f64>, f64)>,
}

impl Dataset {
    pub fn new(dim: usize, rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|(x, _)| x.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.0.len() });
        }
        Ok(Self { dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `dim,<d>`, then `x_0,...,x_{d-1},y` per row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("dim,{}\n", self.dim);
        for (x, y) in &self.rows {
            for v in x {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            let _ = writeln!(out, "{}", fmt_f64(*y));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let schema = |line: usize, msg: String| Error::Schema { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        let dim = match lines.next() {
            Some((_, h)) => h
                .strip_prefix("dim,")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .ok_or_else(|| schema(1, "expected header `dim,<d>`".into()))?,
            None => return Err(schema(1, "missing header".into())),
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(schema(i + 1, format!("expected {} fields, found {}", dim + 1, fields.len())));
            }
            let vals: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.trim().parse::<f64>()).collect();
            let mut vals = vals.map_err(|_| schema(i + 1, "non-numeric field".into()))?;
            let y = vals.pop().expect("dim + 1 ≥ 1 fields");
            rows.push((vals, y));
        }
        Ok(Self { dim, rows })
    }

    /// Errors with the first row whose input is not canonical.
    pub fn check_canonical(&self, resolver: &OrbitResolver) -> Result<()> {
        for (i, (x, _)) in self.rows.iter().enumerate() {
            if !resolver.is_canonical(x)? {
                return Err(Error::NotCanonical { index: i });
            }
        }
        Ok(())
    }
}

/// Options shared by the builtin scenarios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioOptions {
    pub flip_prob: f64,
    /// Seed for the scenario's own patterns; fixed so a scenario is one object.
    pub pattern_seed: u64,
    /// Order of the rotation group in `restricted-rotation`.
    pub rotation_order: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { flip_prob: 0.1, pattern_seed: 0, rotation_order: ROTATION_ORDER }
    }
}

pub fn builtin_scenario(name: &str, opts: ScenarioOptions) -> Result<GenerativeSpec> {
    match name {
        "swap-toy" => swap_toy(opts),
        "restricted-rotation" => restricted_rotation(opts),
        "shifted-signals" => shifted_signals(opts),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

fn noise_for(opts: ScenarioOptions) -> Noise {
    if opts.flip_prob == 0.0 {
        Noise::None
    } else {
        Noise::LabelFlip(opts.flip_prob)
    }
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Swapping two coordinates of `R²`; eight patterns labeled by `sign(a + b)`.
fn swap_toy(opts: ScenarioOptions) -> Result<GenerativeSpec> {
    let resolver = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
    let reps: Vec<Vec<f64>> = [(1.0, 0.0), (2.0, -1.0), (3.0, 1.0), (0.0, -2.0), (-1.0, -3.0), (2.0, 1.0), (1.0, -2.0), (-0.5, -1.0)]
        .iter()
        .map(|&(a, b)| vec![a, b])
        .collect();
    let targets = reps.iter().map(|r| if r[0] + r[1] > 0.0 { 1.0 } else { -1.0 }).collect();
    let kernel = GroupKernel::uniform(resolver.action().group())?;
    GenerativeSpec::new("swap-toy", resolver, reps.clone(), uniform_weights(reps.len()), kernel, targets, noise_for(opts))
}

pub const ROTATION_ORDER: usize = 8;
pub const ROTATION_BLOCKS: usize = 2;
const ROTATION_PATTERNS: usize = 64;

/// Rotations by multiples of `2π/k` on two planes, with the group part
/// limited to at most two steps either way (fewer for `k < 5`), so part of
/// each orbit never occurs.
fn restricted_rotation(opts: ScenarioOptions) -> Result<GenerativeSpec> {
    let k = opts.rotation_order;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("rotation order {k} is below 2")));
    }
    let resolver = OrbitResolver::new(GroupAction::rotation(k, ROTATION_BLOCKS, OutputRep::Trivial)?);
    let mut rng = rng_for(opts.pattern_seed, streams::SCENARIO, 1);
    let sector = 2.0 * PI / k as f64;
    let mut reps = Vec::with_capacity(ROTATION_PATTERNS);
    let mut targets = Vec::with_capacity(ROTATION_PATTERNS);
    for _ in 0..ROTATION_PATTERNS {
        let theta = sector * rng.random_range(0.1..0.9);
        let radius = rng.random_range(0.5..1.5);
        let mut rep = vec![radius * theta.cos(), radius * theta.sin()];
        for _ in 2..2 * ROTATION_BLOCKS {
            rep.push(rng.sample(StandardNormal));
        }
        targets.push(if rep[2] + 0.5 * rep[3] > 0.0 { 1.0 } else { -1.0 });
        reps.push(rep);
    }
    let reach = 2.min((k as i64 - 1) / 2);
    let support: Vec<Element> = (-reach..=reach).map(|j| Element(j.rem_euclid(k as i64))).collect();
    let kernel = GroupKernel::uniform_over(&support)?;
    GenerativeSpec::new("restricted-rotation", resolver, reps, uniform_weights(ROTATION_PATTERNS), kernel, targets, noise_for(opts))
}

pub const SHIFT_WINDOW: usize = 16;
const SHIFT_PATTERN_LEN: usize = 8;
const SHIFT_PATTERNS: usize = 64;
/// Group parts are shifts `0..=4` of left-aligned patterns, the same law as
/// shifts `−2..=2` of patterns centred two places in.
pub const SHIFT_MAX: i64 = 4;

fn shifted_signals(opts: ScenarioOptions) -> Result<GenerativeSpec> {
    let resolver = OrbitResolver::new(GroupAction::shift(SHIFT_WINDOW, OutputRep::Trivial)?);
    let mut rng = rng_for(opts.pattern_seed, streams::SCENARIO, 2);
    let mut reps = Vec::with_capacity(SHIFT_PATTERNS);
    let mut targets = Vec::with_capacity(SHIFT_PATTERNS);
    for _ in 0..SHIFT_PATTERNS {
        let mut rep = vec![0.0; SHIFT_WINDOW];
        let lead: f64 = rng.random_range(0.5..1.5);
        rep[0] = if rng.random::<bool>() { lead } else { -lead };
        for v in rep.iter_mut().take(SHIFT_PATTERN_LEN).skip(1) {
            *v = rng.sample(StandardNormal);
        }
        let score: f64 = rep.iter().take(SHIFT_PATTERN_LEN).enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).sum();
        targets.push(if score > 0.0 { 1.0 } else { -1.0 });
        reps.push(rep);
    }
    let support: Vec<Element> = (0..=SHIFT_MAX).map(Element).collect();
    let kernel = GroupKernel::uniform_over(&support)?;
    GenerativeSpec::new("shifted-signals", resolver, reps, uniform_weights(SHIFT_PATTERNS), kernel, targets, noise_for(opts))
}
