//! Group tables, group actions on inputs and outputs, and orbit canonicalization.
//!
//! Two kinds of groups are supported: finite groups given by an explicit
//! multiplication table, and the integer shift group `Z`. The shift group is
//! infinite, so it never gets a table; every operation on it is integer
//! arithmetic and only its effective support (the shifts that keep a pattern
//! inside its window) is ever exercised.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A group element. For finite tables this is the row index; for the shift
/// group it is the signed shift amount.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(pub i64);

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum TableKind {
    Cyclic(usize),
    Other,
}

/// A finite group given by its composition and inverse tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroupTable {
    name: String,
    order: usize,
    compose: Vec<usize>,
    inverse: Vec<usize>,
    identity: usize,
    kind: TableKind,
}

impl FiniteGroupTable {
    /// The cyclic group `C_k`; element `j` is the `j`-th power of the generator.
    pub fn cyclic(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidGroup("cyclic group of order 0".into()));
        }
        let compose = (0..k * k).map(|ij| (ij / k + ij % k) % k).collect();
        let inverse = (0..k).map(|j| (k - j) % k).collect();
        Ok(Self {
            name: format!("C{k}"),
            order: k,
            compose,
            inverse,
            identity: 0,
            kind: TableKind::Cyclic(k),
        })
    }

    /// The symmetric group on two letters (isomorphic to `C_2`).
    pub fn symmetric2() -> Self {
        let mut table = Self::cyclic(2).expect("order 2 is valid");
        table.name = "S2".into();
        table
    }

    /// Builds a table from raw rows without checking the group axioms.
    ///
    /// Only shapes and index ranges are validated; use
    /// [`verify_group_axioms`] to audit the result.
    pub fn from_raw(
        name: &str,
        compose: Vec<Vec<usize>>,
        inverse: Vec<usize>,
        identity: usize,
    ) -> Result<Self> {
        let order = compose.len();
        if order == 0 {
            return Err(Error::InvalidGroup("empty table".into()));
        }
        if inverse.len() != order || identity >= order {
            return Err(Error::InvalidGroup("inverse/identity do not match table size".into()));
        }
        let mut flat = Vec::with_capacity(order * order);
        for row in &compose {
            if row.len() != order {
                return Err(Error::InvalidGroup("composition table is not square".into()));
            }
            if row.iter().any(|&e| e >= order) {
                return Err(Error::InvalidGroup("composition entry out of range".into()));
            }
            flat.extend_from_slice(row);
        }
        if inverse.iter().any(|&e| e >= order) {
            return Err(Error::InvalidGroup("inverse entry out of range".into()));
        }
        Ok(Self {
            name: name.to_string(),
            order,
            compose: flat,
            inverse,
            identity,
            kind: TableKind::Other,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cyclic_order(&self) -> Option<usize> {
        match self.kind {
            TableKind::Cyclic(k) => Some(k),
            TableKind::Other => None,
        }
    }

    fn index(&self, g: Element) -> Result<usize> {
        if g.0 >= 0 && (g.0 as usize) < self.order {
            Ok(g.0 as usize)
        } else {
            Err(Error::ElementOutOfRange(g.0))
        }
    }

    pub fn compose(&self, g: Element, h: Element) -> Result<Element> {
        let (i, j) = (self.index(g)?, self.index(h)?);
        Ok(Element(self.compose[i * self.order + j] as i64))
    }

    pub fn inverse(&self, g: Element) -> Result<Element> {
        Ok(Element(self.inverse[self.index(g)?] as i64))
    }

    pub fn identity(&self) -> Element {
        Element(self.identity as i64)
    }

    pub fn elements(&self) -> Vec<Element> {
        (0..self.order as i64).map(Element).collect()
    }
}

/// Either a finite table or the (non-compact) integer shift group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Group {
    Finite(FiniteGroupTable),
    Shift,
}

impl Group {
    pub fn identity(&self) -> Element {
        match self {
            Group::Finite(t) => t.identity(),
            Group::Shift => Element(0),
        }
    }

    pub fn compose(&self, g: Element, h: Element) -> Result<Element> {
        match self {
            Group::Finite(t) => t.compose(g, h),
            Group::Shift => g
                .0
                .checked_add(h.0)
                .map(Element)
                .ok_or(Error::ElementOutOfRange(g.0)),
        }
    }

    pub fn inverse(&self, g: Element) -> Result<Element> {
        match self {
            Group::Finite(t) => t.inverse(g),
            Group::Shift => g.0.checked_neg().map(Element).ok_or(Error::ElementOutOfRange(g.0)),
        }
    }

    pub fn contains(&self, g: Element) -> bool {
        match self {
            Group::Finite(t) => t.index(g).is_ok(),
            Group::Shift => true,
        }
    }

    /// All elements for finite groups, `None` for the shift group.
    pub fn elements(&self) -> Option<Vec<Element>> {
        match self {
            Group::Finite(t) => Some(t.elements()),
            Group::Shift => None,
        }
    }

    pub fn order(&self) -> Option<usize> {
        match self {
            Group::Finite(t) => Some(t.order()),
            Group::Shift => None,
        }
    }

    /// Finite groups: every element. Shift group: shifts in `[-radius, radius]`.
    pub fn elements_within(&self, radius: i64) -> Vec<Element> {
        match self {
            Group::Finite(t) => t.elements(),
            Group::Shift => (-radius..=radius).map(Element).collect(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Group::Finite(t) => t.name().to_string(),
            Group::Shift => "Z".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axiom {
    Closure,
    Identity,
    Inverse,
    Associativity,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axiom::Closure => "closure",
            Axiom::Identity => "identity",
            Axiom::Inverse => "inverse",
            Axiom::Associativity => "associativity",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxiomStatus {
    Pass,
    /// Counterexample `(g, h, k)`; unused slots repeat `g`.
    Fail([Element; 3]),
    Skipped(String),
}

#[derive(Clone, Debug)]
pub struct AxiomReport {
    pub group: String,
    pub checks: Vec<(Axiom, AxiomStatus)>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|(_, s)| !matches!(s, AxiomStatus::Fail(_)))
    }

    pub fn first_failure(&self) -> Option<(Axiom, [Element; 3])> {
        self.checks.iter().find_map(|(a, s)| match s {
            AxiomStatus::Fail(w) => Some((*a, *w)),
            _ => None,
        })
    }
}

pub const DEFAULT_AXIOM_CAP: usize = 64;

/// Exhaustively checks the group axioms.
///
/// Finite tables are checked on every element (associativity is skipped
/// above `cap` elements). The shift group is checked on its effective
/// support `[-radius, radius]`.
pub fn verify_group_axioms(group: &Group, cap: usize, radius: i64) -> AxiomReport {
    let elems = group.elements_within(radius);
    let e = group.identity();
    let mut checks = Vec::new();

    let closure = elems.iter().find_map(|&g| {
        elems.iter().find_map(|&h| match group.compose(g, h) {
            Ok(gh) if group.contains(gh) => None,
            _ => Some([g, h, g]),
        })
    });
    checks.push((Axiom::Closure, closure.map_or(AxiomStatus::Pass, AxiomStatus::Fail)));

    let identity = elems.iter().find_map(|&g| {
        let left = group.compose(e, g).ok();
        let right = group.compose(g, e).ok();
        (left != Some(g) || right != Some(g)).then_some([g, e, g])
    });
    checks.push((Axiom::Identity, identity.map_or(AxiomStatus::Pass, AxiomStatus::Fail)));

    let inverse = elems.iter().find_map(|&g| {
        let ok = group.inverse(g).ok().is_some_and(|gi| {
            group.compose(g, gi).ok() == Some(e) && group.compose(gi, g).ok() == Some(e)
        });
        (!ok).then_some([g, group.inverse(g).unwrap_or(g), g])
    });
    checks.push((Axiom::Inverse, inverse.map_or(AxiomStatus::Pass, AxiomStatus::Fail)));

    if elems.len() > cap {
        checks.push((
            Axiom::Associativity,
            AxiomStatus::Skipped(format!("{} elements exceed the cap of {cap}", elems.len())),
        ));
    } else {
        let mut witness = None;
        'outer: for &g in &elems {
            for &h in &elems {
                for &k in &elems {
                    let lhs = group.compose(g, h).and_then(|gh| group.compose(gh, k));
                    let rhs = group.compose(h, k).and_then(|hk| group.compose(g, hk));
                    match (lhs, rhs) {
                        (Ok(a), Ok(b)) if a == b => {}
                        _ => {
                            witness = Some([g, h, k]);
                            break 'outer;
                        }
                    }
                }
            }
        }
        checks.push((Axiom::Associativity, witness.map_or(AxiomStatus::Pass, AxiomStatus::Fail)));
    }
    AxiomReport { group: group.name(), checks }
}

/// How the group acts on input vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum InputRep {
    /// `(g·x)[perm_g(i)] = x[i]`; one permutation per table element.
    Permutation { dim: usize, perms: Vec<Vec<usize>> },
    /// `C_k` rotating each consecutive pair of coordinates by `2πj/k`.
    RotationBlocks { blocks: usize },
    /// Integer shifts of a length-`window` zero-padded sequence.
    Shift { window: usize },
}

/// How the group acts on scalar outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputRep {
    Trivial,
    /// A ±1 character of the group (parity of the element index).
    Sign,
}

/// A measurable action of a group on inputs (`φ`) and outputs (`ψ`).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAction {
    group: Group,
    input: InputRep,
    output: OutputRep,
}

impl GroupAction {
    pub fn new(group: Group, input: InputRep, output: OutputRep) -> Result<Self> {
        match (&group, &input) {
            (Group::Finite(t), InputRep::Permutation { dim, perms }) => {
                if perms.len() != t.order() {
                    return Err(Error::InvalidAction("one permutation per element required".into()));
                }
                for p in perms {
                    let mut seen = vec![false; *dim];
                    if p.len() != *dim || p.iter().any(|&i| i >= *dim || std::mem::replace(&mut seen[i], true)) {
                        return Err(Error::InvalidAction("entry is not a permutation".into()));
                    }
                }
                for g in t.elements() {
                    for h in t.elements() {
                        let gh = t.compose(g, h)?;
                        let (pg, ph, pgh) = (&perms[g.0 as usize], &perms[h.0 as usize], &perms[gh.0 as usize]);
                        if (0..*dim).any(|i| pgh[i] != pg[ph[i]]) {
                            return Err(Error::InvalidAction(format!(
                                "permutations are not a homomorphism at ({g}, {h})"
                            )));
                        }
                    }
                }
            }
            (Group::Finite(t), InputRep::RotationBlocks { blocks }) => {
                if t.cyclic_order().is_none() {
                    return Err(Error::InvalidAction("rotation blocks need a cyclic group".into()));
                }
                if *blocks == 0 {
                    return Err(Error::InvalidAction("at least one rotation block required".into()));
                }
            }
            (Group::Shift, InputRep::Shift { window }) => {
                if *window == 0 {
                    return Err(Error::InvalidAction("empty window".into()));
                }
            }
            _ => return Err(Error::InvalidAction("group kind and input action do not match".into())),
        }
        if output == OutputRep::Sign {
            if let Group::Finite(t) = &group {
                let chi = |g: Element| if g.0 % 2 == 0 { 1.0 } else { -1.0 };
                for g in t.elements() {
                    for h in t.elements() {
                        if chi(t.compose(g, h)?) != chi(g) * chi(h) {
                            return Err(Error::InvalidAction("parity is not a character of this group".into()));
                        }
                    }
                }
            }
        }
        Ok(Self { group, input, output })
    }

    /// `S_2` swapping the two coordinates of `R²`.
    pub fn swap2(output: OutputRep) -> Self {
        Self::new(
            Group::Finite(FiniteGroupTable::symmetric2()),
            InputRep::Permutation { dim: 2, perms: vec![vec![0, 1], vec![1, 0]] },
            output,
        )
        .expect("swap action is valid")
    }

    /// `C_k` cyclically permuting `k` coordinates.
    pub fn cyclic_permutation(k: usize, output: OutputRep) -> Result<Self> {
        let perms = (0..k).map(|j| (0..k).map(|i| (i + j) % k).collect()).collect();
        Self::new(Group::Finite(FiniteGroupTable::cyclic(k)?), InputRep::Permutation { dim: k, perms }, output)
    }

    pub fn rotation(k: usize, blocks: usize, output: OutputRep) -> Result<Self> {
        Self::new(Group::Finite(FiniteGroupTable::cyclic(k)?), InputRep::RotationBlocks { blocks }, output)
    }

    pub fn shift(window: usize, output: OutputRep) -> Result<Self> {
        Self::new(Group::Shift, InputRep::Shift { window }, output)
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn input_rep(&self) -> &InputRep {
        &self.input
    }

    pub fn output_rep(&self) -> &OutputRep {
        &self.output
    }

    pub fn input_dim(&self) -> usize {
        match &self.input {
            InputRep::Permutation { dim, .. } => *dim,
            InputRep::RotationBlocks { blocks } => 2 * blocks,
            InputRep::Shift { window } => *window,
        }
    }

    /// Whether the input representation is by orthogonal matrices.
    pub fn is_orthogonal(&self) -> bool {
        !matches!(self.input, InputRep::Shift { .. })
    }

    fn rotation_cos_sin(&self, g: Element) -> (f64, f64) {
        let k = match &self.group {
            Group::Finite(t) => t.cyclic_order().unwrap_or(1),
            Group::Shift => 1,
        };
        let angle = 2.0 * PI * (g.0 as f64) / (k as f64);
        let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
        (snap(angle.cos()), snap(angle.sin()))
    }

    /// `g · x`.
    pub fn act_input(&self, g: Element, x: &[f64]) -> Result<Vec<f64>> {
        let dim = self.input_dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
        }
        if !self.group.contains(g) {
            return Err(Error::ElementOutOfRange(g.0));
        }
        match &self.input {
            InputRep::Permutation { perms, .. } => {
                let p = &perms[g.0 as usize];
                let mut out = vec![0.0; dim];
                for (i, &xi) in x.iter().enumerate() {
                    out[p[i]] = xi;
                }
                Ok(out)
            }
            InputRep::RotationBlocks { .. } => {
                let (c, s) = self.rotation_cos_sin(g);
                Ok(x.chunks_exact(2).flat_map(|b| [c * b[0] - s * b[1], s * b[0] + c * b[1]]).collect())
            }
            InputRep::Shift { window } => {
                let mut out = vec![0.0; dim];
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let t = i as i64 + g.0;
                    if t < 0 || t >= *window as i64 {
                        return Err(Error::OutOfWindow { shift: g.0, window: *window });
                    }
                    out[t as usize] = xi;
                }
                Ok(out)
            }
        }
    }

    /// The scalar by which `g` acts on outputs.
    pub fn character(&self, g: Element) -> f64 {
        match self.output {
            OutputRep::Trivial => 1.0,
            OutputRep::Sign => {
                if g.0.rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// `g · y`.
    pub fn act_output(&self, g: Element, y: f64) -> f64 {
        self.character(g) * y
    }

    /// Matrix of `g` on the input space, for orthogonal representations.
    pub fn matrix(&self, g: Element) -> Option<DMatrix<f64>> {
        let dim = self.input_dim();
        match &self.input {
            InputRep::Permutation { perms, .. } => {
                let p = perms.get(usize::try_from(g.0).ok()?)?;
                Some(DMatrix::from_fn(dim, dim, |r, c| if p[c] == r { 1.0 } else { 0.0 }))
            }
            InputRep::RotationBlocks { .. } => {
                let (c, s) = self.rotation_cos_sin(g);
                let mut m = DMatrix::zeros(dim, dim);
                for b in 0..dim / 2 {
                    let i = 2 * b;
                    m[(i, i)] = c;
                    m[(i, i + 1)] = -s;
                    m[(i + 1, i)] = s;
                    m[(i + 1, i + 1)] = c;
                }
                Some(m)
            }
            InputRep::Shift { .. } => None,
        }
    }
}

/// The named canonicalization rule selecting one representative per orbit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanonicalRule {
    /// Lexicographically largest orbit element (sorted descending for `S_n`).
    SortedDescending,
    /// First non-zero block has angle in `[0, 2π/k)`.
    CanonicalSector,
    /// Support starts at index 0.
    LeftAligned,
}

impl fmt::Display for CanonicalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CanonicalRule::SortedDescending => "sorted-descending",
            CanonicalRule::CanonicalSector => "canonical-sector",
            CanonicalRule::LeftAligned => "support-left-aligned",
        })
    }
}

/// Decomposition `x = group_part · representative`.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub representative: Vec<f64>,
    pub group_part: Element,
}

/// Computes `π_{X_φ}` and `π_G` for a free action.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitResolver {
    action: GroupAction,
    rule: CanonicalRule,
}

const SECTOR_TOL: f64 = 1e-9;
const ZERO_BLOCK_TOL: f64 = 1e-9;

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl OrbitResolver {
    pub fn new(action: GroupAction) -> Self {
        let rule = match action.input_rep() {
            InputRep::Permutation { .. } => CanonicalRule::SortedDescending,
            InputRep::RotationBlocks { .. } => CanonicalRule::CanonicalSector,
            InputRep::Shift { .. } => CanonicalRule::LeftAligned,
        };
        Self { action, rule }
    }

    pub fn action(&self) -> &GroupAction {
        &self.action
    }

    pub fn rule(&self) -> CanonicalRule {
        self.rule
    }

    pub fn resolve(&self, x: &[f64]) -> Result<Resolved> {
        let dim = self.action.input_dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
        }
        let group = self.action.group();
        match self.rule {
            CanonicalRule::SortedDescending => {
                let elements = group.elements().expect("permutation actions are finite");
                let e = group.identity();
                let mut best: Option<(Vec<f64>, Element)> = None;
                for g in elements {
                    let y = self.action.act_input(g, x)?;
                    if g != e && y.iter().zip(x).all(|(a, b)| a == b) {
                        return Err(Error::NonFreeOrbit { fixed_by: g.0 });
                    }
                    if best.as_ref().is_none_or(|(b, _)| lex_cmp(&y, b) == Ordering::Greater) {
                        best = Some((y, g));
                    }
                }
                let (representative, g) = best.expect("group has an identity");
                Ok(Resolved { representative, group_part: group.inverse(g)? })
            }
            CanonicalRule::CanonicalSector => {
                let k = group.order().unwrap_or(1);
                if k == 1 {
                    return Ok(Resolved { representative: x.to_vec(), group_part: group.identity() });
                }
                let block = x
                    .chunks_exact(2)
                    .find(|b| b[0].hypot(b[1]) > ZERO_BLOCK_TOL)
                    .ok_or(Error::NonFreeOrbit { fixed_by: 1 })?;
                let theta = block[1].atan2(block[0]).rem_euclid(2.0 * PI);
                let sector = 2.0 * PI / k as f64;
                let j = ((theta / sector + SECTOR_TOL).floor() as i64).rem_euclid(k as i64);
                let g = Element(j);
                let representative = self.action.act_input(group.inverse(g)?, x)?;
                Ok(Resolved { representative, group_part: g })
            }
            CanonicalRule::LeftAligned => {
                let start = x.iter().position(|&v| v != 0.0).ok_or(Error::NonFreeOrbit { fixed_by: 1 })?;
                let g = Element(start as i64);
                let representative = self.action.act_input(Element(-g.0), x)?;
                Ok(Resolved { representative, group_part: g })
            }
        }
    }

    /// True when `x` resolves to itself with the identity as group part.
    pub fn is_canonical(&self, x: &[f64]) -> Result<bool> {
        let r = self.resolve(x)?;
        let same = r.representative.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12);
        Ok(r.group_part == self.action.group().identity() && same)
    }

    /// Canonical form of `x` (the representative of its orbit).
    pub fn canonicalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.resolve(x)?.representative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cyclic_composition() {
        let c4 = FiniteGroupTable::cyclic(4).unwrap();
        assert_eq!(c4.compose(Element(1), Element(1)).unwrap(), Element(2));
        for g in c4.elements() {
            assert_eq!(c4.compose(c4.identity(), g).unwrap(), g);
        }
        assert!(c4.compose(Element(4), Element(0)).is_err());
    }

    #[test]
    fn shift_composition_is_addition() {
        let z = Group::Shift;
        assert_eq!(z.compose(Element(2), Element(-5)).unwrap(), Element(-3));
        assert_eq!(z.inverse(Element(3)).unwrap(), Element(-3));
    }

    #[test]
    fn swap_rotation_and_shift_actions() {
        let swap = GroupAction::swap2(OutputRep::Trivial);
        assert_eq!(swap.act_input(Element(1), &[3.0, 7.0]).unwrap(), vec![7.0, 3.0]);

        let rot = GroupAction::rotation(4, 1, OutputRep::Trivial).unwrap();
        assert_eq!(rot.act_input(Element(1), &[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);

        let shift = GroupAction::shift(8, OutputRep::Trivial).unwrap();
        let mut e0 = vec![0.0; 8];
        e0[0] = 1.0;
        let moved = shift.act_input(Element(2), &e0).unwrap();
        assert_eq!(moved.iter().position(|&v| v == 1.0), Some(2));
        assert!(matches!(shift.act_input(Element(-1), &e0), Err(Error::OutOfWindow { .. })));
        assert!(matches!(
            shift.act_input(Element(0), &[1.0]),
            Err(Error::DimensionMismatch { expected: 8, got: 1 })
        ));
    }

    #[test]
    fn resolve_examples() {
        let swap = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
        let r = swap.resolve(&[3.0, 7.0]).unwrap();
        assert_eq!(r.representative, vec![7.0, 3.0]);
        assert_eq!(r.group_part, Element(1));
        assert!(matches!(swap.resolve(&[5.0, 5.0]), Err(Error::NonFreeOrbit { fixed_by: 1 })));

        let shift = OrbitResolver::new(GroupAction::shift(8, OutputRep::Trivial).unwrap());
        let r = shift.resolve(&[0.0, 0.0, 1.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.representative, vec![1.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.group_part, Element(2));
        assert!(shift.resolve(&[0.0; 8]).is_err());
    }

    #[test]
    fn rotation_resolver_lands_in_sector() {
        let action = GroupAction::rotation(8, 2, OutputRep::Trivial).unwrap();
        let res = OrbitResolver::new(action.clone());
        let x = [-0.3, -0.9, 0.5, 0.1];
        let r = res.resolve(&x).unwrap();
        let theta = r.representative[1].atan2(r.representative[0]);
        assert!((-1e-9..2.0 * PI / 8.0).contains(&theta));
        let back = action.act_input(r.group_part, &r.representative).unwrap();
        assert!(close(&back, &x, 1e-12));
        assert!(res.resolve(&[0.0; 4]).is_err());
    }

    #[test]
    fn corrupted_inverse_is_reported() {
        let mut rows: Vec<Vec<usize>> = (0..4).map(|i| (0..4).map(|j| (i + j) % 4).collect()).collect();
        let good = FiniteGroupTable::from_raw("C4", rows.clone(), vec![0, 3, 2, 1], 0).unwrap();
        assert!(verify_group_axioms(&Group::Finite(good), DEFAULT_AXIOM_CAP, 0).all_passed());

        let bad = FiniteGroupTable::from_raw("C4*", rows.clone(), vec![0, 1, 2, 1], 0).unwrap();
        let report = verify_group_axioms(&Group::Finite(bad), DEFAULT_AXIOM_CAP, 0);
        let (axiom, witness) = report.first_failure().unwrap();
        assert_eq!(axiom, Axiom::Inverse);
        assert_eq!(witness[0], Element(1));

        rows[1][1] = 0;
        let broken = FiniteGroupTable::from_raw("C4?", rows, vec![0, 3, 2, 1], 0).unwrap();
        assert!(!verify_group_axioms(&Group::Finite(broken), DEFAULT_AXIOM_CAP, 0).all_passed());
    }

    #[test]
    fn shift_axioms_on_effective_support() {
        let report = verify_group_axioms(&Group::Shift, DEFAULT_AXIOM_CAP, 4);
        assert!(report.all_passed());
        assert!(report.checks.iter().all(|(_, s)| *s == AxiomStatus::Pass));
    }

    #[test]
    fn bad_permutation_homomorphism_rejected() {
        let perms = vec![vec![0, 1, 2], vec![1, 0, 2], vec![0, 2, 1]];
        let g = Group::Finite(FiniteGroupTable::cyclic(3).unwrap());
        assert!(GroupAction::new(g, InputRep::Permutation { dim: 3, perms }, OutputRep::Trivial).is_err());
    }

    #[test]
    fn sign_character_needs_even_order() {
        assert!(GroupAction::cyclic_permutation(3, OutputRep::Sign).is_err());
        let a = GroupAction::cyclic_permutation(4, OutputRep::Sign).unwrap();
        assert_eq!(a.act_output(Element(3), 2.0), -2.0);
    }
}
