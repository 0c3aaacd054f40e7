//! The disintegration kernel: the conditional law of the group part given the
//! orbit representative.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::group::{Element, Group, GroupAction, OrbitResolver};

pub const NORMALIZATION_TOL: f64 = 1e-12;

/// How representatives are grouped before a distribution is attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucketing {
    /// One distribution shared by every representative.
    Global,
    /// Representatives hashed into `buckets` classes.
    Hashed { buckets: u64 },
}

/// A finite-support probability kernel from representatives to group elements.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupKernel {
    bucketing: Bucketing,
    tables: BTreeMap<u64, Vec<(Element, f64)>>,
}

fn tidy(weights: Vec<(Element, f64)>) -> Result<Vec<(Element, f64)>> {
    let mut merged: BTreeMap<Element, f64> = BTreeMap::new();
    for (g, w) in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidKernel(format!("weight {w} for element {g} is not a probability")));
        }
        *merged.entry(g).or_insert(0.0) += w;
    }
    Ok(merged.into_iter().filter(|&(_, w)| w > 0.0).collect())
}

fn check_normalized(table: &[(Element, f64)]) -> Result<()> {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidKernel(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Quantized FNV-1a hash of a representative, stable under last-bit noise.
fn representative_hash(rep: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &v in rep {
        let q = (v * 1e9).round() as i64;
        for byte in q.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

impl GroupKernel {
    /// A representative-independent kernel. Weights must sum to one.
    pub fn global(weights: Vec<(Element, f64)>) -> Result<Self> {
        let table = tidy(weights)?;
        check_normalized(&table)?;
        Ok(Self { bucketing: Bucketing::Global, tables: BTreeMap::from([(0, table)]) })
    }

    /// Like [`GroupKernel::global`] but skips the normalization check.
    /// Only useful for exercising failure paths.
    pub fn global_unnormalized(weights: Vec<(Element, f64)>) -> Result<Self> {
        Ok(Self { bucketing: Bucketing::Global, tables: BTreeMap::from([(0, tidy(weights)?)]) })
    }

    pub fn hashed(buckets: u64, tables: BTreeMap<u64, Vec<(Element, f64)>>) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::InvalidKernel("zero buckets".into()));
        }
        let mut clean = BTreeMap::new();
        for (b, t) in tables {
            if b >= buckets {
                return Err(Error::InvalidKernel(format!("bucket {b} out of range")));
            }
            let t = tidy(t)?;
            check_normalized(&t)?;
            clean.insert(b, t);
        }
        Ok(Self { bucketing: Bucketing::Hashed { buckets }, tables: clean })
    }

    pub fn point_mass(g: Element) -> Self {
        Self::global(vec![(g, 1.0)]).expect("point mass is normalized")
    }

    /// Equal weight on each listed element.
    pub fn uniform_over(elements: &[Element]) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidKernel("empty support".into()));
        }
        let w = 1.0 / elements.len() as f64;
        Self::global(elements.iter().map(|&g| (g, w)).collect())
    }

    /// The normalized counting measure on a finite group.
    pub fn uniform(group: &Group) -> Result<Self> {
        let elements = group
            .elements()
            .ok_or_else(|| Error::InvalidKernel("the shift group has no uniform distribution".into()))?;
        Self::uniform_over(&elements)
    }

    pub fn bucketing(&self) -> Bucketing {
        self.bucketing
    }

    pub fn bucket_of(&self, rep: &[f64]) -> u64 {
        match self.bucketing {
            Bucketing::Global => 0,
            Bucketing::Hashed { buckets } => representative_hash(rep) % buckets,
        }
    }

    /// `κ(x_φ, ·)`, or `None` when the representative's bucket carries no mass.
    pub fn distribution(&self, rep: &[f64]) -> Option<&[(Element, f64)]> {
        self.tables.get(&self.bucket_of(rep)).map(Vec::as_slice)
    }

    pub fn tables(&self) -> &BTreeMap<u64, Vec<(Element, f64)>> {
        &self.tables
    }

    /// Union of the supports of every bucket, sorted.
    pub fn support(&self) -> Vec<Element> {
        let mut s: Vec<Element> = self.tables.values().flatten().map(|&(g, _)| g).collect();
        s.sort();
        s.dedup();
        s
    }

    /// `κ(x_φ, {g})`; zero off the support.
    pub fn probability(&self, rep: &[f64], g: Element) -> f64 {
        self.distribution(rep)
            .and_then(|d| d.iter().find(|(h, _)| *h == g).map(|&(_, w)| w))
            .unwrap_or(0.0)
    }

    pub fn sample(&self, rep: &[f64], rng: &mut impl rand::Rng) -> Result<Element> {
        let dist = self
            .distribution(rep)
            .ok_or_else(|| Error::InvalidKernel("representative falls in an empty bucket".into()))?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(g, w) in dist {
            acc += w;
            if u < acc {
                return Ok(g);
            }
        }
        Ok(dist.last().expect("non-empty distribution").0)
    }

    /// Checks that every support element acts validly on `rep`.
    pub fn validate_for(&self, action: &GroupAction, rep: &[f64]) -> Result<()> {
        let dist = self
            .distribution(rep)
            .ok_or_else(|| Error::InvalidKernel("representative falls in an empty bucket".into()))?;
        for &(g, _) in dist {
            action.act_input(g, rep)?;
        }
        Ok(())
    }

    /// True when the kernel is global and uniform over every element of a finite group.
    pub fn is_uniform_over(&self, group: &Group) -> bool {
        let Some(elements) = group.elements() else { return false };
        if self.bucketing != Bucketing::Global {
            return false;
        }
        let table = &self.tables[&0];
        let w = 1.0 / elements.len() as f64;
        table.len() == elements.len()
            && elements
                .iter()
                .all(|&g| table.iter().any(|&(h, p)| h == g && (p - w).abs() <= NORMALIZATION_TOL))
    }

    /// `(1 − λ)·self + λ·other` for global kernels.
    pub fn mix(&self, other: &GroupKernel, lambda: f64) -> Result<Self> {
        if self.bucketing != Bucketing::Global || other.bucketing != Bucketing::Global {
            return Err(Error::InvalidKernel("mixing is defined for global kernels only".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("mixing weight {lambda} outside [0, 1]")));
        }
        let a = self.tables[&0].iter().map(|&(g, w)| (g, (1.0 - lambda) * w));
        let b = other.tables[&0].iter().map(|&(g, w)| (g, lambda * w));
        Self::global(a.chain(b).collect())
    }

    /// Total-variation distance between `κ(rep, ·)` under two kernels.
    pub fn total_variation(&self, other: &GroupKernel, rep: &[f64]) -> f64 {
        let mut elems: Vec<Element> = self.support();
        elems.extend(other.support());
        elems.sort();
        elems.dedup();
        0.5 * elems.iter().map(|&g| (self.probability(rep, g) - other.probability(rep, g)).abs()).sum::<f64>()
    }

    /// CSV with columns `bucket_id,element_id,weight`; global kernels use
    /// the bucket id `global`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_id,element_id,weight\n");
        for (b, table) in &self.tables {
            for &(g, w) in table {
                let bucket = match self.bucketing {
                    Bucketing::Global => "global".to_string(),
                    Bucketing::Hashed { .. } => b.to_string(),
                };
                let _ = writeln!(out, "{bucket},{},{}", g.0, crate::io::fmt_f64(w));
            }
        }
        out
    }

    /// Parses the CSV written by [`GroupKernel::to_csv`]. Hash-bucketed tables
    /// need the bucket count, which the file does not carry.
    pub fn from_csv(text: &str, path: &Path, buckets: Option<u64>) -> Result<Self> {
        let schema = |line: usize, msg: String| Error::Schema { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "bucket_id,element_id,weight" => {}
            _ => return Err(schema(1, "expected header `bucket_id,element_id,weight`".into())),
        }
        let mut global = Vec::new();
        let mut tables: BTreeMap<u64, Vec<(Element, f64)>> = BTreeMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(schema(i + 1, format!("expected 3 fields, found {}", fields.len())));
            }
            let g: i64 = fields[1].parse().map_err(|_| schema(i + 1, format!("bad element id `{}`", fields[1])))?;
            let w: f64 = fields[2].parse().map_err(|_| schema(i + 1, format!("bad weight `{}`", fields[2])))?;
            if fields[0] == "global" {
                global.push((Element(g), w));
            } else {
                let b: u64 = fields[0].parse().map_err(|_| schema(i + 1, format!("bad bucket id `{}`", fields[0])))?;
                tables.entry(b).or_default().push((Element(g), w));
            }
        }
        match (global.is_empty(), tables.is_empty()) {
            (false, true) => Self::global(global),
            (true, false) => {
                let buckets = buckets.ok_or_else(|| schema(1, "hash-bucketed kernel needs a bucket count".into()))?;
                Self::hashed(buckets, tables)
            }
            (true, true) => Err(schema(1, "kernel file has no rows".into())),
            (false, false) => Err(schema(1, "mixes global and bucketed rows".into())),
        }
    }
}

/// Empirical frequencies of group parts per representative bucket.
///
/// Buckets without data are left out of the kernel rather than smoothed.
pub fn estimate_kernel(inputs: &[Vec<f64>], resolver: &OrbitResolver, bucketing: Bucketing) -> Result<GroupKernel> {
    if inputs.is_empty() {
        return Err(Error::EmptySample);
    }
    let probe = GroupKernel { bucketing, tables: BTreeMap::new() };
    let mut counts: BTreeMap<u64, BTreeMap<Element, usize>> = BTreeMap::new();
    for x in inputs {
        let r = resolver.resolve(x)?;
        let bucket = probe.bucket_of(&r.representative);
        *counts.entry(bucket).or_default().entry(r.group_part).or_insert(0) += 1;
    }
    let tables: BTreeMap<u64, Vec<(Element, f64)>> = counts
        .into_iter()
        .map(|(b, c)| {
            let total: usize = c.values().sum();
            (b, c.into_iter().map(|(g, n)| (g, n as f64 / total as f64)).collect())
        })
        .collect();
    match bucketing {
        Bucketing::Global => GroupKernel::global(tables.into_values().next().unwrap_or_default()),
        Bucketing::Hashed { buckets } => GroupKernel::hashed(buckets, tables),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{FiniteGroupTable, OutputRep};
    use crate::rng::rng_for;

    #[test]
    fn uniform_kernels() {
        let c4 = Group::Finite(FiniteGroupTable::cyclic(4).unwrap());
        let k = GroupKernel::uniform(&c4).unwrap();
        for g in c4.elements().unwrap() {
            assert_eq!(k.probability(&[], g), 0.25);
        }
        let c2 = GroupKernel::uniform(&Group::Finite(FiniteGroupTable::symmetric2())).unwrap();
        assert_eq!(c2.probability(&[1.0, 0.0], Element(0)), 0.5);
        let trivial = GroupKernel::uniform(&Group::Finite(FiniteGroupTable::cyclic(1).unwrap())).unwrap();
        assert_eq!(trivial.probability(&[], Element(0)), 1.0);
        assert!(GroupKernel::uniform(&Group::Shift).is_err());
    }

    #[test]
    fn probability_reads_back_table() {
        let k = GroupKernel::global(vec![(Element(7), 0.25), (Element(0), 0.5), (Element(1), 0.25)]).unwrap();
        assert_eq!(k.probability(&[1.0, 0.0], Element(0)), 0.5);
        assert_eq!(k.probability(&[1.0, 0.0], Element(4)), 0.0);
        assert!(GroupKernel::global(vec![(Element(0), 0.5)]).is_err());
        assert!(GroupKernel::global(vec![(Element(0), -0.5), (Element(1), 1.5)]).is_err());
    }

    #[test]
    fn point_mass_always_samples_identity() {
        let k = GroupKernel::point_mass(Element(0));
        let mut rng = rng_for(1, 0, 0);
        assert!((0..100).all(|_| k.sample(&[1.0], &mut rng).unwrap() == Element(0)));
    }

    #[test]
    fn sampling_frequencies_match_weights() {
        let k = GroupKernel::global(vec![(Element(0), 0.7), (Element(1), 0.3)]).unwrap();
        let mut rng = rng_for(42, 0, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| k.sample(&[2.0, 1.0], &mut rng).unwrap() == Element(0)).count();
        assert!((hits as f64 / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn single_point_estimate_is_point_mass() {
        let res = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
        let k = estimate_kernel(&[vec![1.0, 4.0]], &res, Bucketing::Global).unwrap();
        assert_eq!(k.probability(&[4.0, 1.0], Element(1)), 1.0);
        assert_eq!(k.support(), vec![Element(1)]);
    }

    #[test]
    fn estimate_rejects_non_free_inputs() {
        let res = OrbitResolver::new(GroupAction::swap2(OutputRep::Trivial));
        assert!(matches!(
            estimate_kernel(&[vec![3.0, 3.0]], &res, Bucketing::Global),
            Err(Error::NonFreeOrbit { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let k = GroupKernel::global(vec![(Element(-2), 0.1), (Element(0), 0.6), (Element(2), 0.3)]).unwrap();
        let back = GroupKernel::from_csv(&k.to_csv(), Path::new("k.csv"), None).unwrap();
        assert_eq!(k, back);

        let mut tables = BTreeMap::new();
        tables.insert(1, vec![(Element(0), 1.0)]);
        tables.insert(3, vec![(Element(0), 0.5), (Element(1), 0.5)]);
        let h = GroupKernel::hashed(4, tables).unwrap();
        assert_eq!(GroupKernel::from_csv(&h.to_csv(), Path::new("k.csv"), Some(4)).unwrap(), h);
        assert!(GroupKernel::from_csv("bucket_id,element_id,weight\nglobal,x,1\n", Path::new("k.csv"), None).is_err());
    }

    #[test]
    fn mixing_reaches_uniform() {
        let g = Group::Finite(FiniteGroupTable::cyclic(4).unwrap());
        let k = GroupKernel::point_mass(Element(0));
        let u = GroupKernel::uniform(&g).unwrap();
        assert!(k.mix(&u, 1.0).unwrap().is_uniform_over(&g));
        assert!(!k.mix(&u, 0.5).unwrap().is_uniform_over(&g));
        assert!((k.total_variation(&u, &[]) - 0.75).abs() < 1e-15);
    }
}
