//! Overlapping-population structures as disjoint strata with prevalences.
//!
//! An overall population with `m` possibly intersecting sub-populations is
//! partitioned into strata indexed by the non-empty subsets `J` of
//! hypothesis indices: a patient is in stratum `J` exactly when they belong
//! to every sub-population in `J` and no other. Stratum prevalences sum to
//! one. Subsets are bitmasks, which keeps the `2^m` stratum enumeration
//! cheap for the `m <= 24` supported here.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Hard cap on the number of hypotheses so bitmask enumeration stays
/// tractable.
pub const MAX_HYPOTHESES: usize = 24;

/// Prevalences this far below machine scale are dropped before evaluation.
const PRUNE_EPS: f64 = 1e-15;

/// A subset of hypothesis indices `{1..m}`, stored as a bitmask
/// (bit `k` set means index `k + 1` is a member).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset(u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_mask(mask: u32) -> Self {
        Subset(mask)
    }

    /// Builds a subset from 1-based hypothesis indices.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &i in indices {
            if i == 0 || i > MAX_HYPOTHESES {
                return Err(Error::invalid(format!(
                    "hypothesis index {i} outside 1..={MAX_HYPOTHESES}"
                )));
            }
            mask |= 1 << (i - 1);
        }
        Ok(Subset(mask))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    /// Member indices, 1-based and ascending.
    pub fn indices(self) -> Vec<usize> {
        (0..MAX_HYPOTHESES)
            .filter(|&k| self.0 & (1 << k) != 0)
            .map(|k| k + 1)
            .collect()
    }

    pub fn contains(self, index: usize) -> bool {
        (1..=MAX_HYPOTHESES).contains(&index) && self.0 & (1 << (index - 1)) != 0
    }

    pub fn intersect(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Largest member index, or 0 when empty.
    pub fn max_index(self) -> usize {
        (32 - self.0.leading_zeros()) as usize
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.indices().iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.indices().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let indices = Vec::<usize>::deserialize(deserializer)?;
        Subset::from_indices(&indices).map_err(D::Error::custom)
    }
}

/// One disjoint stratum: the set of sub-populations its patients belong to,
/// and its relative prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub subset: Subset,
    pub pi: f64,
}

/// A validated partition of the overall population into disjoint strata.
///
/// Invariants: subsets are non-empty, distinct and sorted by ascending
/// bitmask; prevalences are positive and sum to one (renormalized to within
/// 1e-12 at construction); every hypothesis index `1..=m` occurs in at
/// least one stratum. Zero-prevalence strata are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStructure {
    m: usize,
    strata: Vec<Stratum>,
}

impl PopulationStructure {
    /// Validates a list of `(subset, prevalence)` pairs. The number of
    /// hypotheses is the largest index mentioned.
    pub fn new(strata: Vec<(Subset, f64)>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::invalid("structure needs at least one stratum"));
        }
        for &(subset, pi) in &strata {
            if subset.is_empty() {
                return Err(Error::invalid("stratum subset must be non-empty"));
            }
            if !(pi >= 0.0) || !pi.is_finite() {
                return Err(Error::invalid(format!(
                    "prevalence of stratum {subset:?} must be a finite non-negative number, got {pi}"
                )));
            }
        }
        let total: f64 = strata.iter().map(|&(_, pi)| pi).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "prevalences must sum to 1 (got {total})"
            )));
        }

        let mut kept: Vec<Stratum> = strata
            .into_iter()
            .filter(|&(_, pi)| pi > 0.0)
            .map(|(subset, pi)| Stratum {
                subset,
                pi: pi / total,
            })
            .collect();
        if kept.is_empty() {
            return Err(Error::invalid("all strata have zero prevalence"));
        }
        kept.sort_by_key(|s| s.subset);
        if kept.windows(2).any(|w| w[0].subset == w[1].subset) {
            return Err(Error::invalid("duplicate stratum subsets"));
        }

        let m = kept.iter().map(|s| s.subset.max_index()).max().unwrap_or(0);
        let mut covered = Subset::EMPTY;
        for s in &kept {
            covered = covered.union(s.subset);
        }
        for i in 1..=m {
            if !covered.contains(i) {
                return Err(Error::invalid(format!(
                    "hypothesis {i} appears in no stratum with positive prevalence"
                )));
            }
        }
        Ok(PopulationStructure { m, strata: kept })
    }

    /// Nested populations `P_1 ⊃ P_2 ⊃ ... ⊃ P_m` given their cumulative
    /// prevalences `1 = p_1 > p_2 > ... > p_m > 0`. Stratum `i` is
    /// `{1..=i}` with prevalence `p_i - p_{i+1}` (and `p_{m+1} = 0`).
    pub fn nested(tail_probs: &[f64]) -> Result<Self> {
        if tail_probs.is_empty() {
            return Err(Error::invalid("nested structure needs at least one level"));
        }
        if (tail_probs[0] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "outermost population must have prevalence 1, got {}",
                tail_probs[0]
            )));
        }
        for w in tail_probs.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid(format!(
                    "nested prevalences must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(tail_probs[tail_probs.len() - 1] > 0.0) {
            return Err(Error::invalid("innermost prevalence must be positive"));
        }
        let m = tail_probs.len();
        let strata = (0..m)
            .map(|i| {
                let next = if i + 1 < m { tail_probs[i + 1] } else { 0.0 };
                let subset = Subset::from_mask((1u32 << (i + 1)) - 1);
                (subset, tail_probs[i] - next)
            })
            .collect();
        PopulationStructure::new(strata)
    }

    /// Number of hypotheses / treatment policies.
    pub fn n_hypotheses(&self) -> usize {
        self.m
    }

    /// Strata in canonical (ascending bitmask) order.
    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    /// Strata with prevalence above the pruning threshold.
    pub(crate) fn strata_pruned(&self) -> impl Iterator<Item = &Stratum> {
        self.strata.iter().filter(|s| s.pi > PRUNE_EPS)
    }

    /// The hypotheses whose rejection affects stratum `J`: the identity
    /// `J ∩ {1..m}`, the counterpart of [`Self::strata_containing`].
    pub fn hypotheses_affecting(&self, subset: Subset) -> Subset {
        subset.intersect(Subset::from_mask((1u32 << self.m) - 1))
    }

    /// All stored strata whose subset contains hypothesis `i` (1-based).
    pub fn strata_containing(&self, i: usize) -> Result<Vec<Subset>> {
        if i == 0 || i > self.m {
            return Err(Error::invalid(format!(
                "hypothesis index {i} out of range 1..={}",
                self.m
            )));
        }
        Ok(self
            .strata
            .iter()
            .filter(|s| s.subset.contains(i))
            .map(|s| s.subset)
            .collect())
    }

    /// Relative size of sub-population `P_i`: the prevalence mass of all
    /// strata containing `i`.
    pub fn population_prevalence(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.m {
            return Err(Error::invalid(format!(
                "hypothesis index {i} out of range 1..={}",
                self.m
            )));
        }
        Ok(self
            .strata
            .iter()
            .filter(|s| s.subset.contains(i))
            .map(|s| s.pi)
            .sum())
    }
}

// JSON schema used by the CLI: {"m": 2, "strata": [{"subset": [1], "pi": 0.4}, ...]}
#[derive(Serialize, Deserialize)]
struct StructureRepr {
    m: usize,
    strata: Vec<Stratum>,
}

impl Serialize for PopulationStructure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StructureRepr {
            m: self.m,
            strata: self.strata.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PopulationStructure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = StructureRepr::deserialize(deserializer)?;
        let structure =
            PopulationStructure::new(repr.strata.iter().map(|s| (s.subset, s.pi)).collect())
                .map_err(D::Error::custom)?;
        if structure.m != repr.m {
            return Err(D::Error::custom(format!(
                "declared m = {} but strata mention indices up to {}",
                repr.m, structure.m
            )));
        }
        Ok(structure)
    }
}

/// Multinomial maximum-likelihood prevalence estimates, optionally floored.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceEstimate {
    pub estimates: Vec<(Subset, f64)>,
    pub total_n: u64,
    pub floor_applied: bool,
}

impl PrevalenceEstimate {
    /// Builds a validated structure from the estimates; zero-prevalence
    /// strata drop out, so hypotheses seen only in empty strata disappear.
    pub fn to_structure(&self) -> Result<PopulationStructure> {
        PopulationStructure::new(self.estimates.clone())
    }
}

/// Maximum-likelihood estimates `n_J / N` from stratum counts.
///
/// With `pi_min` given, strata listed with zero or sub-floor estimates are
/// raised to exactly `pi_min` and the remaining mass is distributed
/// proportionally over the others, so the vector still sums to one.
pub fn prevalence_mle(
    counts: &[(Subset, u64)],
    pi_min: Option<f64>,
) -> Result<PrevalenceEstimate> {
    if counts.is_empty() {
        return Err(Error::invalid("no stratum counts given"));
    }
    let mut sorted: Vec<(Subset, u64)> = counts.to_vec();
    sorted.sort_by_key(|&(s, _)| s);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate stratum subsets in counts"));
    }
    if sorted.iter().any(|&(s, _)| s.is_empty()) {
        return Err(Error::invalid("stratum subset must be non-empty"));
    }
    let total: u64 = sorted.iter().map(|&(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("all stratum counts are zero"));
    }
    if let Some(floor) = pi_min {
        if !(floor > 0.0) || floor * sorted.len() as f64 >= 1.0 {
            return Err(Error::invalid(format!(
                "pi_min = {floor} must be positive and leave mass for the other strata"
            )));
        }
    }

    let mut estimates: Vec<(Subset, f64)> = sorted
        .iter()
        .map(|&(s, n)| (s, n as f64 / total as f64))
        .collect();

    let mut floor_applied = false;
    if let Some(floor) = pi_min {
        let low: Vec<usize> = (0..estimates.len())
            .filter(|&i| estimates[i].1 < floor)
            .collect();
        if !low.is_empty() {
            floor_applied = true;
            let floored_mass = floor * low.len() as f64;
            let rest_mass: f64 = estimates
                .iter()
                .enumerate()
                .filter(|(i, _)| !low.contains(i))
                .map(|(_, &(_, p))| p)
                .sum();
            let scale = (1.0 - floored_mass) / rest_mass;
            for (i, est) in estimates.iter_mut().enumerate() {
                est.1 = if low.contains(&i) { floor } else { est.1 * scale };
            }
        }
    }
    Ok(PrevalenceEstimate {
        estimates,
        total_n: total,
        floor_applied,
    })
}
