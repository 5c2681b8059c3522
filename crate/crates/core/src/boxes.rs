//! Partition of feature space into the hyperrectangles induced by a model's
//! split thresholds.
//!
//! Boxes are half-open, `(lower_i, upper_i]` in every dimension, mirroring
//! the `<=`-goes-left split rule: the box containing a point is exactly the
//! box whose label the model assigns to it. The partition is never
//! materialized; [`BoxIter`] walks it lazily with O(N) state.

use crate::error::{Error, Result};
use crate::model::Model;

/// Per-feature sorted, deduplicated split thresholds, plus the same list
/// expanded by the feature bounds (or ∓∞).
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSets {
    tau: Vec<Vec<f64>>,
    expanded: Vec<Vec<f64>>,
}

impl ThresholdSets {
    /// Threshold sets from explicit per-feature values, unbounded. Values are
    /// sorted and deduplicated.
    pub fn from_thresholds(per_feature: Vec<Vec<f64>>) -> Self {
        let bounds = vec![None; per_feature.len()];
        Self::with_bounds(per_feature, &bounds).expect("unbounded sets are always valid")
    }

    fn with_bounds(mut tau: Vec<Vec<f64>>, bounds: &[Option<(f64, f64)>]) -> Result<Self> {
        let mut expanded = Vec::with_capacity(tau.len());
        for (feature, (t, b)) in tau.iter_mut().zip(bounds).enumerate() {
            t.sort_by(f64::total_cmp);
            t.dedup_by(|a, b| a == b);
            let (lo, hi) = b.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            if let Some(&bad) = t.iter().find(|&&v| !(lo < v && v < hi)) {
                return Err(Error::ThresholdOutOfBounds {
                    feature,
                    threshold: bad,
                    lo,
                    hi,
                });
            }
            let mut e = Vec::with_capacity(t.len() + 2);
            e.push(lo);
            e.extend_from_slice(t);
            e.push(hi);
            expanded.push(e);
        }
        Ok(Self { tau, expanded })
    }

    pub fn n_features(&self) -> usize {
        self.tau.len()
    }

    /// Sorted distinct thresholds of feature `i`.
    pub fn tau(&self, i: usize) -> &[f64] {
        &self.tau[i]
    }

    /// Thresholds of feature `i` with the lower/upper bound prepended/appended.
    pub fn tau_expanded(&self, i: usize) -> &[f64] {
        &self.expanded[i]
    }

    /// Number of intervals along feature `i`.
    pub fn n_intervals(&self, i: usize) -> usize {
        self.tau[i].len() + 1
    }

    /// Total number of boxes, the product of `|tau_i| + 1`.
    pub fn count_boxes(&self) -> Result<u64> {
        self.tau.iter().try_fold(1u64, |acc, t| {
            acc.checked_mul(t.len() as u64 + 1).ok_or(Error::CountOverflow)
        })
    }

    /// The box addressed by `index`.
    pub fn box_at(&self, index: &[usize]) -> Hyperrect {
        let lower = index.iter().zip(&self.expanded).map(|(&k, e)| e[k]).collect();
        let upper = index.iter().zip(&self.expanded).map(|(&k, e)| e[k + 1]).collect();
        Hyperrect { lower, upper }
    }

    /// Index of the box containing `point` under the `(lower, upper]` rule.
    pub fn locate(&self, point: &[f64]) -> BoxIndex {
        BoxIndex(
            self.tau
                .iter()
                .zip(point)
                .map(|(t, &x)| t.partition_point(|&v| v < x))
                .collect(),
        )
    }

    /// Inclusive interval-index range along feature `i` whose closures meet
    /// `[lo, hi]`, or `None` if the region misses the feature's extent.
    fn overlapping(&self, i: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let e = &self.expanded[i];
        let last = e.len() - 2;
        // interval k spans [e[k], e[k+1]]; need e[k] <= hi and e[k+1] >= lo
        let first = e[1..].partition_point(|&v| v < lo);
        let end = e[..=last].partition_point(|&v| v <= hi);
        if end == 0 || first > last || first >= end {
            return None;
        }
        Some((first, end - 1))
    }

    /// Lazily enumerate boxes in lexicographic index order. With a region,
    /// yields exactly the boxes whose closure meets the region's closure.
    pub fn enumerate_boxes(&self, region: Option<&Hyperrect>) -> BoxIter<'_> {
        let n = self.n_features();
        let ranges = match region {
            None => Some((0..n).map(|i| (0, self.n_intervals(i) - 1)).collect::<Vec<_>>()),
            Some(r) => {
                assert_eq!(r.dim(), n, "region dimension");
                (0..n)
                    .map(|i| self.overlapping(i, r.lower[i], r.upper[i]))
                    .collect::<Option<Vec<_>>>()
            }
        };
        BoxIter::new(self, ranges)
    }
}

/// Union of a model's split thresholds per feature, expanded by its bounds.
pub fn build_threshold_sets(model: &Model) -> Result<ThresholdSets> {
    let mut tau = vec![Vec::new(); model.n_features];
    for (feature, threshold) in model.iter_split_rules() {
        tau[feature].push(threshold);
    }
    let bounds: Vec<_> = (0..model.n_features).map(|i| model.bounds(i)).collect();
    ThresholdSets::with_bounds(tau, &bounds)
}

/// Per-dimension interval indices of one box.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoxIndex(pub Vec<usize>);

impl BoxIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Axis-aligned box `(lower_i, upper_i]`; bounds may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperrect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperrect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (dim, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) {
                return Err(Error::InvalidInterval {
                    dim,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn everything(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&l, &u))| l < x && x <= u)
    }

    /// A point of the box suitable for labelling it.
    ///
    /// Finite sides give the midpoint; a single infinite side gives the
    /// finite bound offset inward by `max(1, |bound|·2⁻¹⁰)`; a doubly
    /// infinite side takes `fallback`.
    pub fn representative_point(&self, fallback: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.representative_point_into(fallback, &mut out);
        out
    }

    pub(crate) fn representative_point_into(&self, fallback: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.lower
                .iter()
                .zip(&self.upper)
                .zip(fallback)
                .map(|((&l, &u), &f)| representative_coord(l, u, f)),
        );
    }
}

#[inline]
fn offset(bound: f64) -> f64 {
    (bound.abs() * f64::powi(2.0, -10)).max(1.0)
}

#[inline]
fn representative_coord(lower: f64, upper: f64, fallback: f64) -> f64 {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => {
            let mid = lower + 0.5 * (upper - lower);
            // adjacent floats: the upper end is the only member
            if mid > lower {
                mid
            } else {
                upper
            }
        }
        (false, true) => (upper - offset(upper)).max(f64::MIN),
        (true, false) => (lower + offset(lower)).min(f64::MAX),
        (false, false) => fallback,
    }
}

/// Lazy iterator over `(BoxIndex, Hyperrect)`, last dimension fastest.
#[derive(Clone, Debug)]
pub struct BoxIter<'a> {
    sets: &'a ThresholdSets,
    ranges: Vec<(usize, usize)>,
    current: Option<Vec<usize>>,
}

impl<'a> BoxIter<'a> {
    fn new(sets: &'a ThresholdSets, ranges: Option<Vec<(usize, usize)>>) -> Self {
        match ranges {
            Some(ranges) => {
                let current = Some(ranges.iter().map(|r| r.0).collect());
                Self {
                    sets,
                    ranges,
                    current,
                }
            }
            None => Self {
                sets,
                ranges: Vec::new(),
                current: None,
            },
        }
    }

    /// Number of boxes this stream yields in total (from its start), or
    /// `None` if the product overflows `u128`.
    pub fn total(&self) -> Option<u128> {
        if self.current.is_none() && self.ranges.is_empty() {
            return Some(0);
        }
        self.ranges
            .iter()
            .try_fold(1u128, |acc, &(lo, hi)| acc.checked_mul((hi - lo + 1) as u128))
    }

    /// Per-dimension inclusive index ranges of the stream.
    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }
}

impl Iterator for BoxIter<'_> {
    type Item = (BoxIndex, Hyperrect);

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.current.as_mut()?;
        let index = current.clone();
        let mut advanced = false;
        for d in (0..current.len()).rev() {
            if current[d] < self.ranges[d].1 {
                current[d] += 1;
                advanced = true;
                break;
            }
            current[d] = self.ranges[d].0;
        }
        if !advanced {
            self.current = None;
        }
        let rect = self.sets.box_at(&index);
        Some((BoxIndex(index), rect))
    }
}
