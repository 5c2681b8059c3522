//! Probabilistic robustness of a single prediction: the probability mass of
//! the input-uncertainty distribution over every box whose label equals the
//! sample's own label.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::boxes::{build_threshold_sets, BoxIndex, Hyperrect, ThresholdSets};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::mvn::{confidence_bounding_box, mvn_rectangle_probability, Gaussian, IntegratorConfig, ProbEstimate};
use crate::norta::NortaModel;
use crate::normal;
use crate::seed;

/// Boxes handed to the worker pool per batch; bounds memory independently
/// of the partition size.
const BATCH: usize = 1 << 14;

pub const DEFAULT_MAX_BOXES: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Uncertainty {
    Gaussian(Gaussian),
    Norta(NortaModel),
}

impl Uncertainty {
    pub fn dim(&self) -> usize {
        match self {
            Uncertainty::Gaussian(g) => g.dim(),
            Uncertainty::Norta(n) => n.dim(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Query {
    pub sample: Vec<f64>,
    pub uncertainty: Uncertainty,
    /// Confidence level of the pruning ellipsoid, if pruning.
    pub prune_level: Option<f64>,
    pub integrator: IntegratorConfig,
    /// Abort when the box stream is longer than this.
    pub max_boxes: u64,
    /// Keep per-box masses in the report.
    pub verbose: bool,
}

impl Query {
    pub fn new(sample: Vec<f64>, uncertainty: Uncertainty) -> Self {
        Self {
            sample,
            uncertainty,
            prune_level: None,
            integrator: IntegratorConfig::default(),
            max_boxes: DEFAULT_MAX_BOXES,
            verbose: false,
        }
    }

    pub fn pruned(mut self, level: f64) -> Self {
        self.prune_level = Some(level);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.integrator.seed = seed;
        self
    }

    fn validate(&self, model: &Model) -> Result<()> {
        for got in [self.sample.len(), self.uncertainty.dim()] {
            if got != model.n_features {
                return Err(Error::DimensionMismatch {
                    expected: model.n_features,
                    got,
                });
            }
        }
        if let Some((index, &value)) = self.sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        if let Some(level) = self.prune_level {
            check_level(level)?;
        }
        Ok(())
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "prune level",
            value: level,
            expected: "0 < level < 1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxMass {
    pub index: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub label: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub label: usize,
    pub robustness: f64,
    pub misclassification_probability: f64,
    /// Unclamped sum of matching-box masses.
    pub raw_sum: f64,
    pub boxes_enumerated: u64,
    pub boxes_matching: u64,
    /// Sum of per-box integration error estimates.
    pub integration_err: f64,
    /// Boxes whose integration stopped at `max_points` before `abs_tol`.
    pub unconverged_boxes: u64,
    pub prune_error_bound: f64,
    /// Matching boxes and their masses, in enumeration order (verbose only).
    pub box_masses: Option<Vec<BoxMass>>,
    pub wall_time: Duration,
}

/// Largest possible amount by which pruning at `level` under-counts.
pub fn prune_error_bound(level: f64) -> f64 {
    1.0 - level
}

#[derive(Clone, Copy, PartialEq)]
enum MassRoute {
    Joint,
    Independent,
}

/// Holds a model together with its threshold sets so that many queries can
/// reuse them.
#[derive(Clone, Debug)]
pub struct Analyzer<'m> {
    model: &'m Model,
    sets: ThresholdSets,
}

impl<'m> Analyzer<'m> {
    pub fn new(model: &'m Model) -> Result<Self> {
        Ok(Self {
            model,
            sets: build_threshold_sets(model)?,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn threshold_sets(&self) -> &ThresholdSets {
        &self.sets
    }

    pub fn compute(&self, q: &Query) -> Result<RobustnessReport> {
        self.run(q, MassRoute::Joint)
    }

    pub fn compute_independent(&self, q: &Query) -> Result<RobustnessReport> {
        let independent = match &q.uncertainty {
            Uncertainty::Gaussian(g) => g.is_diagonal(),
            Uncertainty::Norta(n) => n.is_independent(),
        };
        if !independent {
            return Err(Error::CorrelatedUncertainty);
        }
        self.run(q, MassRoute::Independent)
    }

    /// Pruning region in feature space.
    fn region(&self, q: &Query) -> Result<Option<Hyperrect>> {
        let Some(level) = q.prune_level else {
            return Ok(None);
        };
        Ok(Some(match &q.uncertainty {
            Uncertainty::Gaussian(g) => confidence_bounding_box(g, level)?,
            Uncertainty::Norta(n) => {
                let z_region = confidence_bounding_box(n.transformed_gaussian(), level)?;
                n.untransform_region(&z_region)
            }
        }))
    }

    fn run(&self, q: &Query, route: MassRoute) -> Result<RobustnessReport> {
        let start = Instant::now();
        q.validate(self.model)?;
        let label = self.model.predict(&q.sample);
        let region = self.region(q)?;
        let stream = self.sets.enumerate_boxes(region.as_ref());
        let total = stream.total().unwrap_or(u128::MAX);
        if total > q.max_boxes as u128 {
            return Err(Error::BoxBudgetExceeded {
                count: total,
                budget: q.max_boxes,
            });
        }

        let mut acc = Accumulator::new(q.verbose);
        let mut stream = stream.peekable();
        while stream.peek().is_some() {
            let batch: Vec<(BoxIndex, Hyperrect)> = stream.by_ref().take(BATCH).collect();
            let evaluated: Vec<Result<Evaluated>> = batch
                .into_par_iter()
                .map_init(Vec::new, |scratch, (index, rect)| {
                    rect.representative_point_into(&q.sample, scratch);
                    let box_label = self.model.predict(scratch);
                    if box_label != label {
                        let empty = match &q.uncertainty {
                            Uncertainty::Gaussian(_) => false,
                            Uncertainty::Norta(n) => {
                                let (lo, hi) = n.transform_box_bounds(&rect);
                                lo.iter().zip(&hi).any(|(l, h)| l >= h)
                            }
                        };
                        return Ok(Evaluated::Other { empty });
                    }
                    let estimate = box_mass(q, &index, &rect, route)
                        .map_err(|e| Error::Integration {
                            index: index.0.clone(),
                            source: Box::new(e),
                        })?;
                    Ok(Evaluated::Matching {
                        index,
                        rect,
                        label: box_label,
                        estimate,
                    })
                })
                .collect();
            for e in evaluated {
                acc.push(e?);
            }
        }

        // Exactly 1 when the boxes cover the whole space and no box of
        // another label can carry mass (each maps to an empty interval under
        // the copula transform, or there are none).
        let covers_space = (0..self.model.n_features).all(|i| self.model.bounds(i).is_none());
        let certain =
            covers_space && q.prune_level.is_none() && acc.others_all_empty && acc.matching > 0;
        let robustness = if certain { 1.0 } else { acc.sum.clamp(0.0, 1.0) };
        Ok(RobustnessReport {
            label,
            robustness,
            misclassification_probability: 1.0 - robustness,
            raw_sum: acc.sum,
            boxes_enumerated: acc.enumerated,
            boxes_matching: acc.matching,
            integration_err: acc.err,
            unconverged_boxes: acc.unconverged,
            prune_error_bound: q.prune_level.map_or(0.0, prune_error_bound),
            box_masses: acc.masses,
            wall_time: start.elapsed(),
        })
    }
}

enum Evaluated {
    Matching {
        index: BoxIndex,
        rect: Hyperrect,
        label: usize,
        estimate: ProbEstimate,
    },
    Other {
        empty: bool,
    },
}

/// Sums in enumeration order, so results do not depend on scheduling.
struct Accumulator {
    sum: f64,
    err: f64,
    enumerated: u64,
    matching: u64,
    unconverged: u64,
    others_all_empty: bool,
    masses: Option<Vec<BoxMass>>,
}

impl Accumulator {
    fn new(verbose: bool) -> Self {
        Self {
            sum: 0.0,
            err: 0.0,
            enumerated: 0,
            matching: 0,
            unconverged: 0,
            others_all_empty: true,
            masses: verbose.then(Vec::new),
        }
    }

    fn push(&mut self, e: Evaluated) {
        self.enumerated += 1;
        match e {
            Evaluated::Other { empty } => self.others_all_empty &= empty,
            Evaluated::Matching {
                index,
                rect,
                label,
                estimate,
            } => {
                self.matching += 1;
                self.sum += estimate.value;
                self.err += estimate.err_estimate;
                self.unconverged += u64::from(!estimate.converged);
                if let Some(m) = &mut self.masses {
                    m.push(BoxMass {
                        index: index.0,
                        lower: rect.lower,
                        upper: rect.upper,
                        label,
                        mass: estimate.value,
                    });
                }
            }
        }
    }
}

/// Probability mass of one box under the query's uncertainty.
fn box_mass(q: &Query, index: &BoxIndex, rect: &Hyperrect, route: MassRoute) -> Result<ProbEstimate> {
    let cfg = IntegratorConfig {
        seed: seed::derive(q.integrator.seed, index.as_slice()),
        ..q.integrator.clone()
    };
    match (&q.uncertainty, route) {
        (Uncertainty::Gaussian(g), MassRoute::Joint) => {
            mvn_rectangle_probability(g, &rect.lower, &rect.upper, &cfg)
        }
        (Uncertainty::Norta(n), MassRoute::Joint) => {
            let (lo, hi) = n.transform_box_bounds(rect);
            if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
                return Ok(ProbEstimate::exact(0.0));
            }
            mvn_rectangle_probability(n.transformed_gaussian(), &lo, &hi, &cfg)
        }
        (Uncertainty::Gaussian(g), MassRoute::Independent) => {
            let mut p = 1.0;
            for i in 0..g.dim() {
                let (m, sd) = (g.mean()[i], g.cov()[(i, i)].sqrt());
                p *= normal::interval((rect.lower[i] - m) / sd, (rect.upper[i] - m) / sd);
            }
            Ok(ProbEstimate::exact(p))
        }
        (Uncertainty::Norta(n), MassRoute::Independent) => {
            let mut p = 1.0;
            for (i, m) in n.marginals().iter().enumerate() {
                let (lo, hi) = (rect.lower[i], rect.upper[i]);
                let (f_lo, f_hi) = (m.cdf(lo), m.cdf(hi));
                p *= if f_lo > 0.5 { m.sf(lo) - m.sf(hi) } else { f_hi - f_lo }.max(0.0);
            }
            Ok(ProbEstimate::exact(p))
        }
    }
}

/// Robustness of `model`'s prediction at `q.sample` under `q.uncertainty`.
pub fn compute_robustness(model: &Model, q: &Query) -> Result<RobustnessReport> {
    Analyzer::new(model)?.compute(q)
}

/// As [`compute_robustness`], for independent coordinates: every box mass
/// is a product of univariate masses.
pub fn compute_robustness_independent(model: &Model, q: &Query) -> Result<RobustnessReport> {
    Analyzer::new(model)?.compute_independent(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build::*;
    use crate::norta::Marginal;

    fn gauss(mean: Vec<f64>, var: f64) -> Uncertainty {
        let n = mean.len();
        Uncertainty::Gaussian(Gaussian::diagonal(mean, &vec![var; n]).unwrap())
    }

    #[test]
    fn single_leaf_is_certain() {
        let m = single(leaf(1), 3, 2);
        let q = Query::new(vec![0.1, 0.2, 0.3], gauss(vec![0.1, 0.2, 0.3], 4.0));
        let r = compute_robustness(&m, &q).unwrap();
        assert_eq!(r.robustness, 1.0);
        assert_eq!(r.boxes_enumerated, 1);
        assert_eq!(r.label, 1);
    }

    #[test]
    fn stump_at_threshold_is_half() {
        let m = single(stump(0, 0.0, 0, 1), 1, 2);
        for var in [0.01, 1.0, 100.0] {
            let q = Query::new(vec![0.0], gauss(vec![0.0], var));
            let r = compute_robustness(&m, &q).unwrap();
            assert_eq!(r.label, 0);
            assert_eq!(r.robustness, 0.5);
            let r = compute_robustness_independent(&m, &q).unwrap();
            assert_eq!(r.robustness, 0.5);
        }
    }

    #[test]
    fn report_invariants() {
        let m = single(stump(0, 0.3, 0, 1), 2, 2);
        let q = Query::new(vec![0.0, 0.0], gauss(vec![0.0, 0.0], 1.0));
        let r = compute_robustness(&m, &q).unwrap();
        assert_eq!(r.robustness + r.misclassification_probability, 1.0);
        assert!(r.boxes_matching <= r.boxes_enumerated);
        assert_eq!(r.prune_error_bound, 0.0);
        assert!(r.box_masses.is_none());
    }

    #[test]
    fn independent_route_rejects_correlation() {
        let m = single(stump(0, 0.0, 0, 1), 2, 2);
        let g = Gaussian::new(vec![0.0, 0.0], &[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let q = Query::new(vec![0.0, 0.0], Uncertainty::Gaussian(g));
        assert!(matches!(
            compute_robustness_independent(&m, &q),
            Err(Error::CorrelatedUncertainty)
        ));
    }

    #[test]
    fn independent_exponential_above_all_thresholds_is_one() {
        // 2-D tree: x0 <= 1 -> 0, else (x1 <= 2 -> 0, else 1)
        let t = tree(
            vec![
                crate::model::Node::Split(crate::model::SplitNode {
                    feature: 0,
                    threshold: 1.0,
                    left: 1,
                    right: 2,
                }),
                crate::model::Node::Leaf(crate::model::LeafNode::Label(0)),
                crate::model::Node::Split(crate::model::SplitNode {
                    feature: 1,
                    threshold: 2.0,
                    left: 3,
                    right: 4,
                }),
                crate::model::Node::Leaf(crate::model::LeafNode::Label(0)),
                crate::model::Node::Leaf(crate::model::LeafNode::Label(1)),
            ],
            0,
        );
        let m = single(t, 2, 2);
        let sample = vec![1.5, 2.5];
        let exp = Marginal::Exponential { rate: 2.0, loc: 0.0 };
        let n = NortaModel::new(vec![exp.clone(), exp], &[vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap()
            .shifted(&sample)
            .unwrap();
        let q = Query::new(sample, Uncertainty::Norta(n));
        assert_eq!(compute_robustness_independent(&m, &q).unwrap().robustness, 1.0);
        assert_eq!(compute_robustness(&m, &q).unwrap().robustness, 1.0);
    }

    #[test]
    fn budget_guard_names_the_count() {
        let m = forest((0..30).map(|i| stump(i % 3, i as f64, 0, 1)).collect(), 3, 2);
        let mut q = Query::new(vec![0.0; 3], gauss(vec![0.0; 3], 1.0));
        q.max_boxes = 100;
        match compute_robustness(&m, &q) {
            Err(Error::BoxBudgetExceeded { count, budget }) => {
                assert_eq!(count, 11 * 11 * 11);
                assert_eq!(budget, 100);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verbose_lists_matching_boxes() {
        let m = single(stump(0, 0.0, 0, 1), 1, 2);
        let mut q = Query::new(vec![-1.0], gauss(vec![-1.0], 1.0));
        q.verbose = true;
        let r = compute_robustness(&m, &q).unwrap();
        let masses = r.box_masses.unwrap();
        assert_eq!(masses.len(), 1);
        assert_eq!(masses[0].upper, vec![0.0]);
        assert_eq!(masses[0].mass, normal::cdf(1.0));
    }

    #[test]
    fn prune_error_bound_examples() {
        assert!((prune_error_bound(0.99) - 0.01).abs() < 1e-15);
        assert!((prune_error_bound(0.999) - 0.001).abs() < 1e-15);
        assert_eq!(prune_error_bound(0.5), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let m = single(leaf(0), 2, 1);
        let q = Query::new(vec![0.0; 3], gauss(vec![0.0; 3], 1.0));
        assert!(matches!(compute_robustness(&m, &q), Err(Error::DimensionMismatch { .. })));
        let q = Query::new(vec![0.0; 2], gauss(vec![0.0; 2], 1.0)).pruned(1.5);
        assert!(compute_robustness(&m, &q).is_err());
    }
}
