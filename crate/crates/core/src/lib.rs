//! Exact probabilistic robustness of tree-based classifiers.
//!
//! The split thresholds of a decision tree, random forest or boosted
//! ensemble cut feature space into axis-aligned boxes on which the model is
//! constant. The robustness of a prediction at `μ` under an input
//! uncertainty distribution is the probability mass that distribution puts
//! on the boxes sharing `μ`'s label. Box masses come from multivariate
//! normal rectangle probabilities, either directly or after a Gaussian
//! copula transform of non-normal marginals.
//!
//! ```
//! use boxprob::model::build::{single, stump};
//! use boxprob::mvn::Gaussian;
//! use boxprob::robustness::{compute_robustness, Query, Uncertainty};
//!
//! let model = single(stump(0, 0.0, 0, 1), 1, 2);
//! let g = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
//! let report = compute_robustness(&model, &Query::new(vec![0.0], Uncertainty::Gaussian(g))).unwrap();
//! assert_eq!(report.robustness, 0.5);
//! ```

pub mod boxes;
pub mod error;
mod genz;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod mvn;
pub mod normal;
pub mod norta;
pub mod robustness;
pub mod seed;

pub use boxes::{build_threshold_sets, BoxIndex, Hyperrect, ThresholdSets};
pub use error::{Error, Result};
pub use mc::{mc_robustness, McEstimate};
pub use model::{parse_model, Model};
pub use mvn::{confidence_bounding_box, mvn_rectangle_probability, Gaussian, IntegratorConfig, ProbEstimate};
pub use norta::{spearman_to_pearson, Marginal, NortaModel};
pub use robustness::{
    compute_robustness, compute_robustness_independent, prune_error_bound, Analyzer, Query,
    RobustnessReport, Uncertainty,
};
