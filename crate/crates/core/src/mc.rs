//! Monte-Carlo estimate of robustness by direct sampling: the brute-force
//! reference the exact engine is checked against.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::robustness::{Query, Uncertainty};
use crate::seed;

/// Samples per shard. Fixed, so the estimate does not depend on how many
/// workers process the shards.
const SHARD: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub robustness_hat: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    fn from_counts(agree: u64, n: u64, seed: u64) -> Self {
        let p = agree as f64 / n as f64;
        let nf = n as f64;
        let se = if agree == 0 || agree == n {
            1.0 / nf
        } else {
            (p * (1.0 - p) / nf).sqrt()
        };
        Self {
            robustness_hat: p,
            std_error: se,
            n_samples: n,
            seed,
        }
    }
}

/// Fraction of `n` perturbed samples whose label equals the label of
/// `q.sample`.
pub fn mc_robustness(model: &Model, q: &Query, n: u64, seed: u64) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "sample count",
            value: 0.0,
            expected: ">= 1",
        });
    }
    let label = model.classify(&q.sample)?;
    let dim = model.n_features;
    if q.uncertainty.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: q.uncertainty.dim(),
        });
    }
    let shards = n.div_ceil(SHARD);
    let agree: u64 = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let count = SHARD.min(n - shard * SHARD);
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[shard as usize]));
            let mut z = vec![0.0; dim];
            let mut x = vec![0.0; dim];
            let mut hits = 0u64;
            for _ in 0..count {
                match &q.uncertainty {
                    Uncertainty::Gaussian(g) => {
                        for v in z.iter_mut() {
                            *v = StandardNormal.sample(&mut rng);
                        }
                        let dx = g.cholesky() * DVector::from_column_slice(&z);
                        for i in 0..dim {
                            x[i] = g.mean()[i] + dx[i];
                        }
                    }
                    Uncertainty::Norta(nm) => nm.sample_into(&mut rng, &mut z, &mut x),
                }
                hits += u64::from(model.predict(&x) == label);
            }
            hits
        })
        .sum();
    Ok(McEstimate::from_counts(agree, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build::*;
    use crate::mvn::Gaussian;

    #[test]
    fn single_leaf_is_one() {
        let m = single(leaf(0), 2, 1);
        let g = Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        let q = Query::new(vec![0.0, 0.0], Uncertainty::Gaussian(g));
        let e = mc_robustness(&m, &q, 1000, 1).unwrap();
        assert_eq!(e.robustness_hat, 1.0);
        assert_eq!(e.std_error, 1e-3);
    }

    #[test]
    fn stump_at_threshold() {
        let m = single(stump(0, 0.0, 0, 1), 1, 2);
        let g = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
        let q = Query::new(vec![0.0], Uncertainty::Gaussian(g));
        let e = mc_robustness(&m, &q, 1_000_000, 5).unwrap();
        assert!((e.robustness_hat - 0.5).abs() <= 4.0 * e.std_error, "{e:?}");
        assert!((e.std_error - 5e-4).abs() < 1e-6);
    }

    #[test]
    fn deterministic_in_seed() {
        let m = single(stump(0, 0.1, 0, 1), 1, 2);
        let g = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
        let q = Query::new(vec![0.0], Uncertainty::Gaussian(g));
        let a = mc_robustness(&m, &q, 200_001, 9).unwrap();
        let b = mc_robustness(&m, &q, 200_001, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| mc_robustness(&m, &q, 200_001, 9)).unwrap();
        assert_eq!(a, c);
        assert!(mc_robustness(&m, &q, 0, 9).is_err());
    }
}
