//! Multivariate normal rectangle probabilities and confidence regions.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::boxes::Hyperrect;
use crate::error::{Error, Result};
use crate::genz;
use crate::linalg;
use crate::normal;

/// A multivariate normal distribution N(mean, cov) with positive definite `cov`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(DVector::from_vec(mean), linalg::matrix_from_rows(cov)?)
    }

    pub fn from_matrix(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        if let Some((index, &value)) = mean.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let cov = linalg::symmetrized(&cov)?;
        let chol = linalg::cholesky_lower(&cov)?;
        Ok(Self { mean, cov, chol })
    }

    /// Independent coordinates with the given variances.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        Self::from_matrix(DVector::from_vec(mean), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn is_diagonal(&self) -> bool {
        linalg::is_diagonal(&self.cov)
    }

    /// Same covariance, new mean.
    pub fn with_mean(&self, mean: &[f64]) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    /// Target for 3 × the standard error over shifts.
    pub abs_tol: f64,
    pub n_shifts: usize,
    /// Lattice points per shift in the first pass; doubled until converged.
    pub initial_points: u64,
    /// Cap on lattice points per shift.
    pub max_points: u64,
    pub seed: u64,
    /// Sub-problems with diagonal covariance are products of univariate
    /// masses; when set they skip the lattice.
    pub exploit_diagonal: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            n_shifts: 12,
            initial_points: 64,
            max_points: 1 << 22,
            seed: 0,
            exploit_diagonal: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbEstimate {
    pub value: f64,
    pub err_estimate: f64,
    pub points_used: u64,
    /// False when `max_points` was hit before `abs_tol`.
    pub converged: bool,
}

impl ProbEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            err_estimate: 0.0,
            points_used: 0,
            converged: true,
        }
    }
}

/// P(lower < X ≤ upper) for X ~ `g`. Bounds may be infinite.
pub fn mvn_rectangle_probability(
    g: &Gaussian,
    lower: &[f64],
    upper: &[f64],
    cfg: &IntegratorConfig,
) -> Result<ProbEstimate> {
    let n = g.dim();
    for len in [lower.len(), upper.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    for dim in 0..n {
        if !(lower[dim] < upper[dim]) {
            return Err(Error::InvalidInterval {
                dim,
                lower: lower[dim],
                upper: upper[dim],
            });
        }
    }

    // Only constrained coordinates matter; the marginal of a Gaussian over
    // a subset is the sub-block of its covariance.
    let kept: Vec<usize> = (0..n)
        .filter(|&i| lower[i] > f64::NEG_INFINITY || upper[i] < f64::INFINITY)
        .collect();
    let a: Vec<f64> = kept.iter().map(|&i| lower[i] - g.mean[i]).collect();
    let b: Vec<f64> = kept.iter().map(|&i| upper[i] - g.mean[i]).collect();
    let sub = g.cov.select_rows(&kept).select_columns(&kept);

    match kept.len() {
        0 => Ok(ProbEstimate::exact(1.0)),
        1 => {
            let sd = sub[(0, 0)].sqrt();
            Ok(ProbEstimate::exact(normal::interval(a[0] / sd, b[0] / sd)))
        }
        _ if cfg.exploit_diagonal && linalg::is_diagonal(&sub) => {
            let mut p = 1.0;
            for i in 0..kept.len() {
                let sd = sub[(i, i)].sqrt();
                p *= normal::interval(a[i] / sd, b[i] / sd);
            }
            Ok(ProbEstimate::exact(p))
        }
        _ => {
            let prepared = genz::prepare(&sub, &a, &b)?;
            Ok(genz::integrate(&prepared, cfg))
        }
    }
}

/// Quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df).expect("df > 0").inverse_cdf(p)
}

/// Axis-aligned bounding box of the `level` confidence ellipsoid
/// `{x : (x−μ)ᵀΣ⁻¹(x−μ) ≤ χ²_N(level)}`. The half-width along axis `i` is
/// `sqrt(q·Σ_ii)`, where the ellipsoid touches the box.
pub fn confidence_bounding_box(g: &Gaussian, level: f64) -> Result<Hyperrect> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            name: "confidence level",
            value: level,
            expected: "0 < level < 1",
        });
    }
    let q = chi_square_quantile(g.dim() as f64, level);
    let half: Vec<f64> = (0..g.dim()).map(|i| (q * g.cov[(i, i)]).sqrt()).collect();
    Hyperrect::new(
        half.iter().enumerate().map(|(i, h)| g.mean[i] - h).collect(),
        half.iter().enumerate().map(|(i, h)| g.mean[i] + h).collect(),
    )
}
