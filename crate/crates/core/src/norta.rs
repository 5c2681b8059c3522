//! Gaussian-copula ("normal to anything") uncertainty models.
//!
//! A `NortaModel` is a vector of continuous marginals tied together by a
//! Spearman rank-correlation matrix. Box bounds are pushed through
//! `Φ⁻¹ ∘ F_i` per coordinate, after which the problem is an ordinary
//! rectangle probability under a unit-diagonal Gaussian whose
//! off-diagonals are `2·sin(π·ρ/6)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::boxes::Hyperrect;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mvn::Gaussian;
use crate::normal;

/// Distribution of one perturbed feature value, in feature units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Normal {
        mean: f64,
        sd: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        loc: f64,
    },
    Exponential {
        rate: f64,
        #[serde(default)]
        loc: f64,
    },
    ChiSquare {
        df: f64,
        #[serde(default)]
        loc: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            expected: "finite and > 0",
        })
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            expected: "finite",
        })
    }
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, sd } => {
                finite("normal mean", mean)?;
                positive("normal sd", sd)
            }
            Marginal::Lognormal { mu, sigma, loc } => {
                finite("lognormal mu", mu)?;
                finite("lognormal loc", loc)?;
                positive("lognormal sigma", sigma)
            }
            Marginal::Exponential { rate, loc } => {
                finite("exponential loc", loc)?;
                positive("exponential rate", rate)
            }
            Marginal::ChiSquare { df, loc, scale } => {
                finite("chi_square loc", loc)?;
                positive("chi_square df", df)?;
                positive("chi_square scale", scale)
            }
            Marginal::Uniform { low, high } => {
                finite("uniform low", low)?;
                finite("uniform high", high)?;
                positive("uniform width", high - low)
            }
        }
    }

    /// Closed support `[lo, hi]` (possibly infinite ends).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Marginal::Lognormal { loc, .. }
            | Marginal::Exponential { loc, .. }
            | Marginal::ChiSquare { loc, .. } => (loc, f64::INFINITY),
            Marginal::Uniform { low, high } => (low, high),
        }
    }

    /// The same distribution translated by `offset`.
    pub fn shifted(&self, offset: f64) -> Marginal {
        let mut m = self.clone();
        match &mut m {
            Marginal::Normal { mean, .. } => *mean += offset,
            Marginal::Lognormal { loc, .. }
            | Marginal::Exponential { loc, .. }
            | Marginal::ChiSquare { loc, .. } => *loc += offset,
            Marginal::Uniform { low, high } => {
                *low += offset;
                *high += offset;
            }
        }
        m
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match *self {
            Marginal::Normal { mean, sd } => normal::cdf((x - mean) / sd),
            Marginal::Lognormal { mu, sigma, loc } => normal::cdf(((x - loc).ln() - mu) / sigma),
            Marginal::Exponential { rate, loc } => -(-rate * (x - loc)).exp_m1(),
            Marginal::ChiSquare { df, loc, scale } => gamma_lr(0.5 * df, 0.5 * (x - loc) / scale),
            Marginal::Uniform { low, high } => (x - low) / (high - low),
        }
    }

    /// Upper tail 1 − F(x), without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 1.0;
        }
        if x >= hi {
            return 0.0;
        }
        match *self {
            Marginal::Normal { mean, sd } => normal::sf((x - mean) / sd),
            Marginal::Lognormal { mu, sigma, loc } => normal::sf(((x - loc).ln() - mu) / sigma),
            Marginal::Exponential { rate, loc } => (-rate * (x - loc)).exp(),
            Marginal::ChiSquare { df, loc, scale } => gamma_ur(0.5 * df, 0.5 * (x - loc) / scale),
            Marginal::Uniform { low, high } => (high - x) / (high - low),
        }
    }

    /// Inverse CDF on `[0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p.is_nan() || !(0.0..=1.0).contains(&p) {
            return f64::NAN;
        }
        let (lo, hi) = self.support();
        if p == 0.0 {
            return lo;
        }
        if p == 1.0 {
            return hi;
        }
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * normal::inv_cdf(p),
            Marginal::Lognormal { mu, sigma, loc } => loc + (mu + sigma * normal::inv_cdf(p)).exp(),
            Marginal::Exponential { rate, loc } => loc - (-p).ln_1p() / rate,
            Marginal::ChiSquare { df, loc, scale } => {
                let t = if p <= 0.5 {
                    gamma_quantile(0.5 * df, p, false)
                } else {
                    gamma_quantile(0.5 * df, 1.0 - p, true)
                };
                loc + scale * 2.0 * t
            }
            Marginal::Uniform { low, high } => low + p * (high - low),
        }
    }

    /// `Φ⁻¹(F(x))`; −∞ at or below the support, +∞ at or above it.
    pub fn to_standard_normal(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => (x - mean) / sd,
            Marginal::Lognormal { mu, sigma, loc } => {
                if x <= loc {
                    f64::NEG_INFINITY
                } else {
                    ((x - loc).ln() - mu) / sigma
                }
            }
            _ => {
                let f = self.cdf(x);
                if f <= 0.5 {
                    normal::inv_cdf(f)
                } else {
                    normal::inv_sf(self.sf(x))
                }
            }
        }
    }

    /// `F⁻¹(Φ(z))`, the forward map used for sampling.
    pub fn from_standard_normal(&self, z: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * z,
            Marginal::Lognormal { mu, sigma, loc } => loc + (mu + sigma * z).exp(),
            Marginal::Exponential { rate, loc } => loc + normal::sf(z).ln() / -rate,
            Marginal::ChiSquare { df, loc, scale } => {
                let t = if z <= 0.0 {
                    gamma_quantile(0.5 * df, normal::cdf(z), false)
                } else {
                    gamma_quantile(0.5 * df, normal::sf(z), true)
                };
                loc + scale * 2.0 * t
            }
            _ => self.quantile(normal::cdf(z)),
        }
    }
}

/// Quantile of the unit-scale gamma distribution with shape `a`: solves
/// `P(a, t) = p`, or `Q(a, t) = p` when `upper`. Newton on `ln t` against
/// `ln P` (or `ln Q`) keeps relative accuracy deep in either tail; a
/// bisection bracket catches steps that overshoot.
fn gamma_quantile(a: f64, p: f64, upper: bool) -> f64 {
    if p <= 0.0 {
        return if upper { f64::INFINITY } else { 0.0 };
    }
    if p >= 1.0 {
        return if upper { 0.0 } else { f64::INFINITY };
    }
    let lg = ln_gamma(a);
    let ln_p = p.ln();
    // h(u) increases in u = ln t and vanishes at the quantile.
    let h = |u: f64| -> (f64, f64) {
        let t = u.exp();
        let log_dens = a * u - t - lg;
        if upper {
            let q = gamma_ur(a, t);
            (ln_p - q.ln(), (log_dens - q.ln()).exp())
        } else {
            let pl = gamma_lr(a, t);
            (pl.ln() - ln_p, (log_dens - pl.ln()).exp())
        }
    };
    // Wilson-Hilferty start, or the small-t expansion P ~ t^a / Γ(a+1).
    let z = if upper { normal::inv_sf(p) } else { normal::inv_cdf(p) };
    let c = 1.0 / (9.0 * a);
    let wh = a * (1.0 - c + z * c.sqrt()).powi(3);
    let small = (ln_p + a.ln() + lg) / a;
    let mut u = if wh > 0.0 && (upper || wh.ln() > small) { wh.ln() } else { small };
    let (mut lo, mut hi) = (-745.0f64, 710.0f64);
    u = u.clamp(lo, hi);
    for _ in 0..200 {
        let (v, d) = h(u);
        if v == 0.0 {
            break;
        }
        if v < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let step = v / d;
        let mut next = u - step;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * u.abs().max(1.0) {
            u = next;
            break;
        }
        u = next;
    }
    u.exp()
}

/// Linear correlation of the Gaussian copula with Spearman correlation `rho`.
pub fn spearman_to_pearson(rho: f64) -> f64 {
    // The sine rounds 1 to 1 - ulp; keep perfect dependence exact.
    if rho.abs() == 1.0 {
        return rho;
    }
    2.0 * (rho * std::f64::consts::PI / 6.0).sin()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NortaModel {
    marginals: Vec<Marginal>,
    spearman: DMatrix<f64>,
    gaussian: Gaussian,
}

impl NortaModel {
    pub fn new(marginals: Vec<Marginal>, spearman: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(marginals, linalg::matrix_from_rows(spearman)?)
    }

    pub fn from_matrix(marginals: Vec<Marginal>, spearman: DMatrix<f64>) -> Result<Self> {
        let n = marginals.len();
        if spearman.nrows() != n || spearman.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: spearman.nrows(),
            });
        }
        for m in &marginals {
            m.validate()?;
        }
        let spearman = linalg::symmetrized(&spearman)?;
        for i in 0..n {
            if spearman[(i, i)] != 1.0 {
                return Err(Error::InvalidMatrix(format!(
                    "rank-correlation diagonal entry ({i}, {i}) is {}, expected 1",
                    spearman[(i, i)]
                )));
            }
        }
        if let Some(v) = spearman.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidMatrix(format!("rank correlation {v} outside [-1, 1]")));
        }
        let pearson = spearman.map(spearman_to_pearson);
        let pearson = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { pearson[(i, j)] });
        let gaussian = Gaussian::from_matrix(DVector::zeros(n), pearson)?;
        Ok(Self {
            marginals,
            spearman,
            gaussian,
        })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn spearman(&self) -> &DMatrix<f64> {
        &self.spearman
    }

    pub fn is_independent(&self) -> bool {
        linalg::is_diagonal(&self.spearman)
    }

    /// Every marginal translated by the matching entry of `offset`.
    pub fn shifted(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: offset.len(),
            });
        }
        Ok(Self {
            marginals: self.marginals.iter().zip(offset).map(|(m, &o)| m.shifted(o)).collect(),
            ..self.clone()
        })
    }

    /// The unit-diagonal Gaussian living in the transformed space.
    pub fn transformed_gaussian(&self) -> &Gaussian {
        &self.gaussian
    }

    /// Box bounds mapped into standard-normal space, coordinate-wise.
    pub fn transform_box_bounds(&self, b: &Hyperrect) -> (Vec<f64>, Vec<f64>) {
        let z = |v: &[f64]| {
            v.iter()
                .zip(&self.marginals)
                .map(|(&x, m)| m.to_standard_normal(x))
                .collect::<Vec<_>>()
        };
        (z(&b.lower), z(&b.upper))
    }

    /// Inverse of [`Self::transform_box_bounds`] for a region given in
    /// standard-normal space.
    pub fn untransform_region(&self, r: &Hyperrect) -> Hyperrect {
        let x = |v: &[f64]| {
            v.iter()
                .zip(&self.marginals)
                .map(|(&z, m)| m.from_standard_normal(z))
                .collect::<Vec<_>>()
        };
        Hyperrect {
            lower: x(&r.lower),
            upper: x(&r.upper),
        }
    }

    /// Writes one draw into `out` using `rng`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let n = self.dim();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let l = self.gaussian.cholesky();
        for i in (0..n).rev() {
            let mut s = 0.0;
            for k in 0..=i {
                s += l[(i, k)] * z[k];
            }
            out[i] = self.marginals[i].from_standard_normal(s);
        }
    }
}

/// Alias matching the transform's role in the robustness pipeline.
pub fn build_transformed_gaussian(n: &NortaModel) -> Gaussian {
    n.transformed_gaussian().clone()
}

pub fn transform_box_bounds(n: &NortaModel, b: &Hyperrect) -> (Vec<f64>, Vec<f64>) {
    n.transform_box_bounds(b)
}

/// `count` draws from the model, deterministic in `seed`.
pub fn sample_norta(n: &NortaModel, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n.dim()];
    (0..count)
        .map(|_| {
            let mut out = vec![0.0; n.dim()];
            n.sample_into(&mut rng, &mut z, &mut out);
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn std_normal() -> Marginal {
        Marginal::Normal { mean: 0.0, sd: 1.0 }
    }

    fn exp1() -> Marginal {
        Marginal::Exponential { rate: 1.0, loc: 0.0 }
    }

    #[test]
    fn chi_square_quantile_in_both_tails() {
        // scipy.stats.chi2 ppf / isf
        let cases = [
            (0.5, 1.498_105_792_850_215_6e-6, false, 6.799_614_070_273_537e-24),
            (3.0, 1e-20, true, 96.239_123_938_093_81),
            (7.0, 0.3, false, 4.671_330_448_981_073),
        ];
        for (df, p, upper, want) in cases {
            let got = 2.0 * gamma_quantile(0.5 * df, p, upper);
            assert!((got / want - 1.0).abs() < 1e-12, "df={df} p={p} got={got}");
        }
        let m = Marginal::ChiSquare { df: 3.0, loc: 0.0, scale: 1.0 };
        assert!((m.from_standard_normal(normal::inv_sf(1e-20)) / 96.239_123_938_093_81 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn marginal_cdf_examples() {
        assert_eq!(exp1().cdf(0.0), 0.0);
        assert_eq!(Marginal::Uniform { low: 0.0, high: 1.0 }.cdf(0.5), 0.5);
        let chi2 = Marginal::ChiSquare {
            df: 2.0,
            loc: 0.0,
            scale: 1.0,
        };
        assert!((chi2.cdf(2.0) - 0.632_120_558_828_557_7).abs() < 1e-9);
        assert!((chi2.sf(2.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(chi2.cdf(-3.0), 0.0);
        assert_eq!(Marginal::Uniform { low: 0.0, high: 1.0 }.cdf(2.0), 1.0);
    }

    #[test]
    fn spearman_to_pearson_examples() {
        assert_eq!(spearman_to_pearson(0.0), 0.0);
        assert!((spearman_to_pearson(1.0) - 1.0).abs() < 1e-15);
        assert!((spearman_to_pearson(0.5) - 0.517_638_090_205_041_5).abs() < 1e-9);
    }

    #[test]
    fn transform_examples() {
        let m = Marginal::Normal { mean: 2.0, sd: 0.5 };
        assert_eq!(m.to_standard_normal(3.0), 2.0);
        assert_eq!(exp1().to_standard_normal(0.0), -INF);
        assert_eq!(exp1().to_standard_normal(-1.0), -INF);
        assert_eq!(Marginal::Uniform { low: 0.0, high: 1.0 }.to_standard_normal(0.5), 0.0);
        assert_eq!(Marginal::Uniform { low: 0.0, high: 1.0 }.to_standard_normal(1.0), INF);
        // far upper tail keeps precision through the survival function
        let z = exp1().to_standard_normal(60.0);
        assert!((normal::sf(z) / (-60.0f64).exp() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn transform_box_bounds_per_dimension() {
        let n = NortaModel::new(
            vec![std_normal(), exp1()],
            &[vec![1.0, 0.3], vec![0.3, 1.0]],
        )
        .unwrap();
        let b = Hyperrect::new(vec![-INF, 0.0], vec![1.5, INF]).unwrap();
        let (lo, hi) = n.transform_box_bounds(&b);
        assert_eq!(lo, vec![-INF, -INF]);
        assert_eq!(hi, vec![1.5, INF]);
    }

    #[test]
    fn build_transformed_gaussian_examples() {
        let n = NortaModel::new(vec![std_normal(), exp1()], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = build_transformed_gaussian(&n);
        assert_eq!(g.cov(), &DMatrix::identity(2, 2));
        assert_eq!(g.mean().as_slice(), &[0.0, 0.0]);

        match NortaModel::new(vec![std_normal(), exp1()], &[vec![1.0, 1.0], vec![1.0, 1.0]]) {
            Err(Error::NotPositiveDefinite {
                smallest_eigenvalue: Some(e),
            }) => assert!(e.abs() < 1e-12),
            other => panic!("{other:?}"),
        }

        let s = [
            vec![1.0, 0.2, 0.1, 0.3],
            vec![0.2, 1.0, 0.25, 0.15],
            vec![0.1, 0.25, 1.0, 0.2],
            vec![0.3, 0.15, 0.2, 1.0],
        ];
        let n = NortaModel::new(vec![std_normal(); 4], &s).unwrap();
        let g = n.transformed_gaussian();
        assert!((g.cov()[(0, 3)] - spearman_to_pearson(0.3)).abs() < 1e-15);
        assert_eq!(g.cov()[(2, 2)], 1.0);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(NortaModel::new(vec![std_normal()], &[vec![0.9]]).is_err());
        assert!(NortaModel::new(vec![std_normal(); 2], &[vec![1.0, 1.2], vec![1.2, 1.0]]).is_err());
        assert!(NortaModel::new(vec![Marginal::Normal { mean: 0.0, sd: -1.0 }], &[vec![1.0]]).is_err());
        assert!(NortaModel::new(vec![std_normal()], &[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let n = NortaModel::new(vec![std_normal(); 2], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let xs = sample_norta(&n, 100_000, 11);
        for d in 0..2 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 0.02);
            assert!((var.sqrt() - 1.0).abs() < 0.02);
        }
        let n = NortaModel::new(vec![exp1(); 3], &[vec![1.0, 0.4, 0.0], vec![0.4, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        assert!(sample_norta(&n, 10_000, 3).iter().flatten().all(|&v| v >= 0.0));
        assert_eq!(sample_norta(&n, 5, 9), sample_norta(&n, 5, 9));
    }

    #[test]
    fn shifted_moves_support() {
        let m = exp1().shifted(2.5);
        assert_eq!(m.support(), (2.5, INF));
        assert_eq!(m.cdf(2.5), 0.0);
    }

    fn marginal() -> impl Strategy<Value = Marginal> {
        prop_oneof![
            (-5.0f64..5.0, 0.1f64..3.0).prop_map(|(mean, sd)| Marginal::Normal { mean, sd }),
            (-1.0f64..1.0, 0.1f64..1.5, -2.0f64..2.0)
                .prop_map(|(mu, sigma, loc)| Marginal::Lognormal { mu, sigma, loc }),
            (0.2f64..5.0, -2.0f64..2.0).prop_map(|(rate, loc)| Marginal::Exponential { rate, loc }),
            (0.5f64..8.0, -2.0f64..2.0, 0.1f64..3.0)
                .prop_map(|(df, loc, scale)| Marginal::ChiSquare { df, loc, scale }),
            (-3.0f64..0.0, 0.1f64..3.0).prop_map(|(low, w)| Marginal::Uniform { low, high: low + w }),
        ]
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(m in marginal(), u in 0.001f64..0.999) {
            let x = m.quantile(u);
            prop_assert!((m.cdf(x) - u).abs() < 1e-9, "{:?} u={} x={}", m, u, x);
            let back = m.quantile(m.cdf(x));
            prop_assert!((back - x).abs() <= 1e-8 * x.abs().max(1.0), "{:?} x={} back={}", m, x, back);
        }

        #[test]
        fn standard_normal_maps_are_inverse_and_monotone(m in marginal(), z1 in -6.0f64..6.0, dz in 0.01f64..3.0) {
            let (x1, x2) = (m.from_standard_normal(z1), m.from_standard_normal(z1 + dz));
            prop_assert!(x1 <= x2);
            // Next to a finite support edge, x1 may round onto the edge itself.
            let lo = m.support().0;
            if !lo.is_finite() || x1 - lo > 1e-9 * lo.abs().max(1.0) {
                prop_assert!((m.to_standard_normal(x1) - z1).abs() < 1e-6, "{:?}", m);
            }
        }

        #[test]
        fn spearman_to_pearson_is_odd_increasing(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assert_eq!(spearman_to_pearson(-a), -spearman_to_pearson(a));
            if a < b {
                prop_assert!(spearman_to_pearson(a) < spearman_to_pearson(b));
            }
            prop_assert!(spearman_to_pearson(a).abs() <= 1.0);
        }
    }
}
