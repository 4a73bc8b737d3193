//! Univariate, bivariate and general multivariate normal/t probabilities,
//! plus reproducible joint sampling.
//!
//! Deterministic quadrature handles dimensions one and two under normality;
//! everything else goes through randomized quasi-Monte Carlo with an honest
//! reported error bound. Sampling partitions the draw index space into
//! fixed blocks so results do not depend on the number of worker threads.

mod bvn;
mod correlation;
mod qmc;
mod sample;
pub(crate) mod special;

pub use bvn::bvn_cdf;
pub use correlation::CorrelationMatrix;
pub use sample::sample_joint;
pub use special::{norm_cdf, norm_pdf, norm_quantile, norm_sf};

use statrs::distribution::ContinuousCDF;

use crate::{Error, Result};

/// Degrees of freedom of the joint null distribution; `Infinite` means the
/// multivariate normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Df {
    Infinite,
    Finite(f64),
}

impl Df {
    pub fn validate(self) -> Result<()> {
        match self {
            Df::Infinite => Ok(()),
            Df::Finite(v) if v > 0.0 && v.is_finite() => Ok(()),
            Df::Finite(v) => Err(Error::invalid(format!(
                "degrees of freedom must be positive and finite, got {v}"
            ))),
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Df::Finite(_))
    }
}

/// How a probability was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbMethod {
    Quadrature,
    MonteCarlo,
}

/// A probability with an absolute-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEstimate {
    pub value: f64,
    pub abs_error: f64,
    pub method: ProbMethod,
}

impl ProbEstimate {
    fn quadrature(value: f64, abs_error: f64) -> Self {
        ProbEstimate {
            value: value.clamp(0.0, 1.0),
            abs_error,
            method: ProbMethod::Quadrature,
        }
    }
}

/// Options for Monte Carlo / quasi-Monte Carlo probability evaluation.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    /// Target absolute error; the lattice grows until the reported error is
    /// below this or `max_points` is reached.
    pub tol: f64,
    pub seed: u64,
    /// Budget on total integrand evaluations.
    pub max_points: usize,
    /// Skip the deterministic low-dimensional shortcuts; used to test the
    /// stochastic path against the quadrature one.
    pub force_monte_carlo: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            tol: 1e-4,
            seed: 0x9E37_79B9,
            max_points: 1 << 23,
            force_monte_carlo: false,
        }
    }
}

/// `P(X_i <= upper_i for all i)` for the centered multivariate normal or t
/// distribution with correlation matrix `r`, using default options.
pub fn mv_cdf(upper: &[f64], r: &CorrelationMatrix, df: Df) -> Result<ProbEstimate> {
    mv_cdf_with(upper, r, df, &McOptions::default())
}

/// [`mv_cdf`] with explicit Monte Carlo options.
///
/// Dimension one (any df) and dimension two (normal) are evaluated by
/// deterministic quadrature unless `force_monte_carlo` is set. An identity
/// correlation under normality factorizes into marginal CDFs. All other
/// cases use the quasi-Monte Carlo engine, whose output is deterministic
/// for a fixed seed.
pub fn mv_cdf_with(
    upper: &[f64],
    r: &CorrelationMatrix,
    df: Df,
    opts: &McOptions,
) -> Result<ProbEstimate> {
    df.validate()?;
    let dim = r.dim();
    if upper.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: upper.len(),
        });
    }
    if upper.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN in upper bounds"));
    }

    if !opts.force_monte_carlo {
        match (dim, df) {
            (1, Df::Infinite) => {
                return Ok(ProbEstimate::quadrature(norm_cdf(upper[0]), 1e-15));
            }
            (1, Df::Finite(v)) => {
                let value = student_t_cdf(upper[0], v);
                return Ok(ProbEstimate::quadrature(value, 1e-12));
            }
            (2, Df::Infinite) => {
                let value = bvn_cdf(upper[0], upper[1], r.entry(0, 1));
                return Ok(ProbEstimate::quadrature(value, 1e-14));
            }
            (_, Df::Infinite) if is_identity(r) => {
                let value: f64 = upper.iter().map(|&x| norm_cdf(x)).product();
                return Ok(ProbEstimate::quadrature(value, 1e-14));
            }
            _ => {}
        }
    }

    // +inf coordinates give no constraint; drop them before factorizing.
    // A -inf coordinate forces probability zero.
    if upper.contains(&f64::NEG_INFINITY) {
        return Ok(ProbEstimate {
            value: 0.0,
            abs_error: 0.0,
            method: ProbMethod::MonteCarlo,
        });
    }
    let active: Vec<usize> = (0..dim).filter(|&i| upper[i].is_finite()).collect();
    if active.is_empty() {
        return Ok(ProbEstimate {
            value: 1.0,
            abs_error: 0.0,
            method: ProbMethod::MonteCarlo,
        });
    }
    if active.len() < dim {
        let sub = r.submatrix(&active)?;
        let bounds: Vec<f64> = active.iter().map(|&i| upper[i]).collect();
        return mv_cdf_with(&bounds, &sub, df, opts);
    }

    let (chol, _) = r.cholesky_lower()?;
    let (value, abs_error) = qmc::qmc_prob(upper, &chol, df, opts.tol, opts.seed, opts.max_points);
    Ok(ProbEstimate {
        value,
        abs_error,
        method: ProbMethod::MonteCarlo,
    })
}

fn is_identity(r: &CorrelationMatrix) -> bool {
    let n = r.dim();
    (0..n).all(|i| (0..i).all(|j| r.entry(i, j) == 0.0))
}

/// Central Student t CDF, polished to quadrature accuracy.
pub(crate) fn student_t_cdf(x: f64, df: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    statrs::distribution::StudentsT::new(0.0, 1.0, df)
        .expect("validated df")
        .cdf(x)
}

/// Central Student t quantile with a Newton polish against the CDF.
pub(crate) fn student_t_quantile(p: f64, df: f64) -> f64 {
    let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df).expect("validated df");
    let mut x = dist.inverse_cdf(p);
    for _ in 0..3 {
        let f = dist.cdf(x) - p;
        let pdf = student_t_pdf(x, df);
        if pdf <= 0.0 {
            break;
        }
        let step = f / pdf;
        x -= step;
        if step.abs() <= 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

fn student_t_pdf(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln();
    ln.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dim_one_reduces_to_normal() {
        let r = CorrelationMatrix::identity(1);
        let p = mv_cdf(&[1.959964], &r, Df::Infinite).unwrap();
        assert_abs_diff_eq!(p.value, 0.9750000009035576, epsilon = 1e-14);
        assert_eq!(p.method, ProbMethod::Quadrature);
    }

    #[test]
    fn dim_one_t_matches_reference() {
        // scipy.stats.t.cdf(2.0, 1040)
        let r = CorrelationMatrix::identity(1);
        let p = mv_cdf(&[2.0], &r, Df::Finite(1040.0)).unwrap();
        assert_abs_diff_eq!(p.value, 0.9771200230037358, epsilon = 1e-10);
    }

    #[test]
    fn identity_factorizes_any_dim() {
        let r = CorrelationMatrix::identity(5);
        let upper = [0.1, -0.4, 2.0, 0.9, -1.5];
        let want: f64 = upper.iter().map(|&x| norm_cdf(x)).product();
        let p = mv_cdf(&upper, &r, Df::Infinite).unwrap();
        assert_abs_diff_eq!(p.value, want, epsilon = 1e-14);
        assert_eq!(p.method, ProbMethod::Quadrature);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = CorrelationMatrix::identity(2);
        assert!(mv_cdf(&[0.0], &r, Df::Infinite).is_err());
    }

    #[test]
    fn trivariate_equicorrelated_orthant() {
        let r = CorrelationMatrix::equicorrelated(3, 0.5).unwrap();
        let p = mv_cdf(&[0.0, 0.0, 0.0], &r, Df::Infinite).unwrap();
        assert_eq!(p.method, ProbMethod::MonteCarlo);
        assert!(p.abs_error <= 1e-4);
        assert!(
            (p.value - 0.25).abs() <= 4.0 * p.abs_error,
            "value {} error {}",
            p.value,
            p.abs_error
        );
    }

    #[test]
    fn infinite_upper_bounds_drop_out() {
        let r = CorrelationMatrix::equicorrelated(3, 0.4).unwrap();
        let p = mv_cdf(&[0.5, f64::INFINITY, 0.5], &r, Df::Infinite).unwrap();
        let want = bvn_cdf(0.5, 0.5, 0.4);
        assert_abs_diff_eq!(p.value, want, epsilon = 1e-12);
        let zero = mv_cdf(&[0.5, f64::NEG_INFINITY, 0.5], &r, Df::Infinite).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn large_df_approaches_normal() {
        let r = CorrelationMatrix::equicorrelated(3, 0.5).unwrap();
        let upper = [0.3, 0.7, -0.2];
        let normal = mv_cdf(&upper, &r, Df::Infinite).unwrap();
        let opts = McOptions {
            tol: 2e-4,
            ..McOptions::default()
        };
        let t = mv_cdf_with(&upper, &r, Df::Finite(1e6), &opts).unwrap();
        assert!(
            (t.value - normal.value).abs() < 1e-3,
            "t {} vs normal {}",
            t.value,
            normal.value
        );
    }

    #[test]
    fn student_t_quantile_reference() {
        // scipy.stats.t.ppf(0.975, 1052)
        assert_abs_diff_eq!(student_t_quantile(0.975, 1052.0), 1.9622215477763312, epsilon = 1e-9);
    }
}
