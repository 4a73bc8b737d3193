//! Control of the population-wise error rate: evaluate PWER and FWER at
//! given critical values, solve for the PWER-controlling critical value
//! (equal or weighted), compute PWER-adjusted p-values, and build the dual
//! simultaneous confidence intervals.
//!
//! The PWER at thresholds `c_1..c_m` is
//!
//! ```text
//!   sum over strata J of  pi_J * P( union over i in J ∩ nulls of {Z_i > c_i} )
//! ```
//!
//! Each union probability is a complement of a multivariate CDF over the
//! sub-correlation-matrix of the active indices. Strata whose subsets are
//! disjoint from the true-null set contribute nothing.
//!
//! Two evaluation backends exist. When every active union has dimension at
//! most two and the joint distribution is normal, unions are evaluated by
//! deterministic quadrature. Otherwise a single common-random-number
//! ensemble is drawn once and reused for every candidate threshold, which
//! makes the empirical PWER monotone in `c` so that bracketing root finding
//! converges cleanly.

use rayon::prelude::*;

use crate::mvdist::{
    self, bvn_cdf, norm_cdf, norm_quantile, sample_joint, CorrelationMatrix, Df, McOptions,
};
use crate::popmodel::{PopulationStructure, Subset};
use crate::util::{mean_and_se, solve_decreasing};
use crate::{Error, Result};

/// Joint null distribution of the test statistics: correlation matrix plus
/// degrees of freedom (infinite meaning multivariate normal).
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub matrix: CorrelationMatrix,
    pub df: Df,
}

impl CorrelationModel {
    pub fn new(matrix: CorrelationMatrix, df: Df) -> Self {
        CorrelationModel { matrix, df }
    }
}

/// Everything needed to evaluate the PWER: the stratified population, the
/// joint null distribution, the set of true nulls (defaults to the global
/// null) and per-hypothesis critical-value weights (default all one).
#[derive(Debug, Clone)]
pub struct PwerProblem {
    structure: PopulationStructure,
    corr: CorrelationModel,
    true_nulls: Subset,
    weights: Vec<f64>,
}

impl PwerProblem {
    /// Problem under the global null hypothesis with equal weights — the
    /// configuration that usually maximizes the PWER.
    pub fn new(structure: PopulationStructure, corr: CorrelationModel) -> Result<Self> {
        let m = structure.n_hypotheses();
        if corr.matrix.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: corr.matrix.dim(),
            });
        }
        corr.df.validate()?;
        let global = Subset::from_mask((1u32 << m) - 1);
        Ok(PwerProblem {
            structure,
            corr,
            true_nulls: global,
            weights: vec![1.0; m],
        })
    }

    /// Restricts the set of true null hypotheses (non-empty, within `1..=m`).
    pub fn with_true_nulls(mut self, true_nulls: Subset) -> Result<Self> {
        if true_nulls.is_empty() {
            return Err(Error::invalid(
                "true-null set must be non-empty for error-rate evaluation",
            ));
        }
        if true_nulls.max_index() > self.m() {
            return Err(Error::invalid(format!(
                "true-null set {true_nulls:?} mentions indices beyond m = {}",
                self.m()
            )));
        }
        self.true_nulls = true_nulls;
        Ok(self)
    }

    /// Sets per-hypothesis weights; hypothesis `i` is rejected when
    /// `Z_i > w_i * c`.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn structure(&self) -> &PopulationStructure {
        &self.structure
    }

    pub fn corr(&self) -> &CorrelationModel {
        &self.corr
    }

    pub fn true_nulls(&self) -> Subset {
        self.true_nulls
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn m(&self) -> usize {
        self.structure.n_hypotheses()
    }
}

/// Evaluation backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendChoice {
    /// Deterministic quadrature when every active union has dimension at
    /// most two under normality, Monte Carlo otherwise.
    #[default]
    Auto,
    /// Always use the common-random-number ensemble.
    MonteCarlo,
}

/// Options for evaluator construction and root finding.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub backend: BackendChoice,
    /// Ensemble size for the Monte Carlo backend.
    pub n_draws: usize,
    pub seed: u64,
    /// Tolerance on the critical value for the root search.
    pub c_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            backend: BackendChoice::Auto,
            n_draws: 1 << 20,
            seed: 0x7077_6572,
            c_tol: 1e-8,
        }
    }
}

// Active union of one stratum: 0-based statistic indices and the stratum
// prevalence.
#[derive(Debug, Clone)]
struct ActiveUnion {
    pi: f64,
    indices: Vec<usize>,
}

enum Backend {
    Exact,
    MonteCarlo {
        // Row-major n x m ensemble of joint null draws.
        ensemble: Vec<f64>,
        n: usize,
        // Per active union: weight-scaled per-draw maxima, sorted ascending.
        sorted_maxima: Vec<Vec<f64>>,
        // Same construction over the whole true-null set.
        sorted_fwer_maxima: Vec<f64>,
    },
}

/// Reusable PWER/FWER evaluator for one problem.
///
/// On the Monte Carlo backend the ensemble is drawn once at construction;
/// all subsequent evaluations reuse it (common random numbers), so the
/// empirical PWER is a nonincreasing step function of the critical value.
pub struct Evaluator {
    unions: Vec<ActiveUnion>,
    fwer_indices: Vec<usize>,
    weights: Vec<f64>,
    corr: CorrelationModel,
    backend: Backend,
}

impl Evaluator {
    pub fn new(problem: &PwerProblem, opts: &EvalOptions) -> Result<Self> {
        let m = problem.m();
        let unions: Vec<ActiveUnion> = problem
            .structure
            .strata_pruned()
            .filter_map(|s| {
                let active = s.subset.intersect(problem.true_nulls);
                if active.is_empty() {
                    None
                } else {
                    Some(ActiveUnion {
                        pi: s.pi,
                        indices: active.indices().iter().map(|&i| i - 1).collect(),
                    })
                }
            })
            .collect();
        let fwer_indices: Vec<usize> = problem
            .true_nulls
            .indices()
            .iter()
            .filter(|&&i| i <= m)
            .map(|&i| i - 1)
            .collect();

        let exact_ok = problem.corr.df == Df::Infinite
            && unions.iter().all(|u| u.indices.len() <= 2);
        let backend = if exact_ok && opts.backend == BackendChoice::Auto {
            Backend::Exact
        } else {
            let draws = sample_joint(&problem.corr.matrix, problem.corr.df, opts.n_draws, opts.seed)?;
            let n = opts.n_draws;
            let ensemble: Vec<f64> = draws.transpose().as_slice().to_vec(); // row-major
            let scaled_max = |indices: &[usize]| -> Vec<f64> {
                let mut maxima: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|d| {
                        indices
                            .iter()
                            .map(|&i| ensemble[d * m + i] / problem.weights[i])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                maxima.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite draws"));
                maxima
            };
            let sorted_maxima = unions.iter().map(|u| scaled_max(&u.indices)).collect();
            let sorted_fwer_maxima = scaled_max(&fwer_indices);
            Backend::MonteCarlo {
                ensemble,
                n,
                sorted_maxima,
                sorted_fwer_maxima,
            }
        };
        Ok(Evaluator {
            unions,
            fwer_indices,
            weights: problem.weights.clone(),
            corr: problem.corr.clone(),
            backend,
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.backend, Backend::Exact)
    }

    /// PWER at the common critical value `c` (thresholds `w_i * c`).
    pub fn pwer_at(&self, c: f64) -> f64 {
        match &self.backend {
            Backend::Exact => {
                let thresholds: Vec<f64> = self.weights.iter().map(|w| w * c).collect();
                self.exact_pwer(&thresholds)
            }
            Backend::MonteCarlo { sorted_maxima, .. } => self
                .unions
                .iter()
                .zip(sorted_maxima)
                .map(|(u, maxima)| u.pi * frac_greater(maxima, c))
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }

    /// PWER at explicit per-hypothesis thresholds.
    pub fn pwer_at_thresholds(&self, thresholds: &[f64]) -> Result<f64> {
        if thresholds.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: thresholds.len(),
            });
        }
        match &self.backend {
            Backend::Exact => Ok(self.exact_pwer(thresholds)),
            Backend::MonteCarlo { ensemble, n, .. } => {
                let m = self.weights.len();
                let total: f64 = self
                    .unions
                    .iter()
                    .map(|u| {
                        let hits = (0..*n)
                            .into_par_iter()
                            .filter(|&d| {
                                u.indices.iter().any(|&i| ensemble[d * m + i] > thresholds[i])
                            })
                            .count();
                        u.pi * hits as f64 / *n as f64
                    })
                    .sum();
                Ok(total.clamp(0.0, 1.0))
            }
        }
    }

    /// FWER at the common critical value `c`: the probability of rejecting
    /// any true null.
    pub fn fwer_at(&self, c: f64) -> f64 {
        match &self.backend {
            Backend::Exact => self.exact_union(&self.fwer_indices, c),
            Backend::MonteCarlo {
                sorted_fwer_maxima, ..
            } => frac_greater(sorted_fwer_maxima, c),
        }
    }

    /// Monte Carlo mean and standard error of the PWER at `c`; on the exact
    /// backend the standard error is zero.
    pub fn pwer_with_se(&self, c: f64) -> (f64, f64) {
        match &self.backend {
            Backend::Exact => (self.pwer_at(c), 0.0),
            Backend::MonteCarlo { ensemble, n, .. } => {
                let m = self.weights.len();
                let per_draw: Vec<f64> = (0..*n)
                    .into_par_iter()
                    .map(|d| {
                        self.unions
                            .iter()
                            .map(|u| {
                                let hit = u
                                    .indices
                                    .iter()
                                    .any(|&i| ensemble[d * m + i] / self.weights[i] > c);
                                if hit {
                                    u.pi
                                } else {
                                    0.0
                                }
                            })
                            .sum()
                    })
                    .collect();
                mean_and_se(&per_draw)
            }
        }
    }

    fn exact_pwer(&self, thresholds: &[f64]) -> f64 {
        let total: f64 = self
            .unions
            .iter()
            .map(|u| {
                u.pi
                    * match u.indices[..] {
                        [i] => norm_cdf(-thresholds[i]),
                        [i, j] => {
                            1.0 - bvn_cdf(
                                thresholds[i],
                                thresholds[j],
                                self.corr.matrix.entry(i, j),
                            )
                        }
                        _ => unreachable!("exact backend requires unions of dimension <= 2"),
                    }
            })
            .sum();
        total.clamp(0.0, 1.0)
    }

    // Union probability over arbitrary index sets at scaled threshold c;
    // dimensions above two fall back to quasi-Monte Carlo.
    fn exact_union(&self, indices: &[usize], c: f64) -> f64 {
        match indices {
            [] => 0.0,
            &[i] => norm_cdf(-self.weights[i] * c),
            &[i, j] => {
                1.0 - bvn_cdf(
                    self.weights[i] * c,
                    self.weights[j] * c,
                    self.corr.matrix.entry(i, j),
                )
            }
            _ => {
                let sub = self
                    .corr
                    .matrix
                    .submatrix(indices)
                    .expect("indices validated at construction");
                let bounds: Vec<f64> = indices.iter().map(|&i| self.weights[i] * c).collect();
                let est = mvdist::mv_cdf_with(&bounds, &sub, self.corr.df, &McOptions::default())
                    .expect("validated inputs");
                1.0 - est.value
            }
        }
    }
}

fn frac_greater(sorted: &[f64], c: f64) -> f64 {
    let idx = sorted.partition_point(|&v| v <= c);
    (sorted.len() - idx) as f64 / sorted.len() as f64
}

/// One-shot PWER evaluation; builds a fresh evaluator, so prefer
/// [`Evaluator`] when evaluating repeatedly.
pub fn pwer_at(problem: &PwerProblem, c: f64) -> Result<f64> {
    Ok(Evaluator::new(problem, &EvalOptions::default())?.pwer_at(c))
}

/// One-shot PWER at explicit per-hypothesis thresholds.
pub fn pwer_at_thresholds(problem: &PwerProblem, thresholds: &[f64]) -> Result<f64> {
    Evaluator::new(problem, &EvalOptions::default())?.pwer_at_thresholds(thresholds)
}

/// One-shot FWER evaluation.
pub fn fwer_at(problem: &PwerProblem, c: f64) -> Result<f64> {
    Ok(Evaluator::new(problem, &EvalOptions::default())?.fwer_at(c))
}

/// Result of a critical-value solve.
#[derive(Debug, Clone, Copy)]
pub struct CriticalValueResult {
    pub c_star: f64,
    /// PWER at `c_star` under the backend that solved it.
    pub achieved_level: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Smallest critical value with `PWER <= alpha`, using default options.
pub fn solve_critical(problem: &PwerProblem, alpha: f64) -> Result<CriticalValueResult> {
    solve_critical_with(problem, alpha, &EvalOptions::default())
}

/// Smallest critical value with `PWER <= alpha`.
///
/// Bracketing search on `[0, 15]` with secant refinement to `c_tol` on the
/// critical value. Rejection thresholds are `w_i * c_star`; with unit
/// weights this is the common critical value of the paper's examples.
pub fn solve_critical_with(
    problem: &PwerProblem,
    alpha: f64,
    opts: &EvalOptions,
) -> Result<CriticalValueResult> {
    validate_level(alpha)?;
    let evaluator = Evaluator::new(problem, opts)?;
    solve_on_evaluator(&evaluator, alpha, opts.c_tol)
}

pub(crate) fn solve_on_evaluator(
    evaluator: &Evaluator,
    alpha: f64,
    c_tol: f64,
) -> Result<CriticalValueResult> {
    let root = solve_decreasing(|c| evaluator.pwer_at(c), 0.0, 15.0, alpha, c_tol)?;
    Ok(CriticalValueResult {
        c_star: root.x,
        achieved_level: root.f_at_x,
        iterations: root.iterations,
        bracket: root.bracket,
    })
}

/// Closed-form PWER critical value for two populations tested in
/// independent studies with overlap prevalence `pi12`.
///
/// Solves `(1 - pi12) (1 - Phi(c)) + pi12 (1 - Phi(c)^2) = alpha` for `c`;
/// of the two quadratic roots only one lies in the unit interval. The
/// rationalized form avoids cancellation as `pi12` approaches zero, where
/// the value tends to the unadjusted `Phi^{-1}(1 - alpha)`; `pi12 = 0`
/// itself is rejected so the caller can use that limit directly.
pub fn closed_form_independent_pair(alpha: f64, pi12: f64) -> Result<f64> {
    validate_level(alpha)?;
    if !(pi12 > 0.0 && pi12 <= 1.0) {
        return Err(Error::invalid(format!(
            "overlap prevalence must lie in (0, 1], got {pi12} \
             (at 0 the unadjusted value applies)"
        )));
    }
    let rest = 1.0 - pi12;
    let x = 2.0 * (1.0 - alpha) / (rest + (rest * rest + 4.0 * pi12 * (1.0 - alpha)).sqrt());
    Ok(norm_quantile(x))
}

/// PWER-adjusted p-values: `p_j` is the smallest level at which `H_j` can
/// be rejected, i.e. the PWER evaluated with `z_obs_j` on the boundary.
pub fn adjusted_p(problem: &PwerProblem, z_obs: &[f64]) -> Result<Vec<f64>> {
    adjusted_p_with(problem, z_obs, &EvalOptions::default())
}

pub fn adjusted_p_with(
    problem: &PwerProblem,
    z_obs: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    if z_obs.len() != problem.m() {
        return Err(Error::DimensionMismatch {
            expected: problem.m(),
            got: z_obs.len(),
        });
    }
    if z_obs.iter().any(|z| z.is_nan()) {
        return Err(Error::invalid("NaN in observed statistics"));
    }
    let evaluator = Evaluator::new(problem, opts)?;
    Ok(z_obs
        .iter()
        .enumerate()
        .map(|(j, &z)| evaluator.pwer_at(z / problem.weights[j]))
        .collect())
}

/// Which side(s) of the confidence intervals to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiSide {
    Lower,
    Upper,
    TwoSided,
}

/// Simultaneous confidence bounds dual to the PWER test.
#[derive(Debug, Clone)]
pub struct SciResult {
    /// Per-hypothesis lower bounds (`-inf` for upper-only intervals).
    pub lower: Vec<f64>,
    /// Per-hypothesis upper bounds (`+inf` for lower-only intervals).
    pub upper: Vec<f64>,
    pub c_star: f64,
    pub side: CiSide,
}

/// Wald-type simultaneous confidence bounds `estimate -/+ c_star * se`.
///
/// `c_star` should come from [`solve_critical`] at the boundary
/// configuration; by pivotality it does not depend on the hypothesized
/// values. Two-sided intervals reuse the one-sided critical value, doubling
/// the non-coverage probability.
pub fn sci_bounds(
    estimates: &[f64],
    standard_errors: &[f64],
    c_star: f64,
    side: CiSide,
) -> Result<SciResult> {
    if estimates.len() != standard_errors.len() {
        return Err(Error::DimensionMismatch {
            expected: estimates.len(),
            got: standard_errors.len(),
        });
    }
    if standard_errors.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("standard errors must be positive and finite"));
    }
    if estimates.iter().any(|e| !e.is_finite()) || !c_star.is_finite() {
        return Err(Error::invalid("estimates and c_star must be finite"));
    }
    let lower: Vec<f64> = match side {
        CiSide::Lower | CiSide::TwoSided => estimates
            .iter()
            .zip(standard_errors)
            .map(|(&e, &s)| e - c_star * s)
            .collect(),
        CiSide::Upper => vec![f64::NEG_INFINITY; estimates.len()],
    };
    let upper: Vec<f64> = match side {
        CiSide::Upper | CiSide::TwoSided => estimates
            .iter()
            .zip(standard_errors)
            .map(|(&e, &s)| e + c_star * s)
            .collect(),
        CiSide::Lower => vec![f64::INFINITY; estimates.len()],
    };
    Ok(SciResult {
        lower,
        upper,
        c_star,
        side,
    })
}

/// Simulated average simultaneous coverage of the lower confidence bounds.
#[derive(Debug, Clone, Copy)]
pub struct CoverageEstimate {
    pub coverage: f64,
    pub mc_se: f64,
    pub c_star: f64,
    pub n_reps: usize,
}

/// Estimates the average simultaneous coverage probability of the dual
/// lower bounds: the prevalence-weighted probability, over strata, that
/// every bound relevant to the stratum covers its parameter.
///
/// With pivotal Wald statistics, non-coverage of `theta_j` is exactly the
/// event `Z_j > w_j c_star` for a standardized null draw, so coverage is
/// simulated from the joint null distribution directly.
pub fn coverage_sim(
    problem: &PwerProblem,
    alpha: f64,
    n_reps: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    validate_level(alpha)?;
    if n_reps == 0 {
        return Err(Error::invalid("n_reps must be at least 1"));
    }
    let c_star = solve_critical(problem, alpha)?.c_star;
    let draws = sample_joint(&problem.corr.matrix, problem.corr.df, n_reps, seed)?;
    let strata: Vec<(f64, Vec<usize>)> = problem
        .structure
        .strata_pruned()
        .map(|s| {
            (
                s.pi,
                s.subset.indices().iter().map(|&i| i - 1).collect(),
            )
        })
        .collect();
    let weights = problem.weights.clone();
    let per_draw: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|d| {
            strata
                .iter()
                .map(|(pi, indices)| {
                    let all_covered = indices
                        .iter()
                        .all(|&i| draws[(d, i)] <= weights[i] * c_star);
                    if all_covered {
                        *pi
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect();
    let (coverage, mc_se) = mean_and_se(&per_draw);
    Ok(CoverageEstimate {
        coverage,
        mc_se,
        c_star,
        n_reps,
    })
}

fn validate_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}
