//! PWER inflation when prevalences are estimated rather than known.
//!
//! In practice the stratum prevalences entering the critical-value solve
//! are multinomial maximum-likelihood estimates from the recruited sample.
//! The solved value then misses the target level by a data-dependent
//! amount. This module quantifies that effect for the symmetric
//! two-population designs: per replication it draws stratum counts, solves
//! the critical value from the estimates and the count-conditional
//! correlation, and evaluates the resulting true PWER under the actual
//! prevalences. Averaging over replications yields the actual overall PWER
//! surface over the prevalence simplex.
//!
//! A stratum that by chance recruits nobody silently drops out of the
//! estimated structure, so its multiplicity goes unaccounted — the true
//! PWER then charges it anyway. The optional `pi_min` floor guards against
//! this at the price of conservatism.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mvdist::{bvn_cdf, norm_cdf, norm_quantile};
use crate::popmodel::{prevalence_mle, Subset};
use crate::twopop::{correlation_from_prevalences, ScenarioKind};
use crate::util::{mean_and_se, solve_decreasing};
use crate::{Error, Result};

/// Configuration of a prevalence-estimation robustness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevSimConfig {
    pub kind: ScenarioKind,
    /// Points per axis of the `(pi1, pi2)` grid over `[0, 1]^2`; only
    /// points on the simplex `pi1 + pi2 <= 1` are evaluated.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Patients recruited (the multinomial sample size).
    pub n_total: u64,
    pub alpha: f64,
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub pi_min: Option<f64>,
}

fn default_grid_points() -> usize {
    21
}

fn default_n_reps() -> usize {
    10_000
}

impl PrevSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::invalid("grid needs at least two points per axis"));
        }
        if self.n_total == 0 {
            return Err(Error::invalid("n_total must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.n_reps == 0 {
            return Err(Error::invalid("n_reps must be at least 1"));
        }
        if let Some(floor) = self.pi_min {
            if !(floor > 0.0 && 3.0 * floor < 1.0) {
                return Err(Error::invalid(format!(
                    "pi_min = {floor} must be positive and leave mass for three strata"
                )));
            }
        }
        Ok(())
    }
}

/// Realized stratum counts of one recruited sample: exclusive to
/// population 1, exclusive to population 2, and the overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub n1: u64,
    pub n2: u64,
    pub n12: u64,
}

/// True stratum prevalences in the same order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapPrevalences {
    pub pi1: f64,
    pub pi2: f64,
    pub pi12: f64,
}

impl OverlapPrevalences {
    pub fn validate(&self) -> Result<()> {
        if self.pi1 < 0.0 || self.pi2 < 0.0 || self.pi12 < 0.0 {
            return Err(Error::invalid("prevalences must be non-negative"));
        }
        if ((self.pi1 + self.pi2 + self.pi12) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("prevalences must sum to 1"));
        }
        Ok(())
    }
}

/// The true PWER realized by one estimated critical value.
///
/// The estimates are the multinomial MLE from `counts` (floored if
/// `pi_min` is given); the correlation is the scenario's general
/// (asymmetric) formula evaluated at those realized shares, conditional on
/// the counts; the critical value solves the estimated PWER equation; the
/// return weights each stratum's type I error probability at that value by
/// the true prevalences. A zero overlap count without a floor drops the
/// overlap stratum, reproducing the unaccounted-multiplicity risk.
pub fn actual_pwer_one_rep(
    counts: OverlapCounts,
    truth: OverlapPrevalences,
    kind: ScenarioKind,
    alpha: f64,
    pi_min: Option<f64>,
) -> Result<f64> {
    truth.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let est = prevalence_mle(
        &[
            (Subset::from_mask(0b01), counts.n1),
            (Subset::from_mask(0b10), counts.n2),
            (Subset::from_mask(0b11), counts.n12),
        ],
        pi_min,
    )?;
    let (p1, p2, p12) = (
        est.estimates[0].1,
        est.estimates[1].1,
        est.estimates[2].1,
    );
    let rho = correlation_from_prevalences(kind, p1, p2, p12)?;
    let c = solve_estimated_critical(p1, p2, p12, rho, alpha)?;
    Ok(true_pwer_at(truth, rho, c))
}

// Critical value from estimated shares; without an overlap share the
// remaining strata all see a single test and the unadjusted value is
// exact.
fn solve_estimated_critical(p1: f64, p2: f64, p12: f64, rho: f64, alpha: f64) -> Result<f64> {
    if p12 == 0.0 {
        return Ok(norm_quantile(1.0 - alpha));
    }
    let pwer = |c: f64| (p1 + p2) * norm_cdf(-c) + p12 * (1.0 - bvn_cdf(c, c, rho));
    Ok(solve_decreasing(pwer, 0.0, 15.0, alpha, 1e-9)?.x)
}

fn true_pwer_at(truth: OverlapPrevalences, rho: f64, c: f64) -> f64 {
    (truth.pi1 + truth.pi2) * norm_cdf(-c) + truth.pi12 * (1.0 - bvn_cdf(c, c, rho))
}

/// One cell of the actual-PWER surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub pi1: f64,
    pub pi2: f64,
    pub mean_pwer: f64,
    pub mc_se: f64,
}

/// Mean actual PWER over multinomial replications, per grid point of the
/// `(pi1, pi2)` simplex.
///
/// Deterministic per `(seed, grid index, replication index)`: replication
/// `r` of cell `g` always reads stream `(g << 32) | r`.
pub fn prevalence_effect_grid(config: &PrevSimConfig) -> Result<Vec<GridCell>> {
    config.validate()?;
    let k = config.grid_points;
    let step = 1.0 / (k - 1) as f64;
    let cells: Vec<(usize, f64, f64)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|&(i, j)| i + j < k)
        .enumerate()
        .map(|(g, (i, j))| (g, i as f64 * step, j as f64 * step))
        .collect();

    cells
        .par_iter()
        .map(|&(g, pi1, pi2)| {
            let truth = OverlapPrevalences {
                pi1,
                pi2,
                pi12: (1.0 - pi1 - pi2).max(0.0),
            };
            let mut values = Vec::with_capacity(config.n_reps);
            for rep in 0..config.n_reps {
                let counts = draw_counts(truth, config.n_total, config.seed, g as u64, rep as u64);
                values.push(actual_pwer_one_rep(
                    counts,
                    truth,
                    config.kind,
                    config.alpha,
                    config.pi_min,
                )?);
            }
            let (mean_pwer, mc_se) = mean_and_se(&values);
            Ok(GridCell {
                pi1,
                pi2,
                mean_pwer,
                mc_se: if mc_se.is_nan() { 0.0 } else { mc_se },
            })
        })
        .collect()
}

/// One multinomial draw of the three stratum counts via chained binomials.
pub fn draw_counts(
    truth: OverlapPrevalences,
    n_total: u64,
    seed: u64,
    grid_index: u64,
    rep: u64,
) -> OverlapCounts {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((grid_index << 32) | rep);
    let n1 = binomial_draw(&mut rng, n_total, truth.pi1);
    let rest = n_total - n1;
    let cond = if truth.pi1 >= 1.0 {
        0.0
    } else {
        (truth.pi2 / (1.0 - truth.pi1)).min(1.0)
    };
    let n2 = binomial_draw(&mut rng, rest, cond);
    OverlapCounts {
        n1,
        n2,
        n12: rest - n2,
    }
}

fn binomial_draw(rng: &mut ChaCha12Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("validated p").sample(rng)
    }
}

/// Writes grid cells as CSV with six decimal places.
pub fn write_grid_csv<W: std::io::Write>(cells: &[GridCell], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pi1,pi2,mean_pwer,mc_se")?;
    for c in cells {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6}",
            c.pi1, c.pi2, c.mean_pwer, c.mc_se
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SCENARIO: ScenarioKind = ScenarioKind::SharedControlDifferentTreatments;

    #[test]
    fn proportional_counts_return_alpha_in_the_limit() {
        // Counts exactly proportional to the truth make the estimate exact,
        // so the realized PWER equals the target.
        let truth = OverlapPrevalences {
            pi1: 0.4,
            pi2: 0.4,
            pi12: 0.2,
        };
        let counts = OverlapCounts {
            n1: 40_000,
            n2: 40_000,
            n12: 20_000,
        };
        let got = actual_pwer_one_rep(counts, truth, SCENARIO, 0.025, None).unwrap();
        assert_abs_diff_eq!(got, 0.025, epsilon = 1e-7);
    }

    #[test]
    fn no_overlap_truth_is_exact_regardless_of_split() {
        let truth = OverlapPrevalences {
            pi1: 0.7,
            pi2: 0.3,
            pi12: 0.0,
        };
        for counts in [
            OverlapCounts { n1: 50, n2: 0, n12: 0 },
            OverlapCounts { n1: 10, n2: 40, n12: 0 },
            OverlapCounts { n1: 0, n2: 50, n12: 0 },
        ] {
            let got = actual_pwer_one_rep(counts, truth, SCENARIO, 0.025, None).unwrap();
            assert_abs_diff_eq!(got, 0.025, epsilon = 1e-12);
        }
    }

    #[test]
    fn inflated_critical_value_decreases_true_pwer() {
        let truth = OverlapPrevalences {
            pi1: 0.4,
            pi2: 0.4,
            pi12: 0.2,
        };
        let rho = 0.21;
        let base = true_pwer_at(truth, rho, 2.03);
        assert!(true_pwer_at(truth, rho, 2.53) < base);
        assert!(true_pwer_at(truth, rho, 1.53) > base);
    }

    #[test]
    fn omitted_overlap_inflates_true_pwer() {
        // All mass observed outside the overlap: the estimated structure
        // drops it and solves the unadjusted value, so the truth pays.
        let truth = OverlapPrevalences {
            pi1: 0.4,
            pi2: 0.4,
            pi12: 0.2,
        };
        let counts = OverlapCounts {
            n1: 25,
            n2: 25,
            n12: 0,
        };
        let unfloored = actual_pwer_one_rep(counts, truth, SCENARIO, 0.025, None).unwrap();
        assert!(unfloored > 0.025, "got {unfloored}");
        // The floor restores some protection.
        let floored = actual_pwer_one_rep(counts, truth, SCENARIO, 0.025, Some(0.05)).unwrap();
        assert!(floored < unfloored);
    }

    #[test]
    fn grid_respects_simplex_and_boundary() {
        let config = PrevSimConfig {
            kind: SCENARIO,
            grid_points: 5,
            n_total: 50,
            alpha: 0.025,
            n_reps: 200,
            seed: 42,
            pi_min: None,
        };
        let cells = prevalence_effect_grid(&config).unwrap();
        assert_eq!(cells.len(), 15); // 5+4+3+2+1
        for c in &cells {
            assert!(c.pi1 + c.pi2 <= 1.0 + 1e-12);
            assert!(c.mean_pwer > 0.0 && c.mean_pwer < 0.1);
        }
        // pi12 = 0 boundary cells are exact.
        let corner = cells
            .iter()
            .find(|c| (c.pi1 - 1.0).abs() < 1e-12)
            .unwrap();
        assert_abs_diff_eq!(corner.mean_pwer, 0.025, epsilon = 1e-9);
        assert_abs_diff_eq!(corner.mc_se, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_is_deterministic_across_thread_counts() {
        let config = PrevSimConfig {
            kind: ScenarioKind::SharedControlSameTreatment,
            grid_points: 4,
            n_total: 50,
            alpha: 0.025,
            n_reps: 100,
            seed: 7,
            pi_min: None,
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| prevalence_effect_grid(&config).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn csv_format() {
        let cells = [GridCell {
            pi1: 0.25,
            pi2: 0.5,
            mean_pwer: 0.0251234567,
            mc_se: 0.0001,
        }];
        let mut buf = Vec::new();
        write_grid_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "pi1,pi2,mean_pwer,mc_se\n0.250000,0.500000,0.025123,0.000100\n"
        );
    }

    #[test]
    fn config_validation() {
        let mut config = PrevSimConfig {
            kind: SCENARIO,
            grid_points: 21,
            n_total: 50,
            alpha: 0.025,
            n_reps: 100,
            seed: 1,
            pi_min: None,
        };
        assert!(config.validate().is_ok());
        config.grid_points = 1;
        assert!(config.validate().is_err());
        config.grid_points = 21;
        config.pi_min = Some(0.4);
        assert!(config.validate().is_err());
    }
}
