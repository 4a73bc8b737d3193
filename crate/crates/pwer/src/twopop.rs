//! Two overlapping populations of equal size: scenario-specific test
//! statistic correlations, PWER/FWER critical values, and sample-size
//! inflation sweeps.
//!
//! Three designs are covered. Independent parallel studies of the same
//! treatment give uncorrelated statistics. A single study with a shared
//! control arm correlates them: with different treatments per population
//! (1:1:1 randomization in the overlap) the correlation is
//! `(3/2) pi12 / (1 + 2 pi12)`, and with the same treatment everywhere
//! (1:1 randomization) it is `2 pi12 / (1 + pi12)`, which dominates the
//! former for every overlap.

use serde::{Deserialize, Serialize};

use crate::control::{
    solve_critical, CorrelationModel, CriticalValueResult, PwerProblem,
};
use crate::mvdist::{bvn_cdf, norm_quantile, CorrelationMatrix, Df};
use crate::popmodel::{PopulationStructure, Subset};
use crate::util::solve_decreasing;
use crate::{Error, Result};

/// Which two-population design generated the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Two separate parallel trials; statistics independent.
    IndependentStudies,
    /// One trial, common control, different experimental treatments.
    SharedControlDifferentTreatments,
    /// One trial, common control, the same experimental treatment.
    SharedControlSameTreatment,
}

/// A symmetric two-population design: both exclusive strata have prevalence
/// `(1 - pi12) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPopScenario {
    pub kind: ScenarioKind,
    pub pi12: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TwoPopScenario {
    pub fn new(kind: ScenarioKind, pi12: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi12) {
            return Err(Error::invalid(format!(
                "overlap prevalence must lie in [0, 1], got {pi12}"
            )));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(TwoPopScenario {
            kind,
            pi12,
            alpha,
            beta,
        })
    }

    /// Prevalence of each exclusive stratum.
    pub fn pi_complement(&self) -> f64 {
        (1.0 - self.pi12) / 2.0
    }

    /// The three-stratum population structure of the design.
    pub fn structure(&self) -> PopulationStructure {
        let rest = self.pi_complement();
        PopulationStructure::new(vec![
            (Subset::from_mask(0b01), rest),
            (Subset::from_mask(0b10), rest),
            (Subset::from_mask(0b11), self.pi12),
        ])
        .expect("scenario prevalences always form a valid structure")
    }
}

/// Correlation of the two z-statistics under the scenario's design.
pub fn scenario_correlation(scenario: &TwoPopScenario) -> f64 {
    let p = scenario.pi12;
    match scenario.kind {
        ScenarioKind::IndependentStudies => 0.0,
        ScenarioKind::SharedControlDifferentTreatments => 1.5 * p / (1.0 + 2.0 * p),
        ScenarioKind::SharedControlSameTreatment => 2.0 * p / (1.0 + p),
    }
}

/// Variance factor `v_i^2` of the weighted mean difference for population
/// `i` in the shared-control, different-treatments design:
/// `Var(x_T - x_C) = (2 sigma^2 / N) v_i^2`.
///
/// `pi_complement` is the prevalence of the stratum exclusive to population
/// `i`; a zero overlap drops the second term.
pub fn variance_factor(pi_complement: f64, pi12: f64) -> Result<f64> {
    if pi_complement < 0.0 || pi12 < 0.0 || pi_complement + pi12 <= 0.0 {
        return Err(Error::invalid(
            "prevalences must be non-negative with a positive sum",
        ));
    }
    let pi_i = pi_complement + pi12;
    let mut v2 = 0.0;
    if pi_complement > 0.0 {
        v2 += (pi_complement / pi_i).powi(2) * (2.0 / pi_complement);
    }
    if pi12 > 0.0 {
        v2 += (pi12 / pi_i).powi(2) * (3.0 / pi12);
    }
    Ok(v2)
}

/// Correlation of the two z-statistics for general (possibly asymmetric)
/// prevalences; the symmetric closed forms in [`scenario_correlation`] are
/// the special case `pi1c = pi2c`.
pub fn correlation_from_prevalences(
    kind: ScenarioKind,
    pi1c: f64,
    pi2c: f64,
    pi12: f64,
) -> Result<f64> {
    if pi1c < 0.0 || pi2c < 0.0 || pi12 < 0.0 {
        return Err(Error::invalid("prevalences must be non-negative"));
    }
    if pi12 == 0.0 {
        return Ok(0.0);
    }
    let pi1 = pi1c + pi12;
    let pi2 = pi2c + pi12;
    match kind {
        ScenarioKind::IndependentStudies => Ok(0.0),
        ScenarioKind::SharedControlDifferentTreatments => {
            let v1 = variance_factor(pi1c, pi12)?.sqrt();
            let v2 = variance_factor(pi2c, pi12)?.sqrt();
            Ok(3.0 * pi12 / (2.0 * pi1 * pi2 * v1 * v2))
        }
        ScenarioKind::SharedControlSameTreatment => Ok(pi12 / (pi1 * pi2).sqrt()),
    }
}

/// PWER and FWER critical values of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct CriticalPair {
    pub c_pwer: f64,
    pub c_fwer: f64,
}

/// Solves the scenario's PWER and FWER critical values at its level.
///
/// The PWER value comes from the generic solver on the three-stratum
/// structure with the scenario correlation; the FWER value solves
/// `1 - Phi_rho(c, c) = alpha` directly.
pub fn critical_values(scenario: &TwoPopScenario) -> Result<CriticalPair> {
    let rho = scenario_correlation(scenario);
    let c_pwer = pwer_critical(scenario, rho)?.c_star;
    let c_fwer = fwer_critical_at(rho, scenario.alpha)?;
    Ok(CriticalPair { c_pwer, c_fwer })
}

fn pwer_critical(scenario: &TwoPopScenario, rho: f64) -> Result<CriticalValueResult> {
    let matrix = CorrelationMatrix::equicorrelated(2, rho)?;
    let problem = PwerProblem::new(
        scenario.structure(),
        CorrelationModel::new(matrix, Df::Infinite),
    )?;
    solve_critical(&problem, scenario.alpha)
}

/// Critical value controlling the FWER of two correlated z-tests.
pub fn fwer_critical_at(rho: f64, alpha: f64) -> Result<f64> {
    let root = solve_decreasing(|c| 1.0 - bvn_cdf(c, c, rho), 0.0, 15.0, alpha, 1e-10)?;
    Ok(root.x)
}

/// Factor of sample size increase relative to the unadjusted single test,
/// for marginal power `1 - beta` at level `alpha` with critical value `c`.
pub fn sample_size_factor(c: f64, alpha: f64, beta: f64) -> f64 {
    let z_beta = norm_quantile(1.0 - beta);
    let z_alpha = norm_quantile(1.0 - alpha);
    ((z_beta + c) / (z_beta + z_alpha)).powi(2)
}

/// Minimal per-population sample size for marginal power `1 - beta` with
/// critical value `c` and standardized effect `delta`.
pub fn required_n(c: f64, beta: f64, delta: f64) -> Result<u64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!(
            "standardized effect must be positive, got {delta}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    let z_beta = norm_quantile(1.0 - beta);
    Ok(((z_beta + c) / delta).powi(2).ceil() as u64)
}

/// One row of a sample-size inflation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InflationRow {
    pub pi12: f64,
    pub q_pwer: f64,
    pub q_fwer: f64,
}

/// Sample-size inflation `q(c_P)` and `q(c_F)` over a grid of overlap
/// prevalences (the data behind the comparison figures).
pub fn inflation_sweep(
    kind: ScenarioKind,
    alpha: f64,
    beta: f64,
    pi12_grid: &[f64],
) -> Result<Vec<InflationRow>> {
    use rayon::prelude::*;
    pi12_grid
        .par_iter()
        .map(|&pi12| {
            let scenario = TwoPopScenario::new(kind, pi12, alpha, beta)?;
            let crit = critical_values(&scenario)?;
            Ok(InflationRow {
                pi12,
                q_pwer: sample_size_factor(crit.c_pwer, alpha, beta),
                q_fwer: sample_size_factor(crit.c_fwer, alpha, beta),
            })
        })
        .collect()
}

/// Writes sweep rows as CSV with six decimal places.
pub fn write_inflation_csv<W: std::io::Write>(
    rows: &[InflationRow],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "pi12,q_pwer,q_fwer")?;
    for row in rows {
        writeln!(
            out,
            "{:.6},{:.6},{:.6}",
            row.pi12, row.q_pwer, row.q_fwer
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scenario(kind: ScenarioKind, pi12: f64) -> TwoPopScenario {
        TwoPopScenario::new(kind, pi12, 0.025, 0.2).unwrap()
    }

    #[test]
    fn correlations_match_closed_forms() {
        let s = scenario(ScenarioKind::SharedControlDifferentTreatments, 0.2);
        assert_abs_diff_eq!(scenario_correlation(&s), 3.0 * 0.2 / (2.0 * 1.4), epsilon = 1e-15);
        let s = scenario(ScenarioKind::SharedControlDifferentTreatments, 0.0);
        assert_eq!(scenario_correlation(&s), 0.0);
        let s = scenario(ScenarioKind::SharedControlSameTreatment, 1.0);
        assert_abs_diff_eq!(scenario_correlation(&s), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn same_treatment_correlation_dominates() {
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let diff = scenario_correlation(&scenario(
                ScenarioKind::SharedControlDifferentTreatments,
                p,
            ));
            let same =
                scenario_correlation(&scenario(ScenarioKind::SharedControlSameTreatment, p));
            assert!(same >= diff - 1e-15, "pi12 = {p}: {same} < {diff}");
        }
    }

    #[test]
    fn variance_factor_examples() {
        assert_abs_diff_eq!(variance_factor(0.5, 0.0).unwrap(), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            variance_factor(0.4, 0.2).unwrap(),
            3.888888888888889,
            epsilon = 1e-12
        );
        assert!(variance_factor(0.0, 0.0).is_err());
    }

    #[test]
    fn general_correlation_reduces_to_symmetric_form() {
        // 40-digit oracle: general formula at symmetric prevalences.
        let got = correlation_from_prevalences(
            ScenarioKind::SharedControlDifferentTreatments,
            0.4,
            0.4,
            0.2,
        )
        .unwrap();
        assert_abs_diff_eq!(got, 0.214285714285714, epsilon = 1e-12);
        // Asymmetric case from the same oracle.
        let got = correlation_from_prevalences(
            ScenarioKind::SharedControlDifferentTreatments,
            0.3,
            0.5,
            0.2,
        )
        .unwrap();
        assert_abs_diff_eq!(got, 0.216506350946110, epsilon = 1e-12);
    }

    #[test]
    fn correlation_invariant_under_prevalence_rescaling() {
        // Renormalizing all prevalences by a common factor leaves the
        // correlation built from variance factors unchanged.
        let base = correlation_from_prevalences(
            ScenarioKind::SharedControlDifferentTreatments,
            0.4,
            0.4,
            0.2,
        )
        .unwrap();
        for scale in [0.5, 2.0, 7.3] {
            let scaled = correlation_from_prevalences(
                ScenarioKind::SharedControlDifferentTreatments,
                0.4 * scale,
                0.4 * scale,
                0.2 * scale,
            )
            .unwrap();
            assert_abs_diff_eq!(base, scaled, epsilon = 1e-12);
        }
    }

    #[test]
    fn worked_example_critical_values() {
        // Scenario (i) at pi12 = 0.2: reference values from a 40-digit
        // root solve on the defining equations.
        let s = scenario(ScenarioKind::SharedControlDifferentTreatments, 0.2);
        let crit = critical_values(&s).unwrap();
        assert_abs_diff_eq!(crit.c_pwer, 2.03261049032043, epsilon = 1e-6);
        assert_abs_diff_eq!(crit.c_fwer, 2.23296883924801, epsilon = 1e-6);
    }

    #[test]
    fn independent_full_overlap_hits_sidak() {
        let s = scenario(ScenarioKind::IndependentStudies, 1.0);
        let crit = critical_values(&s).unwrap();
        let sidak = norm_quantile(0.975f64.sqrt());
        assert_abs_diff_eq!(crit.c_pwer, sidak, epsilon = 1e-6);
        assert_abs_diff_eq!(crit.c_fwer, sidak, epsilon = 1e-6);
    }

    #[test]
    fn pwer_critical_never_exceeds_fwer_critical() {
        for kind in [
            ScenarioKind::IndependentStudies,
            ScenarioKind::SharedControlDifferentTreatments,
            ScenarioKind::SharedControlSameTreatment,
        ] {
            for &p in &[0.0, 0.3, 0.8, 1.0] {
                let crit = critical_values(&scenario(kind, p)).unwrap();
                assert!(
                    crit.c_pwer <= crit.c_fwer + 1e-7,
                    "{kind:?} pi12={p}: {} > {}",
                    crit.c_pwer,
                    crit.c_fwer
                );
            }
        }
    }

    #[test]
    fn sample_size_factor_baseline_and_sidak() {
        let z_alpha = norm_quantile(0.975);
        assert_abs_diff_eq!(sample_size_factor(z_alpha, 0.025, 0.2), 1.0, epsilon = 1e-12);
        let sidak = norm_quantile(0.975f64.sqrt());
        assert_abs_diff_eq!(
            sample_size_factor(sidak, 0.025, 0.2),
            1.20909072593,
            epsilon = 1e-9
        );
    }

    #[test]
    fn required_n_examples() {
        assert_eq!(required_n(1.96, 0.2, 0.3).unwrap(), 88);
        assert_eq!(required_n(1.96, 0.2, 1e9).unwrap(), 1);
        // Doubling the effect quarters the pre-ceiling value.
        let n1 = ((norm_quantile(0.8) + 1.96) / 0.3f64).powi(2);
        let n2 = ((norm_quantile(0.8) + 1.96) / 0.6f64).powi(2);
        assert_abs_diff_eq!(n1 / n2, 4.0, epsilon = 1e-12);
        assert!(required_n(1.96, 0.2, 0.0).is_err());
    }

    #[test]
    fn rewritten_pwer_identity() {
        // 1 - Phi(c) + pi12 (Phi(c) - Phi_rho(c, c)) equals the stratum sum
        // for every c (algebraic identity of the symmetric design).
        use crate::mvdist::norm_cdf;
        let s = scenario(ScenarioKind::SharedControlDifferentTreatments, 0.35);
        let rho = scenario_correlation(&s);
        let problem = PwerProblem::new(
            s.structure(),
            CorrelationModel::new(CorrelationMatrix::equicorrelated(2, rho).unwrap(), Df::Infinite),
        )
        .unwrap();
        for &c in &[0.5, 1.5, 2.2, 3.0] {
            let rewritten =
                1.0 - norm_cdf(c) + s.pi12 * (norm_cdf(c) - bvn_cdf(c, c, rho));
            let direct = crate::control::pwer_at(&problem, c).unwrap();
            assert_abs_diff_eq!(direct, rewritten, epsilon = 1e-12);
        }
    }

    #[test]
    fn sweep_rows_and_csv_format() {
        let rows = inflation_sweep(
            ScenarioKind::IndependentStudies,
            0.025,
            0.2,
            &[0.0, 0.5, 1.0],
        )
        .unwrap();
        assert_abs_diff_eq!(rows[0].q_pwer, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rows[2].q_pwer, rows[2].q_fwer, epsilon = 1e-9);
        // q(c_F) constant for independent studies, q(c_P) nondecreasing.
        assert_abs_diff_eq!(rows[0].q_fwer, rows[2].q_fwer, epsilon = 1e-9);
        assert!(rows[0].q_pwer <= rows[1].q_pwer && rows[1].q_pwer <= rows[2].q_pwer);

        let mut buf = Vec::new();
        write_inflation_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("pi12,q_pwer,q_fwer"));
        assert_eq!(lines.next(), Some("0.000000,1.000000,1.209091"));
    }
}
