//! Umbrella-trial testing of subset treatment strategies.
//!
//! An umbrella trial enrolls `l` disjoint biomarker strata, pairs each with
//! its own experimental treatment against a common control, and tests every
//! non-empty subset strategy `H^S`: the null of non-positive
//! prevalence-weighted average effect over the union of the strata in `S`.
//! The statistics `T^S` follow a joint t-distribution with `N - 2l` degrees
//! of freedom and correlation `pi^{S ∩ S'} / sqrt(pi^S pi^{S'})`.
//!
//! FWER control compares every `T^S` against the upper alpha quantile of
//! `max_S T^S` under the global null; PWER control instead solves
//!
//! ```text
//!   sum_i pi_i * P( union over S containing i of {T^S > c} ) = alpha
//! ```
//!
//! which is strictly more liberal because disjoint subset strategies never
//! affect the same patient. Both critical values are computed from a single
//! common-random-number ensemble of null draws (the max over subsets per
//! population is precomputed per draw, making evaluation at any candidate
//! `c` a binary search). The claimed subset is the argmax statistic when it
//! clears the critical value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mvdist::{self, CorrelationMatrix};
use crate::popmodel::Subset;
use crate::util::{mean_and_se, solve_decreasing, splitmix64};
use crate::{Error, Result};

/// Largest supported number of strata (255 subset statistics).
pub const MAX_STRATA: usize = 8;

/// Design of one umbrella-trial simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmbrellaConfig {
    /// Number of disjoint strata.
    pub l: usize,
    /// Total sample size across all strata and arms.
    pub n_total: u64,
    /// Stratum prevalences; empty means equal.
    #[serde(default)]
    pub pi: Vec<f64>,
    /// Fraction of true null hypotheses; `q * l` must be an integer.
    pub q: f64,
    /// Relative half-range of the positive effects.
    pub tau: f64,
    /// Prevalence-weighted average of the positive effects.
    pub theta_overall: f64,
    /// Residual standard deviation of the outcome model.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub alpha: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl UmbrellaConfig {
    /// Equal-prevalence configuration.
    pub fn equal(
        l: usize,
        n_total: u64,
        q: f64,
        tau: f64,
        theta_overall: f64,
        alpha: f64,
    ) -> Self {
        UmbrellaConfig {
            l,
            n_total,
            pi: Vec::new(),
            q,
            tau,
            theta_overall,
            sigma: 1.0,
            alpha,
        }
    }

    /// Prevalences with the equal-size default applied.
    pub fn prevalences(&self) -> Vec<f64> {
        if self.pi.is_empty() {
            vec![1.0 / self.l as f64; self.l]
        } else {
            self.pi.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > MAX_STRATA {
            return Err(Error::invalid(format!(
                "number of strata must lie in 1..={MAX_STRATA}, got {}",
                self.l
            )));
        }
        let pi = self.prevalences();
        if pi.len() != self.l {
            return Err(Error::DimensionMismatch {
                expected: self.l,
                got: pi.len(),
            });
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("prevalences must be positive"));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "prevalences must sum to 1, got {total}"
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive"));
        }
        // theta_grid re-checks q, tau and theta_overall.
        theta_grid(self.l, self.q, self.tau, self.theta_overall)?;
        self.derive_arms()?;
        Ok(())
    }

    // Per-stratum sample sizes (rounded to even for the 1:1 split), the
    // realized total, and the residual degrees of freedom.
    fn derive_arms(&self) -> Result<(Vec<u64>, u64, f64)> {
        let n_arms: Vec<u64> = self
            .prevalences()
            .iter()
            .map(|&p| (2.0 * (self.n_total as f64 * p / 2.0).round()) as u64)
            .collect();
        if n_arms.iter().any(|&n| n < 2) {
            return Err(Error::invalid(
                "every stratum needs at least two patients after rounding",
            ));
        }
        let n_used: u64 = n_arms.iter().sum();
        let df = n_used as f64 - 2.0 * self.l as f64;
        if df < 1.0 {
            return Err(Error::invalid(format!(
                "residual degrees of freedom {df} too small"
            )));
        }
        Ok((n_arms, n_used, df))
    }
}

/// Which error rate the critical value controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Pwer,
    Fwer,
}

/// The effect vector determined by `(l, q, tau, theta_overall)`.
///
/// `q * l` strata get a zero effect (occupying the leading indices); the
/// remaining effects are equidistant between `theta_overall * (1 - tau)`
/// and `theta_overall * (1 + tau)`, so with equal prevalences their average
/// is exactly `theta_overall` and their relative half-range is `tau`.
pub fn theta_grid(l: usize, q: f64, tau: f64, theta_overall: f64) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::invalid("need at least one stratum"));
    }
    let l0_f = q * l as f64;
    let l0 = l0_f.round();
    if !(0.0..=l as f64).contains(&l0) || (l0_f - l0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "q * l must be an integer in 0..=l, got {l0_f}"
        )));
    }
    let l0 = l0 as usize;
    let l_pos = l - l0;
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1), got {tau}")));
    }
    if tau > 0.0 && l_pos <= 1 {
        return Err(Error::invalid(
            "tau > 0 requires at least two positive effects",
        ));
    }
    if l_pos > 0 && !(theta_overall > 0.0 && theta_overall.is_finite()) {
        return Err(Error::invalid(
            "theta_overall must be positive when some effects are positive",
        ));
    }

    let mut theta = vec![0.0; l0];
    if l_pos == 1 {
        theta.push(theta_overall);
    } else if l_pos > 1 {
        let lo = theta_overall * (1.0 - tau);
        let hi = theta_overall * (1.0 + tau);
        let step = (hi - lo) / (l_pos - 1) as f64;
        theta.extend((0..l_pos).map(|k| lo + k as f64 * step));
    }
    Ok(theta)
}

/// Prevalence-weighted average effect over the union of the strata in `s`.
pub fn subset_effect(theta: &[f64], pi: &[f64], s: Subset) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::invalid("subset must be non-empty"));
    }
    if theta.len() != pi.len() || s.max_index() > pi.len() {
        return Err(Error::invalid("subset or effect vector inconsistent with pi"));
    }
    let (mut num, mut mass) = (0.0, 0.0);
    for i in s.indices() {
        num += pi[i - 1] * theta[i - 1];
        mass += pi[i - 1];
    }
    Ok(num / mass)
}

/// Correlation of the subset statistics `T^S` and `T^{S'}`: with
/// independent per-stratum estimates and `Var` proportional to `1 / pi_i`
/// under 1:1 allocation it is `pi^{S ∩ S'} / sqrt(pi^S pi^{S'})`.
pub fn subset_corr(pi: &[f64], s: Subset, s_other: Subset) -> Result<f64> {
    if s.is_empty() || s_other.is_empty() {
        return Err(Error::invalid("subsets must be non-empty"));
    }
    if s.max_index() > pi.len() || s_other.max_index() > pi.len() {
        return Err(Error::invalid("subset mentions a stratum beyond pi"));
    }
    let mass = |subset: Subset| -> f64 { subset.indices().iter().map(|&i| pi[i - 1]).sum() };
    let shared = mass(s.intersect(s_other));
    Ok(shared / (mass(s) * mass(s_other)).sqrt())
}

/// Full correlation matrix of all `2^l - 1` subset statistics, indexed by
/// ascending bitmask.
pub fn subset_corr_matrix(pi: &[f64]) -> Result<CorrelationMatrix> {
    let l = pi.len();
    if l == 0 || l > MAX_STRATA {
        return Err(Error::invalid(format!("pi length must lie in 1..={MAX_STRATA}")));
    }
    let n_subsets = (1usize << l) - 1;
    // Subset masses via subset-sum recursion.
    let mut mass = vec![0.0; n_subsets + 1];
    for m in 1..=n_subsets {
        let low = m & m.wrapping_neg();
        mass[m] = mass[m ^ low] + pi[low.trailing_zeros() as usize];
    }
    let mut rows = vec![vec![0.0; n_subsets]; n_subsets];
    for a in 1..=n_subsets {
        for b in 1..=a {
            let r = mass[a & b] / (mass[a] * mass[b]).sqrt();
            rows[a - 1][b - 1] = r;
            rows[b - 1][a - 1] = r;
        }
    }
    CorrelationMatrix::from_rows(&rows)
}

/// Options for the critical-value ensembles.
#[derive(Debug, Clone, Copy)]
pub struct CritOptions {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for CritOptions {
    fn default() -> Self {
        CritOptions {
            n_draws: 1 << 20,
            seed: 0x756d_6272,
        }
    }
}

/// Derived design quantities and the machinery to draw trial replications.
#[derive(Debug, Clone)]
pub struct TrialModel {
    l: usize,
    /// Per-stratum sample sizes, rounded to even for the 1:1 split.
    n_arms: Vec<u64>,
    df: f64,
    theta: Vec<f64>,
    sigma: f64,
    /// Nominal prevalences (population quantities, used by the performance
    /// measures).
    pi: Vec<f64>,
    /// Realized prevalences `n_i / N` (used by statistics and critical
    /// values).
    pi_realized: Vec<f64>,
    /// Per subset mask (index mask-1): realized sample mass `n^S`.
    n_s: Vec<f64>,
    /// Per subset mask: nominal prevalence mass `pi^S`.
    pi_s: Vec<f64>,
    /// Masks whose true average effect is positive.
    positive_masks: Vec<u32>,
    /// Weighted positive-effect average (zero when all effects are null).
    theta_overall_effective: f64,
}

impl TrialModel {
    pub fn new(config: &UmbrellaConfig) -> Result<Self> {
        config.validate()?;
        let l = config.l;
        let pi = config.prevalences();
        let theta = theta_grid(l, config.q, config.tau, config.theta_overall)?;
        let (n_arms, n_used, df) = config.derive_arms()?;
        let pi_realized: Vec<f64> = n_arms.iter().map(|&n| n as f64 / n_used as f64).collect();

        let n_subsets = (1usize << l) - 1;
        let mut n_s = vec![0.0; n_subsets];
        let mut pi_s = vec![0.0; n_subsets];
        for m in 1..=n_subsets {
            let low = m & m.wrapping_neg();
            let i = low.trailing_zeros() as usize;
            let rest = m ^ low;
            let (prev_n, prev_pi) = if rest == 0 {
                (0.0, 0.0)
            } else {
                (n_s[rest - 1], pi_s[rest - 1])
            };
            n_s[m - 1] = prev_n + n_arms[i] as f64;
            pi_s[m - 1] = prev_pi + pi[i];
        }

        let positive_masks: Vec<u32> = (1..=n_subsets as u32)
            .filter(|&m| {
                let s = Subset::from_mask(m);
                subset_effect(&theta, &pi, s).expect("valid mask") > 0.0
            })
            .collect();
        let pos_mass: f64 = (0..l).filter(|&i| theta[i] > 0.0).map(|i| pi[i]).sum();
        let theta_overall_effective = if pos_mass > 0.0 {
            (0..l)
                .filter(|&i| theta[i] > 0.0)
                .map(|i| pi[i] * theta[i])
                .sum::<f64>()
                / pos_mass
        } else {
            0.0
        };

        Ok(TrialModel {
            l,
            n_arms,
            df,
            theta,
            sigma: config.sigma,
            pi,
            pi_realized,
            n_s,
            pi_s,
            positive_masks,
            theta_overall_effective,
        })
    }

    pub fn degrees_of_freedom(&self) -> f64 {
        self.df
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn realized_prevalences(&self) -> &[f64] {
        &self.pi_realized
    }

    /// All `2^l - 1` subset t-statistics for replication `rep` of the
    /// stream identified by `seed`; index `mask - 1` holds `T^S`.
    ///
    /// Per stratum the two arm means are drawn from the outcome model, the
    /// pooled residual variance from its chi-square law; the result is
    /// deterministic per `(seed, rep)`.
    pub fn draw_t_stats(&self, seed: u64, rep: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(rep);
        // Group intercepts are zero; only the treatment effect shifts the
        // treated arm. Each entry is n_i * estimated effect, ready for
        // subset summation.
        let effect_sums: Vec<f64> = self
            .n_arms
            .iter()
            .zip(&self.theta)
            .map(|(&n, &theta_i)| {
                let arm_sd = self.sigma / (n as f64 / 2.0).sqrt();
                let mean_treat = theta_i + arm_sd * rng.sample::<f64, _>(StandardNormal);
                let mean_control = arm_sd * rng.sample::<f64, _>(StandardNormal);
                n as f64 * (mean_treat - mean_control)
            })
            .collect();
        let chi = ChiSquared::new(self.df).expect("df validated");
        let sigma_hat = self.sigma * (chi.sample(&mut rng) / self.df).sqrt();
        self.stats_from_sums(&effect_sums, sigma_hat)
    }

    // T^S = theta_hat^S sqrt(n^S) / (2 sigma_hat) with
    // theta_hat^S = (sum_{i in S} n_i theta_hat_i) / n^S.
    fn stats_from_sums(&self, effect_sums: &[f64], sigma_hat: f64) -> Vec<f64> {
        let n_subsets = (1usize << self.l) - 1;
        let mut num = vec![0.0; n_subsets];
        for m in 1..=n_subsets {
            let low = m & m.wrapping_neg();
            let i = low.trailing_zeros() as usize;
            let rest = m ^ low;
            num[m - 1] = effect_sums[i] + if rest == 0 { 0.0 } else { num[rest - 1] };
        }
        (0..n_subsets)
            .map(|ix| num[ix] / (self.n_s[ix].sqrt() * 2.0 * sigma_hat))
            .collect()
    }
}

/// Outcome of one replication at a given critical value.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    /// `T^S` indexed by `mask - 1`.
    pub t_stats: Vec<f64>,
    /// The claimed subset: argmax statistic if it clears the critical
    /// value.
    pub selected: Option<Subset>,
    /// All subsets whose statistic exceeds the critical value.
    pub rejected: Vec<Subset>,
}

impl TrialOutcome {
    pub fn from_stats(t_stats: Vec<f64>, c: f64) -> Result<Self> {
        let selected = select_subset(&t_stats, c)?;
        let rejected = t_stats
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t > c)
            .map(|(ix, _)| Subset::from_mask(ix as u32 + 1))
            .collect();
        Ok(TrialOutcome {
            t_stats,
            selected,
            rejected,
        })
    }
}

/// The selection rule: the subset with the largest statistic, claimed only
/// if that statistic exceeds `c`; exact ties go to the smaller bitmask.
pub fn select_subset(t_stats: &[f64], c: f64) -> Result<Option<Subset>> {
    let n = t_stats.len();
    if n == 0 || !(n + 1).is_power_of_two() {
        return Err(Error::invalid(format!(
            "need statistics for all 2^l - 1 non-empty subsets, got {n}"
        )));
    }
    let mut best = 0usize;
    for ix in 1..n {
        if t_stats[ix] > t_stats[best] {
            best = ix;
        }
    }
    if t_stats[best] > c {
        Ok(Some(Subset::from_mask(best as u32 + 1)))
    } else {
        Ok(None)
    }
}

// Per-draw maxima of the null subset statistics: the global max and, for
// each population, the max over subsets containing it. Sorted ascending.
struct NullMaxima {
    global: Vec<f64>,
    per_population: Vec<Vec<f64>>,
}

fn null_maxima(model: &TrialModel, opts: &CritOptions) -> NullMaxima {
    let l = model.l;
    let n_subsets = (1usize << l) - 1;
    let n = opts.n_draws;
    const BLOCK: usize = 4096;
    let n_blocks = n.div_ceil(BLOCK);

    let sqrt_n: Vec<f64> = model.n_arms.iter().map(|&v| (v as f64).sqrt()).collect();
    let chi = ChiSquared::new(model.df).expect("df validated");

    let blocks: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK.min(n - b * BLOCK);
            let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let mut global = Vec::with_capacity(rows);
            let mut per_pop = vec![Vec::with_capacity(rows); l];
            let mut wsum = vec![0.0; n_subsets];
            for _ in 0..rows {
                let s_hat = (chi.sample(&mut rng) / model.df).sqrt();
                let mut xi = [0.0f64; MAX_STRATA];
                for item in xi.iter_mut().take(l) {
                    *item = rng.sample::<f64, _>(StandardNormal);
                }
                for m in 1..=n_subsets {
                    let low = m & m.wrapping_neg();
                    let i = low.trailing_zeros() as usize;
                    let rest = m ^ low;
                    wsum[m - 1] =
                        sqrt_n[i] * xi[i] + if rest == 0 { 0.0 } else { wsum[rest - 1] };
                }
                let mut g = f64::NEG_INFINITY;
                let mut pop_max = [f64::NEG_INFINITY; MAX_STRATA];
                for (ix, w) in wsum.iter().enumerate() {
                    let t = w / (model.n_s[ix].sqrt() * s_hat);
                    g = g.max(t);
                    let mask = ix + 1;
                    for (i, pm) in pop_max.iter_mut().enumerate().take(l) {
                        if mask & (1 << i) != 0 {
                            *pm = pm.max(t);
                        }
                    }
                }
                global.push(g);
                for i in 0..l {
                    per_pop[i].push(pop_max[i]);
                }
            }
            (global, per_pop)
        })
        .collect();

    let mut global = Vec::with_capacity(n);
    let mut per_population = vec![Vec::with_capacity(n); l];
    for (g, pp) in blocks {
        global.extend(g);
        for (i, v) in pp.into_iter().enumerate() {
            per_population[i].extend(v);
        }
    }
    let sort = |v: &mut Vec<f64>| v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    sort(&mut global);
    per_population.iter_mut().for_each(sort);
    NullMaxima {
        global,
        per_population,
    }
}

/// FWER-controlling critical value: the upper alpha quantile of
/// `max_S T^S` under the global null (default ensemble options).
pub fn fwer_critical(config: &UmbrellaConfig) -> Result<f64> {
    fwer_critical_with(config, &CritOptions::default())
}

pub fn fwer_critical_with(config: &UmbrellaConfig, opts: &CritOptions) -> Result<f64> {
    let model = TrialModel::new(config)?;
    if config.l == 1 {
        return Ok(mvdist::student_t_quantile(1.0 - config.alpha, model.df));
    }
    let maxima = null_maxima(&model, opts);
    let n = maxima.global.len();
    let rank = ((1.0 - config.alpha) * n as f64).ceil() as usize;
    Ok(maxima.global[rank.clamp(1, n) - 1])
}

/// PWER-controlling critical value: solves the prevalence-weighted union
/// rejection probability for `alpha` on the same kind of null ensemble.
pub fn pwer_critical(config: &UmbrellaConfig) -> Result<f64> {
    pwer_critical_with(config, &CritOptions::default())
}

pub fn pwer_critical_with(config: &UmbrellaConfig, opts: &CritOptions) -> Result<f64> {
    let model = TrialModel::new(config)?;
    if config.l == 1 {
        return Ok(mvdist::student_t_quantile(1.0 - config.alpha, model.df));
    }
    let maxima = null_maxima(&model, opts);
    let pwer = |c: f64| -> f64 {
        model
            .pi_realized
            .iter()
            .zip(&maxima.per_population)
            .map(|(&pi, m)| {
                let idx = m.partition_point(|&v| v <= c);
                pi * (m.len() - idx) as f64 / m.len() as f64
            })
            .sum()
    };
    let root = solve_decreasing(pwer, 0.0, 15.0, config.alpha, 1e-9)?;
    Ok(root.x)
}

/// Performance estimates of one simulated design, with Monte Carlo
/// standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: UmbrellaConfig,
    pub control: ControlKind,
    pub n_reps: usize,
    /// P(reject any `H^S` with a truly positive average effect).
    pub power: (f64, f64),
    /// Mean fraction `pi^{S*_+} / pi^{S*}` of the selected mass that truly
    /// benefits; zero when nothing is selected.
    pub correct: (f64, f64),
    /// Mean fraction of the selected mass with null effects.
    #[serde(rename = "false")]
    pub false_fraction: (f64, f64),
    /// Relative average effect: `100 E[sum_{i in S*} pi_i theta_i] /
    /// theta_overall` (zero when all effects are null).
    pub rae: (f64, f64),
    pub seed: u64,
}

/// Simulates the design under the chosen error-rate control.
///
/// The critical value is computed once from a null ensemble, then applied
/// to `n_reps` independent replications; sub-seeds for both stages derive
/// from `seed`, and replication `r` always uses stream `r`, so reports are
/// identical for any worker count.
pub fn simulate(
    config: &UmbrellaConfig,
    control: ControlKind,
    n_reps: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if n_reps == 0 {
        return Err(Error::invalid("n_reps must be at least 1"));
    }
    let model = TrialModel::new(config)?;
    let mut state = seed;
    let crit_seed = splitmix64(&mut state);
    let rep_seed = splitmix64(&mut state);
    let crit_opts = CritOptions {
        seed: crit_seed,
        ..CritOptions::default()
    };
    let c = match control {
        ControlKind::Pwer => pwer_critical_with(config, &crit_opts)?,
        ControlKind::Fwer => fwer_critical_with(config, &crit_opts)?,
    };

    struct RepStats {
        power: f64,
        correct: f64,
        false_fraction: f64,
        rae: f64,
    }

    let reps: Vec<RepStats> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let t = model.draw_t_stats(rep_seed, rep);
            let power = f64::from(
                model
                    .positive_masks
                    .iter()
                    .any(|&m| t[m as usize - 1] > c),
            );
            let (correct, false_fraction, rae) = match select_subset(&t, c)
                .expect("complete statistics")
            {
                Some(sel) => {
                    let mask = sel.mask() as usize;
                    let sel_mass = model.pi_s[mask - 1];
                    let mut benefit_mass = 0.0;
                    let mut effect_sum = 0.0;
                    for i in sel.indices() {
                        if model.theta[i - 1] > 0.0 {
                            benefit_mass += model.pi[i - 1];
                        }
                        effect_sum += model.pi[i - 1] * model.theta[i - 1];
                    }
                    let correct = benefit_mass / sel_mass;
                    let rae = if model.theta_overall_effective > 0.0 {
                        100.0 * effect_sum / model.theta_overall_effective
                    } else {
                        0.0
                    };
                    (correct, 1.0 - correct, rae)
                }
                None => (0.0, 0.0, 0.0),
            };
            RepStats {
                power,
                correct,
                false_fraction,
                rae,
            }
        })
        .collect();

    let collect = |f: fn(&RepStats) -> f64| -> (f64, f64) {
        let values: Vec<f64> = reps.iter().map(f).collect();
        mean_and_se(&values)
    };
    Ok(SimulationReport {
        config: config.clone(),
        control,
        n_reps,
        power: collect(|r| r.power),
        correct: collect(|r| r.correct),
        false_fraction: collect(|r| r.false_fraction),
        rae: collect(|r| r.rae),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn theta_grid_examples() {
        assert_eq!(theta_grid(2, 1.0, 0.0, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            theta_grid(4, 0.5, 0.0, 0.2).unwrap(),
            vec![0.0, 0.0, 0.2, 0.2]
        );
        let g = theta_grid(4, 0.0, 0.8, 1.0).unwrap();
        let want = [0.2, 0.7333333333333333, 1.2666666666666666, 1.8];
        for (a, b) in g.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        // Constraints recovered from the grid.
        let mean: f64 = g.iter().sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        let (lo, hi) = (g[0], g[3]);
        assert_abs_diff_eq!((hi - lo) / (hi + lo), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn theta_grid_rejects_bad_configs() {
        assert!(theta_grid(4, 0.3, 0.0, 1.0).is_err()); // q*l not integer
        assert!(theta_grid(4, 0.75, 0.4, 1.0).is_err()); // tau > 0 with one positive
        assert!(theta_grid(4, 1.0, 0.4, 0.0).is_err()); // tau > 0 with none positive
        assert!(theta_grid(4, 0.5, 1.0, 1.0).is_err()); // tau out of range
        assert!(theta_grid(4, 0.5, 0.0, 0.0).is_err()); // positives need theta > 0
    }

    #[test]
    fn subset_effect_examples() {
        let pi = [0.5, 0.5];
        let theta = [0.0, 0.4];
        let s1 = Subset::from_indices(&[2]).unwrap();
        assert_abs_diff_eq!(subset_effect(&theta, &pi, s1).unwrap(), 0.4, epsilon = 1e-15);
        let s12 = Subset::from_indices(&[1, 2]).unwrap();
        assert_abs_diff_eq!(subset_effect(&theta, &pi, s12).unwrap(), 0.2, epsilon = 1e-15);
        assert!(subset_effect(&theta, &pi, Subset::EMPTY).is_err());
    }

    #[test]
    fn subset_corr_examples() {
        let pi = [0.5, 0.5];
        let s1 = Subset::from_indices(&[1]).unwrap();
        let s2 = Subset::from_indices(&[2]).unwrap();
        let s12 = Subset::from_indices(&[1, 2]).unwrap();
        assert_abs_diff_eq!(subset_corr(&pi, s1, s1).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(subset_corr(&pi, s1, s2).unwrap(), 0.0);
        assert_abs_diff_eq!(
            subset_corr(&pi, s1, s12).unwrap(),
            0.5 / (0.5f64).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn corr_matrix_is_factorizable() {
        for l in 1..=5usize {
            let pi = vec![1.0 / l as f64; l];
            let r = subset_corr_matrix(&pi).unwrap();
            assert_eq!(r.dim(), (1 << l) - 1);
            assert!(r.cholesky_lower().is_ok());
        }
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_subset(&[0.1, 0.3, -0.2], 1.0).unwrap(), None);
        let sel = select_subset(&[0.1, 2.3, -0.2], 1.0).unwrap().unwrap();
        assert_eq!(sel.mask(), 2);
        // Exact tie above c: smaller bitmask wins.
        let sel = select_subset(&[2.0, 2.0, 1.0], 1.0).unwrap().unwrap();
        assert_eq!(sel.mask(), 1);
        assert!(select_subset(&[0.1, 0.2], 1.0).is_err());
    }

    #[test]
    fn l1_critical_is_t_quantile() {
        let config = UmbrellaConfig::equal(1, 1056, 1.0, 0.0, 0.0, 0.025);
        let c_f = fwer_critical(&config).unwrap();
        let c_p = pwer_critical(&config).unwrap();
        // scipy.stats.t.ppf(0.975, 1054)
        assert_abs_diff_eq!(c_f, 1.9622172591365907, epsilon = 1e-8);
        assert_eq!(c_f, c_p);
    }

    #[test]
    fn l2_critical_brackets() {
        let config = UmbrellaConfig::equal(2, 1056, 1.0, 0.0, 0.0, 0.025);
        let opts = CritOptions {
            n_draws: 1 << 18,
            seed: 3,
        };
        let c_f = fwer_critical_with(&config, &opts).unwrap();
        let c_p = pwer_critical_with(&config, &opts).unwrap();
        let t_alpha = mvdist::student_t_quantile(0.975, 1052.0);
        // There are 2^l - 1 = 3 positively correlated statistics, so the
        // three-test Sidak value bounds the max quantile from above.
        let sidak_t = mvdist::student_t_quantile(0.975f64.powf(1.0 / 3.0), 1052.0);
        assert!(c_f > t_alpha && c_f < sidak_t + 0.05, "c_f = {c_f}");
        assert!(c_p < c_f, "c_p = {c_p} not below c_f = {c_f}");
        assert!(c_p > t_alpha - 0.05);
    }

    #[test]
    fn simulate_global_null_fwer_calibration() {
        let config = UmbrellaConfig::equal(2, 1056, 1.0, 0.0, 0.0, 0.025);
        let report = simulate(&config, ControlKind::Fwer, 20_000, 7).unwrap();
        assert_eq!(report.power.0, 0.0);
        assert_eq!(report.correct.0, 0.0);
        // Realized FWER should sit near alpha.
        assert!(
            (report.false_fraction.0 - 0.025).abs() < 4.0 * report.false_fraction.1 + 2e-3,
            "false fraction {:?}",
            report.false_fraction
        );
        assert_eq!(report.rae.0, 0.0);
    }

    #[test]
    fn simulate_is_deterministic() {
        let config = UmbrellaConfig::equal(2, 256, 0.5, 0.0, 0.4, 0.025);
        let opts_run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&config, ControlKind::Pwer, 4000, 99).unwrap())
        };
        let a = opts_run(1);
        let b = opts_run(4);
        assert_eq!(a.power, b.power);
        assert_eq!(a.correct, b.correct);
        assert_eq!(a.false_fraction, b.false_fraction);
        assert_eq!(a.rae, b.rae);
    }

    #[test]
    fn accounting_identity_and_dominance() {
        let config = UmbrellaConfig::equal(3, 960, 1.0 / 3.0, 0.0, 0.3, 0.025);
        let model = TrialModel::new(&config).unwrap();
        let opts = CritOptions {
            n_draws: 1 << 17,
            seed: 5,
        };
        let c_p = pwer_critical_with(&config, &opts).unwrap();
        let c_f = fwer_critical_with(&config, &opts).unwrap();
        let mut nonempty = 0usize;
        let mut correct_plus_false = 0.0;
        for rep in 0..2000u64 {
            let t = model.draw_t_stats(11, rep);
            let sel_p = select_subset(&t, c_p).unwrap();
            let sel_f = select_subset(&t, c_f).unwrap();
            if let Some(sf) = sel_f {
                assert_eq!(sel_p, Some(sf), "FWER selection implies same PWER selection");
            }
            if let Some(sel) = sel_p {
                nonempty += 1;
                let mask = sel.mask() as usize;
                let mut benefit = 0.0;
                for i in sel.indices() {
                    if model.theta[i - 1] > 0.0 {
                        benefit += model.pi[i - 1];
                    }
                }
                let c_frac = benefit / model.pi_s[mask - 1];
                correct_plus_false += c_frac + (1.0 - c_frac);
            }
        }
        assert_abs_diff_eq!(correct_plus_false, nonempty as f64, epsilon = 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(UmbrellaConfig::equal(0, 100, 0.0, 0.0, 1.0, 0.025)
            .validate()
            .is_err());
        assert!(UmbrellaConfig::equal(9, 100, 0.0, 0.0, 1.0, 0.025)
            .validate()
            .is_err());
        assert!(UmbrellaConfig::equal(2, 4, 1.0, 0.0, 0.0, 0.025)
            .validate()
            .is_err()); // df = 0
        let mut bad_pi = UmbrellaConfig::equal(2, 1056, 0.0, 0.0, 1.0, 0.025);
        bad_pi.pi = vec![0.7, 0.7];
        assert!(bad_pi.validate().is_err());
        assert!(UmbrellaConfig::equal(2, 1056, 0.0, 0.0, 1.0, 0.025)
            .validate()
            .is_ok());
    }

    #[test]
    fn report_json_schema() {
        let config = UmbrellaConfig::equal(2, 256, 1.0, 0.0, 0.0, 0.025);
        let report = simulate(&config, ControlKind::Pwer, 10, 1).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["config", "control", "n_reps", "power", "correct", "false", "rae", "seed"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["control"], "pwer");
        assert!(json["power"].as_array().unwrap().len() == 2);
    }
}
