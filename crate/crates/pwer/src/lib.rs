//! Population-wise error rate (PWER) control for clinical trials with
//! overlapping sub-populations.
//!
//! When several treatment policies are tested in sub-populations that
//! intersect, only patients in the intersections are exposed to more than one
//! possible false rejection. The PWER is the prevalence-weighted average,
//! over the disjoint strata of the overall population, of the probability
//! that at least one true null hypothesis affecting that stratum is rejected.
//! Controlling it is strictly more liberal than family-wise error rate
//! (FWER) control whenever the populations do not all coincide.
//!
//! The crate is organized around the pipeline
//!
//! * [`popmodel`] — overlapping populations as disjoint strata with
//!   prevalences, plus multinomial prevalence estimation,
//! * [`mvdist`] — univariate/bivariate/multivariate normal and t
//!   probabilities and reproducible joint sampling,
//! * [`control`] — PWER/FWER evaluation, critical values, adjusted p-values
//!   and simultaneous confidence intervals,
//! * [`twopop`] — two overlapping populations: scenario correlations,
//!   critical values and sample-size inflation sweeps,
//! * [`umbrella`] — umbrella-trial subset hypotheses, selection rules and
//!   Monte Carlo performance evaluation,
//! * [`prevsim`] — PWER inflation under estimated prevalences.
//!
//! A longer guide with worked examples lives in the `book/` directory of the
//! repository; its code snippets are compiled as doc-tests.
//!
//! # Quick start
//!
//! ```
//! use pwer::popmodel::PopulationStructure;
//! use pwer::popmodel::Subset;
//! use pwer::mvdist::{CorrelationMatrix, Df};
//! use pwer::control::{CorrelationModel, PwerProblem, solve_critical};
//!
//! // Two overlapping populations: 40% exclusive each, 20% overlap.
//! let structure = PopulationStructure::new(vec![
//!     (Subset::from_indices(&[1]).unwrap(), 0.4),
//!     (Subset::from_indices(&[2]).unwrap(), 0.4),
//!     (Subset::from_indices(&[1, 2]).unwrap(), 0.2),
//! ])
//! .unwrap();
//! let corr = CorrelationModel::new(CorrelationMatrix::identity(2), Df::Infinite);
//! let problem = PwerProblem::new(structure, corr).unwrap();
//! let result = solve_critical(&problem, 0.025).unwrap();
//! // Between the unadjusted and the Sidak critical value.
//! assert!(result.c_star > 1.9599 && result.c_star < 2.2390);
//! ```

// Negated comparisons like `!(x > 0.0)` are deliberate: they treat NaN as
// a validation failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod mvdist;
pub mod popmodel;
pub mod prevsim;
pub mod twopop;
pub mod umbrella;

mod error;
pub(crate) mod util;

pub use error::{Error, Result};
