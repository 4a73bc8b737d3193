//! Small numerical helpers shared across modules.

use crate::{Error, Result};

/// Result of a monotone root search.
#[derive(Debug, Clone, Copy)]
pub struct RootResult {
    /// Right end of the final bracket: the smallest admissible abscissa with
    /// `f(x) <= target`.
    pub x: f64,
    pub f_at_x: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Finds the smallest `x` in `[lo, hi]` with `f(x) <= target` for a
/// nonincreasing `f`, to within `x_tol` on the abscissa.
///
/// Bisection with secant acceleration: secant proposals are accepted only
/// when they fall strictly inside the current bracket, so the bracketing
/// invariant `f(lo) > target >= f(hi)` is never lost. This also behaves well
/// when `f` is a step function (Monte Carlo ensembles), where pure secant
/// steps can stall on flat segments.
pub fn solve_decreasing<F>(f: F, lo: f64, hi: f64, target: f64, x_tol: f64) -> Result<RootResult>
where
    F: Fn(f64) -> f64,
{
    let f_lo = f(lo);
    if f_lo <= target {
        return Ok(RootResult {
            x: lo,
            f_at_x: f_lo,
            iterations: 0,
            bracket: (lo, lo),
        });
    }
    let f_hi = f(hi);
    if f_hi > target {
        return Err(Error::RootFinding(format!(
            "no bracket in [{lo}, {hi}]: f({hi}) = {f_hi} > {target}"
        )));
    }

    let (mut a, mut fa) = (lo, f_lo);
    let (mut b, mut fb) = (hi, f_hi);
    let mut iterations = 0usize;
    let max_iter = 200;
    while b - a > x_tol && iterations < max_iter {
        // Secant estimate of the crossing, clipped away from the bracket
        // ends so progress is guaranteed.
        let mid = 0.5 * (a + b);
        let mut x = if (fa - fb).abs() > f64::EPSILON {
            a + (fa - target) * (b - a) / (fa - fb)
        } else {
            mid
        };
        if !(x > a && x < b) {
            x = mid;
        }
        // Alternate with bisection so a bad secant step cannot slow us down
        // by more than a constant factor.
        if iterations % 2 == 1 {
            x = mid;
        }
        let fx = f(x);
        if fx <= target {
            b = x;
            fb = fx;
        } else {
            a = x;
            fa = fx;
        }
        iterations += 1;
    }
    Ok(RootResult {
        x: b,
        f_at_x: fb,
        iterations,
        bracket: (a, b),
    })
}

/// Neumaier compensated summation.
///
/// Used wherever an accounting identity across accumulated means must hold to
/// much better than naive-summation error (e.g. correct + false fractions).
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Mean and Monte Carlo standard error of a sample, with compensated sums.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = CompensatedSum::default();
    for &v in values {
        s.add(v);
    }
    let mean = s.value() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let mut sq = CompensatedSum::default();
    for &v in values {
        let d = v - mean;
        sq.add(d * d);
    }
    let var = sq.value() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// SplitMix64 step, used to derive independent sub-seeds from a master seed.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_decreasing_linear() {
        let r = solve_decreasing(|x| 1.0 - x, 0.0, 2.0, 0.25, 1e-12).unwrap();
        assert!((r.x - 0.75).abs() < 1e-10);
        assert!(r.f_at_x <= 0.25);
    }

    #[test]
    fn solve_decreasing_step_function() {
        // Steps down at 1.0; smallest x with f <= 0 is 1.0.
        let r = solve_decreasing(|x| if x < 1.0 { 1.0 } else { 0.0 }, 0.0, 2.0, 0.5, 1e-9).unwrap();
        assert!((r.x - 1.0).abs() < 1e-8);
    }

    #[test]
    fn solve_decreasing_no_bracket() {
        assert!(solve_decreasing(|_| 1.0, 0.0, 1.0, 0.5, 1e-9).is_err());
    }

    #[test]
    fn solve_decreasing_already_below() {
        let r = solve_decreasing(|x| -x, 0.0, 1.0, 0.5, 1e-9).unwrap();
        assert_eq!(r.x, 0.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        let values = [1e16, 1.0, -1e16, 1.0];
        for v in values {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn mean_and_se_constant() {
        let (m, se) = mean_and_se(&[2.0; 100]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn splitmix_distinct() {
        let mut s = 42u64;
        let a = splitmix64(&mut s);
        let b = splitmix64(&mut s);
        assert_ne!(a, b);
    }
}
