//! Randomized quasi-Monte Carlo evaluation of multivariate normal and t
//! upper-orthant-complement probabilities `P(X <= b)`.
//!
//! Separation-of-variables integrand (Genz): the Cholesky factor turns the
//! rectangle probability into a smooth integral over the unit cube, sampled
//! with randomly shifted Kronecker lattices. The multivariate t arises by
//! mixing over a chi-square scale, adding one integration dimension. The
//! reported error is 3.5 standard errors across the shifted batches.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use super::special::{gamma_p_inv, norm_cdf, norm_quantile};
use super::Df;

const N_BATCHES: usize = 10;
const ERROR_FACTOR: f64 = 3.5;

// frac(sqrt(p)) for the first 32 primes; generators of the Kronecker
// sequence u_k = frac(k * alpha + shift).
fn kronecker_alphas(n: usize) -> Vec<f64> {
    const PRIMES: [u32; 32] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83,
        89, 97, 101, 103, 107, 109, 113, 127, 131,
    ];
    (0..n)
        .map(|j| (f64::from(PRIMES[j % PRIMES.len()])).sqrt().fract())
        .collect()
}

/// Returns `(estimate, abs_error)` for `P(X <= upper)` under the
/// distribution with Cholesky factor `chol`, growing the lattice until
/// `abs_error <= tol` or the total budget `max_points` is exhausted.
pub(crate) fn qmc_prob(
    upper: &[f64],
    chol: &DMatrix<f64>,
    df: Df,
    tol: f64,
    seed: u64,
    max_points: usize,
) -> (f64, f64) {
    let dim = upper.len();
    let n_qmc = (dim - 1) + usize::from(matches!(df, Df::Finite(_)));
    debug_assert!(n_qmc >= 1);
    let alphas = kronecker_alphas(n_qmc);

    let mut points_per_batch = 4096usize;
    let mut round = 0u64;
    loop {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(round);
        let shifts: Vec<Vec<f64>> = (0..N_BATCHES)
            .map(|_| (0..n_qmc).map(|_| rng.gen::<f64>()).collect())
            .collect();

        let means: Vec<f64> = shifts
            .par_iter()
            .map(|shift| batch_mean(upper, chol, df, &alphas, shift, points_per_batch))
            .collect();

        let mean = means.iter().sum::<f64>() / N_BATCHES as f64;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
            / (N_BATCHES as f64 - 1.0);
        // Floor at summation-rounding scale: a degenerate integrand (e.g.
        // independent coordinates) has zero batch spread but still
        // accumulates O(n * eps) error in the mean.
        let err = (ERROR_FACTOR * (var / N_BATCHES as f64).sqrt()).max(1e-12);

        let total = points_per_batch * N_BATCHES;
        if err <= tol || total >= max_points {
            return (mean.clamp(0.0, 1.0), err);
        }
        points_per_batch *= 4;
        round += 1;
    }
}

fn batch_mean(
    upper: &[f64],
    chol: &DMatrix<f64>,
    df: Df,
    alphas: &[f64],
    shift: &[f64],
    n_points: usize,
) -> f64 {
    let n_qmc = alphas.len();
    let mut u = vec![0.0; n_qmc];
    let mut y = vec![0.0; upper.len()];
    let mut acc = 0.0;
    for k in 0..n_points {
        for j in 0..n_qmc {
            u[j] = ((k + 1) as f64 * alphas[j] + shift[j]).fract();
        }
        acc += integrand(&u, upper, chol, df, &mut y);
    }
    acc / n_points as f64
}

// Sequentially conditioned integrand; `y` is scratch for the conditional
// normal scores.
fn integrand(u: &[f64], upper: &[f64], chol: &DMatrix<f64>, df: Df, y: &mut [f64]) -> f64 {
    let dim = upper.len();
    let (scale, offset) = match df {
        Df::Finite(v) => {
            let p = u[0].clamp(1e-15, 1.0 - 1e-15);
            let chi2 = 2.0 * gamma_p_inv(0.5 * v, p);
            ((chi2 / v).sqrt(), 1)
        }
        Df::Infinite => (1.0, 0),
    };

    let mut e = norm_cdf(scale * upper[0] / chol[(0, 0)]);
    let mut f = e;
    for i in 1..dim {
        if e <= 0.0 || f <= 0.0 {
            return 0.0;
        }
        let v = (u[offset + i - 1] * e).clamp(1e-300, 1.0 - 1e-16);
        y[i - 1] = norm_quantile(v);
        let mut t = 0.0;
        for j in 0..i {
            t += chol[(i, j)] * y[j];
        }
        e = norm_cdf((scale * upper[i] - t) / chol[(i, i)]);
        f *= e;
    }
    f
}
