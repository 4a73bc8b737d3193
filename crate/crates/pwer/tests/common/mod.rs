//! Helpers shared by the integration suites: random valid problems.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::Rng;

use pwer::mvdist::CorrelationMatrix;
use pwer::popmodel::{PopulationStructure, Subset};

/// Random correlation matrix from a random Gram factor, rescaled to unit
/// diagonal; always positive definite.
pub fn random_correlation(rng: &mut StdRng, dim: usize) -> CorrelationMatrix {
    let b = DMatrix::from_fn(dim, dim + 1, |_, _| rng.gen_range(-1.0..1.0));
    let mut g = &b * b.transpose();
    for i in 0..dim {
        g[(i, i)] += 0.05;
    }
    let scale: Vec<f64> = (0..dim).map(|i| f64::sqrt(g[(i, i)])).collect();
    let rows: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| g[(i, j)] / (scale[i] * scale[j])).collect())
        .collect();
    CorrelationMatrix::from_rows(&rows).unwrap()
}

/// Random structure on exactly `m` hypotheses: distinct non-empty subsets
/// covering every index, prevalences from renormalized uniforms.
pub fn random_structure(rng: &mut StdRng, m: usize) -> PopulationStructure {
    loop {
        let mut masks: Vec<u32> = (1..(1u32 << m)).collect();
        for i in (1..masks.len()).rev() {
            masks.swap(i, rng.gen_range(0..=i));
        }
        let k = rng.gen_range(m..=masks.len());
        masks.truncate(k);
        let mut raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|p| *p /= total);
        let strata: Vec<(Subset, f64)> = masks
            .iter()
            .zip(&raw)
            .map(|(&mask, &pi)| (Subset::from_mask(mask), pi))
            .collect();
        if let Ok(s) = PopulationStructure::new(strata) {
            if s.n_hypotheses() == m {
                return s;
            }
        }
    }
}
