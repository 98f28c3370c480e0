//! Draws synthetic datasets from a [`GaussianPopulation`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Cholesky;

use crate::datamodel::{Dataset, GaussianPopulation};
use crate::error::{Error, Result};
use crate::matrix::{Mask, Matrix};
use crate::rng::{seeded_rng, standard_normal, uniform};

/// Lower Cholesky factor of a covariance matrix, row-major.
pub fn cholesky_lower(sigma: &Matrix) -> Result<Matrix> {
    let chol = Cholesky::new(sigma.to_nalgebra())
        .ok_or_else(|| Error::Singular("covariance has no Cholesky factor".into()))?;
    Ok(Matrix::from_nalgebra(&chol.l()))
}

/// `n` rows of `(G, Z, ξ, X = Z ⊙ ξ, Y = α + βᵀZ)`.
///
/// The outcome is noiseless; add noise with the ingest helpers if needed.
pub fn sample_population(pop: &GaussianPopulation, n: usize, seed: u64) -> Result<Dataset> {
    pop.validate()?;
    let d = pop.d();
    let l = cholesky_lower(&pop.sigma)?;
    let mut rng = seeded_rng(seed);
    let mut z = Matrix::zeros(n, d);
    let mut x = Matrix::zeros(n, d);
    let mut mask = Mask::ones(n, d);
    let mut g = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut e = vec![0.0; d];
    for i in 0..n {
        let group = u8::from(uniform(&mut rng) < pop.r);
        g.push(group);
        for v in e.iter_mut() {
            *v = standard_normal(&mut rng);
        }
        let rates = pop.rates(group);
        let mut yi = pop.alpha;
        for j in 0..d {
            let zij = pop.mu[j] + (0..=j).map(|k| l.get(j, k) * e[k]).sum::<f64>();
            z.set(i, j, zij);
            yi += pop.beta[j] * zij;
            let keep = rates[j] >= 1.0 || uniform(&mut rng) < rates[j];
            if keep {
                x.set(i, j, zij);
            } else {
                mask.set(i, j, 0);
            }
        }
        y.push(yi);
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("source".to_string(), "gaussian_population".to_string());
    provenance.insert("seed".to_string(), format!("{seed}"));
    Ok(Dataset {
        feature_names: (1..=d).map(|j| format!("z{j}")).collect(),
        continuous_flags: vec![true; d],
        z: Some(z),
        x,
        g,
        y: Some(y),
        xi_mask: Some(mask),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::validate_dataset;

    fn pop() -> GaussianPopulation {
        let sigma = Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap();
        GaussianPopulation::new(
            vec![1.0, -1.0],
            sigma,
            0.5,
            vec![1.0, 1.0],
            0.3,
            vec![1.0, 1.0],
            vec![0.5, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn samples_match_population_moments() {
        let d = sample_population(&pop(), 200_000, 3).unwrap();
        assert!(validate_dataset(&d).is_empty());
        let z = d.z.as_ref().unwrap();
        let mu = z.column_means();
        let cov = z.column_covariance();
        assert!((mu[0] - 1.0).abs() < 0.01 && (mu[1] + 1.0).abs() < 0.01);
        assert!((cov.get(0, 1) - 0.5).abs() < 0.01);
        let share = d.g.iter().filter(|&&g| g == 1).count() as f64 / d.n() as f64;
        assert!((share - 0.3).abs() < 0.005);
        let mask = d.xi_mask.as_ref().unwrap();
        let g1 = d.group_rows(1);
        let g0 = d.group_rows(0);
        assert!((mask.masked_fraction(0, &g1) - 0.5).abs() < 0.01);
        assert_eq!(mask.masked_fraction(0, &g0), 0.0);
        assert_eq!(mask.masked_fraction(1, &g1), 0.0);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_population(&pop(), 100, 9).unwrap();
        let b = sample_population(&pop(), 100, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_population(&pop(), 100, 10).unwrap();
        assert_ne!(a.x, c.x);
    }
}
