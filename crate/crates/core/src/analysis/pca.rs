//! Principal component analysis by eigendecomposition of the covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when comparing cumulative explained variance to the
/// target, so a target of 1.0 is reachable despite rounding.
const TARGET_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// All `D` principal axes (unit rows), by decreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Explained-variance ratio of each axis.
    pub ratios: Vec<f64>,
}

fn to_matrix(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) || d == 0 {
        return Err(Error::dim("PCA input rows must share a positive width"));
    }
    Ok(DMatrix::from_fn(x.len(), d, |i, j| x[i][j]))
}

impl Pca {
    pub fn fit(x: &[Vec<f64>]) -> Result<Pca> {
        if x.len() < 2 {
            return Err(Error::contract(format!("PCA needs at least 2 rows, got {}", x.len())));
        }
        let m = to_matrix(x)?;
        let (n, d) = m.shape();
        let mean: Vec<f64> = (0..d).map(|j| m.column(j).sum() / n as f64).collect();
        let mut c = m;
        for j in 0..d {
            c.column_mut(j).add_scalar_mut(-mean[j]);
        }
        let cov = (c.transpose() * &c) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        let total: f64 = eigenvalues.iter().sum();
        if total <= 0.0 {
            return Err(Error::contract("PCA input has zero total variance"));
        }
        let components = order
            .iter()
            .map(|&k| {
                let v = eig.eigenvectors.column(k);
                // deterministic orientation: largest-magnitude entry positive
                let big = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
                let s = if big < 0.0 { -1.0 } else { 1.0 };
                v.iter().map(|e| e * s).collect()
            })
            .collect();
        Ok(Pca {
            mean,
            components,
            ratios: eigenvalues.iter().map(|e| e / total).collect(),
            eigenvalues,
        })
    }

    /// Smallest number of leading axes whose cumulative ratio reaches `target`.
    pub fn components_for(&self, target: f64) -> Result<usize> {
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::contract(format!("variance target {target} outside (0, 1]")));
        }
        let mut cum = 0.0;
        for (k, r) in self.ratios.iter().enumerate() {
            cum += r;
            if cum >= target * (1.0 - TARGET_SLACK) {
                return Ok(k + 1);
            }
        }
        Ok(self.ratios.len())
    }

    /// Centered projections onto the first `p` axes.
    pub fn transform(&self, x: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                self.components[..p]
                    .iter()
                    .map(|axis| row.iter().zip(&self.mean).zip(axis).map(|((v, m), a)| (v - m) * a).sum())
                    .collect()
            })
            .collect()
    }

    pub fn inverse_transform(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        y.iter()
            .map(|coords| {
                let mut row = self.mean.clone();
                for (c, axis) in coords.iter().zip(&self.components) {
                    for (r, a) in row.iter_mut().zip(axis) {
                        *r += c * a;
                    }
                }
                row
            })
            .collect()
    }
}

/// Projects `x` onto the fewest axes retaining `variance_target` of the
/// variance. Returns the projections and the retained axes' ratios.
pub fn pca_fit_transform(x: &[Vec<f64>], variance_target: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let pca = Pca::fit(x)?;
    let p = pca.components_for(variance_target)?;
    Ok((pca.transform(x, p), pca.ratios[..p].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn single_axis() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0, -1.0]).collect();
        let (y, ex) = pca_fit_transform(&x, 0.95).unwrap();
        assert_eq!(ex.len(), 1);
        assert!((ex[0] - 1.0).abs() < 1e-12);
        assert_eq!(y[0].len(), 1);
    }

    #[test]
    fn isotropic_cloud_needs_both_axes() {
        let x = gaussian(2000, 2, 1);
        let (y, ex) = pca_fit_transform(&x, 0.95).unwrap();
        assert_eq!(y[0].len(), 2);
        assert!(ex.iter().all(|r| (r - 0.5).abs() < 0.05));
    }

    #[test]
    fn full_reconstruction() {
        let x = gaussian(12, 5, 2);
        let pca = Pca::fit(&x).unwrap();
        let back = pca.inverse_transform(&pca.transform(&x, 5));
        for (a, b) in x.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        let x = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(Pca::fit(&x), Err(Error::Contract(_))));
        assert!(Pca::fit(&[vec![1.0]]).is_err());
    }

    #[test]
    fn output_columns_are_uncorrelated() {
        let mut x = gaussian(50, 4, 3);
        for r in &mut x {
            r[1] += 2.0 * r[0];
            r[3] -= r[2];
        }
        let (y, _) = pca_fit_transform(&x, 1.0).unwrap();
        let p = y[0].len();
        let n = y.len() as f64;
        let cov = |a: usize, b: usize| y.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n - 1.0);
        let trace: f64 = (0..p).map(|k| cov(k, k)).sum();
        for a in 0..p {
            for b in 0..p {
                if a != b {
                    assert!(cov(a, b).abs() < 1e-8 * trace);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn component_count_is_minimal(seed in 0u64..500, target in 0.5f64..0.999) {
            let x = gaussian(15, 6, seed);
            let pca = Pca::fit(&x).unwrap();
            let p = pca.components_for(target).unwrap();
            let cum = |k: usize| pca.ratios[..k].iter().sum::<f64>();
            prop_assert!(cum(p) >= target * (1.0 - 1e-12));
            prop_assert!(p == 1 || cum(p - 1) < target);
            prop_assert!(pca.ratios.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
