//! Two-component PCA with a deterministic sign convention, used to project
//! learned features for the embedding CSV.

use crate::error::SfdaError;
use crate::numerics::Tensor2D;
use crate::Result;

/// A fitted projection: data mean and the top components (rows).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `n_components x d`, orthonormal rows, eigenvalue order descending.
    pub components: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_symmetric(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for i in 0..d {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = cos * aip - sin * aiq;
                    a[i][q] = sin * aip + cos * aiq;
                }
                for j in 0..d {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = cos * apj - sin * aqj;
                    a[q][j] = sin * apj + cos * aqj;
                }
                for i in 0..d {
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = cos * vip - sin * viq;
                    v[i][q] = sin * vip + cos * viq;
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

impl Pca {
    /// Fit on a design matrix. The sign of each component is fixed so its
    /// largest-magnitude loading (first index on ties) is positive.
    pub fn fit(x: &Tensor2D, n_components: usize) -> Result<Pca> {
        let (n, d) = x.shape();
        if d < n_components {
            return Err(SfdaError::InvalidConfig(format!(
                "PCA needs at least {n_components} feature dimensions, got {d}"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += x.get(r, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = vec![vec![0.0; d]; d];
        for r in 0..n {
            for i in 0..d {
                let xi = x.get(r, i) - mean[i];
                for j in i..d {
                    cov[i][j] += xi * (x.get(r, j) - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= n as f64;
                cov[j][i] = cov[i][j];
            }
        }

        let (eigenvalues, vectors) = jacobi_symmetric(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eigenvalues[b]
                .partial_cmp(&eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut components = Vec::with_capacity(n_components);
        for &idx in order.iter().take(n_components) {
            let mut comp: Vec<f64> = (0..d).map(|i| vectors[i][idx]).collect();
            let mut lead = 0usize;
            for (i, c) in comp.iter().enumerate() {
                if c.abs() > comp[lead].abs() {
                    lead = i;
                }
            }
            if comp[lead] < 0.0 {
                comp.iter_mut().for_each(|c| *c = -*c);
            }
            components.push(comp);
        }
        Ok(Pca { mean, components })
    }

    /// Project rows onto the fitted components.
    pub fn transform(&self, x: &Tensor2D) -> Tensor2D {
        let (n, d) = x.shape();
        assert_eq!(d, self.mean.len(), "PCA width mismatch");
        let k = self.components.len();
        let mut out = Tensor2D::zeros(n, k);
        for r in 0..n {
            for (ci, comp) in self.components.iter().enumerate() {
                let mut s = 0.0;
                for j in 0..d {
                    s += (x.get(r, j) - self.mean[j]) * comp[j];
                }
                out.set(r, ci, s);
            }
        }
        out
    }
}
