//! Principal components of the sample covariance via cyclic Jacobi rotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retained-energy threshold for choosing the projection dimension.
pub const ENERGY: f64 = 0.95;
const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit directions ordered by decreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Smallest dimension whose eigenvalues carry at least [`ENERGY`] of the total.
    pub dim: usize,
}

/// Eigen-decomposition of a symmetric `n × n` row-major matrix.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as rows, unsorted.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::shape("symmetric_eigen", &[&[a.len()], &[n, n]]));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|k| v[k * n + j]).collect()).collect();
    Ok((values, vectors))
}

pub fn pca_fit(rows: &[Vec<f64>]) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {}", rows.len())));
    }
    let n = rows[0].len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("PCA rows must be non-empty and equally long".into()));
    }
    let count = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / count);
    }
    let mut cov = vec![0.0; n * n];
    for r in rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..n {
            for j in i..n {
                cov[i * n + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            cov[i * n + j] /= count - 1.0;
            cov[j * n + i] = cov[i * n + j];
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let components: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("PCA input has zero variance".into()));
    }
    let mut acc = 0.0;
    let mut dim = n;
    for (k, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc / total >= ENERGY {
            dim = k + 1;
            break;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        dim,
    })
}

impl PcaModel {
    pub fn retained_energy(&self, d: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..d].iter().sum::<f64>() / total
    }

    /// Coordinates of `x` on the first `d` components.
    pub fn project(&self, x: &[f64], d: usize) -> Vec<f64> {
        self.components[..d]
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, a) in self.components.iter().zip(coords) {
            out.iter_mut().zip(c).for_each(|(o, ci)| *o += a * ci);
        }
        out
    }
}
