//! Low-rank-plus-diagonal covariance `Σ = D + B Bᵀ` handled through the
//! matrix determinant lemma and the Woodbury identity, so only a `k × k`
//! system is ever factored.

use crate::error::{Result, SnapError};
use crate::nnet::Tensor;

/// `M = Bᵀ D⁻¹ B` and the lower Cholesky factor of `I + M` (both `k × k`,
/// row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct WoodburyCache {
    pub k: usize,
    pub m: Vec<f64>,
    pub chol: Vec<f64>,
}

impl WoodburyCache {
    /// `b` is `d × k`; `log_var` holds `log D_ii`.
    pub fn new(b: &Tensor, log_var: &[f64]) -> Result<Self> {
        let (d, k) = (b.rows(), b.cols());
        if d != log_var.len() {
            return Err(SnapError::input(format!(
                "low-rank factor has {d} rows but the head has {} channels",
                log_var.len()
            )));
        }
        let inv_var: Vec<f64> = log_var.iter().map(|s| (-s).exp()).collect();
        let bd = b.data();
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = (0..d)
                    .map(|r| bd[r * k + i] * inv_var[r] * bd[r * k + j])
                    .sum();
                m[i * k + j] = v;
                m[j * k + i] = v;
            }
        }
        let mut a = m.clone();
        for i in 0..k {
            a[i * k + i] += 1.0;
        }
        let chol = cholesky(&a, k)?;
        Ok(Self { k, m, chol })
    }

    /// `log det(I + M)`.
    pub fn logdet(&self) -> f64 {
        (0..self.k)
            .map(|i| 2.0 * self.chol[i * self.k + i].ln())
            .sum()
    }

    /// `‖L⁻¹ u‖²`, i.e. `uᵀ (I + M)⁻¹ u`.
    pub fn inv_quad(&self, u: &[f64]) -> f64 {
        forward_substitute(&self.chol, self.k, u)
            .iter()
            .map(|x| x * x)
            .sum()
    }
}

/// Lower Cholesky factor of a symmetric positive-definite `n × n` matrix.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(SnapError::numeric(
                        "I + BᵀD⁻¹B is not positive definite; head parameters are corrupted",
                    ));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = u` for lower-triangular `L`.
pub fn forward_substitute(l: &[f64], n: usize, u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = u[i];
        for p in 0..i {
            sum -= l[i * n + p] * y[p];
        }
        y[i] = sum / l[i * n + i];
    }
    y
}
