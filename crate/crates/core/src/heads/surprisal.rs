//! Surprisal of a realized activation under a head's predictive density.

use super::head::HeadOutput;
use super::woodbury::WoodburyCache;
use crate::error::{Result, SnapError};
use crate::nnet::Tensor;

/// Diagonal-Gaussian surprisal of one tap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagSurprisal {
    /// Standardized squared error `Σ (a−μ)²/σ²`.
    pub e: f64,
    /// `e / d`.
    pub ebar: f64,
    /// `½(e + Σ log σ²)`: the per-layer negative log-likelihood without the
    /// `(d/2) log 2π` constant.
    pub nll_core: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowRankSurprisal {
    /// `vᵀ Σ⁻¹ v`.
    pub quad: f64,
    /// `log det Σ`.
    pub logdet: f64,
    /// Nonnegative Woodbury correction subtracted from the diagonal quadratic.
    pub delta: f64,
}

fn check(a: &[f64], out: &HeadOutput) -> Result<()> {
    if a.len() != out.dim() {
        return Err(SnapError::input(format!(
            "activation has {} channels, head predicts {}",
            a.len(),
            out.dim()
        )));
    }
    if a.iter()
        .chain(&out.mu)
        .chain(&out.s)
        .any(|v| !v.is_finite())
    {
        return Err(SnapError::numeric("non-finite activation or head output"));
    }
    Ok(())
}

/// `Σ ((a − μ)/σ)²` for explicit standard deviations.
pub fn standardized_error(a: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    a.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((a, m), s)| {
            let r = (a - m) / s;
            r * r
        })
        .sum()
}

pub fn surprisal_diag(a: &[f64], out: &HeadOutput) -> Result<DiagSurprisal> {
    check(a, out)?;
    let mut e = 0.0;
    let mut sum_s = 0.0;
    for ((ai, mi), si) in a.iter().zip(&out.mu).zip(&out.s) {
        let v = ai - mi;
        e += v * v * (-si).exp();
        sum_s += si;
    }
    Ok(DiagSurprisal {
        e,
        ebar: e / a.len() as f64,
        nll_core: 0.5 * (e + sum_s),
    })
}

/// Full diagonal-Gaussian negative log-likelihood, constant included.
pub fn gaussian_nll(a: &[f64], out: &HeadOutput) -> Result<f64> {
    let d = a.len() as f64;
    Ok(surprisal_diag(a, out)?.nll_core + 0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

pub fn surprisal_student_t(a: &[f64], out: &HeadOutput, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(SnapError::argument(
            "student-t degrees of freedom must be positive",
        ));
    }
    check(a, out)?;
    Ok(a.iter()
        .zip(&out.mu)
        .zip(&out.s)
        .map(|((ai, mi), si)| {
            let r2 = (ai - mi).powi(2) * (-si).exp();
            0.5 * (nu + 1.0) * (r2 / nu).ln_1p() + 0.5 * si
        })
        .sum())
}

/// Huber's loss `ρ_δ(u)`.
pub fn huber_rho(u: f64, delta: f64) -> f64 {
    if u.abs() <= delta {
        0.5 * u * u
    } else {
        delta * u.abs() - 0.5 * delta * delta
    }
}

pub fn surprisal_huber(a: &[f64], out: &HeadOutput, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(SnapError::argument("huber delta must be positive"));
    }
    check(a, out)?;
    Ok(a.iter()
        .zip(&out.mu)
        .zip(&out.s)
        .map(|((ai, mi), si)| huber_rho((ai - mi) * (-0.5 * si).exp(), delta) + 0.5 * si)
        .sum())
}

/// Quadratic form and log-determinant under `Σ = diag(σ²) + B Bᵀ`.
pub fn surprisal_lowrank(a: &[f64], out: &HeadOutput, b: &Tensor) -> Result<LowRankSurprisal> {
    check(a, out)?;
    if b.rows() != a.len() {
        return Err(SnapError::input(
            "low-rank factor rows must match the channel count",
        ));
    }
    let owned;
    let cache = match &out.woodbury {
        Some(c) if c.k == b.cols() => c,
        _ => {
            owned = WoodburyCache::new(b, &out.s)?;
            &owned
        }
    };
    let k = b.cols();
    let bd = b.data();
    let mut diag_quad = 0.0;
    let mut u = vec![0.0; k];
    for (r, ((ai, mi), si)) in a.iter().zip(&out.mu).zip(&out.s).enumerate() {
        let w = (ai - mi) * (-si).exp();
        diag_quad += (ai - mi) * w;
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += bd[r * k + j] * w;
        }
    }
    let delta = cache.inv_quad(&u);
    let sum_s: f64 = out.s.iter().sum();
    Ok(LowRankSurprisal {
        quad: (diag_quad - delta).max(0.0),
        logdet: sum_s + cache.logdet(),
        delta,
    })
}
