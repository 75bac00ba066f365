use crate::error::{Result, SnapError};
use crate::heads::{density_grad, Density, TapHead};
use crate::nnet::ActivationTrace;

/// Density the trainer optimizes for a head. Low-rank heads are fitted with
/// their diagonal part; the factor `B` is left as exported.
pub fn training_density(head: &TapHead) -> Density {
    match head.config.density {
        Density::LowRank { .. } => Density::DiagGauss,
        d => d,
    }
}

/// Mean over the batch of `Σ_ℓ ω_ℓ (1/d_ℓ) loss_ℓ`, where `loss_ℓ` is the
/// per-layer loss of the head's density (`nll_core` for the diagonal
/// Gaussian).
pub fn ss_loss(traces: &[ActivationTrace], heads: &[TapHead], omega: &[f64]) -> Result<f64> {
    if traces.is_empty() {
        return Err(SnapError::argument("empty batch"));
    }
    if omega.len() != heads.len() {
        return Err(SnapError::argument("one layer weight per head is required"));
    }
    let mut total = 0.0;
    for trace in traces {
        for (head, w) in heads.iter().zip(omega) {
            let a = trace.tap_vector(head.tap)?;
            let out = head.forward(trace.tap_vector(head.tap - 1)?)?;
            let loss = density_grad(a, &out, &training_density(head))?.loss;
            total += w * loss / a.len() as f64;
        }
    }
    Ok(total / traces.len() as f64)
}

/// `α_var · mean_batch Σ|s| + α_wd · Σ θ²` over head weight matrices.
pub fn regularizer(
    traces: &[ActivationTrace],
    heads: &[TapHead],
    alpha_var: f64,
    alpha_wd: f64,
) -> Result<f64> {
    let mut abs_s = 0.0;
    for trace in traces {
        for head in heads {
            let out = head.forward(trace.tap_vector(head.tap - 1)?)?;
            abs_s += out.s.iter().map(|s| s.abs()).sum::<f64>();
        }
    }
    let var = if traces.is_empty() {
        0.0
    } else {
        abs_s / traces.len() as f64
    };
    let wd: f64 = heads.iter().map(TapHead::weight_sq_norm).sum();
    Ok(alpha_var * var + alpha_wd * wd)
}
