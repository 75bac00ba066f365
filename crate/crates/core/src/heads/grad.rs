//! Closed-form gradients of the per-layer surprisal losses.

use super::head::{Density, HeadOutput, TapHead};
use super::surprisal::huber_rho;
use crate::error::{Result, SnapError};
use crate::nnet::{sigmoid, softplus, Tensor};

/// Per-layer loss value and its gradient w.r.t. the predicted mean and the
/// (clamped) log-variance, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrad {
    pub loss: f64,
    pub d_mu: Vec<f64>,
    pub d_s: Vec<f64>,
}

/// Gradients of a head's loss w.r.t. every trainable tensor and both
/// activations it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub loss: f64,
    pub d_mu: Vec<f64>,
    pub d_s: Vec<f64>,
    /// Gradient w.r.t. the log-variance pre-activation (zero where clamped).
    pub d_xi: Vec<f64>,
    /// `[P, W_μ, b_μ, W_ξ, b_ξ]`.
    pub params: Vec<Tensor>,
    /// Gradient w.r.t. the realized activation `a_ℓ`.
    pub d_a: Vec<f64>,
    /// Gradient w.r.t. the projector input `a_{ℓ-1}`.
    pub d_a_prev: Vec<f64>,
}

/// Loss of one tap (sum over channels) and its `(μ, s)` gradients.
pub fn density_grad(a: &[f64], out: &HeadOutput, density: &Density) -> Result<DensityGrad> {
    let d = a.len();
    if d != out.dim() {
        return Err(SnapError::input(
            "activation and head output differ in length",
        ));
    }
    let mut loss = 0.0;
    let mut d_mu = Vec::with_capacity(d);
    let mut d_s = Vec::with_capacity(d);
    for ((ai, mi), si) in a.iter().zip(&out.mu).zip(&out.s) {
        let v = ai - mi;
        let inv_var = (-si).exp();
        let r2 = v * v * inv_var;
        let (l, gm, gs) = match *density {
            Density::DiagGauss => (0.5 * (r2 + si), -v * inv_var, 0.5 * (1.0 - r2)),
            Density::StudentT { nu } => {
                let l = 0.5 * (nu + 1.0) * (r2 / nu).ln_1p() + 0.5 * si;
                let gm = -(nu + 1.0) * v / (nu * si.exp() + v * v);
                let gs = 0.5 * (1.0 - (nu + 1.0) * r2 / (nu + r2));
                (l, gm, gs)
            }
            Density::Huber { delta } => {
                let inv_sd = (-0.5 * si).exp();
                let r = v * inv_sd;
                let psi = r.clamp(-delta, delta);
                (
                    huber_rho(r, delta) + 0.5 * si,
                    -psi * inv_sd,
                    0.5 - 0.5 * psi * r,
                )
            }
            Density::LowRank { .. } => {
                return Err(SnapError::argument(
                    "closed-form gradients cover the diagonal, student-t and huber densities",
                ))
            }
        };
        loss += l;
        d_mu.push(gm);
        d_s.push(gs);
    }
    Ok(DensityGrad { loss, d_mu, d_s })
}

/// `∂s/∂ξ = sigmoid(ξ) / σ²` where the gradient is open, zero elsewhere.
pub fn xi_chain(head: &TapHead, out: &HeadOutput, d_s: &[f64]) -> Vec<f64> {
    let floor = head.config.eps * head.config.eps;
    out.xi
        .iter()
        .zip(d_s)
        .zip(&out.s_open)
        .map(|((xi, gs), open)| {
            if *open {
                gs * sigmoid(*xi) / (softplus(*xi) + floor)
            } else {
                0.0
            }
        })
        .collect()
}

/// Backpropagates `(∂L/∂μ, ∂L/∂ξ)` through the linear heads and projector.
/// Returns `[P, W_μ, b_μ, W_ξ, b_ξ]` gradients and `∂L/∂a_{ℓ-1}`.
pub fn head_backward(
    head: &TapHead,
    a_prev: &[f64],
    out: &HeadOutput,
    d_mu: &[f64],
    d_xi: &[f64],
) -> (Vec<Tensor>, Vec<f64>) {
    let mut gp = Tensor::zeros(head.p.shape().to_vec());
    let mut gwm = Tensor::zeros(head.w_mu.shape().to_vec());
    let mut gwx = Tensor::zeros(head.w_xi.shape().to_vec());
    gwm.add_outer(d_mu, &out.z, 1.0);
    gwx.add_outer(d_xi, &out.z, 1.0);
    let gbm = Tensor::from_vec(d_mu.to_vec());
    let gbx = Tensor::from_vec(d_xi.to_vec());
    let mut d_z = head.w_mu.matvec_t(d_mu);
    for (dz, g) in d_z.iter_mut().zip(head.w_xi.matvec_t(d_xi)) {
        *dz += g;
    }
    gp.add_outer(&d_z, a_prev, 1.0);
    let d_prev = head.p.matvec_t(&d_z);
    (vec![gp, gwm, gbm, gwx, gbx], d_prev)
}

/// Closed-form gradients of the head's per-layer loss (no dimension
/// normalization, no layer weight) for the configured density.
pub fn head_gradients(head: &TapHead, a_prev: &[f64], a: &[f64]) -> Result<HeadGrads> {
    let out = head.forward(a_prev)?;
    let dg = density_grad(a, &out, &head.config.density)?;
    let d_xi = xi_chain(head, &out, &dg.d_s);
    let (params, d_a_prev) = head_backward(head, a_prev, &out, &dg.d_mu, &d_xi);
    let d_a = dg.d_mu.iter().map(|g| -g).collect();
    Ok(HeadGrads {
        loss: dg.loss,
        d_mu: dg.d_mu,
        d_s: dg.d_s,
        d_xi,
        params,
        d_a,
        d_a_prev,
    })
}
