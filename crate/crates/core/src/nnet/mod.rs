//! Dense tensor kernels and tiny backbones with tapped activations.

mod backbone;
pub mod math;
mod tensor;

pub use backbone::{
    global_avg_pool, Activation, ActivationTrace, Backbone, BackboneKind, BackboneSpec,
    LayerActivation, TapPoint,
};
pub use math::{argmax, sigmoid, softmax, softmax_t, softplus, stable_logsumexp};
pub use tensor::Tensor;

use crate::error::{Result, SnapError};

/// Mean cross-entropy of a batch and the gradient of every backbone
/// parameter (canonical order).
pub fn clf_loss_grad(net: &Backbone, batch: &[(Tensor, usize)]) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(SnapError::argument("empty batch"));
    }
    let classes = net.spec().class_count;
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (x, y) in batch {
        if *y >= classes {
            return Err(SnapError::argument(format!(
                "label {y} outside [0, {classes})"
            )));
        }
        let (trace, _) = net.forward_collect(x)?;
        let (l, dlogits) = cross_entropy(&trace.logits, *y);
        loss += l;
        net.backward(x, &trace, &dlogits, &[], &mut grads, inv);
    }
    Ok((loss * inv, grads))
}

/// Cross-entropy of one example and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let lse = math::lse_unchecked(logits);
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}
