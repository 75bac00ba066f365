use crate::error::{Result, SnapError};
use crate::model::SnapModel;
use crate::nnet::Tensor;

/// Inverse-variance layer weights fitted on a development set.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Training weights, summing to the number of taps.
    pub omega: Vec<f64>,
    /// Scoring weights, summing to one.
    pub w: Vec<f64>,
    /// Sample variance of `ē_ℓ` per tap.
    pub variances: Vec<f64>,
    /// Set when some tap had zero variance and uniform weights were used.
    pub uniform_fallback: bool,
}

/// Weights from a matrix of surprisals, one row per example and one column
/// per tap.
pub fn layer_weights_from_ebar(ebar: &[Vec<f64>]) -> Result<LayerWeights> {
    let n = ebar.len();
    if n < 2 {
        return Err(SnapError::argument("at least two dev examples are needed"));
    }
    let taps = ebar[0].len();
    if taps == 0 || ebar.iter().any(|r| r.len() != taps) {
        return Err(SnapError::argument("ragged surprisal matrix"));
    }
    let variances: Vec<f64> = (0..taps)
        .map(|j| {
            let mean = ebar.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            ebar.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        })
        .collect();
    if variances.iter().any(|v| !v.is_finite()) {
        return Err(SnapError::numeric("non-finite surprisal variance"));
    }
    let fallback = variances.iter().any(|&v| v <= 0.0);
    let inv: Vec<f64> = if fallback {
        log::warn!("zero surprisal variance at a tap; using uniform layer weights");
        vec![1.0; taps]
    } else {
        variances.iter().map(|v| 1.0 / v).collect()
    };
    let total: f64 = inv.iter().sum();
    Ok(LayerWeights {
        omega: inv.iter().map(|v| v * taps as f64 / total).collect(),
        w: inv.iter().map(|v| v / total).collect(),
        variances,
        uniform_fallback: fallback,
    })
}

/// Runs `dev` through the model and fits inverse-variance layer weights.
pub fn fit_layer_weights(model: &SnapModel, dev: &[Tensor]) -> Result<LayerWeights> {
    let ebar = dev
        .iter()
        .map(|x| {
            let (trace, _) = model.backbone.forward_collect(x)?;
            model.tap_surprisal(&trace)
        })
        .collect::<Result<Vec<_>>>()?;
    layer_weights_from_ebar(&ebar)
}
