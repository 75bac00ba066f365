//! Single-pass scoring: per-tap surprisal, the aggregate score, the
//! confidence proxy, the mapped uncertainty and the decision rule, plus the
//! single-pass baselines. Every score is oriented so that larger means more
//! uncertain.

mod baselines;

pub use baselines::{baseline_scores, fit_maha, Baselines, MahaStats, MahaTap};

use serde::{Deserialize, Serialize};

use crate::calibrate::{BudgetState, MappingParams};
use crate::error::{Result, SnapError};
use crate::heads::{surprisal_diag, surprisal_lowrank, Density, TapHead};
use crate::model::SnapModel;
use crate::nnet::{argmax, softmax_t, ActivationTrace, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Scoring layer weights `w_ℓ`, summing to one.
    pub weights: Vec<f64>,
    /// Blend between `1 − C` and `1 − margin` in the proxy.
    pub alpha: f64,
    /// Softmax temperature used by the MSP and entropy baselines.
    pub temperature: f64,
    /// Temperature of the energy score.
    pub energy_temperature: f64,
    /// Diagonal shrinkage of the Mahalanobis variance.
    pub maha_shrinkage: f64,
}

impl ScoreConfig {
    pub fn uniform(taps: usize) -> Self {
        Self {
            weights: vec![1.0 / taps.max(1) as f64; taps],
            alpha: 0.5,
            temperature: 1.0,
            energy_temperature: 1.0,
            maha_shrinkage: 1e-4,
        }
    }

    pub fn validate(&self, taps: usize) -> Result<()> {
        if self.weights.len() != taps || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(SnapError::config(
                "need one non-negative scoring weight per tap",
            ));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SnapError::config("scoring weights must sum to one"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SnapError::config("alpha must lie in [0, 1]"));
        }
        if !(self.temperature > 0.0)
            || !(self.energy_temperature > 0.0)
            || !(self.maha_shrinkage >= 0.0)
        {
            return Err(SnapError::config(
                "temperatures must be positive and shrinkage non-negative",
            ));
        }
        Ok(())
    }
}

/// Dimension-normalized surprisal of one head on a recorded trace. Low-rank
/// heads use the Woodbury quadratic form.
pub fn tap_ebar(head: &TapHead, trace: &ActivationTrace) -> Result<f64> {
    let out = head.forward(trace.tap_vector(head.tap - 1)?)?;
    let a = trace.tap_vector(head.tap)?;
    match (&head.config.density, &head.lowrank) {
        (Density::LowRank { .. }, Some(b)) => {
            Ok(surprisal_lowrank(a, &out, b)?.quad / a.len() as f64)
        }
        _ => Ok(surprisal_diag(a, &out)?.ebar),
    }
}

/// Per-tap `ē_ℓ` and `S = Σ w_ℓ ē_ℓ`.
pub fn snap_score(
    trace: &ActivationTrace,
    heads: &[TapHead],
    w: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if w.len() != heads.len() {
        return Err(SnapError::argument(
            "one scoring weight per head is required",
        ));
    }
    let ebar = heads
        .iter()
        .map(|h| tap_ebar(h, trace))
        .collect::<Result<Vec<_>>>()?;
    let s = ebar.iter().zip(w).map(|(e, w)| e * w).sum();
    Ok((ebar, s))
}

/// Confidence proxy `m = α(1 − C) + (1 − α)(1 − margin)` together with the
/// maximum probability `C` and the top-two margin.
pub fn confidence_proxy(p: &[f64], alpha: f64) -> (f64, f64, f64) {
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    if !second.is_finite() {
        second = 0.0;
    }
    let margin = top - second;
    let m = alpha * (1.0 - top) + (1.0 - alpha) * (1.0 - margin);
    (m.clamp(0.0, 1.0), top, margin)
}

/// `U` from `(S, m)` under a fitted mapping.
pub fn map_uncertainty(s: f64, m: f64, mapping: Option<&MappingParams>) -> Result<f64> {
    mapping
        .ok_or_else(|| SnapError::state("no mapping fitted; run calibration first"))?
        .map(s, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Abstain,
    Predict(usize),
}

/// Abstain iff `U ≥ τ` and, when a budget controller is attached, the
/// controller allows it. The controller sees every frame.
pub fn decide(u: f64, tau: f64, pred: usize, budget: Option<&mut BudgetState>) -> Decision {
    let over = u >= tau;
    let allowed = budget.is_none_or(|b| b.step(u));
    if over && allowed {
        Decision::Abstain
    } else {
        Decision::Predict(pred)
    }
}

/// Everything the scorer reports for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub ebar: Vec<f64>,
    #[serde(rename = "S")]
    pub s: f64,
    pub m: f64,
    #[serde(rename = "U")]
    pub u: Option<f64>,
    pub pred: usize,
    pub confidence: f64,
    pub margin: f64,
    /// Posterior at the scoring temperature.
    pub probs: Vec<f64>,
    pub baselines: Baselines,
}

/// Scores one input with a single forward pass.
pub fn score_input(model: &SnapModel, x: &Tensor) -> Result<ScoreRecord> {
    let (trace, p) = model.backbone.forward_collect(x)?;
    score_trace(model, &trace, &p)
}

/// Scores one input with the integer head path; the flag reports saturated
/// accumulators.
pub fn score_input_int8(model: &SnapModel, x: &Tensor) -> Result<(ScoreRecord, bool)> {
    let bundle = model
        .quant
        .as_ref()
        .ok_or_else(|| SnapError::incompatible("model carries no quantized heads"))?;
    if bundle.heads.len() != model.heads.len()
        || bundle
            .heads
            .iter()
            .zip(&model.heads)
            .any(|(q, h)| q.tap != h.tap)
    {
        return Err(SnapError::incompatible(
            "quantized heads do not match the model taps",
        ));
    }
    let (trace, p) = model.backbone.forward_collect(x)?;
    let (ebar, overflow) = bundle.ebar(&trace)?;
    let s = ebar
        .iter()
        .zip(&model.score.weights)
        .map(|(e, w)| e * w)
        .sum();
    Ok((score_parts(model, &trace, &p, ebar, s)?, overflow))
}

pub fn score_trace(model: &SnapModel, trace: &ActivationTrace, p: &[f64]) -> Result<ScoreRecord> {
    let (ebar, s) = snap_score(trace, &model.heads, &model.score.weights)?;
    score_parts(model, trace, p, ebar, s)
}

/// Builds a record from precomputed surprisals (shared by the float and
/// integer engines).
pub fn score_parts(
    model: &SnapModel,
    trace: &ActivationTrace,
    p: &[f64],
    ebar: Vec<f64>,
    s: f64,
) -> Result<ScoreRecord> {
    let (m, confidence, margin) = confidence_proxy(p, model.score.alpha);
    let u = match &model.mapping {
        Some(map) => Some(map.map(s, m)?),
        None => None,
    };
    let baselines = baseline_scores(trace, &model.score, model.maha.as_ref())?;
    Ok(ScoreRecord {
        ebar,
        s,
        m,
        u,
        pred: argmax(p),
        confidence,
        margin,
        probs: softmax_t(&trace.logits, model.score.temperature),
        baselines,
    })
}

/// Posteriors at a temperature; `T = 1` is the plain softmax.
pub fn tempered(logits: &[f64], t: f64) -> Vec<f64> {
    softmax_t(logits, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_examples() {
        let (m, c, _) = confidence_proxy(&[0.9, 0.1], 1.0);
        assert!((m - 0.1).abs() < 1e-12 && c == 0.9);
        let (m, _, _) = confidence_proxy(&[0.7, 0.2, 0.1], 0.5);
        assert!((m - 0.4).abs() < 1e-12);
        let (m, _, margin) = confidence_proxy(&[0.25; 4], 0.3);
        assert_eq!(margin, 0.0);
        assert!((m - (0.3 * 0.75 + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn decision_boundary() {
        assert_eq!(decide(0.9, 0.5, 1, None), Decision::Abstain);
        assert_eq!(decide(0.1, 0.5, 1, None), Decision::Predict(1));
        assert_eq!(decide(0.5, 0.5, 1, None), Decision::Abstain);
    }

    #[test]
    fn unfitted_mapping_is_a_state_error() {
        assert!(matches!(
            map_uncertainty(1.0, 0.0, None),
            Err(SnapError::State(_))
        ));
    }
}
