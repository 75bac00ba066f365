use serde::{Deserialize, Serialize};

use super::ScoreConfig;
use crate::error::{Result, SnapError};
use crate::model::SnapModel;
use crate::nnet::{softmax_t, stable_logsumexp, ActivationTrace, Tensor};

/// Single-pass baseline scores, larger = more uncertain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub msp: f64,
    pub entropy: f64,
    pub energy: f64,
    pub maha: Option<f64>,
}

/// Class means and shared diagonal variance of one tap's activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahaTap {
    pub tap: usize,
    /// `means[c]` is the class-`c` mean vector.
    pub means: Vec<Vec<f64>>,
    /// Pooled within-class variance plus shrinkage.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahaStats {
    pub taps: Vec<MahaTap>,
    pub weights: Vec<f64>,
    pub shrinkage: f64,
}

impl MahaStats {
    /// `min_c Σ_ℓ w_ℓ (1/d_ℓ) Σ_i (a_i − μ_{ℓ,c,i})² / v_{ℓ,i}`.
    pub fn score(&self, trace: &ActivationTrace) -> Result<f64> {
        let classes = self.taps.first().map_or(0, |t| t.means.len());
        let mut best = f64::INFINITY;
        for c in 0..classes {
            let mut total = 0.0;
            for (t, w) in self.taps.iter().zip(&self.weights) {
                let a = trace.tap_vector(t.tap)?;
                if a.len() != t.var.len() {
                    return Err(SnapError::incompatible(
                        "Mahalanobis statistics do not match the backbone",
                    ));
                }
                let q: f64 = a
                    .iter()
                    .zip(&t.means[c])
                    .zip(&t.var)
                    .map(|((x, m), v)| (x - m).powi(2) / v)
                    .sum();
                total += w * q / a.len() as f64;
            }
            best = best.min(total);
        }
        Ok(best)
    }
}

/// Fits class means and a shared diagonal variance on labelled training
/// data. Classes absent from the data are skipped.
pub fn fit_maha(model: &SnapModel, train: &[(Tensor, usize)], shrinkage: f64) -> Result<MahaStats> {
    let classes = model.spec().class_count;
    if train.len() < 2 {
        return Err(SnapError::argument(
            "Mahalanobis fit needs at least two examples",
        ));
    }
    let traces = train
        .iter()
        .map(|(x, _)| model.backbone.forward_collect(x).map(|t| t.0))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; classes];
    for (_, y) in train {
        if *y >= classes {
            return Err(SnapError::argument(format!(
                "label {y} outside [0, {classes})"
            )));
        }
        counts[*y] += 1;
    }
    let mut taps = Vec::new();
    for &tap in model.taps() {
        let d = traces[0].tap_vector(tap)?.len();
        let mut sums = vec![vec![0.0; d]; classes];
        for (tr, (_, y)) in traces.iter().zip(train) {
            for (s, a) in sums[*y].iter_mut().zip(tr.tap_vector(tap)?) {
                *s += a;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
            .collect();
        let mut var = vec![0.0; d];
        for (tr, (_, y)) in traces.iter().zip(train) {
            for ((v, a), m) in var.iter_mut().zip(tr.tap_vector(tap)?).zip(&means[*y]) {
                *v += (a - m).powi(2);
            }
        }
        let present = counts.iter().filter(|&&n| n > 0).count();
        let dof = (train.len() - present).max(1) as f64;
        var.iter_mut().for_each(|v| *v = *v / dof + shrinkage);
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(SnapError::numeric(format!(
                "zero activation variance at tap {tap}; use a positive shrinkage"
            )));
        }
        let means = means
            .into_iter()
            .zip(&counts)
            .map(|(m, &n)| if n > 0 { m } else { vec![f64::INFINITY; d] })
            .collect();
        taps.push(MahaTap { tap, means, var });
    }
    Ok(MahaStats {
        taps,
        weights: model.score.weights.clone(),
        shrinkage,
    })
}

/// MSP, entropy and energy from the logits; Mahalanobis when fitted.
pub fn baseline_scores(
    trace: &ActivationTrace,
    cfg: &ScoreConfig,
    maha: Option<&MahaStats>,
) -> Result<Baselines> {
    let p = softmax_t(&trace.logits, cfg.temperature);
    let max_p = p.iter().cloned().fold(0.0, f64::max);
    let entropy = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>();
    let scaled: Vec<f64> = trace
        .logits
        .iter()
        .map(|z| z / cfg.energy_temperature)
        .collect();
    let energy = -stable_logsumexp(&scaled)?;
    let maha = match maha {
        Some(m) => Some(m.score(trace)?),
        None => None,
    };
    Ok(Baselines {
        msp: 1.0 - max_p,
        entropy: entropy.max(0.0),
        energy,
        maha,
    })
}
