//! Offline fitting of the uncertainty mapping and thresholds, and the online
//! budgeted abstention controller.

mod budget;
mod isotonic;
mod logistic;
mod temperature;
mod threshold;

pub use budget::{budget_step, BudgetConfig, BudgetState};
pub use isotonic::{fit_isotonic, fit_isotonic_pav, pav_fit, IsotonicMap, GAMMA_GRID, ISO_CLIP};
pub use logistic::{fit_logistic, logistic_objective, LogisticFit, LOGISTIC_L2};
pub use temperature::{fit_temperature, TEMPERATURE_GRID};
pub use threshold::{coverage_of, next_above, select_threshold_coverage, select_threshold_f1};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SnapError};
use crate::nnet::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingKind {
    /// `U = σ(β₀ + β₁ S + β₂ m)`.
    Logistic { beta: [f64; 3] },
    /// `U = f̂(γ S + (1 − γ) m)`.
    Isotonic(IsotonicMap),
}

/// Fitted mapping plus decision settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingParams {
    pub kind: MappingKind,
    /// Decision threshold `τ` on `U`.
    pub threshold: Option<f64>,
    pub budget: Option<BudgetConfig>,
    /// SHA-256 of the development data the mapping was fitted on.
    pub fitted_on: Option<String>,
}

impl MappingParams {
    pub fn logistic(beta: [f64; 3]) -> Self {
        Self {
            kind: MappingKind::Logistic { beta },
            threshold: None,
            budget: None,
            fitted_on: None,
        }
    }

    pub fn isotonic(map: IsotonicMap) -> Self {
        Self {
            kind: MappingKind::Isotonic(map),
            threshold: None,
            budget: None,
            fitted_on: None,
        }
    }

    pub fn map(&self, s: f64, m: f64) -> Result<f64> {
        if !s.is_finite() || !m.is_finite() {
            return Err(SnapError::numeric("non-finite score passed to the mapping"));
        }
        Ok(match &self.kind {
            MappingKind::Logistic { beta } => sigmoid(beta[0] + beta[1] * s + beta[2] * m),
            MappingKind::Isotonic(iso) => iso.eval(iso.gamma * s + (1.0 - iso.gamma) * m),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let MappingKind::Isotonic(iso) = &self.kind {
            iso.validate()?;
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(SnapError::config("threshold must lie in [0, 1]"));
            }
        }
        if let Some(b) = &self.budget {
            b.validate()?;
        }
        Ok(())
    }
}

/// Stable digest of a development set given as rows of numbers.
pub fn dev_hash<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for row in rows {
        for v in row {
            h.update(v.to_le_bytes());
        }
        h.update([0xff]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_mapping_examples() {
        let map = MappingParams::logistic([0.0, 1.0, 0.0]);
        assert_eq!(map.map(0.0, 0.3).unwrap(), 0.5);
        let free = MappingParams::logistic([0.2, 0.7, 0.0]);
        assert_eq!(free.map(1.0, 0.1).unwrap(), free.map(1.0, 0.9).unwrap());
    }
}
