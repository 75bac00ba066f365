use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};

/// Settings of the budgeted abstention controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Target long-run abstention rate `b`.
    pub budget: f64,
    /// EWMA rate `η`.
    pub eta: f64,
    /// Threshold step size `κ`.
    pub kappa: f64,
}

impl BudgetConfig {
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            eta: 0.01,
            kappa: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget < 1.0) {
            return Err(SnapError::config("budget must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) || !(self.kappa > 0.0) {
            return Err(SnapError::config("need η in (0, 1] and κ > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub cfg: BudgetConfig,
    /// EWMA of the abstention indicator.
    pub a_bar: f64,
    /// Current threshold `τ_t`.
    pub tau: f64,
}

impl BudgetState {
    /// Starts at `Ā = b`, the controller's fixed point.
    pub fn new(cfg: BudgetConfig, tau: f64) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(SnapError::config("initial threshold must lie in [0, 1]"));
        }
        Ok(Self {
            cfg,
            a_bar: cfg.budget,
            tau,
        })
    }

    /// `A_t = 1(U_t ≥ τ_t)`, `Ā ← ηA + (1 − η)Ā`,
    /// `τ ← clip(τ + κ(Ā − b), 0, 1)`. Returns `A_t`.
    pub fn step(&mut self, u: f64) -> bool {
        let a = u >= self.tau;
        let c = &self.cfg;
        self.a_bar = c.eta * f64::from(u8::from(a)) + (1.0 - c.eta) * self.a_bar;
        self.tau = (self.tau + c.kappa * (self.a_bar - c.budget)).clamp(0.0, 1.0);
        a
    }
}

/// Functional form of [`BudgetState::step`].
pub fn budget_step(state: BudgetState, u: f64) -> (bool, BudgetState) {
    let mut next = state;
    let a = next.step(u);
    (a, next)
}
