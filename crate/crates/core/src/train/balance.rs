use super::config::AdaptiveBalance;

/// `λ ← clip(λ · ρ*/ρ̂, λ_min, λ_max)`; a zero (or non-finite) `ρ̂` leaves
/// `λ` unchanged.
pub fn balance_lambda(lambda: f64, rho_hat: f64, cfg: &AdaptiveBalance) -> f64 {
    if !(rho_hat > 0.0) || !rho_hat.is_finite() {
        return lambda;
    }
    (lambda * cfg.target / rho_hat).clamp(cfg.lambda_min, cfg.lambda_max)
}
