use crate::error::{Result, SnapError};
use crate::nnet::stable_logsumexp;

pub const TEMPERATURE_GRID: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0];

/// Grid temperature with the lowest mean NLL; ties go to the smaller `T`.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize], grid: &[f64]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(SnapError::argument(
            "need a non-empty dev set with one label per row",
        ));
    }
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0)) {
        return Err(SnapError::argument(
            "temperature grid must hold positive values",
        ));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, sorted[0]);
    for &t in &sorted {
        let mut nll = 0.0;
        for (z, &y) in logits.iter().zip(labels) {
            if y >= z.len() {
                return Err(SnapError::argument(format!(
                    "label {y} outside the logit range"
                )));
            }
            let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
            nll += stable_logsumexp(&scaled)? - scaled[y];
        }
        nll /= logits.len() as f64;
        if nll < best.0 {
            best = (nll, t);
        }
    }
    Ok(best.1)
}
