use crate::error::{Result, SnapError};

/// Threshold maximizing frame-wise F1 for the alarm rule `score ≥ τ`, over
/// the unique scores. Ties go to the larger `τ`. Returns `(τ, F1)`.
pub fn select_threshold_f1(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(SnapError::argument(
            "scores and labels must be non-empty and aligned",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SnapError::numeric("non-finite score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(SnapError::fit("no positive frames in the dev stream"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == v {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (pos - tp)) as f64;
        // Candidates arrive in descending order, so strict improvement keeps
        // the larger threshold on ties.
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((v, f1));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Smallest representable value strictly above `v`.
pub fn next_above(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        return v;
    }
    if v == 0.0 {
        return f64::from_bits(1);
    }
    let bits = v.to_bits();
    if v > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Fraction of values accepted by `u < τ`.
pub fn coverage_of(u: &[f64], tau: f64) -> f64 {
    u.iter().filter(|&&v| v < tau).count() as f64 / u.len().max(1) as f64
}

/// Threshold whose acceptance set `{u < τ}` has the smallest coverage that
/// is still at least `κ`.
pub fn select_threshold_coverage(u: &[f64], kappa: f64) -> Result<f64> {
    if u.is_empty() {
        return Err(SnapError::argument("no values to threshold"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(SnapError::argument("target coverage must lie in (0, 1]"));
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((kappa * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let kth = sorted[k.min(n) - 1];
    Ok(sorted
        .iter()
        .copied()
        .find(|&v| v > kth)
        .unwrap_or_else(|| next_above(kth)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_examples() {
        let u = [0.1, 0.2, 0.9];
        let t = select_threshold_coverage(&u, 0.6).unwrap();
        assert_eq!(t, 0.9);
        assert!((coverage_of(&u, t) - 2.0 / 3.0).abs() < 1e-12);
        let t = select_threshold_coverage(&u, 1.0).unwrap();
        assert!(t > 0.9 && coverage_of(&u, t) == 1.0);
    }

    #[test]
    fn f1_examples() {
        let (t, f1) =
            select_threshold_f1(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!((t, f1), (0.8, 1.0));
        let (t, f1) = select_threshold_f1(&[0.5; 4], &[true, false, false, false]).unwrap();
        assert_eq!(t, 0.5);
        assert!((f1 - 2.0 * 0.25 / 1.25).abs() < 1e-12);
        assert!(matches!(
            select_threshold_f1(&[0.1], &[false]),
            Err(SnapError::Fit(_))
        ));
    }
}
