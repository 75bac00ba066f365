//! Detection, selective-prediction and calibration metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::events::EventInterval;
use crate::calibrate::select_threshold_coverage;
use crate::error::{Result, SnapError};
use crate::rng::substream;

const EPS: f64 = 1e-12;

fn check_scores(scores: &[f64], n: usize) -> Result<()> {
    if scores.len() != n || n == 0 {
        return Err(SnapError::argument(
            "scores and labels must be non-empty and aligned",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SnapError::numeric("non-finite score"));
    }
    Ok(())
}

/// Indices sorted by descending score (stable) and the group boundaries of
/// equal scores.
fn descending_groups(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ends = Vec::new();
    for i in 1..=idx.len() {
        if i == idx.len() || scores[idx[i]] != scores[idx[i - 1]] {
            ends.push(i);
        }
    }
    (idx, ends)
}

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
}

/// Sweep over unique thresholds (descending), alarm rule `score ≥ τ`.
pub fn pr_curve(scores: &[f64], labels: &[bool], weights: Option<&[f64]>) -> Result<Vec<PrPoint>> {
    check_scores(scores, labels.len())?;
    if let Some(w) = weights {
        if w.len() != labels.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(SnapError::argument(
                "weights must be non-negative and aligned",
            ));
        }
    }
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]);
    let pos: f64 = (0..labels.len()).filter(|&i| labels[i]).map(wt).sum();
    let neg: f64 = (0..labels.len()).filter(|&i| !labels[i]).map(wt).sum();
    if !(pos > 0.0) {
        return Err(SnapError::undefined("no positive frames"));
    }
    let (idx, ends) = descending_groups(scores);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut start = 0;
    let mut out = Vec::with_capacity(ends.len());
    for &end in &ends {
        for &i in &idx[start..end] {
            if labels[i] {
                tp += wt(i);
            } else {
                fp += wt(i);
            }
        }
        out.push(PrPoint {
            threshold: scores[idx[start]],
            precision: tp / (tp + fp).max(EPS),
            recall: tp / pos.max(EPS),
            fpr: fp / neg.max(EPS),
        });
        start = end;
    }
    Ok(out)
}

/// Area under the PR curve with stepwise-in-recall integration: each recall
/// increment is credited with the best precision at that recall or beyond.
/// Optional per-frame weights give the event-weighted variant.
pub fn auprc(scores: &[f64], labels: &[bool], weights: Option<&[f64]>) -> Result<f64> {
    let pts = pr_curve(scores, labels, weights)?;
    let mut interp = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].precision);
        interp[i] = best;
    }
    let mut area = 0.0;
    let mut prev_r = 0.0;
    for (p, ip) in pts.iter().zip(&interp) {
        area += (p.recall - prev_r) * ip;
        prev_r = p.recall;
    }
    Ok(area.clamp(0.0, 1.0))
}

/// Trapezoidal area under the ROC curve; tied scores move together.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(SnapError::undefined("AUROC needs both classes"));
    }
    let (idx, ends) = descending_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut start = 0;
    for &end in &ends {
        for &i in &idx[start..end] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let (tpr, fpr) = (tp as f64 / pos as f64, fp as f64 / neg as f64);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        (prev_tpr, prev_fpr) = (tpr, fpr);
        start = end;
    }
    Ok(area)
}

/// False-positive rate on `negatives` at the largest threshold whose recall
/// on `positives` reaches `recall`.
pub fn fpr_at_recall(
    scores: &[f64],
    positives: &[bool],
    negatives: &[bool],
    recall: f64,
) -> Result<f64> {
    check_scores(scores, positives.len())?;
    let pos: Vec<f64> = (0..scores.len())
        .filter(|&i| positives[i])
        .map(|i| scores[i])
        .collect();
    let neg: Vec<f64> = (0..scores.len())
        .filter(|&i| negatives[i])
        .map(|i| scores[i])
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(SnapError::undefined(
            "matched-recall FPR needs positives and negatives",
        ));
    }
    let mut sorted = pos.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((recall * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let tau = sorted[k.min(sorted.len()) - 1];
    Ok(neg.iter().filter(|&&s| s >= tau).count() as f64 / neg.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayResult {
    /// Frames from onset to the first in-event crossing, `None` when missed.
    pub delays: Vec<Option<usize>>,
    pub median: Option<f64>,
    pub miss_rate: f64,
}

/// First crossing of `τ` inside each event. Crossings before the onset do
/// not count, and an event with no crossing before it ends (or before the
/// stream ends) is missed.
pub fn delay_at_threshold(events: &[EventInterval], scores: &[f64], tau: f64) -> DelayResult {
    let delays: Vec<Option<usize>> = events
        .iter()
        .map(|e| {
            let end = e.offset.min(scores.len().saturating_sub(1));
            (e.onset..=end)
                .find(|&t| scores[t] >= tau)
                .map(|t| t - e.onset)
        })
        .collect();
    let mut hits: Vec<f64> = delays.iter().flatten().map(|&d| d as f64).collect();
    hits.sort_by(f64::total_cmp);
    let median = median_sorted(&hits);
    let miss_rate = if events.is_empty() {
        0.0
    } else {
        delays.iter().filter(|d| d.is_none()).count() as f64 / events.len() as f64
    };
    DelayResult {
        delays,
        median,
        miss_rate,
    }
}

fn median_sorted(v: &[f64]) -> Option<f64> {
    match v.len() {
        0 => None,
        n if n % 2 == 1 => Some(v[n / 2]),
        n => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

pub const COVERAGE_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcPoint {
    pub target: f64,
    pub tau: f64,
    pub coverage: f64,
    /// Error rate among accepted samples; `None` when nothing is accepted.
    pub risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverage {
    pub points: Vec<RcPoint>,
    /// Trapezoidal area over the nominal coverage grid (skipped points are
    /// left out).
    pub aurc: f64,
    pub skipped: bool,
}

/// Risk at each target coverage under the accept rule `u < τ`.
pub fn risk_coverage(u: &[f64], correct: &[bool], grid: &[f64]) -> Result<RiskCoverage> {
    check_scores(u, correct.len())?;
    if grid.is_empty() || grid.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
        return Err(SnapError::argument("coverage grid must lie in (0, 1]"));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &target in grid {
        let tau = select_threshold_coverage(u, target)?;
        let acc: Vec<usize> = (0..u.len()).filter(|&i| u[i] < tau).collect();
        let risk = (!acc.is_empty())
            .then(|| acc.iter().filter(|&&i| !correct[i]).count() as f64 / acc.len() as f64);
        points.push(RcPoint {
            target,
            tau,
            coverage: acc.len() as f64 / u.len() as f64,
            risk,
        });
    }
    let valid: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.risk.map(|r| (p.target, r)))
        .collect();
    let aurc = valid
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RiskCoverage {
        skipped: valid.len() < points.len(),
        points,
        aurc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibMetrics {
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
}

/// NLL, Brier `(1/L)‖p − e_y‖²` and adaptive equal-mass ECE over `bins`.
pub fn calib_metrics(p: &[Vec<f64>], labels: &[usize], bins: usize) -> Result<CalibMetrics> {
    if p.is_empty() || p.len() != labels.len() || bins == 0 {
        return Err(SnapError::argument(
            "posteriors and labels must be non-empty and aligned",
        ));
    }
    let n = p.len();
    let (mut nll, mut brier) = (0.0, 0.0);
    let mut conf = Vec::with_capacity(n);
    for (row, &y) in p.iter().zip(labels) {
        if y >= row.len() {
            return Err(SnapError::argument(format!(
                "label {y} outside the posterior"
            )));
        }
        nll -= row[y].max(EPS).ln();
        brier += row
            .iter()
            .enumerate()
            .map(|(c, v)| (v - f64::from(u8::from(c == y))).powi(2))
            .sum::<f64>()
            / row.len() as f64;
        let pred = crate::nnet::argmax(row);
        conf.push((row[pred], pred == y));
    }
    conf.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ece = 0.0;
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        if hi <= lo {
            continue;
        }
        let bin = &conf[lo..hi];
        let c = bin.iter().map(|x| x.0).sum::<f64>() / bin.len() as f64;
        let a = bin.iter().filter(|x| x.1).count() as f64 / bin.len() as f64;
        ece += bin.len() as f64 / n as f64 * (a - c).abs();
    }
    Ok(CalibMetrics {
        nll: nll / n as f64,
        brier: brier / n as f64,
        ece,
    })
}

/// Mean `−log p_y` over samples accepted by `u < τ`.
pub fn selective_nll(p: &[Vec<f64>], labels: &[usize], u: &[f64], tau: f64) -> Result<f64> {
    if p.len() != labels.len() || p.len() != u.len() {
        return Err(SnapError::argument("inputs must be aligned"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((row, &y), &ui) in p.iter().zip(labels).zip(u) {
        if ui < tau {
            total -= row[y].max(EPS).ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(SnapError::undefined("no accepted samples"));
    }
    Ok(total / (count as f64).max(EPS))
}

/// Ranks with ties given their average position (1-based).
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        idx[i..j].iter().for_each(|&k| ranks[k] = r);
        i = j;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(SnapError::argument(
            "need two aligned samples of length ≥ 2",
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(SnapError::undefined("constant sample"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Fraction of resamples on which the metric was undefined.
    pub undefined_frac: f64,
    /// More than 10% of resamples were undefined.
    pub widened: bool,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap over `units` resampling units. `metric` receives the
/// resampled unit indices; resample `r` draws from substream `r` of `seed`.
pub fn bootstrap_ci<F>(units: usize, resamples: usize, seed: u64, metric: F) -> Result<Ci>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if units == 0 || resamples == 0 {
        return Err(SnapError::argument("bootstrap needs units and resamples"));
    }
    let all: Vec<usize> = (0..units).collect();
    let point = metric(&all)?;
    let mut values = Vec::with_capacity(resamples);
    let mut undefined = 0usize;
    let mut idx = vec![0usize; units];
    for r in 0..resamples {
        let mut rng = substream(seed, r as u64);
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..units));
        match metric(&idx) {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) | Err(SnapError::Undefined(_)) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    let undefined_frac = undefined as f64 / resamples as f64;
    if values.is_empty() {
        return Err(SnapError::undefined("metric undefined on every resample"));
    }
    values.sort_by(f64::total_cmp);
    Ok(Ci {
        point,
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
        undefined_frac,
        widened: undefined_frac > 0.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auprc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auprc(&s, &[true, true, false, false], None).unwrap(), 1.0);
        assert_eq!(auprc(&s, &[false, true, false, true], None).unwrap(), 0.5);
        assert_eq!(auprc(&s, &[true; 4], None).unwrap(), 1.0);
        assert!(matches!(
            auprc(&s, &[false; 4], None),
            Err(SnapError::Undefined(_))
        ));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(
            auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
    }

    #[test]
    fn delay_examples() {
        let mut s = vec![0.0; 12];
        s[7] = 1.0;
        s[2] = 1.0;
        let ev = [EventInterval {
            onset: 5,
            offset: 10,
        }];
        let d = delay_at_threshold(&ev, &s, 0.5);
        assert_eq!(d.delays, vec![Some(2)]);
        let d = delay_at_threshold(&ev, &[0.0; 12], 0.5);
        assert_eq!((d.miss_rate, d.median), (1.0, None));
    }

    #[test]
    fn calibration_examples() {
        let c = calib_metrics(&[vec![1.0, 0.0]], &[0], 1).unwrap();
        assert_eq!((c.brier, c.nll), (0.0, 0.0));
        let c = calib_metrics(&[vec![0.5, 0.5]], &[0], 1).unwrap();
        assert!((c.brier - 0.25).abs() < 1e-12 && (c.nll - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_and_order() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bootstrap_constant_metric() {
        let ci = bootstrap_ci(50, 100, 3, |_| Ok(0.7)).unwrap();
        assert_eq!((ci.lo, ci.hi, ci.point), (0.7, 0.7, 0.7));
    }
}
