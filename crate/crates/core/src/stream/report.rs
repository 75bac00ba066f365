//! Metric report for one detector on one scored stream.

use serde::{Deserialize, Serialize};

use super::build::{Regime, Truth};
use super::corrupt::Corruption;
use super::events::{
    event_weights, frame_correct, frame_labels, label_events, EventInterval, IdBand,
};
use super::metrics::{
    auprc, auroc, bootstrap_ci, calib_metrics, delay_at_threshold, fpr_at_recall, pr_curve,
    risk_coverage, selective_nll, CalibMetrics, Ci, DelayResult, PrPoint, RiskCoverage,
    BOOTSTRAP_RESAMPLES, COVERAGE_GRID,
};
use crate::error::{Result, SnapError};
use crate::score::ScoreRecord;

/// Mean over corruption types of the AUPRC separating `CID(severity, type)`
/// frames from clean ID frames.
pub fn severity_auprc(truth: &[Truth], scores: &[f64], severity: u8) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for kind in Corruption::ALL {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (t, &v) in truth.iter().zip(scores) {
            let pos = t.regime == Regime::Cid { severity } && t.corruption == Some(kind);
            if pos || t.regime == Regime::Id {
                s.push(v);
                l.push(pos);
            }
        }
        if l.iter().any(|&p| p) {
            total += auprc(&s, &l, None)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SnapError::undefined(format!(
            "no frames at severity {severity}"
        )));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityAuprc {
    pub severity: u8,
    pub auprc: Option<f64>,
}

/// Recall level for the matched-recall false-positive rate.
pub const MATCHED_RECALL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detector: String,
    pub frames: usize,
    pub window: usize,
    pub band: IdBand,
    pub events: Vec<EventInterval>,
    /// Frame AUPRC with a frame-bootstrap interval.
    pub auprc: Option<Ci>,
    pub auprc_event_weighted: Option<f64>,
    pub auroc: Option<f64>,
    /// FPR on clean ID frames at 90% recall of event frames.
    pub fpr_at_recall: Option<f64>,
    pub threshold: Option<f64>,
    pub delay: Option<DelayResult>,
    pub risk_coverage: Option<RiskCoverage>,
    /// NLL, Brier and ECE on the clean ID frames.
    pub calibration: Option<CalibMetrics>,
    pub selective_nll: Option<f64>,
    pub severity: Vec<SeverityAuprc>,
    /// Metrics that were undefined on this stream and why.
    pub notes: Vec<String>,
}

fn defined<T>(name: &str, r: Result<T>, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(SnapError::Undefined(why)) => {
            notes.push(format!("{name}: {why}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Inputs shared by every detector evaluated on a stream.
pub struct ReportInput<'a> {
    pub records: &'a [ScoreRecord],
    pub truth: &'a [Truth],
    pub band: IdBand,
    pub window: usize,
    pub seed: u64,
}

/// Evaluates `scores` (larger = more uncertain). `tau` enables delay and
/// selective metrics.
pub fn build_report(
    input: &ReportInput<'_>,
    detector: &str,
    scores: &[f64],
    tau: Option<f64>,
) -> Result<MetricReport> {
    let ReportInput {
        records,
        truth,
        band,
        window,
        seed,
    } = *input;
    let n = truth.len();
    if records.len() != n || scores.len() != n || n == 0 {
        return Err(SnapError::argument(
            "scores, records and truth must be aligned and non-empty",
        ));
    }
    let mut notes = Vec::new();
    let preds: Vec<usize> = records.iter().map(|r| r.pred).collect();
    let events = label_events(truth, &preds, window, &band)?;
    let labels = frame_labels(n, &events);
    let weights = event_weights(n, &events);
    let ci = bootstrap_ci(n, BOOTSTRAP_RESAMPLES, seed, |idx| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        auprc(&s, &l, None)
    });
    let auprc_ci = defined("auprc", ci, &mut notes)?;
    let weighted = defined(
        "auprc_event_weighted",
        auprc(scores, &labels, Some(&weights)),
        &mut notes,
    )?;
    let auroc_v = defined("auroc", auroc(scores, &labels), &mut notes)?;
    let clean: Vec<bool> = truth.iter().map(|t| t.regime == Regime::Id).collect();
    let fpr = defined(
        "fpr_at_recall",
        fpr_at_recall(scores, &labels, &clean, MATCHED_RECALL),
        &mut notes,
    )?;
    let correct = frame_correct(truth, &preds);
    let rc = defined(
        "risk_coverage",
        risk_coverage(scores, &correct, &COVERAGE_GRID),
        &mut notes,
    )?;

    let id_idx: Vec<usize> = (0..n).filter(|&i| clean[i]).collect();
    let id_probs: Vec<Vec<f64>> = id_idx.iter().map(|&i| records[i].probs.clone()).collect();
    let id_labels: Vec<usize> = id_idx.iter().map(|&i| truth[i].label).collect();
    let calibration = if id_idx.is_empty() {
        notes.push("calibration: no clean ID frames".into());
        None
    } else {
        Some(calib_metrics(&id_probs, &id_labels, 15)?)
    };
    let (delay, sel) = match tau {
        Some(t) => {
            let id_u: Vec<f64> = id_idx.iter().map(|&i| scores[i]).collect();
            let sel = defined(
                "selective_nll",
                selective_nll(&id_probs, &id_labels, &id_u, t),
                &mut notes,
            )?;
            (Some(delay_at_threshold(&events, scores, t)), sel)
        }
        None => (None, None),
    };
    let severity = (1..=5u8)
        .map(|s| {
            Ok(SeverityAuprc {
                severity: s,
                auprc: defined(
                    &format!("severity {s}"),
                    severity_auprc(truth, scores, s),
                    &mut notes,
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        detector: detector.to_string(),
        frames: n,
        window,
        band,
        events,
        auprc: auprc_ci,
        auprc_event_weighted: weighted,
        auroc: auroc_v,
        fpr_at_recall: fpr,
        threshold: tau,
        delay,
        risk_coverage: rc,
        calibration,
        selective_nll: sel,
        severity,
        notes,
    })
}

/// Per-threshold PR/ROC points as CSV.
pub fn curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall,fpr\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.threshold, p.precision, p.recall, p.fpr
        ));
    }
    out
}

/// PR/ROC sweep of `scores` against event frames.
pub fn event_curve(
    truth: &[Truth],
    preds: &[usize],
    scores: &[f64],
    band: IdBand,
    window: usize,
) -> Result<Vec<PrPoint>> {
    let events = label_events(truth, preds, window, &band)?;
    pr_curve(scores, &frame_labels(truth.len(), &events), None)
}
