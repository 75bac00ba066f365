//! Offline event labelling from trailing-window accuracy.

use serde::{Deserialize, Serialize};

use super::build::{Regime, Truth};
use crate::error::{Result, SnapError};

/// Inclusive frame interval `[onset, offset]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInterval {
    pub onset: usize,
    pub offset: usize,
}

impl EventInterval {
    pub fn len(&self) -> usize {
        self.offset - self.onset + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.onset..=self.offset).contains(&t)
    }
}

/// Windowed-accuracy statistics of an ID-only run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdBand {
    pub mean: f64,
    pub std: f64,
}

impl IdBand {
    /// Accuracy below this level is an event.
    pub fn lower(&self) -> f64 {
        self.mean - 3.0 * self.std
    }
}

/// Trailing-window accuracy; the first `m − 1` frames use the frames seen so
/// far.
pub fn windowed_accuracy(correct: &[bool], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(SnapError::argument("window must be positive"));
    }
    if correct.len() < m {
        return Err(SnapError::argument(format!(
            "stream of {} frames is shorter than the window {m}",
            correct.len()
        )));
    }
    let mut hits = 0usize;
    let mut out = Vec::with_capacity(correct.len());
    for t in 0..correct.len() {
        hits += usize::from(correct[t]);
        if t >= m {
            hits -= usize::from(correct[t - m]);
        }
        out.push(hits as f64 / (t + 1).min(m) as f64);
    }
    Ok(out)
}

/// Mean and standard deviation of full-window accuracy on an ID-only run.
pub fn id_band(correct: &[bool], m: usize) -> Result<IdBand> {
    let acc = windowed_accuracy(correct, m)?;
    let full = &acc[m - 1..];
    let mean = full.iter().sum::<f64>() / full.len() as f64;
    let var = full.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / full.len() as f64;
    Ok(IdBand {
        mean,
        std: var.sqrt(),
    })
}

/// Runs of `acc < threshold`, merged across gaps shorter than `m` and kept
/// only when at least `m` frames long.
pub fn events_from_accuracy(acc: &[f64], threshold: f64, m: usize) -> Vec<EventInterval> {
    let mut runs: Vec<EventInterval> = Vec::new();
    let mut start = None;
    for (t, &a) in acc.iter().enumerate() {
        match (a < threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push(EventInterval {
                    onset: s,
                    offset: t - 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(EventInterval {
            onset: s,
            offset: acc.len() - 1,
        });
    }
    let mut merged: Vec<EventInterval> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(prev) if r.onset - prev.offset - 1 < m => prev.offset = r.offset,
            _ => merged.push(r),
        }
    }
    merged.retain(|e| e.len() >= m);
    merged
}

/// Frame correctness: OOD frames always count as errors.
pub fn frame_correct(truth: &[Truth], preds: &[usize]) -> Vec<bool> {
    truth
        .iter()
        .zip(preds)
        .map(|(t, &p)| t.regime != Regime::Ood && p == t.label)
        .collect()
}

/// Event intervals of a labelled stream given the model's predictions.
pub fn label_events(
    truth: &[Truth],
    preds: &[usize],
    m: usize,
    band: &IdBand,
) -> Result<Vec<EventInterval>> {
    if truth.len() != preds.len() {
        return Err(SnapError::argument("one prediction per frame is required"));
    }
    let acc = windowed_accuracy(&frame_correct(truth, preds), m)?;
    Ok(events_from_accuracy(&acc, band.lower(), m))
}

/// Per-frame membership in any event.
pub fn frame_labels(n: usize, events: &[EventInterval]) -> Vec<bool> {
    let mut out = vec![false; n];
    for e in events {
        out[e.onset..=e.offset.min(n - 1)]
            .iter_mut()
            .for_each(|v| *v = true);
    }
    out
}

/// Frame weights giving every event and the background equal total mass.
pub fn event_weights(n: usize, events: &[EventInterval]) -> Vec<f64> {
    let parts = (events.len() + 1) as f64;
    let labels = frame_labels(n, events);
    let background = labels.iter().filter(|l| !**l).count();
    let mut w = vec![0.0; n];
    if background > 0 {
        for (wi, l) in w.iter_mut().zip(&labels) {
            if !l {
                *wi = 1.0 / (parts * background as f64);
            }
        }
    }
    for e in events {
        let len = e.offset.min(n - 1) + 1 - e.onset;
        w[e.onset..=e.offset.min(n - 1)]
            .iter_mut()
            .for_each(|v| *v = 1.0 / (parts * len as f64));
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dip_gives_single_event() {
        let mut acc = vec![0.95; 1000];
        acc[150..450].iter_mut().for_each(|a| *a = 0.5);
        let ev = events_from_accuracy(&acc, 0.8, 100);
        assert_eq!(
            ev,
            vec![EventInterval {
                onset: 150,
                offset: 449
            }]
        );
        assert!(events_from_accuracy(&vec![0.95; 500], 0.8, 100).is_empty());
    }

    #[test]
    fn close_dips_merge_and_short_ones_drop() {
        let m = 10;
        let mut acc = vec![1.0; 100];
        acc[10..20].iter_mut().for_each(|a| *a = 0.0);
        acc[29..39].iter_mut().for_each(|a| *a = 0.0);
        acc[70..75].iter_mut().for_each(|a| *a = 0.0);
        let ev = events_from_accuracy(&acc, 0.5, m);
        assert_eq!(
            ev,
            vec![EventInterval {
                onset: 10,
                offset: 38
            }]
        );
    }

    #[test]
    fn weights_split_mass_evenly() {
        let ev = [EventInterval {
            onset: 2,
            offset: 3,
        }];
        let w = event_weights(6, &ev);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[2] + w[3] - 0.5).abs() < 1e-12);
    }
}
