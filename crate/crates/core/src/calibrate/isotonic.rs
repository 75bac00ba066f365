use serde::{Deserialize, Serialize};

use super::MappingParams;
use crate::error::{Result, SnapError};

/// Output clip of the isotonic map.
pub const ISO_CLIP: f64 = 1e-4;
pub const GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Right-continuous nondecreasing step function over the blended feature
/// `ψ = γ S + (1 − γ) m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    /// Strictly ascending block starts.
    pub breakpoints: Vec<f64>,
    /// Level on `[breakpoints[i], breakpoints[i + 1])`, already clipped.
    pub values: Vec<f64>,
    pub gamma: f64,
}

impl IsotonicMap {
    /// Level of the last block starting at or below `psi`; inputs below the
    /// first breakpoint get the first level.
    pub fn eval(&self, psi: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= psi);
        self.values[idx.saturating_sub(1)].clamp(ISO_CLIP, 1.0 - ISO_CLIP)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.breakpoints.is_empty()
            && self.breakpoints.len() == self.values.len()
            && self.breakpoints.windows(2).all(|w| w[0] < w[1])
            && self.values.windows(2).all(|w| w[0] <= w[1])
            && self
                .values
                .iter()
                .all(|v| (ISO_CLIP..=1.0 - ISO_CLIP).contains(v))
            && (0.0..=1.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(SnapError::format("malformed isotonic map"))
        }
    }
}

struct Block {
    start: f64,
    sum: f64,
    weight: f64,
    count: usize,
}

/// Pool-adjacent-violators on `(ψ, y)` pairs. Equal `ψ` values are pooled
/// first. Returns the blocks in ascending `ψ`.
fn pav_blocks(psi: &[f64], y: &[f64]) -> Result<(Vec<usize>, Vec<Block>)> {
    if psi.is_empty() || psi.len() != y.len() {
        return Err(SnapError::argument(
            "PAV needs at least one aligned (ψ, y) pair",
        ));
    }
    if psi.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SnapError::numeric("non-finite PAV input"));
    }
    let mut order: Vec<usize> = (0..psi.len()).collect();
    order.sort_by(|&a, &b| psi[a].total_cmp(&psi[b]));
    let mut blocks: Vec<Block> = Vec::new();
    for &i in &order {
        match blocks.last_mut() {
            Some(b) if b.start == psi[i] => {
                b.sum += y[i];
                b.weight += 1.0;
                b.count += 1;
            }
            _ => blocks.push(Block {
                start: psi[i],
                sum: y[i],
                weight: 1.0,
                count: 1,
            }),
        }
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (prev, last) = (&blocks[n - 2], &blocks[n - 1]);
            if prev.sum / prev.weight <= last.sum / last.weight {
                break;
            }
            let last = blocks.pop().expect("two blocks");
            let prev = blocks.last_mut().expect("two blocks");
            prev.sum += last.sum;
            prev.weight += last.weight;
            prev.count += last.count;
        }
    }
    Ok((order, blocks))
}

/// Least-squares nondecreasing fit, returned per input in input order and
/// before clipping.
pub fn pav_fit(psi: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let (order, blocks) = pav_blocks(psi, y)?;
    let mut out = vec![0.0; psi.len()];
    let mut k = 0;
    for b in &blocks {
        let level = b.sum / b.weight;
        for &i in &order[k..k + b.count] {
            out[i] = level;
        }
        k += b.count;
    }
    Ok(out)
}

/// Isotonic map on a precomputed feature (`γ` recorded as 1).
pub fn fit_isotonic_pav(psi: &[f64], y: &[f64]) -> Result<IsotonicMap> {
    let (_, blocks) = pav_blocks(psi, y)?;
    Ok(IsotonicMap {
        breakpoints: blocks.iter().map(|b| b.start).collect(),
        values: blocks
            .iter()
            .map(|b| (b.sum / b.weight).clamp(ISO_CLIP, 1.0 - ISO_CLIP))
            .collect(),
        gamma: 1.0,
    })
}

/// Fits the isotonic map for every `γ` in `grid` and keeps the one with the
/// lowest in-sample squared error (ties go to the larger `γ`).
pub fn fit_isotonic(s: &[f64], m: &[f64], errors: &[bool], grid: &[f64]) -> Result<MappingParams> {
    if s.len() != m.len() || s.len() != errors.len() {
        return Err(SnapError::argument("S, m and labels must be aligned"));
    }
    if grid.is_empty() || grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(SnapError::argument("γ grid must lie in [0, 1]"));
    }
    let y: Vec<f64> = errors.iter().map(|&e| f64::from(u8::from(e))).collect();
    let mut best: Option<(f64, IsotonicMap)> = None;
    for &g in grid {
        let psi: Vec<f64> = s
            .iter()
            .zip(m)
            .map(|(s, m)| g * s + (1.0 - g) * m)
            .collect();
        let mut map = fit_isotonic_pav(&psi, &y)?;
        map.gamma = g;
        let sse: f64 = psi
            .iter()
            .zip(&y)
            .map(|(p, y)| (map.eval(*p) - y).powi(2))
            .sum();
        let better = match &best {
            None => true,
            Some((b, bm)) => sse < *b || (sse == *b && g > bm.gamma),
        };
        if better {
            best = Some((sse, map));
        }
    }
    Ok(MappingParams::isotonic(best.expect("non-empty grid").1))
}
