use serde::{Deserialize, Serialize};

use crate::heads::TapHead;
use crate::nnet::BackboneSpec;

/// Head parameter count `2 d r + 2 d` (predictor weights and biases).
pub fn eq12_params(d: usize, r: usize) -> usize {
    2 * d * r + 2 * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapOverhead {
    pub tap: usize,
    pub d: usize,
    pub r: usize,
    pub d_prev: usize,
    /// `2 d r + 2 d`.
    pub head_params: usize,
    /// Projector parameters `r · d_prev`, reported separately.
    pub projector_params: usize,
    /// `H W r + 2 r d`, with `H × W` the spatial size of `a_{ℓ−1}`.
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub taps: Vec<TapOverhead>,
    pub total_head_params: usize,
    pub total_projector_params: usize,
    pub backbone_macs: u64,
    pub head_macs: u64,
    /// `Σ_ℓ (H W r + 2 r d) / backbone MACs`.
    pub flop_ratio: f64,
}

pub fn report_overhead(spec: &BackboneSpec, heads: &[TapHead]) -> OverheadReport {
    let taps: Vec<TapOverhead> = heads
        .iter()
        .map(|h| {
            let (d, r, d_prev) = (h.out_dim(), h.rank(), h.in_dim());
            let (hh, ww) = spec.spatial(h.tap - 1);
            TapOverhead {
                tap: h.tap,
                d,
                r,
                d_prev,
                head_params: eq12_params(d, r),
                projector_params: r * d_prev,
                macs: (hh * ww * r + 2 * r * d) as u64,
            }
        })
        .collect();
    let backbone_macs = spec.macs();
    let head_macs = taps.iter().map(|t| t.macs).sum();
    OverheadReport {
        total_head_params: taps.iter().map(|t| t.head_params).sum(),
        total_projector_params: taps.iter().map(|t| t.projector_params).sum(),
        flop_ratio: head_macs as f64 / backbone_macs as f64,
        backbone_macs,
        head_macs,
        taps,
    }
}
