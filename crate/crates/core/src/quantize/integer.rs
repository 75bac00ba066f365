//! Integer scoring: int8 weights and activations, int32 accumulation,
//! fixed-point requantization, table lookup for `σ⁻¹` and a 64-bit
//! accumulator for the squared standardized residuals.

use serde::{Deserialize, Serialize};

use super::{build_lut, QuantTensor, SigmaLut, LUT_SIZE};
use crate::error::{Result, SnapError};
use crate::heads::{Density, TapHead};
use crate::model::SnapModel;
use crate::nnet::{ActivationTrace, Tensor};

/// Headroom applied to calibrated activation ranges.
pub const ACT_HEADROOM: f64 = 1.1;

/// Fixed-point multiplier: `x ↦ round(x · mult / 2^shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMul {
    pub mult: i64,
    pub shift: u32,
}

impl FixedMul {
    /// Normalizes `mult` into `[2^30, 2^31)` where the shift allows it.
    pub fn from_real(m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(SnapError::numeric(format!(
                "invalid requantization multiplier {m}"
            )));
        }
        let mut shift: i32 = 0;
        let mut v = m;
        while v < (1u64 << 30) as f64 && shift < 62 {
            v *= 2.0;
            shift += 1;
        }
        while v >= (1u64 << 31) as f64 && shift > 0 {
            v /= 2.0;
            shift -= 1;
        }
        Ok(Self {
            mult: v.round() as i64,
            shift: shift as u32,
        })
    }

    pub fn apply(&self, x: i64) -> i64 {
        let prod = i128::from(x) * i128::from(self.mult);
        let r = if self.shift == 0 {
            prod
        } else {
            (prod + (1i128 << (self.shift - 1))) >> self.shift
        };
        r.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64
    }
}

/// One head in integer form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantHead {
    pub tap: usize,
    pub p: QuantTensor,
    pub w_mu: QuantTensor,
    pub w_xi: QuantTensor,
    /// Biases at the accumulator scales `s_W · s_z`.
    pub b_mu: Vec<i32>,
    pub b_xi: Vec<i32>,
    /// Activation scales of the projector input, of `z` and of the target.
    pub in_scale: f64,
    pub z_scale: f64,
    pub out_scale: f64,
    /// `z` accumulator to int8 `z`.
    pub z_mul: FixedMul,
    /// `μ` accumulator to the residual scale `out_scale / 256`.
    pub mu_mul: FixedMul,
    /// `ξ`-accumulator thresholds between adjacent table cells; the table
    /// index is the number of thresholds at or below the accumulator.
    pub xi_thresholds: Vec<i64>,
}

impl QuantHead {
    pub fn in_dim(&self) -> usize {
        self.p.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_mu.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, d) = (self.p.rows(), self.w_mu.rows());
        let ok = self.w_mu.cols() == r
            && self.w_xi.rows() == d
            && self.w_xi.cols() == r
            && self.b_mu.len() == d
            && self.b_xi.len() == d
            && self.xi_thresholds.len() == LUT_SIZE - 1
            && self.xi_thresholds.windows(2).all(|w| w[0] <= w[1])
            && [self.in_scale, self.z_scale, self.out_scale]
                .iter()
                .all(|s| *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SnapError::format(format!(
                "quantized head for tap {} is inconsistent",
                self.tap
            )))
        }
    }

    pub fn lut_index(&self, xi_acc: i64) -> usize {
        self.xi_thresholds.partition_point(|&t| t <= xi_acc)
    }
}

/// Integer heads for every tap plus the shared table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantBundle {
    pub heads: Vec<QuantHead>,
    pub lut: SigmaLut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantEbar {
    pub ebar: f64,
    /// The squared-residual accumulator saturated.
    pub overflow: bool,
}

/// Symmetric int8 activation quantization at a fixed scale.
pub fn quantize_activation(a: &[f64], scale: f64) -> Vec<i8> {
    a.iter()
        .map(|v| (v / scale).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect()
}

fn act_scale(max_abs: f64) -> f64 {
    if max_abs > 0.0 {
        ACT_HEADROOM * max_abs / 127.0
    } else {
        1.0
    }
}

fn quant_bias(b: &Tensor, scale: f64) -> Vec<i32> {
    b.data()
        .iter()
        .map(|v| {
            (v / scale)
                .round_ties_even()
                .clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect()
}

fn softplus_inv(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

fn xi_thresholds(head: &TapHead, lut: &SigmaLut, acc_scale: f64) -> Vec<i64> {
    let cfg = &head.config;
    let floor = cfg.eps * cfg.eps;
    let step = (lut.hi - lut.lo) / (LUT_SIZE - 1) as f64;
    (0..LUT_SIZE - 1)
        .map(|j| {
            let s_mid = lut.lo + (j as f64 + 0.5) * step;
            let v = s_mid.exp() - floor;
            if v <= 0.0 {
                return i64::MIN;
            }
            let xi = softplus_inv(v);
            if let Some(c) = cfg.xi_clip {
                if xi > c {
                    return i64::MAX;
                }
                if xi < -c {
                    return i64::MIN;
                }
            }
            let t = (xi / acc_scale).ceil();
            t.clamp(i64::MIN as f64, i64::MAX as f64) as i64
        })
        .collect()
}

/// Quantizes every head and calibrates activation scales on `dev`.
pub fn calibrate_quant(model: &SnapModel, dev: &[Tensor]) -> Result<QuantBundle> {
    if dev.is_empty() {
        return Err(SnapError::argument(
            "activation calibration needs dev inputs",
        ));
    }
    let first = model
        .heads
        .first()
        .ok_or_else(|| SnapError::input("model has no heads"))?;
    let lut = build_lut(first.config.log_var_min, first.config.log_var_max)?;
    for h in &model.heads {
        if matches!(h.config.density, Density::LowRank { .. }) {
            return Err(SnapError::incompatible(
                "the integer engine covers diagonal heads only",
            ));
        }
        if (h.config.log_var_min, h.config.log_var_max) != (lut.lo, lut.hi) {
            return Err(SnapError::incompatible(
                "heads disagree on the log-variance clamp",
            ));
        }
    }
    let n = model.heads.len();
    let (mut in_max, mut z_max, mut out_max) = (vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]);
    for x in dev {
        let (trace, _) = model.backbone.forward_collect(x)?;
        for (k, h) in model.heads.iter().enumerate() {
            let a_prev = trace.tap_vector(h.tap - 1)?;
            let a = trace.tap_vector(h.tap)?;
            let z = h.project(a_prev)?;
            in_max[k] = a_prev.iter().fold(in_max[k], |m, v| m.max(v.abs()));
            z_max[k] = z.iter().fold(z_max[k], |m, v| m.max(v.abs()));
            out_max[k] = a.iter().fold(out_max[k], |m, v| m.max(v.abs()));
        }
    }
    let mut heads = Vec::with_capacity(n);
    for (k, h) in model.heads.iter().enumerate() {
        let (in_scale, z_scale, out_scale) = (
            act_scale(in_max[k]),
            act_scale(z_max[k]),
            act_scale(out_max[k]),
        );
        let p = QuantTensor::quantize(&h.p);
        let w_mu = QuantTensor::quantize(&h.w_mu);
        let w_xi = QuantTensor::quantize(&h.w_xi);
        let mu_acc = w_mu.scale * z_scale;
        let xi_acc = w_xi.scale * z_scale;
        heads.push(QuantHead {
            tap: h.tap,
            b_mu: quant_bias(&h.b_mu, mu_acc),
            b_xi: quant_bias(&h.b_xi, xi_acc),
            z_mul: FixedMul::from_real(p.scale * in_scale / z_scale)?,
            mu_mul: FixedMul::from_real(mu_acc * 256.0 / out_scale)?,
            xi_thresholds: xi_thresholds(h, &lut, xi_acc),
            p,
            w_mu,
            w_xi,
            in_scale,
            z_scale,
            out_scale,
        });
    }
    Ok(QuantBundle { heads, lut })
}

fn dot_i8(row: &[i8], x: &[i8]) -> i32 {
    row.iter()
        .zip(x)
        .map(|(&w, &v)| i32::from(w) * i32::from(v))
        .sum()
}

/// `ē` of one tap from int8 activations, integer-only until the final scale.
pub fn quantized_ebar(
    a_prev: &[i8],
    a: &[i8],
    head: &QuantHead,
    lut: &SigmaLut,
) -> Result<QuantEbar> {
    if a_prev.len() != head.in_dim() || a.len() != head.out_dim() {
        return Err(SnapError::input(format!(
            "tap {} integer activations have the wrong length",
            head.tap
        )));
    }
    let r = head.p.rows();
    let z: Vec<i8> = (0..r)
        .map(|i| {
            let acc = dot_i8(
                &head.p.values[i * head.in_dim()..(i + 1) * head.in_dim()],
                a_prev,
            );
            head.z_mul.apply(i64::from(acc)).clamp(-127, 127) as i8
        })
        .collect();
    let mut acc: i64 = 0;
    let mut overflow = false;
    for (j, &aq) in a.iter().enumerate() {
        let mu =
            i64::from(dot_i8(&head.w_mu.values[j * r..(j + 1) * r], &z)) + i64::from(head.b_mu[j]);
        let xi =
            i64::from(dot_i8(&head.w_xi.values[j * r..(j + 1) * r], &z)) + i64::from(head.b_xi[j]);
        let resid = i64::from(aq) * 256 - head.mu_mul.apply(mu);
        let inv_sigma = i64::from(lut.entries[head.lut_index(xi)]);
        let t = (resid * inv_sigma + 128) >> 8;
        match t.checked_mul(t).and_then(|sq| acc.checked_add(sq)) {
            Some(v) => acc = v,
            None => {
                acc = i64::MAX;
                overflow = true;
            }
        }
    }
    let unit = head.out_scale / 256.0;
    Ok(QuantEbar {
        ebar: acc as f64 * unit * unit / a.len() as f64,
        overflow,
    })
}

/// Quantizes float activations with the head's calibrated scales and runs
/// the integer path.
pub fn quantized_tap_ebar(
    head: &QuantHead,
    lut: &SigmaLut,
    a_prev: &[f64],
    a: &[f64],
) -> Result<QuantEbar> {
    quantized_ebar(
        &quantize_activation(a_prev, head.in_scale),
        &quantize_activation(a, head.out_scale),
        head,
        lut,
    )
}

impl QuantBundle {
    pub fn validate(&self) -> Result<()> {
        self.lut.validate()?;
        self.heads.iter().try_for_each(QuantHead::validate)
    }

    /// Integer `ē_ℓ` for every tap and whether any accumulator saturated.
    pub fn ebar(&self, trace: &ActivationTrace) -> Result<(Vec<f64>, bool)> {
        let mut out = Vec::with_capacity(self.heads.len());
        let mut overflow = false;
        for h in &self.heads {
            let q = quantized_tap_ebar(
                h,
                &self.lut,
                trace.tap_vector(h.tap - 1)?,
                trace.tap_vector(h.tap)?,
            )?;
            overflow |= q.overflow;
            out.push(q.ebar);
        }
        Ok((out, overflow))
    }
}
