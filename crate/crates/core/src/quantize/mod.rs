//! Post-training int8 export of the heads, the log-variance lookup table and
//! the integer scoring path.

mod integer;
mod overhead;

pub use integer::{
    calibrate_quant, quantize_activation, quantized_ebar, quantized_tap_ebar, FixedMul,
    QuantBundle, QuantEbar, QuantHead,
};
pub use overhead::{eq12_params, report_overhead, OverheadReport, TapOverhead};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::nnet::Tensor;

/// Symmetric per-tensor int8 tensor, zero point 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i8>,
    pub scale: f64,
}

impl QuantTensor {
    /// `scale = max|w| / 127`, round half to even. An all-zero tensor gets
    /// scale 1.
    pub fn quantize(t: &Tensor) -> Self {
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
        let values = t
            .data()
            .iter()
            .map(|v| (v / scale).round_ties_even().clamp(-127.0, 127.0) as i8)
            .collect();
        Self {
            shape: t.shape().to_vec(),
            values,
            scale,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.values
                .iter()
                .map(|&q| f64::from(q) * self.scale)
                .collect(),
        )
        .expect("finite dequantized values")
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

pub const LUT_SIZE: usize = 256;

/// `exp(−s/2)` on a uniform 256-point grid over the clamp range, stored as
/// unsigned Q8.8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaLut {
    pub lo: f64,
    pub hi: f64,
    pub entries: Vec<u16>,
}

impl SigmaLut {
    pub fn grid(&self, j: usize) -> f64 {
        self.lo + j as f64 * (self.hi - self.lo) / (LUT_SIZE - 1) as f64
    }

    pub fn decode(&self, j: usize) -> f64 {
        f64::from(self.entries[j]) / 256.0
    }

    /// Nearest grid index for a log-variance.
    pub fn index_of(&self, s: f64) -> usize {
        let t = (s - self.lo) / (self.hi - self.lo) * (LUT_SIZE - 1) as f64;
        t.round().clamp(0.0, (LUT_SIZE - 1) as f64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != LUT_SIZE || !(self.lo < self.hi) {
            return Err(SnapError::format(
                "lookup table must hold 256 entries over an ordered range",
            ));
        }
        Ok(())
    }
}

pub fn build_lut(lo: f64, hi: f64) -> Result<SigmaLut> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SnapError::argument(
            "lookup table bounds must be finite and ordered",
        ));
    }
    let mut lut = SigmaLut {
        lo,
        hi,
        entries: Vec::with_capacity(LUT_SIZE),
    };
    for j in 0..LUT_SIZE {
        let v = (256.0 * (-0.5 * lut.grid(j)).exp()).round();
        lut.entries.push(v.clamp(0.0, f64::from(u16::MAX)) as u16);
    }
    Ok(lut)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_examples() {
        let q = QuantTensor::quantize(&Tensor::from_vec(vec![1.27, -0.5, 0.0]));
        assert!((q.scale - 0.01).abs() < 1e-15);
        assert_eq!(q.values[0], 127);
        assert_eq!(q.values[1], -50);
        let z = QuantTensor::quantize(&Tensor::from_vec(vec![0.0; 3]));
        assert_eq!((z.scale, z.values.clone()), (1.0, vec![0, 0, 0]));
        let sym = QuantTensor::quantize(&Tensor::from_vec(vec![0.3, -0.3, 1.0]));
        assert_eq!(sym.values[0], -sym.values[1]);
    }

    #[test]
    fn lut_examples() {
        let lut = build_lut(-2.56, 2.54).unwrap();
        assert!(lut.entries.windows(2).all(|w| w[0] >= w[1]));
        let j0 = lut.index_of(0.0);
        assert!(lut.grid(j0).abs() < 1e-12);
        assert!((lut.decode(j0) - 1.0).abs() <= 1.0 / 256.0);
        let default = build_lut(1e-4f64.ln(), 1e2f64.ln()).unwrap();
        assert!(default.entries.windows(2).all(|w| w[0] >= w[1]));
        let exact = build_lut(0.0, 255.0 * 2.0 * 2f64.ln()).unwrap();
        assert!((exact.decode(0) - 1.0).abs() <= 1.0 / 256.0);
        assert!((exact.decode(1) - 0.5).abs() <= 1.0 / 256.0);
    }
}
