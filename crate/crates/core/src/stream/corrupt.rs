//! Label-preserving corruptions with a fixed per-severity magnitude table.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::nnet::Tensor;
use crate::rng::SnapRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Noise,
    Blur,
    Contrast,
    Occlusion,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [Self::Noise, Self::Blur, Self::Contrast, Self::Occlusion];

    pub const NOISE_SIGMA: [f64; 5] = [0.05, 0.1, 0.2, 0.35, 0.5];
    pub const BLUR_KERNEL: [usize; 5] = [1, 3, 3, 5, 5];
    pub const CONTRAST_GAIN: [f64; 5] = [0.9, 0.75, 0.6, 0.45, 0.3];
    pub const OCCLUSION_FRAC: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];
}

/// Applies `kind` at `severity` (0 = identity, 1..=5 from the table).
/// Vectors use a 1D blur and a contiguous occluded span; images a 2D box
/// blur and a square patch.
pub fn corrupt(x: &Tensor, kind: Corruption, severity: u8, rng: &mut SnapRng) -> Result<Tensor> {
    if severity == 0 {
        return Ok(x.clone());
    }
    if severity > 5 {
        return Err(SnapError::argument(format!(
            "severity {severity} outside 0..=5"
        )));
    }
    let s = usize::from(severity - 1);
    let image = x.shape().len() == 3;
    let (h, w) = if image {
        (x.shape()[1], x.shape()[2])
    } else {
        (1, x.len())
    };
    let mut data = x.data().to_vec();
    match kind {
        Corruption::Noise => {
            let n = Normal::new(0.0, Corruption::NOISE_SIGMA[s]).expect("positive sigma");
            data.iter_mut().for_each(|v| *v += n.sample(rng));
        }
        Corruption::Blur => {
            let k = Corruption::BLUR_KERNEL[s];
            if image {
                let plane = h * w;
                for ch in data.chunks_mut(plane) {
                    let src = ch.to_vec();
                    box_blur_2d(&src, ch, h, w, k);
                }
            } else {
                let src = data.clone();
                box_blur_1d(&src, &mut data, k);
            }
        }
        Corruption::Contrast => {
            let g = Corruption::CONTRAST_GAIN[s];
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            data.iter_mut().for_each(|v| *v = mean + g * (*v - mean));
        }
        Corruption::Occlusion => {
            let f = Corruption::OCCLUSION_FRAC[s];
            if image {
                let side = ((f * (h * w) as f64).sqrt().round() as usize).clamp(1, h.min(w));
                let r0 = rng.random_range(0..=h - side);
                let c0 = rng.random_range(0..=w - side);
                let plane = h * w;
                for ch in data.chunks_mut(plane) {
                    for r in r0..r0 + side {
                        ch[r * w + c0..r * w + c0 + side]
                            .iter_mut()
                            .for_each(|v| *v = 0.0);
                    }
                }
            } else {
                let span = ((f * w as f64).round() as usize).clamp(1, w);
                let start = rng.random_range(0..=w - span);
                data[start..start + span].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Centered moving average with the window truncated at the edges.
fn box_blur_1d(src: &[f64], dst: &mut [f64], k: usize) {
    let half = k / 2;
    for i in 0..src.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(src.len());
        dst[i] = src[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
}

fn box_blur_2d(src: &[f64], dst: &mut [f64], h: usize, w: usize, k: usize) {
    let half = k / 2;
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
            let mut sum = 0.0;
            for rr in r0..r1 {
                sum += src[rr * w + c0..rr * w + c1].iter().sum::<f64>();
            }
            dst[r * w + c] = sum / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
}
