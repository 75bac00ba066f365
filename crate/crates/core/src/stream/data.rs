//! Synthetic in-distribution / out-of-distribution sources.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::nnet::{BackboneSpec, Tensor};
use crate::rng::{seeded, SnapRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Gaussian clusters in 16 dimensions, four classes.
    Vectors,
    /// 28×28 single-channel glyphs, four classes.
    Glyphs,
}

impl std::str::FromStr for DatasetKind {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vectors" => Ok(Self::Vectors),
            "glyphs" => Ok(Self::Glyphs),
            other => Err(SnapError::config(format!("unknown dataset `{other}`"))),
        }
    }
}

pub const CLASSES: usize = 4;
pub const VECTOR_DIM: usize = 16;
pub const GLYPH_SIDE: usize = 28;

/// Parameters of the vector task.
///
/// Each class is a Gaussian cluster with low-rank covariance: a latent
/// point `c_y + z` in `latent_dim` dimensions is mixed into 16 dimensions and
/// a little isotropic noise is added. OOD clusters use their own mixing
/// matrix, so they leave the ID subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorParams {
    pub latent_dim: usize,
    /// Per-coordinate spread of the latent class centres.
    pub center_scale: f64,
    /// Within-class latent standard deviation.
    pub within_std: f64,
    /// Isotropic ambient noise.
    pub noise_std: f64,
}

impl Default for VectorParams {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            center_scale: 1.0,
            within_std: 0.35,
            noise_std: 0.02,
        }
    }
}

/// A seeded generator of labelled ID examples and unlabelled OOD examples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub kind: DatasetKind,
    pub params: VectorParams,
    /// Latent class centres for ID (labels `0..4`) and OOD (labels `4..8`).
    centers: Vec<Vec<f64>>,
    /// Row-major `16 × latent_dim` mixing matrices for ID and OOD.
    mixing: [Vec<f64>; 2],
}

impl SyntheticTask {
    /// Builds the task; centres and mixing matrices are drawn from `seed`.
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self::with_params(kind, seed, VectorParams::default())
    }

    pub fn with_params(kind: DatasetKind, seed: u64, params: VectorParams) -> Self {
        let mut rng = seeded(seed ^ 0x5eed_da7a);
        let (centers, mixing) = match kind {
            DatasetKind::Vectors => {
                let k = params.latent_dim;
                let n = Normal::new(0.0, params.center_scale).expect("positive scale");
                let centers = (0..2 * CLASSES)
                    .map(|_| (0..k).map(|_| n.sample(&mut rng)).collect())
                    .collect();
                let a = Normal::new(0.0, 1.0 / (k as f64).sqrt()).expect("positive scale");
                let mut mix = || {
                    (0..VECTOR_DIM * k)
                        .map(|_| a.sample(&mut rng))
                        .collect::<Vec<f64>>()
                };
                (centers, [mix(), mix()])
            }
            DatasetKind::Glyphs => (Vec::new(), [Vec::new(), Vec::new()]),
        };
        Self {
            kind,
            params,
            centers,
            mixing,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            DatasetKind::Vectors => vec![VECTOR_DIM],
            DatasetKind::Glyphs => vec![1, GLYPH_SIDE, GLYPH_SIDE],
        }
    }

    /// Default backbone for this task.
    pub fn backbone(&self) -> BackboneSpec {
        match self.kind {
            DatasetKind::Vectors => BackboneSpec::mlp_default(VECTOR_DIM, CLASSES),
            DatasetKind::Glyphs => BackboneSpec::conv_default(CLASSES),
        }
    }

    pub fn ood_labels(&self) -> std::ops::Range<usize> {
        CLASSES..2 * CLASSES
    }

    /// One ID example with a uniformly drawn label.
    pub fn sample_id(&self, rng: &mut SnapRng) -> (Tensor, usize) {
        let y = rng.random_range(0..CLASSES);
        (self.sample_class(y, rng), y)
    }

    /// One OOD example and its (out-of-range) label.
    pub fn sample_ood(&self, rng: &mut SnapRng) -> (Tensor, usize) {
        let y = rng.random_range(CLASSES..2 * CLASSES);
        let x = match self.kind {
            DatasetKind::Vectors => self.sample_class(y, rng),
            DatasetKind::Glyphs => {
                let g = self.sample_class(y - CLASSES, rng);
                let inv = g.data().iter().map(|v| 1.0 - v).collect();
                Tensor::new(g.shape().to_vec(), inv).expect("finite glyph")
            }
        };
        (x, y)
    }

    fn sample_class(&self, y: usize, rng: &mut SnapRng) -> Tensor {
        match self.kind {
            DatasetKind::Vectors => {
                let p = self.params;
                let k = p.latent_dim;
                let within = Normal::new(0.0, p.within_std).expect("positive std");
                let noise = Normal::new(0.0, p.noise_std).expect("positive std");
                let latent: Vec<f64> = self.centers[y]
                    .iter()
                    .map(|c| c + within.sample(rng))
                    .collect();
                let mix = &self.mixing[usize::from(y >= CLASSES)];
                let x = (0..VECTOR_DIM)
                    .map(|i| {
                        let row = &mix[i * k..(i + 1) * k];
                        row.iter().zip(&latent).map(|(a, l)| a * l).sum::<f64>() + noise.sample(rng)
                    })
                    .collect();
                Tensor::from_vec(x)
            }
            DatasetKind::Glyphs => glyph(y, rng),
        }
    }

    /// `n` labelled ID examples from `rng`.
    pub fn id_set(&self, n: usize, rng: &mut SnapRng) -> Vec<(Tensor, usize)> {
        (0..n).map(|_| self.sample_id(rng)).collect()
    }
}

/// A glyph of class `y`: vertical bar, horizontal bar, diagonal cross or
/// ring, randomly shifted and scaled in intensity, on a faint noisy
/// background.
fn glyph(y: usize, rng: &mut SnapRng) -> Tensor {
    let s = GLYPH_SIDE as i64;
    let dx = rng.random_range(-2i64..=2);
    let dy = rng.random_range(-2i64..=2);
    let ink: f64 = rng.random_range(0.75..1.0);
    let bg = Normal::new(0.0, 0.04).expect("positive std");
    let mut data = vec![0.0f64; GLYPH_SIDE * GLYPH_SIDE];
    for r in 0..s {
        for c in 0..s {
            let (u, v) = (r - dy - s / 2, c - dx - s / 2);
            let on = match y % CLASSES {
                0 => v.abs() <= 2 && u.abs() <= 9,
                1 => u.abs() <= 2 && v.abs() <= 9,
                2 => ((u - v).abs() <= 1 || (u + v).abs() <= 1) && u.abs() <= 9,
                _ => {
                    let m = u.abs().max(v.abs());
                    (7..=9).contains(&m)
                }
            };
            let base = if on { ink } else { 0.0 };
            data[(r * s + c) as usize] = (base + bg.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![1, GLYPH_SIDE, GLYPH_SIDE], data).expect("finite glyph")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ood_labels_are_disjoint() {
        for kind in [DatasetKind::Vectors, DatasetKind::Glyphs] {
            let task = SyntheticTask::new(kind, 3);
            let mut rng = seeded(1);
            for _ in 0..50 {
                let (x, y) = task.sample_id(&mut rng);
                assert!(y < CLASSES);
                assert_eq!(x.shape(), task.input_shape().as_slice());
                let (_, o) = task.sample_ood(&mut rng);
                assert!(task.ood_labels().contains(&o));
            }
        }
    }
}
