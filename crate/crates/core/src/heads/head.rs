use rand::Rng;
use serde::{Deserialize, Serialize};

use super::woodbury::WoodburyCache;
use crate::error::{Result, SnapError};
use crate::nnet::{softplus, Tensor};

/// Conditional density placed on a tap's activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    DiagGauss,
    StudentT {
        nu: f64,
    },
    Huber {
        delta: f64,
    },
    /// Diagonal plus a rank-`rank` factor `B Bᵀ`.
    LowRank {
        rank: usize,
    },
}

impl Density {
    pub const DEFAULT_NU: f64 = 4.0;
    pub const DEFAULT_DELTA: f64 = 1.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub density: Density,
    /// Variance floor: `σ² = softplus(ξ) + ε²`.
    pub eps: f64,
    pub log_var_min: f64,
    pub log_var_max: f64,
    /// Symmetric clip applied to the log-variance pre-activation `ξ`.
    #[serde(default)]
    pub xi_clip: Option<f64>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            density: Density::DiagGauss,
            eps: 1e-4,
            log_var_min: 1e-4f64.ln(),
            log_var_max: 1e2f64.ln(),
            xi_clip: None,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(SnapError::config("variance floor eps must be positive"));
        }
        if !(self.log_var_min < self.log_var_max) {
            return Err(SnapError::config(
                "log-variance clamp bounds must be ordered",
            ));
        }
        match self.density {
            Density::StudentT { nu } if !(nu > 0.0) => Err(SnapError::config(
                "student-t degrees of freedom must be positive",
            )),
            Density::Huber { delta } if !(delta > 0.0) => {
                Err(SnapError::config("huber delta must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Projector plus predictor attached to one tapped layer.
///
/// `z = P a_{ℓ-1}`, `μ = W_μ z + b_μ`, `ξ = W_ξ z + b_ξ`. For conv backbones
/// `a_{ℓ-1}` is the channel-pooled map and `P` acts as a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TapHead {
    pub tap: usize,
    pub pooled: bool,
    pub config: HeadConfig,
    pub p: Tensor,
    pub w_mu: Tensor,
    pub b_mu: Tensor,
    pub w_xi: Tensor,
    pub b_xi: Tensor,
    /// Low-rank covariance factor `B` (`d × k`), present for `Density::LowRank`.
    pub lowrank: Option<Tensor>,
}

/// Result of running a head on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    /// Log-variance pre-activation after the optional clip.
    pub xi: Vec<f64>,
    /// Clamped log-variance `log σ²`.
    pub s: Vec<f64>,
    /// Whether the gradient flows from `s` back to the head weights
    /// (false where the clamp or the `ξ` clip is active).
    pub s_open: Vec<bool>,
    pub woodbury: Option<WoodburyCache>,
}

impl HeadOutput {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.s.iter().map(|s| s.exp()).collect()
    }
}

impl TapHead {
    /// Random initialization: He-uniform projector and mean weights, zero
    /// log-variance weights with bias `ξ₀ = softplus⁻¹(1)` so that σ² ≈ 1.
    pub fn init(
        tap: usize,
        in_dim: usize,
        rank: usize,
        out_dim: usize,
        pooled: bool,
        config: HeadConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if rank == 0 || in_dim == 0 || out_dim == 0 {
            return Err(SnapError::config("head dimensions must be positive"));
        }
        config.validate()?;
        let lowrank = match config.density {
            Density::LowRank { rank: k } => {
                if k == 0 || k >= out_dim {
                    return Err(SnapError::config(format!(
                        "low-rank factor rank {k} must lie in [1, {out_dim})"
                    )));
                }
                Some(Tensor::zeros(vec![out_dim, k]))
            }
            _ => None,
        };
        let pb = (6.0 / in_dim as f64).sqrt();
        let mb = (6.0 / rank as f64).sqrt();
        let xi0 = (1.0f64).exp_m1().ln();
        Ok(Self {
            tap,
            pooled,
            config,
            p: rand_tensor(vec![rank, in_dim], pb, rng),
            w_mu: rand_tensor(vec![out_dim, rank], mb, rng),
            b_mu: Tensor::zeros(vec![out_dim]),
            w_xi: Tensor::zeros(vec![out_dim, rank]),
            b_xi: Tensor::new(vec![out_dim], vec![xi0; out_dim])?,
            lowrank,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.p.cols()
    }

    pub fn rank(&self) -> usize {
        self.p.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_mu.rows()
    }

    /// Trainable tensors in canonical order `[P, W_μ, b_μ, W_ξ, b_ξ]`.
    pub fn params(&self) -> [&Tensor; 5] {
        [&self.p, &self.w_mu, &self.b_mu, &self.w_xi, &self.b_xi]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.p,
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_xi,
            &mut self.b_xi,
        ]
    }

    pub const PARAM_SUFFIXES: [&'static str; 5] = ["P", "Wmu", "bmu", "Wxi", "bxi"];

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (r, d) = (self.rank(), self.out_dim());
        let ok = self.w_mu.shape() == [d, r]
            && self.b_mu.shape() == [d]
            && self.w_xi.shape() == [d, r]
            && self.b_xi.shape() == [d];
        if !ok {
            return Err(SnapError::input(format!(
                "tap {} head tensors are inconsistent",
                self.tap
            )));
        }
        match (&self.config.density, &self.lowrank) {
            (Density::LowRank { rank }, Some(b)) if b.shape() == [d, *rank] && *rank < d => Ok(()),
            (Density::LowRank { .. }, _) => {
                Err(SnapError::input("low-rank factor missing or misshaped"))
            }
            _ => Ok(()),
        }
    }

    /// `z = P · a_prev`.
    pub fn project(&self, a_prev: &[f64]) -> Result<Vec<f64>> {
        if a_prev.len() != self.in_dim() {
            return Err(SnapError::input(format!(
                "tap {} projector expects {} inputs, got {}",
                self.tap,
                self.in_dim(),
                a_prev.len()
            )));
        }
        Ok(self.p.matvec(a_prev))
    }

    /// Mean and floored, clamped log-variance from `z`.
    pub fn head_forward(&self, z: &[f64]) -> Result<HeadOutput> {
        if z.len() != self.rank() {
            return Err(SnapError::input(format!(
                "tap {} head expects z of length {}, got {}",
                self.tap,
                self.rank(),
                z.len()
            )));
        }
        let cfg = &self.config;
        let mut mu = self.w_mu.matvec(z);
        mu.iter_mut()
            .zip(self.b_mu.data())
            .for_each(|(m, b)| *m += b);
        let mut xi = self.w_xi.matvec(z);
        xi.iter_mut()
            .zip(self.b_xi.data())
            .for_each(|(x, b)| *x += b);
        let floor = cfg.eps * cfg.eps;
        let mut s = Vec::with_capacity(xi.len());
        let mut s_open = Vec::with_capacity(xi.len());
        for x in xi.iter_mut() {
            let mut open = true;
            if let Some(c) = cfg.xi_clip {
                if x.abs() > c {
                    *x = x.clamp(-c, c);
                    open = false;
                }
            }
            let log_var = (softplus(*x) + floor).ln();
            if log_var < cfg.log_var_min || log_var > cfg.log_var_max {
                open = false;
            }
            s.push(log_var.clamp(cfg.log_var_min, cfg.log_var_max));
            s_open.push(open);
        }
        let woodbury = match &self.lowrank {
            Some(b) => Some(WoodburyCache::new(b, &s)?),
            None => None,
        };
        Ok(HeadOutput {
            z: z.to_vec(),
            mu,
            xi,
            s,
            s_open,
            woodbury,
        })
    }

    /// Projection followed by the head.
    pub fn forward(&self, a_prev: &[f64]) -> Result<HeadOutput> {
        let z = self.project(a_prev)?;
        self.head_forward(&z)
    }

    /// Sum of squares of the weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.p.sq_norm() + self.w_mu.sq_norm() + self.w_xi.sq_norm()
    }
}

fn rand_tensor(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("finite init")
}
