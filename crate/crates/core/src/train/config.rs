use serde::{Deserialize, Serialize};

use crate::error::{Result, SnapError};
use crate::kv::KvConfig;
use crate::nnet::BackboneKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// SGD with heavy-ball momentum.
    Sgd,
}

/// Adaptive `λ_SS` control from the ratio of gradient norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveBalance {
    /// Target ratio `ρ*`.
    pub target: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// EMA rate for `ρ̂`.
    pub ema: f64,
}

impl Default for AdaptiveBalance {
    fn default() -> Self {
        Self {
            target: 0.1,
            lambda_min: 1e-4,
            lambda_max: 1e-2,
            ema: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Balance {
    Off,
    Adaptive(AdaptiveBalance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_ss: f64,
    pub lambda_reg: f64,
    /// Weight of the L1 log-variance penalty.
    pub alpha_var: f64,
    /// Weight decay on head weight matrices.
    pub alpha_wd: f64,
    /// Per-tap layer weights `ω_ℓ`; empty means uniform (all ones).
    pub omega: Vec<f64>,
    /// Stop auxiliary gradients from reaching the backbone.
    pub detach: bool,
    /// Switch `detach` on once validation NLL stalls (needs a validation set).
    pub detach_on_stall: bool,
    pub balance: Balance,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Fraction of epochs over which `λ_SS` ramps up linearly.
    pub warmup_frac: f64,
    /// Clip on the log-variance pre-activation during training.
    pub xi_clip: Option<f64>,
    /// EMA rate of the per-tap `ē` diagnostics.
    pub diag_ema: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ss: 5e-3,
            lambda_reg: 1e-4,
            alpha_var: 1e-4,
            alpha_wd: 5e-4,
            omega: Vec::new(),
            detach: false,
            detach_on_stall: false,
            balance: Balance::Off,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
            clip_norm: 1.0,
            warmup_frac: 0.1,
            xi_clip: Some(8.0),
            diag_ema: 0.05,
            seed: 13,
        }
    }
}

impl TrainConfig {
    /// Adam for the MLP, momentum SGD for the conv net.
    pub fn for_backbone(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Mlp => Self::default(),
            BackboneKind::Conv => Self {
                optimizer: OptimizerKind::Sgd,
                lr: 0.02,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self, taps: usize) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda_ss) || !finite_nonneg(self.lambda_reg) {
            return Err(SnapError::config(
                "loss weights must be finite and non-negative",
            ));
        }
        if !finite_nonneg(self.alpha_var) || !finite_nonneg(self.alpha_wd) {
            return Err(SnapError::config(
                "regularizer weights must be finite and non-negative",
            ));
        }
        if !self.omega.is_empty() && self.omega.len() != taps {
            return Err(SnapError::config(format!(
                "omega has {} entries for {taps} taps",
                self.omega.len()
            )));
        }
        if self.omega.iter().any(|w| !finite_nonneg(*w)) {
            return Err(SnapError::config("layer weights must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(SnapError::config("clip norm must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(SnapError::config(
                "learning rate must be positive and momentum in [0, 1)",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SnapError::config("epochs and batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac)
            || !(self.diag_ema > 0.0 && self.diag_ema <= 1.0)
        {
            return Err(SnapError::config(
                "warm-up fraction and EMA rate must lie in [0, 1]",
            ));
        }
        if let Some(c) = self.xi_clip {
            if !(c > 0.0) {
                return Err(SnapError::config("xi clip must be positive"));
            }
        }
        if let Balance::Adaptive(b) = self.balance {
            if !(b.lambda_min > 0.0 && b.lambda_min <= b.lambda_max && b.target > 0.0)
                || !(b.ema > 0.0 && b.ema <= 1.0)
            {
                return Err(SnapError::config("invalid adaptive balance settings"));
            }
            if !(b.lambda_min..=b.lambda_max).contains(&self.lambda_ss) {
                return Err(SnapError::config(
                    "lambda_ss must start inside the balance bounds",
                ));
            }
        }
        Ok(())
    }

    /// Layer weights, filling in the uniform default.
    pub fn omega_for(&self, taps: usize) -> Vec<f64> {
        if self.omega.is_empty() {
            vec![1.0; taps]
        } else {
            self.omega.clone()
        }
    }

    pub const KEYS: [&'static str; 20] = [
        "lambda_ss",
        "lambda_reg",
        "alpha_var",
        "alpha_wd",
        "omega",
        "detach",
        "detach_on_stall",
        "balance",
        "rho_target",
        "lambda_min",
        "lambda_max",
        "optimizer",
        "lr",
        "momentum",
        "epochs",
        "batch_size",
        "clip_norm",
        "warmup_frac",
        "xi_clip",
        "seed",
    ];

    /// Overrides defaults with whatever training keys `kv` carries.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        self.lambda_ss = kv.get_or("lambda_ss", self.lambda_ss)?;
        self.lambda_reg = kv.get_or("lambda_reg", self.lambda_reg)?;
        self.alpha_var = kv.get_or("alpha_var", self.alpha_var)?;
        self.alpha_wd = kv.get_or("alpha_wd", self.alpha_wd)?;
        if let Some(w) = kv.get_list("omega")? {
            self.omega = w;
        }
        self.detach = kv.get_bool("detach", self.detach)?;
        self.detach_on_stall = kv.get_bool("detach_on_stall", self.detach_on_stall)?;
        match kv.raw("balance") {
            None | Some("off") => {}
            Some("adaptive") => {
                let d = AdaptiveBalance::default();
                self.balance = Balance::Adaptive(AdaptiveBalance {
                    target: kv.get_or("rho_target", d.target)?,
                    lambda_min: kv.get_or("lambda_min", d.lambda_min)?,
                    lambda_max: kv.get_or("lambda_max", d.lambda_max)?,
                    ema: d.ema,
                });
            }
            Some(other) => {
                return Err(SnapError::config(format!("unknown balance mode `{other}`")))
            }
        }
        match kv.raw("optimizer") {
            None => {}
            Some("adam") => self.optimizer = OptimizerKind::Adam,
            Some("sgd") => self.optimizer = OptimizerKind::Sgd,
            Some(other) => return Err(SnapError::config(format!("unknown optimizer `{other}`"))),
        }
        self.lr = kv.get_or("lr", self.lr)?;
        self.momentum = kv.get_or("momentum", self.momentum)?;
        self.epochs = kv.get_or("epochs", self.epochs)?;
        self.batch_size = kv.get_or("batch_size", self.batch_size)?;
        self.clip_norm = kv.get_or("clip_norm", self.clip_norm)?;
        self.warmup_frac = kv.get_or("warmup_frac", self.warmup_frac)?;
        match kv.raw("xi_clip") {
            None => {}
            Some("none" | "off") => self.xi_clip = None,
            Some(_) => self.xi_clip = kv.get("xi_clip")?,
        }
        self.seed = kv.get_or("seed", self.seed)?;
        Ok(self)
    }
}
