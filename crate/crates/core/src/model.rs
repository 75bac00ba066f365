//! A backbone together with its tap heads and everything fitted afterwards.

use serde::{Deserialize, Serialize};

use crate::calibrate::MappingParams;
use crate::error::{Result, SnapError};
use crate::heads::{Density, HeadConfig, HeadOutput, TapHead};
use crate::kv::KvConfig;
use crate::nnet::{ActivationTrace, Backbone, BackboneKind, BackboneSpec, Tensor};
use crate::quantize::QuantBundle;
use crate::rng::seeded;
use crate::score::{tap_ebar, MahaStats, ScoreConfig};

/// Architecture of a model: backbone, head settings and projector ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub head: HeadConfig,
    /// Projector rank `r_ℓ` per tap.
    pub ranks: Vec<usize>,
}

impl ModelConfig {
    /// Half the input width of each tap's projector, at least one.
    pub fn default_ranks(spec: &BackboneSpec) -> Vec<usize> {
        spec.tap_indices
            .iter()
            .map(|&t| (spec.vector_dim(t - 1) / 2).max(1))
            .collect()
    }

    pub fn new(backbone: BackboneSpec) -> Self {
        let ranks = Self::default_ranks(&backbone);
        Self {
            backbone,
            head: HeadConfig::default(),
            ranks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate()?;
        if self.ranks.len() != self.backbone.tap_indices.len() || self.ranks.contains(&0) {
            return Err(SnapError::config(
                "need one positive projector rank per tap",
            ));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 12] = [
        "backbone",
        "input_dim",
        "classes",
        "widths",
        "strides",
        "taps",
        "ranks",
        "density",
        "nu",
        "delta",
        "lowrank_k",
        "eps",
    ];

    /// Reads the architecture keys of a run config.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let classes = kv.get_or("classes", 4usize)?;
        let mut spec = match kv.raw("backbone").unwrap_or("mlp") {
            "mlp" => BackboneSpec::mlp_default(kv.get_or("input_dim", 16usize)?, classes),
            "conv" => BackboneSpec::conv_default(classes),
            other => return Err(SnapError::config(format!("unknown backbone `{other}`"))),
        };
        if let Some(w) = kv.get_list("widths")? {
            spec.widths = w;
        }
        if let Some(s) = kv.get_list("strides")? {
            spec.strides = s;
        } else if spec.kind == BackboneKind::Conv && spec.strides.len() != spec.widths.len() {
            spec.strides = (0..spec.widths.len())
                .map(|i| if i % 2 == 1 { 2 } else { 1 })
                .collect();
        }
        if let Some(t) = kv.get_list("taps")? {
            spec.tap_indices = t;
        }
        spec.validate()?;
        let mut head = HeadConfig::default();
        head.density = match kv.raw("density").unwrap_or("diag") {
            "diag" => Density::DiagGauss,
            "student_t" => Density::StudentT {
                nu: kv.get_or("nu", Density::DEFAULT_NU)?,
            },
            "huber" => Density::Huber {
                delta: kv.get_or("delta", Density::DEFAULT_DELTA)?,
            },
            "lowrank" => Density::LowRank {
                rank: kv.get_or("lowrank_k", 4usize)?,
            },
            other => return Err(SnapError::config(format!("unknown density `{other}`"))),
        };
        head.eps = kv.get_or("eps", head.eps)?;
        let ranks = match kv.get_list("ranks")? {
            Some(r) => r,
            None => Self::default_ranks(&spec),
        };
        let cfg = Self {
            backbone: spec,
            head,
            ranks,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapModel {
    pub backbone: Backbone,
    pub heads: Vec<TapHead>,
    pub score: ScoreConfig,
    pub mapping: Option<MappingParams>,
    pub maha: Option<MahaStats>,
    pub quant: Option<QuantBundle>,
}

impl SnapModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let backbone = Backbone::init(cfg.backbone.clone(), &mut rng)?;
        let spec = backbone.spec();
        let pooled = spec.kind == BackboneKind::Conv;
        let heads = spec
            .tap_indices
            .iter()
            .zip(&cfg.ranks)
            .map(|(&t, &r)| {
                TapHead::init(
                    t,
                    spec.vector_dim(t - 1),
                    r,
                    spec.vector_dim(t),
                    pooled,
                    cfg.head,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let score = ScoreConfig::uniform(heads.len());
        Ok(Self {
            backbone,
            heads,
            score,
            mapping: None,
            maha: None,
            quant: None,
        })
    }

    pub fn from_parts(backbone: Backbone, heads: Vec<TapHead>) -> Result<Self> {
        let spec = backbone.spec();
        if heads.len() != spec.tap_indices.len() {
            return Err(SnapError::input("one head per tap is required"));
        }
        for (h, &t) in heads.iter().zip(&spec.tap_indices) {
            h.validate()?;
            if h.tap != t
                || h.in_dim() != spec.vector_dim(t - 1)
                || h.out_dim() != spec.vector_dim(t)
            {
                return Err(SnapError::input(format!(
                    "head for tap {t} does not fit the backbone"
                )));
            }
        }
        let score = ScoreConfig::uniform(heads.len());
        Ok(Self {
            backbone,
            heads,
            score,
            mapping: None,
            maha: None,
            quant: None,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        self.backbone.spec()
    }

    pub fn taps(&self) -> &[usize] {
        &self.backbone.spec().tap_indices
    }

    /// All trainable tensors: backbone (canonical order) then `[P, W_μ, b_μ,
    /// W_ξ, b_ξ]` for every head.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.backbone.params().iter().collect();
        for h in &self.heads {
            out.extend(h.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.backbone.params_mut().iter_mut().collect();
        for h in &mut self.heads {
            out.extend(h.params_mut());
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.backbone.param_names();
        for h in &self.heads {
            for s in TapHead::PARAM_SUFFIXES {
                names.push(format!("tap{}.{s}", h.tap));
            }
        }
        names
    }

    pub fn backbone_param_count(&self) -> usize {
        self.backbone.params().len()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect()
    }

    /// Head outputs for every tap of a recorded trace.
    pub fn head_outputs(&self, trace: &ActivationTrace) -> Result<Vec<HeadOutput>> {
        self.heads
            .iter()
            .map(|h| h.forward(trace.tap_vector(h.tap - 1)?))
            .collect()
    }

    /// Dimension-normalized surprisal `ē_ℓ` for every tap.
    pub fn tap_surprisal(&self, trace: &ActivationTrace) -> Result<Vec<f64>> {
        self.heads.iter().map(|h| tap_ebar(h, trace)).collect()
    }

    /// Rounds every parameter to 32-bit precision, the precision of the
    /// exported container.
    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            p.round_to_f32();
        }
        for h in &mut self.heads {
            if let Some(b) = h.lowrank.as_mut() {
                b.round_to_f32();
            }
        }
        if let Some(m) = self.maha.as_mut() {
            for t in &mut m.taps {
                t.means
                    .iter_mut()
                    .flatten()
                    .chain(t.var.iter_mut())
                    .for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}
