//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0      8 bytes   magic "SNAPUQ1\0"
//! 8      u64       manifest length L
//! 16     L bytes   UTF-8 JSON manifest
//! 16+L   blobs     tensors, each at `offset` bytes past the blob start
//! ```
//!
//! Float parameters are stored as f32, quantized weights as i8, quantized
//! biases as i32, ξ thresholds as i64 and the σ lookup table as u16. Reading
//! a container yields the frozen (f32-rounded) model.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::MappingParams;
use crate::error::{Result, SnapError};
use crate::heads::{HeadConfig, TapHead};
use crate::model::{ModelConfig, SnapModel};
use crate::nnet::{Backbone, Tensor};
use crate::quantize::{FixedMul, QuantBundle, QuantHead, QuantTensor, SigmaLut};
use crate::score::{MahaStats, MahaTap, ScoreConfig};

pub const MAGIC: &[u8; 8] = b"SNAPUQ1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I8,
    I32,
    I64,
    U16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Self::I8 => 1,
            Self::U16 => 2,
            Self::F32 | Self::I32 => 4,
            Self::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub tap: usize,
    pub pooled: bool,
    pub rank: usize,
    pub config: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahaMeta {
    pub taps: Vec<usize>,
    pub weights: Vec<f64>,
    pub shrinkage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantHeadMeta {
    pub tap: usize,
    pub p_scale: f64,
    pub w_mu_scale: f64,
    pub w_xi_scale: f64,
    pub in_scale: f64,
    pub z_scale: f64,
    pub out_scale: f64,
    pub z_mul: FixedMul,
    pub mu_mul: FixedMul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMeta {
    pub heads: Vec<QuantHeadMeta>,
    pub lut_lo: f64,
    pub lut_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Architecture; the tap point (post-activation) lives in the backbone spec.
    pub config: ModelConfig,
    pub heads: Vec<HeadMeta>,
    pub score: ScoreConfig,
    pub mapping: Option<MappingParams>,
    pub maha: Option<MahaMeta>,
    pub quant: Option<QuantMeta>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Default)]
struct BlobWriter {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, name: String, shape: Vec<usize>, dtype: Dtype, raw: Vec<u8>) {
        self.entries.push(TensorEntry {
            name,
            shape,
            dtype,
            offset: self.bytes.len() as u64,
            length: raw.len() as u64,
        });
        self.bytes.extend(raw);
    }

    fn f32(&mut self, name: String, t: &Tensor) {
        let raw = t
            .data()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        self.push(name, t.shape().to_vec(), Dtype::F32, raw);
    }

    fn i8(&mut self, name: String, q: &QuantTensor) {
        let raw = q.values.iter().map(|&v| v as u8).collect();
        self.push(name, q.shape.clone(), Dtype::I8, raw);
    }

    fn i32(&mut self, name: String, v: &[i32]) {
        let raw = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(name, vec![v.len()], Dtype::I32, raw);
    }

    fn i64(&mut self, name: String, v: &[i64]) {
        let raw = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(name, vec![v.len()], Dtype::I64, raw);
    }

    fn u16(&mut self, name: String, v: &[u16]) {
        let raw = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(name, vec![v.len()], Dtype::U16, raw);
    }
}

fn model_config(model: &SnapModel) -> ModelConfig {
    ModelConfig {
        backbone: model.spec().clone(),
        head: model.heads.first().map(|h| h.config).unwrap_or_default(),
        ranks: model.heads.iter().map(TapHead::rank).collect(),
    }
}

/// Serializes a model. Parameters are written at f32 precision.
pub fn to_bytes(model: &SnapModel) -> Result<Vec<u8>> {
    let mut w = BlobWriter::default();
    for (name, t) in model
        .backbone
        .param_names()
        .into_iter()
        .zip(model.backbone.params())
    {
        w.f32(name, t);
    }
    for h in &model.heads {
        for (s, t) in TapHead::PARAM_SUFFIXES.iter().zip(h.params()) {
            w.f32(format!("tap{}.{s}", h.tap), t);
        }
        if let Some(b) = &h.lowrank {
            w.f32(format!("tap{}.B", h.tap), b);
        }
    }
    let maha = model.maha.as_ref().map(|m| {
        for t in &m.taps {
            let d = t.var.len();
            let flat: Vec<f64> = t.means.iter().flatten().copied().collect();
            let means = Tensor::new(vec![t.means.len(), d], flat).expect("finite maha means");
            w.f32(format!("maha.tap{}.means", t.tap), &means);
            w.f32(
                format!("maha.tap{}.var", t.tap),
                &Tensor::from_vec(t.var.clone()),
            );
        }
        MahaMeta {
            taps: m.taps.iter().map(|t| t.tap).collect(),
            weights: m.weights.clone(),
            shrinkage: m.shrinkage,
        }
    });
    let quant = model.quant.as_ref().map(|q| {
        for h in &q.heads {
            w.i8(format!("q.tap{}.P", h.tap), &h.p);
            w.i8(format!("q.tap{}.Wmu", h.tap), &h.w_mu);
            w.i8(format!("q.tap{}.Wxi", h.tap), &h.w_xi);
            w.i32(format!("q.tap{}.bmu", h.tap), &h.b_mu);
            w.i32(format!("q.tap{}.bxi", h.tap), &h.b_xi);
            w.i64(format!("q.tap{}.xi_thresholds", h.tap), &h.xi_thresholds);
        }
        w.u16("q.lut".into(), &q.lut.entries);
        QuantMeta {
            heads: q
                .heads
                .iter()
                .map(|h| QuantHeadMeta {
                    tap: h.tap,
                    p_scale: h.p.scale,
                    w_mu_scale: h.w_mu.scale,
                    w_xi_scale: h.w_xi.scale,
                    in_scale: h.in_scale,
                    z_scale: h.z_scale,
                    out_scale: h.out_scale,
                    z_mul: h.z_mul,
                    mu_mul: h.mu_mul,
                })
                .collect(),
            lut_lo: q.lut.lo,
            lut_hi: q.lut.hi,
        }
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model_config(model),
        heads: model
            .heads
            .iter()
            .map(|h| HeadMeta {
                tap: h.tap,
                pooled: h.pooled,
                rank: h.rank(),
                config: h.config,
            })
            .collect(),
        score: model.score.clone(),
        mapping: model.mapping.clone(),
        maha,
        quant,
        tensors: w.entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + w.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend(json);
    out.extend(w.bytes);
    Ok(out)
}

struct Blobs<'a> {
    entries: HashMap<&'a str, &'a TensorEntry>,
    bytes: &'a [u8],
}

impl Blobs<'_> {
    fn raw(&self, name: &str, dtype: Dtype) -> Result<(&[u8], &[usize])> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| SnapError::format(format!("missing tensor `{name}`")))?;
        if e.dtype != dtype {
            return Err(SnapError::format(format!(
                "tensor `{name}` has dtype {:?}, expected {dtype:?}",
                e.dtype
            )));
        }
        Ok((slice_of(self.bytes, e)?, &e.shape))
    }

    fn f32(&self, name: &str) -> Result<Tensor> {
        let (raw, shape) = self.raw(name, Dtype::F32)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Tensor::new(shape.to_vec(), data)
            .map_err(|e| SnapError::format(format!("tensor `{name}`: {e}")))
    }

    fn i8(&self, name: &str, scale: f64) -> Result<QuantTensor> {
        let (raw, shape) = self.raw(name, Dtype::I8)?;
        Ok(QuantTensor {
            shape: shape.to_vec(),
            values: raw.iter().map(|&b| b as i8).collect(),
            scale,
        })
    }

    fn i32(&self, name: &str) -> Result<Vec<i32>> {
        let (raw, _) = self.raw(name, Dtype::I32)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn i64(&self, name: &str) -> Result<Vec<i64>> {
        let (raw, _) = self.raw(name, Dtype::I64)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn u16(&self, name: &str) -> Result<Vec<u16>> {
        let (raw, _) = self.raw(name, Dtype::U16)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect())
    }
}

fn slice_of<'a>(bytes: &'a [u8], e: &TensorEntry) -> Result<&'a [u8]> {
    let numel: usize = e.shape.iter().product();
    if numel as u64 * e.dtype.size() as u64 != e.length {
        return Err(SnapError::format(format!(
            "tensor `{}` length does not match its shape",
            e.name
        )));
    }
    let end = e
        .offset
        .checked_add(e.length)
        .filter(|&end| end <= bytes.len() as u64);
    match end {
        Some(end) => Ok(&bytes[e.offset as usize..end as usize]),
        None => Err(SnapError::format(format!(
            "tensor `{}` runs past the end of the file",
            e.name
        ))),
    }
}

/// Splits a container into its manifest and blob region.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(SnapError::format("not a model container (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| SnapError::format("manifest runs past the end of the file"))?
        as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| SnapError::format(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(SnapError::format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    Ok((manifest, &bytes[end..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<SnapModel> {
    let (manifest, blob_bytes) = read_manifest(bytes)?;
    let blobs = Blobs {
        entries: manifest
            .tensors
            .iter()
            .map(|e| (e.name.as_str(), e))
            .collect(),
        bytes: blob_bytes,
    };
    for e in &manifest.tensors {
        slice_of(blob_bytes, e)?;
    }
    let spec = manifest.config.backbone.clone();
    let params = Backbone::param_names_for(&spec)
        .iter()
        .map(|n| blobs.f32(n))
        .collect::<Result<Vec<_>>>()?;
    let backbone =
        Backbone::from_params(spec, params).map_err(|e| SnapError::format(e.to_string()))?;
    let mut heads = Vec::with_capacity(manifest.heads.len());
    for m in &manifest.heads {
        let t = m.tap;
        let lowrank = match blobs.entries.contains_key(format!("tap{t}.B").as_str()) {
            true => Some(blobs.f32(&format!("tap{t}.B"))?),
            false => None,
        };
        heads.push(TapHead {
            tap: t,
            pooled: m.pooled,
            config: m.config,
            p: blobs.f32(&format!("tap{t}.P"))?,
            w_mu: blobs.f32(&format!("tap{t}.Wmu"))?,
            b_mu: blobs.f32(&format!("tap{t}.bmu"))?,
            w_xi: blobs.f32(&format!("tap{t}.Wxi"))?,
            b_xi: blobs.f32(&format!("tap{t}.bxi"))?,
            lowrank,
        });
    }
    let mut model =
        SnapModel::from_parts(backbone, heads).map_err(|e| SnapError::format(e.to_string()))?;
    model.score = manifest.score;
    model.score.validate(model.heads.len())?;
    if let Some(map) = manifest.mapping {
        map.validate()?;
        model.mapping = Some(map);
    }
    if let Some(m) = manifest.maha {
        let taps = m
            .taps
            .iter()
            .map(|&t| {
                let means = blobs.f32(&format!("maha.tap{t}.means"))?;
                let var = blobs.f32(&format!("maha.tap{t}.var"))?;
                Ok(MahaTap {
                    tap: t,
                    means: (0..means.rows()).map(|r| means.row(r).to_vec()).collect(),
                    var: var.into_data(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        model.maha = Some(MahaStats {
            taps,
            weights: m.weights,
            shrinkage: m.shrinkage,
        });
    }
    if let Some(q) = manifest.quant {
        let heads = q
            .heads
            .iter()
            .map(|h| {
                let t = h.tap;
                Ok(QuantHead {
                    tap: t,
                    p: blobs.i8(&format!("q.tap{t}.P"), h.p_scale)?,
                    w_mu: blobs.i8(&format!("q.tap{t}.Wmu"), h.w_mu_scale)?,
                    w_xi: blobs.i8(&format!("q.tap{t}.Wxi"), h.w_xi_scale)?,
                    b_mu: blobs.i32(&format!("q.tap{t}.bmu"))?,
                    b_xi: blobs.i32(&format!("q.tap{t}.bxi"))?,
                    in_scale: h.in_scale,
                    z_scale: h.z_scale,
                    out_scale: h.out_scale,
                    z_mul: h.z_mul,
                    mu_mul: h.mu_mul,
                    xi_thresholds: blobs.i64(&format!("q.tap{t}.xi_thresholds"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bundle = QuantBundle {
            heads,
            lut: SigmaLut {
                lo: q.lut_lo,
                hi: q.lut_hi,
                entries: blobs.u16("q.lut")?,
            },
        };
        bundle
            .validate()
            .map_err(|e| SnapError::format(e.to_string()))?;
        model.quant = Some(bundle);
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &SnapModel) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SnapModel> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::BackboneSpec;

    fn model() -> SnapModel {
        let mut spec = BackboneSpec::mlp_default(6, 3);
        spec.widths = vec![8, 8, 8];
        spec.tap_indices = vec![2, 3];
        let mut m = SnapModel::init(&ModelConfig::new(spec), 5).unwrap();
        m.freeze();
        m
    }

    #[test]
    fn round_trip_is_exact_after_freeze() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let mut bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(SnapError::Format(_))));
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let swapped = json.replacen("\"f32\"", "\"f16\"", 1);
        bytes.splice(16..16 + len, swapped.into_bytes());
        assert!(matches!(from_bytes(&bytes), Err(SnapError::Format(_))));
    }
}
