//! Tiny classification backbones (MLP and a four-block conv net) that expose
//! every layer's activation during a single forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::math::softmax;
use super::tensor::Tensor;
use crate::error::{Result, SnapError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Which point of a layer is recorded as its activation `a_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    #[default]
    PostActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// `[d]` for the MLP, `[channels, height, width]` for the conv net.
    pub input_shape: Vec<usize>,
    /// Hidden widths (MLP) or output channels per block (conv).
    pub widths: Vec<usize>,
    /// Per-block stride for the conv net; empty for the MLP.
    #[serde(default)]
    pub strides: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub tap_point: TapPoint,
    /// 1-based layer indices carrying a predictor head.
    pub tap_indices: Vec<usize>,
    pub class_count: usize,
}

impl BackboneSpec {
    /// Two hidden layers of 64 units for flat vector inputs.
    pub fn mlp_default(input_dim: usize, class_count: usize) -> Self {
        Self {
            kind: BackboneKind::Mlp,
            input_shape: vec![input_dim],
            widths: vec![64, 64],
            strides: vec![],
            activation: Activation::Relu,
            tap_point: TapPoint::PostActivation,
            tap_indices: vec![2],
            class_count,
        }
    }

    /// Four 3×3 blocks (8/16/32/32 channels, stride 2 on blocks 2 and 4) for
    /// 28×28 single-channel grids, tapped after blocks 2 and 4.
    pub fn conv_default(class_count: usize) -> Self {
        Self {
            kind: BackboneKind::Conv,
            input_shape: vec![1, 28, 28],
            widths: vec![8, 16, 32, 32],
            strides: vec![1, 2, 1, 2],
            activation: Activation::Relu,
            tap_point: TapPoint::PostActivation,
            tap_indices: vec![2, 4],
            class_count,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(SnapError::config(
                "backbone needs at least one non-empty layer",
            ));
        }
        if self.class_count < 2 {
            return Err(SnapError::config("class_count must be at least 2"));
        }
        match self.kind {
            BackboneKind::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(SnapError::config("mlp input_shape must be [d]"));
                }
            }
            BackboneKind::Conv => {
                if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
                    return Err(SnapError::config("conv input_shape must be [c, h, w]"));
                }
                if self.strides.len() != self.widths.len() || self.strides.contains(&0) {
                    return Err(SnapError::config(
                        "conv needs one positive stride per block",
                    ));
                }
            }
        }
        if self.tap_indices.is_empty() {
            return Err(SnapError::config("at least one tap is required"));
        }
        let depth = self.depth();
        let mut prev = 1;
        for &t in &self.tap_indices {
            if t <= prev || t > depth {
                return Err(SnapError::config(format!(
                    "tap indices must be strictly increasing within [2, {depth}], got {:?}",
                    self.tap_indices
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Spatial size `(h, w)` of layer `layer`'s output (0 = input).
    pub fn spatial(&self, layer: usize) -> (usize, usize) {
        match self.kind {
            BackboneKind::Mlp => (1, 1),
            BackboneKind::Conv => {
                let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
                for &s in &self.strides[..layer] {
                    h = (h - 1) / s + 1;
                    w = (w - 1) / s + 1;
                }
                (h, w)
            }
        }
    }

    /// Length of the vector a head sees for layer `layer` (0 = input): the
    /// activation itself for the MLP, the channel count for the conv net.
    pub fn vector_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            return match self.kind {
                BackboneKind::Mlp => self.input_shape[0],
                BackboneKind::Conv => self.input_shape[0],
            };
        }
        self.widths[layer - 1]
    }

    fn fan_in(&self, layer: usize) -> usize {
        match self.kind {
            BackboneKind::Mlp => self.vector_dim(layer - 1),
            BackboneKind::Conv => self.vector_dim(layer - 1) * 9,
        }
    }

    fn weight_shape(&self, layer: usize) -> Vec<usize> {
        match self.kind {
            BackboneKind::Mlp => vec![self.widths[layer - 1], self.vector_dim(layer - 1)],
            BackboneKind::Conv => vec![self.widths[layer - 1], self.vector_dim(layer - 1), 3, 3],
        }
    }

    /// Multiply-accumulate count of one forward pass (layers + classifier).
    pub fn macs(&self) -> u64 {
        let mut total = 0u64;
        for layer in 1..=self.depth() {
            let (h, w) = self.spatial(layer);
            total += (h * w * self.fan_in(layer) * self.widths[layer - 1]) as u64;
        }
        total + (self.class_count * self.widths[self.depth() - 1]) as u64
    }
}

/// Activation recorded for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    /// Output of the layer: `[d]` (MLP) or `[c, h, w]` (conv).
    pub map: Tensor,
    /// Per-channel global average of `map` (conv only).
    pub pooled: Option<Vec<f64>>,
}

impl LayerActivation {
    /// The vector a head predicts: the activation itself or its pooled form.
    pub fn vector(&self) -> &[f64] {
        self.pooled.as_deref().unwrap_or(self.map.data())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// `layers[ℓ - 1]` holds `a_ℓ`.
    pub layers: Vec<LayerActivation>,
    pub logits: Vec<f64>,
}

impl ActivationTrace {
    /// Head-facing vector of 1-based layer `layer`.
    pub fn tap_vector(&self, layer: usize) -> Result<&[f64]> {
        layer
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .map(LayerActivation::vector)
            .ok_or_else(|| SnapError::input(format!("no activation recorded for layer {layer}")))
    }
}

/// Trainable backbone. Parameters are kept in a fixed canonical order:
/// `[w_1, b_1, …, w_D, b_D, w_cls, b_cls]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    params: Vec<Tensor>,
}

impl Backbone {
    /// He-uniform weights, zero biases.
    pub fn init(spec: BackboneSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * spec.depth() + 2);
        for layer in 1..=spec.depth() {
            let bound = (6.0 / spec.fan_in(layer) as f64).sqrt();
            params.push(uniform(spec.weight_shape(layer), bound, rng));
            params.push(Tensor::zeros(vec![spec.widths[layer - 1]]));
        }
        let feat = spec.widths[spec.depth() - 1];
        params.push(uniform(
            vec![spec.class_count, feat],
            (6.0 / feat as f64).sqrt(),
            rng,
        ));
        params.push(Tensor::zeros(vec![spec.class_count]));
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: BackboneSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected = Self::param_shapes(&spec);
        if params.len() != expected.len()
            || params
                .iter()
                .zip(&expected)
                .any(|(p, s)| p.shape() != s.as_slice())
        {
            return Err(SnapError::input(
                "backbone parameters do not match the architecture",
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn param_shapes(spec: &BackboneSpec) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for layer in 1..=spec.depth() {
            shapes.push(spec.weight_shape(layer));
            shapes.push(vec![spec.widths[layer - 1]]);
        }
        shapes.push(vec![spec.class_count, spec.widths[spec.depth() - 1]]);
        shapes.push(vec![spec.class_count]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        Self::param_names_for(&self.spec)
    }

    pub fn param_names_for(spec: &BackboneSpec) -> Vec<String> {
        let mut names = Vec::new();
        for layer in 1..=spec.depth() {
            names.push(format!("layer{layer}.w"));
            names.push(format!("layer{layer}.b"));
        }
        names.push("classifier.w".into());
        names.push("classifier.b".into());
        names
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(SnapError::input(format!(
                "input shape {:?} does not match backbone input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Runs the network once, recording every layer's activation, and returns
    /// the trace together with the softmax posteriors.
    pub fn forward_collect(&self, x: &Tensor) -> Result<(ActivationTrace, Vec<f64>)> {
        self.check_input(x)?;
        let depth = self.spec.depth();
        let mut layers: Vec<LayerActivation> = Vec::with_capacity(depth);
        for layer in 1..=depth {
            let input = if layer == 1 {
                x
            } else {
                &layers[layer - 2].map
            };
            let w = &self.params[2 * (layer - 1)];
            let b = &self.params[2 * (layer - 1) + 1];
            let act = match self.spec.kind {
                BackboneKind::Mlp => {
                    let mut out = w.matvec(input.data());
                    for (o, bi) in out.iter_mut().zip(b.data()) {
                        *o = (*o + bi).max(0.0);
                    }
                    LayerActivation {
                        map: Tensor::from_vec(out),
                        pooled: None,
                    }
                }
                BackboneKind::Conv => {
                    let stride = self.spec.strides[layer - 1];
                    let mut out = conv3x3(input, w, b, stride);
                    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    let pooled = global_avg_pool(&out);
                    LayerActivation {
                        map: out,
                        pooled: Some(pooled),
                    }
                }
            };
            layers.push(act);
        }
        let feat = layers[depth - 1].vector();
        let cls_w = &self.params[2 * depth];
        let cls_b = &self.params[2 * depth + 1];
        let mut logits = cls_w.matvec(feat);
        for (z, b) in logits.iter_mut().zip(cls_b.data()) {
            *z += b;
        }
        let posteriors = softmax(&logits);
        Ok((ActivationTrace { layers, logits }, posteriors))
    }

    /// Reverse pass. `dlogits` is the loss gradient at the logits and
    /// `dvec[ℓ - 1]` an optional extra gradient on layer ℓ's head-facing
    /// vector (pooled for conv). Parameter gradients are accumulated into
    /// `grads` (canonical order) scaled by `scale`.
    pub fn backward(
        &self,
        x: &Tensor,
        trace: &ActivationTrace,
        dlogits: &[f64],
        dvec: &[Option<Vec<f64>>],
        grads: &mut [Tensor],
        scale: f64,
    ) {
        let depth = self.spec.depth();
        let feat = trace.layers[depth - 1].vector();
        let cls_w = &self.params[2 * depth];
        grads[2 * depth].add_outer(dlogits, feat, scale);
        grads[2 * depth + 1].add_slice(dlogits, scale);
        let mut gfeat = cls_w.matvec_t(dlogits);
        if let Some(Some(extra)) = dvec.get(depth - 1) {
            for (g, e) in gfeat.iter_mut().zip(extra) {
                *g += e;
            }
        }

        // Gradient w.r.t. the full output map of the current layer.
        let mut gmap: Option<Vec<f64>> = None;
        for layer in (1..=depth).rev() {
            let act = &trace.layers[layer - 1];
            let mut g = gmap.take().unwrap_or_else(|| vec![0.0; act.map.len()]);
            let gv: Option<std::borrow::Cow<'_, [f64]>> = if layer == depth {
                Some(std::borrow::Cow::Borrowed(&gfeat))
            } else {
                dvec.get(layer - 1)
                    .and_then(|o| o.as_deref())
                    .map(std::borrow::Cow::Borrowed)
            };
            if let Some(gv) = gv {
                match self.spec.kind {
                    BackboneKind::Mlp => g.iter_mut().zip(gv.iter()).for_each(|(a, b)| *a += b),
                    BackboneKind::Conv => {
                        let plane = act.map.len() / gv.len();
                        for (c, gc) in gv.iter().enumerate() {
                            let share = gc / plane as f64;
                            g[c * plane..(c + 1) * plane]
                                .iter_mut()
                                .for_each(|a| *a += share);
                        }
                    }
                }
            }
            // ReLU mask on the recorded post-activation values.
            for (gi, a) in g.iter_mut().zip(act.map.data()) {
                if *a <= 0.0 {
                    *gi = 0.0;
                }
            }
            let input = if layer == 1 {
                x
            } else {
                &trace.layers[layer - 2].map
            };
            let w = &self.params[2 * (layer - 1)];
            let (gw, rest) = grads[2 * (layer - 1)..].split_at_mut(1);
            let gw = &mut gw[0];
            let gb = &mut rest[0];
            let gin = match self.spec.kind {
                BackboneKind::Mlp => {
                    gw.add_outer(&g, input.data(), scale);
                    gb.add_slice(&g, scale);
                    (layer > 1).then(|| w.matvec_t(&g))
                }
                BackboneKind::Conv => {
                    let stride = self.spec.strides[layer - 1];
                    conv3x3_backward(input, w, &g, stride, gw, gb, scale, layer > 1)
                }
            };
            gmap = gin;
        }
    }
}

fn uniform(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("finite uniform init")
}

pub fn global_avg_pool(map: &Tensor) -> Vec<f64> {
    let c = map.shape()[0];
    let plane = map.len() / c;
    map.data()
        .chunks_exact(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect()
}

/// 3×3 convolution with zero padding 1.
fn conv3x3(input: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let (cin, h, wd) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let cout = w.shape()[0];
    let (ho, wo) = ((h - 1) / stride + 1, (wd - 1) / stride + 1);
    let x = input.data();
    let k = w.data();
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        let bias = b.data()[co];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for ci in 0..cin {
                    let kbase = (co * cin + ci) * 9;
                    let xbase = ci * h * wd;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc +=
                                k[kbase + ky * 3 + kx] * x[xbase + iy as usize * wd + ix as usize];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![cout, ho, wo], out).expect("conv output shape")
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &Tensor,
    w: &Tensor,
    gout: &[f64],
    stride: usize,
    gw: &mut Tensor,
    gb: &mut Tensor,
    scale: f64,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (cin, h, wd) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let cout = w.shape()[0];
    let (ho, wo) = ((h - 1) / stride + 1, (wd - 1) / stride + 1);
    let x = input.data();
    let k = w.data();
    let mut gin = want_input_grad.then(|| vec![0.0; x.len()]);
    let gwd = gw.data_mut();
    let gbd = gb.data_mut();
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gout[(co * ho + oy) * wo + ox];
                if g == 0.0 {
                    continue;
                }
                gbd[co] += scale * g;
                for ci in 0..cin {
                    let kbase = (co * cin + ci) * 9;
                    let xbase = ci * h * wd;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = xbase + iy as usize * wd + ix as usize;
                            gwd[kbase + ky * 3 + kx] += scale * g * x[xi];
                            if let Some(gin) = gin.as_mut() {
                                gin[xi] += g * k[kbase + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny_conv_spec() -> BackboneSpec {
        BackboneSpec {
            kind: BackboneKind::Conv,
            input_shape: vec![1, 6, 6],
            widths: vec![2, 3, 2],
            strides: vec![1, 2, 1],
            activation: Activation::Relu,
            tap_point: TapPoint::PostActivation,
            tap_indices: vec![2, 3],
            class_count: 3,
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = BackboneSpec::mlp_default(16, 4);
        assert!(spec.validate().is_ok());
        spec.tap_indices = vec![1];
        assert!(spec.validate().is_err());
        spec.tap_indices = vec![3];
        assert!(spec.validate().is_err());
        spec.tap_indices = vec![];
        assert!(spec.validate().is_err());
        let mut conv = BackboneSpec::conv_default(4);
        assert!(conv.validate().is_ok());
        conv.tap_indices = vec![3, 2];
        assert!(conv.validate().is_err());
    }

    #[test]
    fn conv_default_geometry() {
        let spec = BackboneSpec::conv_default(4);
        assert_eq!(spec.spatial(0), (28, 28));
        assert_eq!(spec.spatial(1), (28, 28));
        assert_eq!(spec.spatial(2), (14, 14));
        assert_eq!(spec.spatial(4), (7, 7));
        assert_eq!(spec.vector_dim(4), 32);
    }

    #[test]
    fn zero_network_gives_uniform_posteriors() {
        let spec = BackboneSpec::mlp_default(5, 4);
        let mut net = Backbone::init(spec, &mut seeded(1)).unwrap();
        net.params_mut().iter_mut().for_each(|p| p.fill(0.0));
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.0, 0.0, 1.0]);
        let (_, p) = net.forward_collect(&x).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let net = Backbone::init(BackboneSpec::mlp_default(5, 4), &mut seeded(1)).unwrap();
        let err = net
            .forward_collect(&Tensor::from_vec(vec![0.0; 4]))
            .unwrap_err();
        assert!(matches!(err, SnapError::Input(_)));
    }

    #[test]
    fn conv_trace_pooled_lengths() {
        let net = Backbone::init(tiny_conv_spec(), &mut seeded(3)).unwrap();
        let x = Tensor::new(
            vec![1, 6, 6],
            (0..36).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let (trace, p) = net.forward_collect(&x).unwrap();
        assert_eq!(trace.layers.len(), 3);
        for (l, act) in trace.layers.iter().enumerate() {
            assert_eq!(act.pooled.as_ref().unwrap().len(), net.spec().widths[l]);
        }
        assert_eq!(trace.layers[1].map.shape(), &[3, 3, 3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
