//! Latitude weighting and the distortion-aware upsampling block.
//!
//! The block upsamples a feature map ×2 (nearest neighbour), concatenates it
//! with a copy weighted by the per-row latitude weight, gates the 2C channels
//! with a squeeze-and-excitation block, reduces back to C channels with a 1×1
//! convolution and applies ELU. The weighted copy is formed after upsampling,
//! using the weight evaluated for the output height.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::sphere::ErpGrid;

pub const DEFAULT_SE_RATIO: usize = 16;

/// `cos((v - H/2 + 1/2) π / H)` for row `v` of an image of height `H`.
#[inline]
pub fn latitude_weight(v: usize, height: usize) -> f64 {
    let h = height as f64;
    ((v as f64 - h / 2.0 + 0.5) * PI / h).cos()
}

/// Row weights for an image of the given height.
pub fn latitude_weights(height: usize) -> Vec<f64> {
    (0..height).map(|v| latitude_weight(v, height)).collect()
}

/// Column-constant latitude weights over an ERP grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    grid: ErpGrid,
    rows: Vec<f64>,
}

impl WeightMap {
    pub fn grid(&self) -> &ErpGrid {
        &self.grid
    }

    /// One weight per row.
    pub fn row_weights(&self) -> &[f64] {
        &self.rows
    }

    #[inline]
    pub fn get(&self, _u: usize, v: usize) -> f64 {
        self.rows[v]
    }

    /// Full `H × W` row-major values.
    pub fn values(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|w| std::iter::repeat_n(*w, self.grid.width()))
            .collect()
    }
}

pub fn latitude_weight_map(grid: &ErpGrid) -> WeightMap {
    WeightMap {
        grid: *grid,
        rows: latitude_weights(grid.height()),
    }
}

/// `channels × height × width` feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::config("feature map dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::config(format!(
                "feature data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("feature values must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Learnable parameters of one upsampling block with `C` output channels.
///
/// Matrices are row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaumParams {
    pub channels: usize,
    pub hidden: usize,
    pub se_reduce_w: Vec<f64>,
    pub se_reduce_b: Vec<f64>,
    pub se_expand_w: Vec<f64>,
    pub se_expand_b: Vec<f64>,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
}

/// Width of the squeeze bottleneck for `2C` concatenated channels.
pub fn se_hidden(channels: usize, ratio: usize) -> usize {
    (2 * channels / ratio.max(1)).max(1)
}

impl DaumParams {
    pub fn zeros(channels: usize, ratio: usize) -> Self {
        Self::zeros_with_hidden(channels, se_hidden(channels, ratio))
    }

    pub fn zeros_with_hidden(channels: usize, hidden: usize) -> Self {
        let c2 = 2 * channels;
        Self {
            channels,
            hidden,
            se_reduce_w: vec![0.0; hidden * c2],
            se_reduce_b: vec![0.0; hidden],
            se_expand_w: vec![0.0; c2 * hidden],
            se_expand_b: vec![0.0; c2],
            conv_w: vec![0.0; channels * c2],
            conv_b: vec![0.0; channels],
        }
    }

    /// Deterministic uniform initialisation in `[-0.1, 0.1]`.
    pub fn seeded(channels: usize, ratio: usize, seed: u64) -> Self {
        let mut p = Self::zeros(channels, ratio);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in p.groups_mut().into_iter().flat_map(|(_, g)| g.iter_mut()) {
            *x = rng.random_range(-0.1..=0.1);
        }
        p
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("se_reduce.weight", &self.se_reduce_w),
            ("se_reduce.bias", &self.se_reduce_b),
            ("se_expand.weight", &self.se_expand_w),
            ("se_expand.bias", &self.se_expand_b),
            ("conv1x1.weight", &self.conv_w),
            ("conv1x1.bias", &self.conv_b),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 6] {
        [
            ("se_reduce.weight", &mut self.se_reduce_w),
            ("se_reduce.bias", &mut self.se_reduce_b),
            ("se_expand.weight", &mut self.se_expand_w),
            ("se_expand.bias", &mut self.se_expand_b),
            ("conv1x1.weight", &mut self.conv_w),
            ("conv1x1.bias", &mut self.conv_b),
        ]
    }

    fn shapes(&self) -> [Vec<usize>; 6] {
        let (c, h) = (self.channels, self.hidden);
        [
            vec![h, 2 * c],
            vec![h],
            vec![2 * c, h],
            vec![2 * c],
            vec![c, 2 * c],
            vec![c],
        ]
    }

    fn validate(&self) -> Result<()> {
        for ((name, g), shape) in self.groups().iter().zip(self.shapes()) {
            if g.len() != shape.iter().product::<usize>() {
                return Err(Error::config(format!("parameter {name} has wrong size")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Serialises to a safetensors container (JSON header + little-endian f32).
    pub fn to_safetensors(&self) -> Result<Vec<u8>> {
        let shapes = self.shapes();
        let bytes: Vec<Vec<u8>> = self
            .groups()
            .iter()
            .map(|(_, g)| g.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect())
            .collect();
        let mut views = Vec::with_capacity(6);
        for (((name, _), shape), b) in self.groups().iter().zip(shapes).zip(&bytes) {
            let view = TensorView::new(Dtype::F32, shape, b)
                .map_err(|e| Error::config(format!("tensor {name}: {e}")))?;
            views.push((*name, view));
        }
        let meta = HashMap::from([
            ("channels".to_string(), self.channels.to_string()),
            ("hidden".to_string(), self.hidden.to_string()),
        ]);
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_safetensors(buf: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::config(format!("invalid parameter container: {m}"));
        let (_, meta) = SafeTensors::read_metadata(buf).map_err(|e| bad(e.to_string()))?;
        let st = SafeTensors::deserialize(buf).map_err(|e| bad(e.to_string()))?;
        let md = meta.metadata().clone().unwrap_or_default();
        let num = |k: &str| -> Result<usize> {
            md.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("missing metadata {k}")))
        };
        let mut p = Self::zeros_with_hidden(num("channels")?, num("hidden")?);
        let shapes = p.shapes();
        for ((name, g), shape) in p.groups_mut().into_iter().zip(shapes) {
            let t = st.tensor(name).map_err(|e| bad(format!("{name}: {e}")))?;
            if t.dtype() != Dtype::F32 || t.shape() != shape.as_slice() {
                return Err(bad(format!("{name}: unexpected dtype or shape")));
            }
            *g = t
                .data()
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
        }
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_safetensors()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::input(path, e))?;
        Self::from_safetensors(&buf)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Intermediate values of the squeeze-and-excitation gate.
struct SeTrace {
    pooled: Vec<f64>,
    pre_relu: Vec<f64>,
    hidden: Vec<f64>,
    gate: Vec<f64>,
}

fn se_gate(x: &FeatureMap, p: &DaumParams) -> SeTrace {
    let c2 = x.channels;
    let n = (x.height * x.width) as f64;
    let pooled: Vec<f64> = (0..c2)
        .map(|c| x.plane(c).iter().sum::<f64>() / n)
        .collect();
    let pre_relu: Vec<f64> = (0..p.hidden)
        .map(|j| {
            p.se_reduce_b[j]
                + (0..c2)
                    .map(|k| p.se_reduce_w[j * c2 + k] * pooled[k])
                    .sum::<f64>()
        })
        .collect();
    let hidden: Vec<f64> = pre_relu.iter().map(|r| r.max(0.0)).collect();
    let gate = (0..c2)
        .map(|k| {
            sigmoid(
                p.se_expand_b[k]
                    + (0..p.hidden)
                        .map(|j| p.se_expand_w[k * p.hidden + j] * hidden[j])
                        .sum::<f64>(),
            )
        })
        .collect();
    SeTrace {
        pooled,
        pre_relu,
        hidden,
        gate,
    }
}

/// Squeeze-and-excitation over a `2C`-channel feature map.
pub fn se_block(features: &FeatureMap, params: &DaumParams) -> Result<FeatureMap> {
    params.validate()?;
    if features.channels != 2 * params.channels {
        return Err(Error::config(format!(
            "SE block expects {} channels, got {}",
            2 * params.channels,
            features.channels
        )));
    }
    let trace = se_gate(features, params);
    let mut out = features.clone();
    let n = features.height * features.width;
    for (c, s) in trace.gate.iter().enumerate() {
        out.data[c * n..(c + 1) * n]
            .iter_mut()
            .for_each(|x| *x *= s);
    }
    Ok(out)
}

struct DaumTrace {
    concat: FeatureMap,
    se: SeTrace,
    gated: FeatureMap,
    pre_act: FeatureMap,
    out: FeatureMap,
    weights: Vec<f64>,
}

fn check_daum_input(features: &FeatureMap, params: &DaumParams) -> Result<()> {
    params.validate()?;
    if features.channels != params.channels {
        return Err(Error::config(format!(
            "DAUM parameters are for {} channels, features have {}",
            params.channels, features.channels
        )));
    }
    Ok(())
}

fn daum_trace(features: &FeatureMap, params: &DaumParams) -> DaumTrace {
    let (c, h, w) = (features.channels, features.height, features.width);
    let (oh, ow) = (2 * h, 2 * w);
    let weights = latitude_weights(oh);
    let mut concat = FeatureMap::zeros(2 * c, oh, ow);
    let on = oh * ow;
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let val = features.get(ch, y / 2, x / 2);
                concat.data[ch * on + y * ow + x] = val;
                concat.data[(c + ch) * on + y * ow + x] = val * weights[y];
            }
        }
    }
    let se = se_gate(&concat, params);
    let mut gated = concat.clone();
    for (k, s) in se.gate.iter().enumerate() {
        gated.data[k * on..(k + 1) * on]
            .iter_mut()
            .for_each(|x| *x *= s);
    }
    let mut pre_act = FeatureMap::zeros(c, oh, ow);
    for o in 0..c {
        let dst = &mut pre_act.data[o * on..(o + 1) * on];
        dst.fill(params.conv_b[o]);
        for k in 0..2 * c {
            let wk = params.conv_w[o * 2 * c + k];
            for (d, g) in dst.iter_mut().zip(gated.plane(k)) {
                *d += wk * g;
            }
        }
    }
    let mut out = pre_act.clone();
    out.data.iter_mut().for_each(|x| *x = elu(*x));
    DaumTrace {
        concat,
        se,
        gated,
        pre_act,
        out,
        weights,
    }
}

/// `C × h × w` → `C × 2h × 2w`.
pub fn daum_forward(features: &FeatureMap, params: &DaumParams) -> Result<FeatureMap> {
    check_daum_input(features, params)?;
    Ok(daum_trace(features, params).out)
}

/// Gradients of a scalar loss with respect to the block's input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DaumGradients {
    pub features: FeatureMap,
    pub params: DaumParams,
}

pub fn daum_backward(
    features: &FeatureMap,
    params: &DaumParams,
    upstream: &FeatureMap,
) -> Result<DaumGradients> {
    check_daum_input(features, params)?;
    let (c, h, w) = (features.channels, features.height, features.width);
    let (oh, ow) = (2 * h, 2 * w);
    if upstream.channels != c || upstream.height != oh || upstream.width != ow {
        return Err(Error::config(format!(
            "upstream gradient must be {c}x{oh}x{ow}, got {}x{}x{}",
            upstream.channels, upstream.height, upstream.width
        )));
    }
    let t = daum_trace(features, params);
    let on = oh * ow;
    let c2 = 2 * c;
    let mut g = DaumParams::zeros_with_hidden(c, params.hidden);

    // ELU
    let d_pre: Vec<f64> = upstream
        .data
        .iter()
        .zip(&t.pre_act.data)
        .map(|(u, x)| u * elu_grad(*x))
        .collect();

    // 1×1 convolution
    let mut d_gated = vec![0.0; c2 * on];
    for o in 0..c {
        let dp = &d_pre[o * on..(o + 1) * on];
        g.conv_b[o] = dp.iter().sum();
        for k in 0..c2 {
            g.conv_w[o * c2 + k] = dp.iter().zip(t.gated.plane(k)).map(|(a, b)| a * b).sum();
            let wk = params.conv_w[o * c2 + k];
            for (d, a) in d_gated[k * on..(k + 1) * on].iter_mut().zip(dp) {
                *d += wk * a;
            }
        }
    }

    // channel gate
    let mut d_concat = vec![0.0; c2 * on];
    let mut d_gate = vec![0.0; c2];
    for k in 0..c2 {
        let s = t.se.gate[k];
        let dg = &d_gated[k * on..(k + 1) * on];
        d_gate[k] = dg.iter().zip(t.concat.plane(k)).map(|(a, b)| a * b).sum();
        for (d, a) in d_concat[k * on..(k + 1) * on].iter_mut().zip(dg) {
            *d = a * s;
        }
    }
    let d_exc: Vec<f64> = d_gate
        .iter()
        .zip(&t.se.gate)
        .map(|(d, s)| d * s * (1.0 - s))
        .collect();
    let hd = params.hidden;
    let mut d_hidden = vec![0.0; hd];
    for k in 0..c2 {
        g.se_expand_b[k] = d_exc[k];
        for j in 0..hd {
            g.se_expand_w[k * hd + j] = d_exc[k] * t.se.hidden[j];
            d_hidden[j] += params.se_expand_w[k * hd + j] * d_exc[k];
        }
    }
    let d_pre_relu: Vec<f64> = d_hidden
        .iter()
        .zip(&t.se.pre_relu)
        .map(|(d, r)| if *r > 0.0 { *d } else { 0.0 })
        .collect();
    let mut d_pooled = vec![0.0; c2];
    for j in 0..hd {
        g.se_reduce_b[j] = d_pre_relu[j];
        for k in 0..c2 {
            g.se_reduce_w[j * c2 + k] = d_pre_relu[j] * t.se.pooled[k];
            d_pooled[k] += params.se_reduce_w[j * c2 + k] * d_pre_relu[j];
        }
    }
    for k in 0..c2 {
        let add = d_pooled[k] / on as f64;
        d_concat[k * on..(k + 1) * on]
            .iter_mut()
            .for_each(|d| *d += add);
    }

    // concat + nearest upsample
    let mut d_feat = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let i = y * ow + x;
                let d = d_concat[ch * on + i] + d_concat[(c + ch) * on + i] * t.weights[y];
                d_feat.data[(ch * h + y / 2) * w + x / 2] += d;
            }
        }
    }
    Ok(DaumGradients {
        features: d_feat,
        params: g,
    })
}
