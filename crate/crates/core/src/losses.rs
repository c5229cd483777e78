//! Photometric and smoothness losses, the weighted loss combiner and the
//! sigmoid → depth mapping.
//!
//! All spatial operators treat the ERP seam as continuous (horizontal wrap)
//! and use reflection (SSIM) or one-sided differences (smoothness) at the
//! pole rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ErpImage, Raster};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_ALPHA: f64 = 0.85;
pub const DEFAULT_LAMBDA_SM: f64 = 1e-3;

/// `D = 1 / (a σ + b)`, chosen so that `σ ∈ [0, 1]` spans `[d_min, d_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMapping {
    pub a: f64,
    pub b: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for DepthMapping {
    fn default() -> Self {
        Self::from_range(0.1, 100.0).expect("valid default range")
    }
}

impl DepthMapping {
    pub fn from_range(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min > 0.0 && d_max > d_min && d_max.is_finite()) {
            return Err(Error::config(format!(
                "depth range must satisfy 0 < d_min < d_max, got [{d_min}, {d_max}]"
            )));
        }
        let b = 1.0 / d_max;
        let a = 1.0 / d_min - b;
        Ok(Self { a, b, d_min, d_max })
    }

    /// Disparity `a σ + b`.
    #[inline]
    pub fn disparity(&self, sigma: f64) -> f64 {
        self.a * sigma + self.b
    }

    /// Inverse of the mapping; `None` outside `[d_min, d_max]`.
    pub fn depth_to_sigma(&self, depth: f64) -> Option<f64> {
        let s = (1.0 / depth - self.b) / self.a;
        (0.0..=1.0).contains(&s).then_some(s)
    }
}

pub fn sigmoid_to_depth(sigma: f64, mapping: &DepthMapping) -> Result<f64> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::domain(format!(
            "sigmoid output {sigma} outside [0, 1]"
        )));
    }
    Ok(1.0 / mapping.disparity(sigma))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

/// Weights of the combined objective
/// `L = L_rec + λ_pose L_pose + λ_sm L_sm + λ_exp L_exp`, plus the SSIM/L1 mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_pose: f64,
    pub lambda_sm: f64,
    pub lambda_exp: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pose: 0.0,
            lambda_sm: DEFAULT_LAMBDA_SM,
            lambda_exp: 0.0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_pose, self.lambda_sm, self.lambda_exp];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn combine_losses(l_rec: f64, l_pose: f64, l_sm: f64, l_exp: f64, w: &LossWeights) -> f64 {
    l_rec + w.lambda_pose * l_pose + w.lambda_sm * l_sm + w.lambda_exp * l_exp
}

// ---------------------------------------------------------------------------
// 3×3 box filter: wrap horizontally, reflect vertically.

#[inline]
fn reflect_row(i: isize, height: usize) -> usize {
    let h = height as isize;
    if h == 1 {
        0
    } else if i < 0 {
        (-i) as usize
    } else if i >= h {
        (2 * h - 2 - i) as usize
    } else {
        i as usize
    }
}

/// Sum over the 3×3 neighbourhood (not normalised).
fn box3(src: &[f64], height: usize, width: usize, out: &mut [f64], tmp: &mut [f64]) {
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let t = &mut tmp[y * width..(y + 1) * width];
        for x in 0..width {
            let l = if x == 0 { width - 1 } else { x - 1 };
            let r = if x + 1 == width { 0 } else { x + 1 };
            t[x] = row[l] + row[x] + row[r];
        }
    }
    for y in 0..height {
        let up = reflect_row(y as isize - 1, height);
        let dn = reflect_row(y as isize + 1, height);
        for x in 0..width {
            out[y * width + x] = tmp[up * width + x] + tmp[y * width + x] + tmp[dn * width + x];
        }
    }
}

/// Adjoint of [`box3`].
fn box3_adjoint(src: &[f64], height: usize, width: usize, out: &mut [f64], tmp: &mut [f64]) {
    tmp.fill(0.0);
    for y in 0..height {
        let up = reflect_row(y as isize - 1, height);
        let dn = reflect_row(y as isize + 1, height);
        for x in 0..width {
            let g = src[y * width + x];
            tmp[up * width + x] += g;
            tmp[y * width + x] += g;
            tmp[dn * width + x] += g;
        }
    }
    out.fill(0.0);
    for y in 0..height {
        let t = &tmp[y * width..(y + 1) * width];
        let o = &mut out[y * width..(y + 1) * width];
        for x in 0..width {
            let l = if x == 0 { width - 1 } else { x - 1 };
            let r = if x + 1 == width { 0 } else { x + 1 };
            o[l] += t[x];
            o[x] += t[x];
            o[r] += t[x];
        }
    }
}

fn to_planar(data: &[f64], n: usize, channels: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|c| (0..n).map(|i| data[i * channels + c]).collect())
        .collect()
}

/// Reference-image statistics reused across SSIM evaluations.
#[derive(Debug, Clone)]
pub(crate) struct SsimReference {
    height: usize,
    width: usize,
    channels: usize,
    planes: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

/// Forward quantities needed by the SSIM adjoint.
pub(crate) struct SsimCache {
    planes: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    sq: Vec<Vec<f64>>,
    cross: Vec<Vec<f64>>,
    /// SSIM map per channel.
    pub ssim: Vec<Vec<f64>>,
}

impl SsimReference {
    pub fn new(data: &[f64], height: usize, width: usize, channels: usize) -> Self {
        let n = height * width;
        let planes = to_planar(data, n, channels);
        let mut tmp = vec![0.0; n];
        let mut mu = Vec::with_capacity(channels);
        let mut var = Vec::with_capacity(channels);
        for p in &planes {
            let mut m = vec![0.0; n];
            box3(p, height, width, &mut m, &mut tmp);
            m.iter_mut().for_each(|x| *x /= 9.0);
            let sq: Vec<f64> = p.iter().map(|x| x * x).collect();
            let mut s = vec![0.0; n];
            box3(&sq, height, width, &mut s, &mut tmp);
            s.iter_mut()
                .zip(&m)
                .for_each(|(s, m)| *s = *s / 9.0 - m * m);
            mu.push(m);
            var.push(s);
        }
        Self {
            height,
            width,
            channels,
            planes,
            mu,
            var,
        }
    }

    /// SSIM of an interleaved image `x` against the reference.
    pub fn forward(&self, x: &[f64]) -> SsimCache {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let planes = to_planar(x, n, self.channels);
        let mut tmp = vec![0.0; n];
        let mut cache = SsimCache {
            planes: Vec::new(),
            mu: Vec::new(),
            sq: Vec::new(),
            cross: Vec::new(),
            ssim: Vec::new(),
        };
        for (c, p) in planes.iter().enumerate() {
            let y = &self.planes[c];
            let mut mu = vec![0.0; n];
            box3(p, h, w, &mut mu, &mut tmp);
            let prod: Vec<f64> = p.iter().map(|a| a * a).collect();
            let mut sq = vec![0.0; n];
            box3(&prod, h, w, &mut sq, &mut tmp);
            let prod: Vec<f64> = p.iter().zip(y).map(|(a, b)| a * b).collect();
            let mut cross = vec![0.0; n];
            box3(&prod, h, w, &mut cross, &mut tmp);
            let mut ssim = vec![0.0; n];
            for i in 0..n {
                mu[i] /= 9.0;
                sq[i] /= 9.0;
                cross[i] /= 9.0;
                let (mx, my) = (mu[i], self.mu[c][i]);
                let sx = sq[i] - mx * mx;
                let sxy = cross[i] - mx * my;
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (sx + self.var[c][i] + SSIM_C2);
                ssim[i] = num / den;
            }
            cache.mu.push(mu);
            cache.sq.push(sq);
            cache.cross.push(cross);
            cache.ssim.push(ssim);
        }
        cache.planes = planes;
        cache
    }

    /// Accumulates `Σ_q upstream[c][q] ∂SSIM_c(q)/∂x` into the interleaved
    /// gradient `grad`.
    pub fn backward(&self, cache: &SsimCache, upstream: &[Vec<f64>], grad: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let ch = self.channels;
        let mut tmp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; n];
        let mut am = vec![0.0; n];
        let mut aa = vec![0.0; n];
        let mut ab = vec![0.0; n];
        for c in 0..ch {
            let up = &upstream[c];
            for i in 0..n {
                let g = up[i];
                if g == 0.0 {
                    gm[i] = 0.0;
                    ga[i] = 0.0;
                    gb[i] = 0.0;
                    continue;
                }
                let (mx, my) = (cache.mu[c][i], self.mu[c][i]);
                let sx = cache.sq[c][i] - mx * mx;
                let sxy = cache.cross[c][i] - mx * my;
                let n1 = 2.0 * mx * my + SSIM_C1;
                let n2 = 2.0 * sxy + SSIM_C2;
                let d1 = mx * mx + my * my + SSIM_C1;
                let d2 = sx + self.var[c][i] + SSIM_C2;
                let den = d1 * d2;
                let s = n1 * n2 / den;
                // derivatives w.r.t. the local mean, mean of squares and cross mean
                gm[i] = g * (2.0 * my * (n2 - n1) / den - s * 2.0 * mx * (d2 - d1) / den) / 9.0;
                ga[i] = g * (-s / d2) / 9.0;
                gb[i] = g * (2.0 * n1 / den) / 9.0;
            }
            box3_adjoint(&gm, h, w, &mut am, &mut tmp);
            box3_adjoint(&ga, h, w, &mut aa, &mut tmp);
            box3_adjoint(&gb, h, w, &mut ab, &mut tmp);
            let x = &cache.planes[c];
            let y = &self.planes[c];
            for i in 0..n {
                grad[i * ch + c] += am[i] + 2.0 * x[i] * aa[i] + y[i] * ab[i];
            }
        }
    }
}

fn check_same(a: &ErpImage, b: &ErpImage) -> Result<()> {
    if a.grid() != b.grid() || a.channels() != b.channels() {
        return Err(Error::config("images differ in size or channel count"));
    }
    Ok(())
}

/// Per-pixel, per-channel SSIM over 3×3 windows.
pub fn ssim(x: &ErpImage, y: &ErpImage) -> Result<Raster> {
    check_same(x, y)?;
    let g = x.grid();
    let (h, w, c) = (g.height(), g.width(), x.channels());
    let reference = SsimReference::new(y.data(), h, w, c);
    let cache = reference.forward(x.data());
    let mut out = vec![0.0; h * w * c];
    for (ch, plane) in cache.ssim.iter().enumerate() {
        for (i, s) in plane.iter().enumerate() {
            out[i * c + ch] = *s;
        }
    }
    Raster::new(h, w, c, out)
}

/// Photometric error against a fixed target, with its adjoint.
#[derive(Debug, Clone)]
pub(crate) struct PhotometricTarget {
    pub reference: SsimReference,
    pub alpha: f64,
}

pub(crate) struct PhotometricEval {
    /// Channel-averaged error per pixel.
    pub error: Vec<f64>,
    cache: Option<SsimCache>,
}

impl PhotometricTarget {
    pub fn new(target: &[f64], height: usize, width: usize, channels: usize, alpha: f64) -> Self {
        Self {
            reference: SsimReference::new(target, height, width, channels),
            alpha,
        }
    }

    fn target_value(&self, i: usize, c: usize) -> f64 {
        self.reference.planes[c][i]
    }

    pub fn forward(&self, pred: &[f64]) -> PhotometricEval {
        let ch = self.reference.channels;
        let n = self.reference.height * self.reference.width;
        let (a, inv_c) = (self.alpha, 1.0 / ch as f64);
        let cache = (a > 0.0).then(|| self.reference.forward(pred));
        let error = (0..n)
            .map(|i| {
                let mut e = 0.0;
                for c in 0..ch {
                    let l1 = (pred[i * ch + c] - self.target_value(i, c)).abs();
                    let s = cache.as_ref().map_or(1.0, |k| k.ssim[c][i]);
                    e += 0.5 * a * (1.0 - s) + (1.0 - a) * l1;
                }
                e * inv_c
            })
            .collect();
        PhotometricEval { error, cache }
    }

    /// Gradient of `Σ_p upstream[p] error[p]` with respect to `pred`.
    pub fn backward(&self, pred: &[f64], eval: &PhotometricEval, upstream: &[f64]) -> Vec<f64> {
        let ch = self.reference.channels;
        let n = self.reference.height * self.reference.width;
        let inv_c = 1.0 / ch as f64;
        let mut grad = vec![0.0; n * ch];
        let l1w = (1.0 - self.alpha) * inv_c;
        for i in 0..n {
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            for c in 0..ch {
                let d = pred[i * ch + c] - self.target_value(i, c);
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[i * ch + c] = g * l1w * sign;
            }
        }
        if let Some(cache) = &eval.cache {
            let k = -0.5 * self.alpha * inv_c;
            let up: Vec<Vec<f64>> = (0..ch)
                .map(|_| upstream.iter().map(|g| g * k).collect())
                .collect();
            self.reference.backward(cache, &up, &mut grad);
        }
        grad
    }
}

/// `(α/2)(1 - SSIM) + (1 - α)|pred - target|`, averaged over channels.
pub fn photometric_error(pred: &ErpImage, target: &ErpImage, alpha: f64) -> Result<Raster> {
    check_same(pred, target)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha must lie in [0, 1]"));
    }
    let g = target.grid();
    let t = PhotometricTarget::new(
        target.data(),
        g.height(),
        g.width(),
        target.channels(),
        alpha,
    );
    Raster::new(g.height(), g.width(), 1, t.forward(pred.data()).error)
}

/// Mean photometric error and its gradient with respect to `pred`.
pub fn photometric_loss_grad(
    pred: &ErpImage,
    target: &ErpImage,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    check_same(pred, target)?;
    let g = target.grid();
    let t = PhotometricTarget::new(
        target.data(),
        g.height(),
        g.width(),
        target.channels(),
        alpha,
    );
    let eval = t.forward(pred.data());
    let n = eval.error.len() as f64;
    let loss = eval.error.iter().sum::<f64>() / n;
    let upstream = vec![1.0 / n; eval.error.len()];
    Ok((loss, t.backward(pred.data(), &eval, &upstream)))
}

/// Per-pixel minimum over sources and the automask.
///
/// The mask is true where the best reprojection error is strictly below the
/// best identity (unwarped) error. An empty identity list behaves as `+∞`.
pub fn min_reprojection_with_automask(
    errors_per_source: &[Raster],
    identity_errors: &[Raster],
) -> Result<(Raster, Vec<bool>)> {
    let first = errors_per_source
        .first()
        .ok_or_else(|| Error::config("at least one source error map is required"))?;
    if errors_per_source
        .iter()
        .chain(identity_errors)
        .any(|r| !r.same_shape(first) || r.channels() != 1)
    {
        return Err(Error::config(
            "error maps must be single-channel and equally sized",
        ));
    }
    let n = first.data().len();
    let mut combined = first.data().to_vec();
    for r in &errors_per_source[1..] {
        for (c, e) in combined.iter_mut().zip(r.data()) {
            *c = c.min(*e);
        }
    }
    let mask = (0..n)
        .map(|i| {
            let id = identity_errors
                .iter()
                .map(|r| r.data()[i])
                .fold(f64::INFINITY, f64::min);
            combined[i] < id
        })
        .collect();
    Ok((
        Raster::new(first.height(), first.width(), 1, combined)?,
        mask,
    ))
}

/// Edge-aware weights `exp(-|∂I|)` of a guide image.
#[derive(Debug, Clone)]
pub(crate) struct SmoothnessWeights {
    height: usize,
    width: usize,
    /// `exp(-|I(u+1) - I(u)|)`, wrapping; `H × W`.
    wx: Vec<f64>,
    /// `exp(-|I(v+1) - I(v)|)`; `(H-1) × W`.
    wy: Vec<f64>,
}

impl SmoothnessWeights {
    pub fn new(image: &[f64], height: usize, width: usize, channels: usize) -> Self {
        let px =
            |u: usize, v: usize| &image[(v * width + u) * channels..(v * width + u + 1) * channels];
        let diff = |a: &[f64], b: &[f64]| {
            (-(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / channels as f64)).exp()
        };
        let mut wx = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                wx.push(diff(px((u + 1) % width, v), px(u, v)));
            }
        }
        let mut wy = Vec::with_capacity(height.saturating_sub(1) * width);
        for v in 0..height.saturating_sub(1) {
            for u in 0..width {
                wy.push(diff(px(u, v + 1), px(u, v)));
            }
        }
        Self {
            height,
            width,
            wx,
            wy,
        }
    }

    /// Loss on mean-normalised disparity, and optionally its gradient.
    pub fn eval(&self, disp: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let mean = disp.iter().sum::<f64>() / n as f64;
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::domain(
                "disparity mean must be positive for smoothness",
            ));
        }
        let nx = n as f64;
        let ny = ((h.saturating_sub(1)) * w) as f64;
        let mut lx = 0.0;
        let mut ly = 0.0;
        let mut gstar = want_grad.then(|| vec![0.0; n]);
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                let r = v * w + (u + 1) % w;
                let d = (disp[r] - disp[i]) / mean;
                lx += d.abs() * self.wx[i];
                if let Some(g) = gstar.as_mut() {
                    let s = d.signum() * f64::from(d != 0.0) * self.wx[i] / nx;
                    g[r] += s;
                    g[i] -= s;
                }
            }
        }
        for v in 0..h.saturating_sub(1) {
            for u in 0..w {
                let i = v * w + u;
                let dn = i + w;
                let d = (disp[dn] - disp[i]) / mean;
                ly += d.abs() * self.wy[i];
                if let Some(g) = gstar.as_mut() {
                    let s = d.signum() * f64::from(d != 0.0) * self.wy[i] / ny;
                    g[dn] += s;
                    g[i] -= s;
                }
            }
        }
        let loss = lx / nx + if ny > 0.0 { ly / ny } else { 0.0 };
        let grad = gstar.map(|g| {
            // d* = d / mean(d)
            let dot: f64 = g.iter().zip(disp).map(|(a, b)| a * b).sum();
            let k = dot / (mean * mean * nx);
            g.iter().map(|gi| gi / mean - k).collect()
        });
        Ok((loss, grad))
    }
}

fn check_disparity(disparity: &Raster, image: &ErpImage) -> Result<()> {
    let g = image.grid();
    if disparity.height() != g.height()
        || disparity.width() != g.width()
        || disparity.channels() != 1
    {
        return Err(Error::config(
            "disparity must be a single-channel map on the image grid",
        ));
    }
    Ok(())
}

/// Edge-aware smoothness of mean-normalised disparity.
pub fn smoothness_loss(disparity: &Raster, image: &ErpImage) -> Result<f64> {
    smoothness_loss_grad(disparity, image, false).map(|(l, _)| l)
}

/// Smoothness loss and, when requested, its gradient with respect to the disparity.
pub fn smoothness_loss_grad(
    disparity: &Raster,
    image: &ErpImage,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_disparity(disparity, image)?;
    let g = image.grid();
    SmoothnessWeights::new(image.data(), g.height(), g.width(), image.channels())
        .eval(disparity.data(), want_grad)
}
