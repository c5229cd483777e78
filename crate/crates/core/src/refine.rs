//! Joint depth/pose refinement by gradient descent on the multi-scale
//! photometric + smoothness objective.
//!
//! Depth is optimised through per-pixel logits `x`: `σ = sigmoid(x)`,
//! disparity `aσ + b`, depth `1 / (aσ + b)`, so every iterate stays inside
//! the configured depth range. Pyramid level `s` compares views and
//! disparity average-pooled over `2^s × 2^s` blocks; the objective is the
//! mean over levels.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    logit, sigmoid, DepthMapping, PhotometricEval, PhotometricTarget, SmoothnessWeights,
    DEFAULT_ALPHA,
};
use crate::metrics::{compute_metrics, DepthMetrics, EvalConfig};
use crate::pose::{so3_left_jacobian, Pose, PoseParams};
use crate::raster::{DepthMap, ErpImage};
use crate::reprojection::{pixel_jacobian, row_in_bounds, Stencil};
use crate::sphere::{angles_to_pixel, direction_of, pixel_rays, ErpGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutomaskMode {
    /// Applied only with two or more sources.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Depth step. The logit update is `step_size · N · ∂L/∂x` for `N` pixels,
    /// which keeps the step independent of resolution.
    pub step_size: f64,
    /// Step for the 6 pose parameters of every source.
    pub pose_step_size: f64,
    pub optimize_pose: bool,
    pub lambda_sm: f64,
    pub alpha: f64,
    /// Pyramid levels; level `s` pools disparity over `2^s` pixel blocks.
    pub scales: Vec<u32>,
    pub gradient_mode: GradientMode,
    pub automask: AutomaskMode,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Factor applied to the step after an accepted iteration, capped at the
    /// configured step.
    pub step_growth: f64,
    pub max_halvings: u32,
    /// Central-difference step for [`GradientMode::FiniteDifference`].
    pub fd_step: f64,
    pub eval: EvalConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            step_size: 2.0,
            pose_step_size: 1e-3,
            optimize_pose: false,
            lambda_sm: 0.01,
            alpha: DEFAULT_ALPHA,
            scales: vec![0, 1, 2, 3, 4],
            gradient_mode: GradientMode::Analytic,
            automask: AutomaskMode::Auto,
            min_depth: 0.1,
            max_depth: 100.0,
            step_growth: 2.0,
            max_halvings: 30,
            fd_step: 1e-5,
            eval: EvalConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size must be positive"));
        }
        if !(self.pose_step_size >= 0.0) {
            return Err(Error::config("pose_step_size must be nonnegative"));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| *s > 10) {
            return Err(Error::config(
                "scales must be a nonempty list of levels in 0..=10",
            ));
        }
        if !(self.lambda_sm >= 0.0 && self.lambda_sm.is_finite()) {
            return Err(Error::config("lambda_sm must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 1]"));
        }
        if !(self.step_growth >= 1.0) {
            return Err(Error::config("step_growth must be at least 1"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::config("fd_step must be positive"));
        }
        self.mapping()?;
        self.eval.validate()
    }

    pub fn mapping(&self) -> Result<DepthMapping> {
        DepthMapping::from_range(self.min_depth, self.max_depth)
    }
}

/// Logits whose mapped depth equals `depth`, clamped into the open range.
pub fn depth_to_params(depth: &[f64], mapping: &DepthMapping) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    depth
        .iter()
        .map(|d| {
            let s = (1.0 / d - mapping.b) / mapping.a;
            logit(s.clamp(EPS, 1.0 - EPS))
        })
        .collect()
}

pub fn params_to_depth(params: &[f64], mapping: &DepthMapping) -> Vec<f64> {
    params
        .iter()
        .map(|x| 1.0 / mapping.disparity(sigmoid(*x)))
        .collect()
}

/// Mean over `f × f` blocks of an interleaved `h × w × c` raster.
fn pool(data: &[f64], height: usize, width: usize, channels: usize, f: usize) -> Vec<f64> {
    if f == 1 {
        return data.to_vec();
    }
    let (ch, cw) = (height / f, width / f);
    let mut out = vec![0.0; ch * cw * channels];
    for v in 0..height {
        let orow = &mut out[(v / f) * cw * channels..(v / f + 1) * cw * channels];
        for u in 0..width {
            let src = &data[(v * width + u) * channels..(v * width + u + 1) * channels];
            for (o, s) in orow[(u / f) * channels..(u / f + 1) * channels]
                .iter_mut()
                .zip(src)
            {
                *o += s;
            }
        }
    }
    let inv = 1.0 / (f * f) as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    out
}

/// Adjoint of [`pool`] for a single channel.
fn pool_adjoint(g: &[f64], height: usize, width: usize, f: usize) -> Vec<f64> {
    if f == 1 {
        return g.to_vec();
    }
    let cw = width / f;
    let inv = 1.0 / (f * f) as f64;
    (0..height * width)
        .map(|i| g[(i / width / f) * cw + (i % width) / f] * inv)
        .collect()
}

/// One pyramid level: views pooled by `factor` and their precomputed terms.
#[derive(Debug, Clone)]
struct Level {
    factor: usize,
    smooth_weight: f64,
    grid: ErpGrid,
    sources: Vec<ErpImage>,
    photometric: PhotometricTarget,
    smoothness: SmoothnessWeights,
    identity_error: Vec<f64>,
    rays: Vec<Vector3<f64>>,
}

impl Level {
    fn new(level: u32, target: &ErpImage, sources: &[ErpImage], alpha: f64) -> Result<Self> {
        let full = *target.grid();
        let f = 1usize << level;
        if full.height() % f != 0 {
            return Err(Error::config(format!(
                "scale level {level} needs the grid height {} to be divisible by {f}",
                full.height()
            )));
        }
        let grid = ErpGrid::with_height(full.height() / f)?;
        let c = target.channels();
        let down = |img: &ErpImage| {
            ErpImage::new(grid, c, pool(img.data(), full.height(), full.width(), c, f))
        };
        let target = down(target)?;
        let sources = sources.iter().map(down).collect::<Result<Vec<_>>>()?;
        let (h, w) = (grid.height(), grid.width());
        let photometric = PhotometricTarget::new(target.data(), h, w, c, alpha);
        let identity_error = sources
            .iter()
            .map(|s| photometric.forward(s.data()).error)
            .fold(vec![f64::INFINITY; grid.len()], |acc, e| {
                acc.iter().zip(&e).map(|(a, b)| a.min(*b)).collect()
            });
        Ok(Self {
            factor: f,
            smooth_weight: 1.0 / f as f64,
            grid,
            photometric,
            smoothness: SmoothnessWeights::new(target.data(), h, w, c),
            identity_error,
            rays: pixel_rays(&grid),
            sources,
        })
    }

    fn warp(&self, k: usize, depth: &[f64], pose: &Pose) -> Warp {
        let (h, w) = (self.grid.height(), self.grid.width());
        let source = &self.sources[k];
        let c = source.channels();
        let n = self.grid.len();
        let mut recon = vec![0.0; n * c];
        let mut valid = vec![false; n];
        let mut stencils = vec![Stencil::new(0.0, 0.0, h, w); n];
        let mut moved = vec![Vector3::zeros(); n];
        let data = source.data();
        recon
            .par_chunks_mut(w * c)
            .zip(valid.par_chunks_mut(w))
            .zip(stencils.par_chunks_mut(w))
            .zip(moved.par_chunks_mut(w))
            .enumerate()
            .for_each(|(v, (((rrow, vrow), srow), mrow))| {
                for u in 0..w {
                    let i = v * w + u;
                    let p = pose.transform_point(&(self.rays[i] * depth[i]));
                    mrow[u] = p;
                    if !(p.norm() > 0.0 && p.iter().all(|x| x.is_finite())) {
                        continue;
                    }
                    let (su, sv) = angles_to_pixel(&direction_of(&p), &self.grid);
                    if !row_in_bounds(sv, h) {
                        continue;
                    }
                    let s = Stencil::new(su, sv, h, w);
                    for ch in 0..c {
                        rrow[u * c + ch] = s.sample(data, w, c, ch);
                    }
                    srow[u] = s;
                    vrow[u] = true;
                }
            });
        Warp {
            recon,
            valid,
            stencils,
            moved,
        }
    }

    /// Chains `∂L/∂recon` through bilinear sampling and the projection into
    /// `∂L/∂depth` (accumulated) and the raw pose terms `(Σ q × g, Σ g)`.
    fn backprop_warp(
        &self,
        k: usize,
        wp: &Warp,
        g_recon: &[f64],
        pose: &Pose,
        g_depth: &mut [f64],
    ) -> (Vector3<f64>, Vector3<f64>) {
        let w = self.grid.width();
        let data = self.sources[k].data();
        let c = self.sources[k].channels();
        let r = *pose.rotation();
        let t = *pose.translation();
        g_depth
            .par_chunks_mut(w)
            .enumerate()
            .map(|(v, grow)| {
                let mut acc = (Vector3::zeros(), Vector3::zeros());
                for u in 0..w {
                    let i = v * w + u;
                    if !wp.valid[i] {
                        continue;
                    }
                    let s = &wp.stencils[i];
                    let (mut gu, mut gv) = (0.0, 0.0);
                    for ch in 0..c {
                        let g = g_recon[i * c + ch];
                        if g != 0.0 {
                            let (_, du, dv) = s.sample_with_grad(data, w, c, ch);
                            gu += g * du;
                            gv += g * dv;
                        }
                    }
                    if gu == 0.0 && gv == 0.0 {
                        continue;
                    }
                    let p = wp.moved[i];
                    let j = pixel_jacobian(&p, &self.grid);
                    let gp = Vector3::new(
                        gu * j[0][0] + gv * j[1][0],
                        gu * j[0][1] + gv * j[1][1],
                        gu * j[0][2] + gv * j[1][2],
                    );
                    grow[u] += gp.dot(&(r * self.rays[i]));
                    acc.0 += (p - t).cross(&gp);
                    acc.1 += gp;
                }
                acc
            })
            .reduce(
                || (Vector3::zeros(), Vector3::zeros()),
                |a, b| (a.0 + b.0, a.1 + b.1),
            )
    }
}

struct Warp {
    recon: Vec<f64>,
    valid: Vec<bool>,
    stencils: Vec<Stencil>,
    moved: Vec<Vector3<f64>>,
}

/// Per-evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    /// Photometric and smoothness terms averaged over scales.
    pub photometric: f64,
    pub smoothness: f64,
    /// Pixels of the finest evaluated level used in the photometric mean.
    pub kept: Vec<bool>,
    /// Pixels of the finest evaluated level whose best reprojection error
    /// beats the identity error.
    pub beats_identity: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub loss: f64,
    /// `∂L/∂x` per pixel logit, or per metric depth for [`Objective::depth_gradient`].
    pub depth: Vec<f64>,
    /// `∂L/∂[ω; t]` per source.
    pub poses: Vec<[f64; 6]>,
}

type RawGradient = (Vec<f64>, Vec<(Vector3<f64>, Vector3<f64>)>);

/// Precomputed objective for one target and a set of source views.
///
/// Level `s` compares `2^s`-pooled views using the `2^s`-pooled disparity;
/// its smoothness term is weighted by `λ_sm / 2^s`.
#[derive(Debug, Clone)]
pub struct Objective {
    grid: ErpGrid,
    num_sources: usize,
    levels: Vec<Level>,
    lambda_sm: f64,
    automask: bool,
    mapping: DepthMapping,
}

impl Objective {
    pub fn new(target: &ErpImage, sources: &[ErpImage], cfg: &RefineConfig) -> Result<Self> {
        cfg.validate()?;
        if sources.is_empty() {
            return Err(Error::config("at least one source view is required"));
        }
        let grid = *target.grid();
        let c = target.channels();
        if sources
            .iter()
            .any(|s| *s.grid() != grid || s.channels() != c)
        {
            return Err(Error::config(
                "source and target views must share grid and channels",
            ));
        }
        let mut scales = cfg.scales.clone();
        scales.sort_unstable();
        scales.dedup();
        let levels = scales
            .iter()
            .map(|s| Level::new(*s, target, sources, cfg.alpha))
            .collect::<Result<Vec<_>>>()?;
        let automask = match cfg.automask {
            AutomaskMode::Auto => sources.len() >= 2,
            AutomaskMode::On => true,
            AutomaskMode::Off => false,
        };
        Ok(Self {
            grid,
            num_sources: sources.len(),
            levels,
            lambda_sm: cfg.lambda_sm,
            automask,
            mapping: cfg.mapping()?,
        })
    }

    pub fn grid(&self) -> &ErpGrid {
        &self.grid
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn automask_applied(&self) -> bool {
        self.automask
    }

    pub fn mapping(&self) -> &DepthMapping {
        &self.mapping
    }

    /// Grid of the finest evaluated level, on which the masks of
    /// [`ObjectiveValue`] live.
    pub fn finest_grid(&self) -> &ErpGrid {
        &self.levels[0].grid
    }

    fn check(&self, n: usize, poses: usize) -> Result<()> {
        if n != self.grid.len() {
            return Err(Error::config(format!(
                "expected {} depth values, got {n}",
                self.grid.len()
            )));
        }
        if poses != self.num_sources {
            return Err(Error::config(format!(
                "expected {} poses, got {poses}",
                self.num_sources
            )));
        }
        Ok(())
    }

    /// Loss for logits `params` and per-source pose parameters.
    pub fn value(&self, params: &[f64], poses: &[PoseParams]) -> Result<ObjectiveValue> {
        self.check(params.len(), poses.len())?;
        let disp: Vec<f64> = params
            .iter()
            .map(|x| self.mapping.disparity(sigmoid(*x)))
            .collect();
        let poses: Vec<Pose> = poses.iter().map(PoseParams::to_pose).collect();
        Ok(self.run(&disp, &poses, false).0)
    }

    /// Loss for metric depth; the sigmoid mapping is bypassed.
    pub fn depth_value(&self, depth: &[f64], poses: &[Pose]) -> Result<ObjectiveValue> {
        self.check(depth.len(), poses.len())?;
        let disp: Vec<f64> = depth.iter().map(|d| 1.0 / d).collect();
        Ok(self.run(&disp, poses, false).0)
    }

    /// Analytic gradient with respect to logits and pose parameters.
    pub fn gradient(&self, params: &[f64], poses: &[PoseParams]) -> Result<ObjectiveGradient> {
        self.check(params.len(), poses.len())?;
        let sig: Vec<f64> = params.iter().map(|x| sigmoid(*x)).collect();
        let disp: Vec<f64> = sig.iter().map(|s| self.mapping.disparity(*s)).collect();
        let pose_list: Vec<Pose> = poses.iter().map(PoseParams::to_pose).collect();
        let (value, grads) = self.run(&disp, &pose_list, true);
        let (g_disp, g_pose) = grads.expect("gradient requested");
        let omegas: Vec<Vector3<f64>> = poses.iter().map(PoseParams::omega).collect();
        Ok(ObjectiveGradient {
            loss: value.loss,
            depth: g_disp
                .iter()
                .zip(&sig)
                .map(|(g, s)| g * self.mapping.a * s * (1.0 - s))
                .collect(),
            poses: chart_gradients(&omegas, g_pose),
        })
    }

    /// Analytic gradient with respect to metric depth; pose gradients are
    /// taken in the axis-angle chart of each pose.
    pub fn depth_gradient(&self, depth: &[f64], poses: &[Pose]) -> Result<ObjectiveGradient> {
        self.check(depth.len(), poses.len())?;
        let disp: Vec<f64> = depth.iter().map(|d| 1.0 / d).collect();
        let (value, grads) = self.run(&disp, poses, true);
        let (g_disp, g_pose) = grads.expect("gradient requested");
        let omegas: Vec<Vector3<f64>> = poses.iter().map(Pose::axis_angle).collect();
        Ok(ObjectiveGradient {
            loss: value.loss,
            depth: g_disp.iter().zip(&disp).map(|(g, q)| -g * q * q).collect(),
            poses: chart_gradients(&omegas, g_pose),
        })
    }

    /// Central finite differences of [`Objective::value`].
    pub fn gradient_fd(
        &self,
        params: &[f64],
        poses: &[PoseParams],
        step: f64,
    ) -> Result<ObjectiveGradient> {
        let loss = self.value(params, poses)?.loss;
        let mut x = params.to_vec();
        let mut depth = vec![0.0; params.len()];
        for i in 0..x.len() {
            let x0 = x[i];
            x[i] = x0 + step;
            let lp = self.value(&x, poses)?.loss;
            x[i] = x0 - step;
            let lm = self.value(&x, poses)?.loss;
            x[i] = x0;
            depth[i] = (lp - lm) / (2.0 * step);
        }
        let mut pose_grads = Vec::with_capacity(poses.len());
        let mut ps = poses.to_vec();
        for k in 0..ps.len() {
            let mut g = [0.0; 6];
            for (j, gj) in g.iter_mut().enumerate() {
                let p0 = ps[k].0[j];
                ps[k].0[j] = p0 + step;
                let lp = self.value(params, &ps)?.loss;
                ps[k].0[j] = p0 - step;
                let lm = self.value(params, &ps)?.loss;
                ps[k].0[j] = p0;
                *gj = (lp - lm) / (2.0 * step);
            }
            pose_grads.push(g);
        }
        Ok(ObjectiveGradient {
            loss,
            depth,
            poses: pose_grads,
        })
    }

    /// Core evaluation on full-resolution disparity; gradients are with
    /// respect to disparity and the raw pose terms.
    fn run(
        &self,
        disp: &[f64],
        poses: &[Pose],
        want_grad: bool,
    ) -> (ObjectiveValue, Option<RawGradient>) {
        let (fh, fw) = (self.grid.height(), self.grid.width());
        let nl = self.levels.len() as f64;
        let mut loss = 0.0;
        let mut photo_sum = 0.0;
        let mut smooth_sum = 0.0;
        let mut g_disp = want_grad.then(|| vec![0.0; disp.len()]);
        let mut g_pose = vec![(Vector3::zeros(), Vector3::zeros()); poses.len()];
        let mut kept_fine = Vec::new();
        let mut beats_fine = Vec::new();
        for (li, level) in self.levels.iter().enumerate() {
            let n = level.grid.len();
            let d_s = pool(disp, fh, fw, 1, level.factor);
            let depth: Vec<f64> = d_s.iter().map(|q| 1.0 / q).collect();
            let warps: Vec<Warp> = poses
                .iter()
                .enumerate()
                .map(|(k, pose)| level.warp(k, &depth, pose))
                .collect();
            let evals: Vec<PhotometricEval> = warps
                .iter()
                .map(|wp| level.photometric.forward(&wp.recon))
                .collect();
            let mut best = vec![usize::MAX; n];
            let mut best_err = vec![f64::INFINITY; n];
            for (k, (wp, ev)) in warps.iter().zip(&evals).enumerate() {
                for i in 0..n {
                    if wp.valid[i] && ev.error[i] < best_err[i] {
                        best_err[i] = ev.error[i];
                        best[i] = k;
                    }
                }
            }
            let beats: Vec<bool> = (0..n)
                .map(|i| best[i] != usize::MAX && best_err[i] < level.identity_error[i])
                .collect();
            let kept: Vec<bool> = (0..n)
                .map(|i| best[i] != usize::MAX && (!self.automask || beats[i]))
                .collect();
            let n_kept = kept.iter().filter(|k| **k).count();
            let photo = if n_kept == 0 {
                0.0
            } else {
                (0..n)
                    .filter(|&i| kept[i])
                    .map(|i| best_err[i])
                    .sum::<f64>()
                    / n_kept as f64
            };
            let lam = self.lambda_sm * level.smooth_weight;
            let (smooth, g_sm) = level
                .smoothness
                .eval(&d_s, want_grad && lam > 0.0)
                .unwrap_or((f64::NAN, None));
            photo_sum += photo;
            smooth_sum += smooth;
            loss += photo + lam * smooth;
            if li == 0 {
                kept_fine = kept.clone();
                beats_fine = beats;
            }
            let Some(g_out) = g_disp.as_mut() else {
                continue;
            };
            let mut g_depth = vec![0.0; n];
            if n_kept > 0 {
                for (k, (wp, ev)) in warps.iter().zip(&evals).enumerate() {
                    let upstream: Vec<f64> = (0..n)
                        .map(|i| {
                            if kept[i] && best[i] == k {
                                1.0 / (n_kept as f64 * nl)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let g_recon = level.photometric.backward(&wp.recon, ev, &upstream);
                    let (g_rot, g_t) =
                        level.backprop_warp(k, wp, &g_recon, &poses[k], &mut g_depth);
                    g_pose[k].0 += g_rot;
                    g_pose[k].1 += g_t;
                }
            }
            let mut g_s: Vec<f64> = g_depth
                .iter()
                .zip(&depth)
                .map(|(g, d)| -g * d * d)
                .collect();
            if let Some(gs) = g_sm {
                let k = lam / nl;
                g_s.iter_mut().zip(&gs).for_each(|(a, b)| *a += k * b);
            }
            g_out
                .iter_mut()
                .zip(pool_adjoint(&g_s, fh, fw, level.factor))
                .for_each(|(a, b)| *a += b);
        }
        let value = ObjectiveValue {
            loss: loss / nl,
            photometric: photo_sum / nl,
            smoothness: smooth_sum / nl,
            kept: kept_fine,
            beats_identity: beats_fine,
        };
        (value, g_disp.map(|g| (g, g_pose)))
    }
}

fn chart_gradients(
    omegas: &[Vector3<f64>],
    raw: Vec<(Vector3<f64>, Vector3<f64>)>,
) -> Vec<[f64; 6]> {
    omegas
        .iter()
        .zip(raw)
        .map(|(w, (g_rot, g_t))| {
            let g = so3_left_jacobian(w).transpose() * g_rot;
            [g.x, g.y, g.z, g_t.x, g_t.y, g_t.z]
        })
        .collect()
}

/// Single-source objective on logits.
pub fn objective(
    depth_params: &[f64],
    pose_params: &PoseParams,
    target: &ErpImage,
    source: &ErpImage,
    cfg: &RefineConfig,
) -> Result<f64> {
    Objective::new(target, std::slice::from_ref(source), cfg)?
        .value(depth_params, std::slice::from_ref(pose_params))
        .map(|v| v.loss)
}

/// Single-source gradient on logits, in the configured gradient mode.
pub fn objective_gradient(
    depth_params: &[f64],
    pose_params: &PoseParams,
    target: &ErpImage,
    source: &ErpImage,
    cfg: &RefineConfig,
) -> Result<ObjectiveGradient> {
    let obj = Objective::new(target, std::slice::from_ref(source), cfg)?;
    let poses = std::slice::from_ref(pose_params);
    match cfg.gradient_mode {
        GradientMode::Analytic => obj.gradient(depth_params, poses),
        GradientMode::FiniteDifference => obj.gradient_fd(depth_params, poses, cfg.fd_step),
    }
}

/// Views and ground truth for one refinement run.
#[derive(Debug, Clone)]
pub struct RefineProblem {
    pub target: ErpImage,
    pub sources: Vec<ErpImage>,
    /// Target → source poses used for evaluation.
    pub gt_poses: Vec<Pose>,
    pub gt_depth: DepthMap,
    /// Pixels included in the depth metrics; all when `None`.
    pub eval_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_m: f64,
}

/// Automask statistics at the final iterate, finest scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub applied: bool,
    /// Fraction of pixels whose reprojection error beats the identity error.
    pub beats_identity: f64,
    /// Same fraction restricted to the top and bottom pixel rows.
    pub beats_identity_pole_rows: f64,
    /// Fraction of pixels entering the photometric mean.
    pub kept: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    /// Initial loss followed by the accepted loss of every iteration.
    pub losses: Vec<f64>,
    pub initial_metrics: DepthMetrics,
    pub final_metrics: DepthMetrics,
    pub pose_errors: Vec<PoseError>,
    pub final_poses: Vec<PoseParams>,
    pub final_step_size: f64,
    pub halvings: usize,
    pub mask: MaskStats,
    #[serde(skip)]
    pub final_depth: Option<DepthMap>,
}

fn mask_stats(value: &ObjectiveValue, grid: &ErpGrid, applied: bool) -> MaskStats {
    let frac = |m: &[bool]| m.iter().filter(|b| **b).count() as f64 / m.len().max(1) as f64;
    let w = grid.width();
    let mut poles = value.beats_identity[..w].to_vec();
    poles.extend_from_slice(&value.beats_identity[value.beats_identity.len() - w..]);
    MaskStats {
        applied,
        beats_identity: frac(&value.beats_identity),
        beats_identity_pole_rows: frac(&poles),
        kept: frac(&value.kept),
    }
}

/// Gradient descent from `initial_depth` / `initial_poses` with step halving
/// whenever a trial step does not decrease the loss.
pub fn refine(
    problem: &RefineProblem,
    initial_depth: &DepthMap,
    initial_poses: &[Pose],
    cfg: &RefineConfig,
) -> Result<RefineReport> {
    let obj = Objective::new(&problem.target, &problem.sources, cfg)?;
    let grid = *obj.grid();
    if *initial_depth.grid() != grid || *problem.gt_depth.grid() != grid {
        return Err(Error::config("depth maps must share the view grid"));
    }
    if problem.gt_poses.len() != problem.sources.len() {
        return Err(Error::config(
            "one ground-truth pose per source is required",
        ));
    }
    let mapping = *obj.mapping();
    let init: Vec<f64> = initial_depth
        .values()
        .iter()
        .zip(initial_depth.valid())
        .map(|(d, ok)| if *ok { *d } else { cfg.max_depth })
        .collect();
    let mut x = depth_to_params(&init, &mapping);
    let mut poses: Vec<PoseParams> = initial_poses.iter().map(PoseParams::from_pose).collect();
    let mask = problem.eval_mask.as_deref();
    let metrics_of = |x: &[f64]| -> Result<(DepthMetrics, DepthMap)> {
        let d = DepthMap::new(grid, params_to_depth(x, &mapping))?;
        Ok((compute_metrics(&d, &problem.gt_depth, mask, &cfg.eval)?, d))
    };
    let initial_metrics = metrics_of(&x)?.0;

    let grad_at = |x: &[f64], p: &[PoseParams]| match cfg.gradient_mode {
        GradientMode::Analytic => obj.gradient(x, p),
        GradientMode::FiniteDifference => obj.gradient_fd(x, p, cfg.fd_step),
    };
    let mut current = grad_at(&x, &poses)?;
    let mut losses = vec![current.loss];
    if !current.loss.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            trajectory: vec![],
        });
    }
    let depth_scale = grid.len() as f64;
    let mut step = cfg.step_size;
    let mut halvings = 0;
    for it in 1..=cfg.iterations {
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial_x: Vec<f64> = x
                .iter()
                .zip(&current.depth)
                .map(|(xi, g)| xi - step * depth_scale * g)
                .collect();
            let trial_poses: Vec<PoseParams> = if cfg.optimize_pose {
                poses
                    .iter()
                    .zip(&current.poses)
                    .map(|(p, g)| {
                        let mut q = *p;
                        q.0.iter_mut()
                            .zip(g)
                            .for_each(|(a, b)| *a -= step / cfg.step_size * cfg.pose_step_size * b);
                        q
                    })
                    .collect()
            } else {
                poses.clone()
            };
            let finite = trial_x.iter().all(|v| v.is_finite())
                && trial_poses
                    .iter()
                    .all(|p| p.0.iter().all(|v| v.is_finite()));
            let trial_loss = if finite {
                obj.value(&trial_x, &trial_poses)?.loss
            } else {
                f64::NAN
            };
            if !trial_loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    trajectory: losses,
                });
            }
            if trial_loss <= current.loss {
                current = grad_at(&trial_x, &trial_poses)?;
                x = trial_x;
                poses = trial_poses;
                accepted = true;
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        losses.push(current.loss);
        if accepted {
            step = (step * cfg.step_growth).min(cfg.step_size);
        }
    }
    let (final_metrics, final_depth) = metrics_of(&x)?;
    let value = obj.value(&x, &poses)?;
    let pose_errors = poses
        .iter()
        .zip(&problem.gt_poses)
        .map(|(p, gt)| {
            let (rotation_deg, translation_m) = p.to_pose().error_to(gt);
            PoseError {
                rotation_deg,
                translation_m,
            }
        })
        .collect();
    Ok(RefineReport {
        losses,
        initial_metrics,
        final_metrics,
        pose_errors,
        final_poses: poses,
        final_step_size: step,
        halvings,
        mask: mask_stats(&value, obj.finest_grid(), obj.automask_applied()),
        final_depth: Some(final_depth),
    })
}
