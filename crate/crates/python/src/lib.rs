//! Python bindings for the `erpdepth` crate.
//!
//! Images are `(H, W, C)` float64 arrays, depth maps `(H, W)` and feature
//! maps `(C, H, W)`. Heavy calls release the GIL.

use erpdepth::cubemap::{cubemap_to_erp, erp_to_cubemap, CubeMap};
use erpdepth::distortion::{self, FeatureMap};
use erpdepth::losses::{self, DepthMapping};
use erpdepth::metrics::{EvalConfig, Scaling};
use erpdepth::refine::{RefineConfig, RefineProblem};
use erpdepth::scene::BoxScene;
use erpdepth::{sphere, DepthMap, ErpGrid, ErpImage, Raster, SphericalPoint};
use nalgebra::{Matrix3, Vector3};
use numpy::ndarray::{Array2, Array3};
use numpy::{
    IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3, PyUntypedArrayMethods,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pyerpdepth, ErpDepthError, PyException);

type ImageAndMask<'py> = (Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<bool>>);

fn err(e: erpdepth::Error) -> PyErr {
    ErpDepthError::new_err(e.to_string())
}

fn grid_for(height: usize, width: usize) -> PyResult<ErpGrid> {
    ErpGrid::new(width, height).map_err(err)
}

fn image_from(arr: &PyReadonlyArray3<'_, f64>) -> PyResult<ErpImage> {
    let shape = arr.shape();
    let grid = grid_for(shape[0], shape[1])?;
    let data = arr.as_array().iter().copied().collect();
    ErpImage::new(grid, shape[2], data).map_err(err)
}

fn raster_from(arr: &PyReadonlyArray3<'_, f64>) -> PyResult<Raster> {
    let shape = arr.shape();
    let data = arr.as_array().iter().copied().collect();
    Raster::new(shape[0], shape[1], shape[2], data).map_err(err)
}

fn depth_from(arr: &PyReadonlyArray2<'_, f64>) -> PyResult<DepthMap> {
    let shape = arr.shape();
    let grid = grid_for(shape[0], shape[1])?;
    DepthMap::new(grid, arr.as_array().iter().copied().collect()).map_err(err)
}

fn mask_from(arr: &PyReadonlyArray2<'_, bool>) -> Vec<bool> {
    arr.as_array().iter().copied().collect()
}

fn raster_to_py<'py>(py: Python<'py>, r: &Raster) -> Bound<'py, PyArray3<f64>> {
    Array3::from_shape_vec((r.height(), r.width(), r.channels()), r.data().to_vec())
        .expect("raster shape")
        .into_pyarray(py)
}

fn depth_to_py<'py>(py: Python<'py>, d: &DepthMap) -> Bound<'py, PyArray2<f64>> {
    let g = d.grid();
    Array2::from_shape_vec((g.height(), g.width()), d.values().to_vec())
        .expect("depth shape")
        .into_pyarray(py)
}

fn bools_to_py<'py>(py: Python<'py>, grid: &ErpGrid, m: &[bool]) -> Bound<'py, PyArray2<bool>> {
    Array2::from_shape_vec((grid.height(), grid.width()), m.to_vec())
        .expect("mask shape")
        .into_pyarray(py)
}

/// Rigid world-to-camera transform `P' = R P + t`.
#[pyclass(name = "Pose", module = "pyerpdepth", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose {
    inner: erpdepth::Pose,
}

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (rotation = None, translation = (0.0, 0.0, 0.0)))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: (f64, f64, f64)) -> PyResult<Self> {
        let r = rotation.unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        let t = Vector3::new(translation.0, translation.1, translation.2);
        Ok(Self {
            inner: erpdepth::Pose::new(m, t).map_err(err)?,
        })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: erpdepth::Pose::identity(),
        }
    }

    #[staticmethod]
    fn yaw(angle: f64) -> Self {
        Self {
            inner: erpdepth::Pose::yaw(angle),
        }
    }

    /// Pose from an axis-angle vector and a translation.
    #[staticmethod]
    #[pyo3(signature = (omega, translation = (0.0, 0.0, 0.0)))]
    fn from_axis_angle(omega: (f64, f64, f64), translation: (f64, f64, f64)) -> Self {
        Self {
            inner: erpdepth::Pose::from_axis_angle(
                Vector3::new(omega.0, omega.1, omega.2),
                Vector3::new(translation.0, translation.1, translation.2),
            ),
        }
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.inner.rotation();
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation();
        (t.x, t.y, t.z)
    }

    /// `self.compose(other)` applies `other` first.
    fn compose(&self, other: &PyPose) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn axis_angle(&self) -> (f64, f64, f64) {
        let w = self.inner.axis_angle();
        (w.x, w.y, w.z)
    }

    /// Rotation error in degrees and translation error to `other`.
    fn error_to(&self, other: &PyPose) -> (f64, f64) {
        self.inner.error_to(&other.inner)
    }

    fn __repr__(&self) -> String {
        let (w, t) = (self.inner.axis_angle(), self.inner.translation());
        format!(
            "Pose(axis_angle=({:.6}, {:.6}, {:.6}), translation=({:.6}, {:.6}, {:.6}))",
            w.x, w.y, w.z, t.x, t.y, t.z
        )
    }
}

/// Parameters of one distortion-aware upsampling block.
#[pyclass(name = "DaumParams", module = "pyerpdepth", skip_from_py_object)]
#[derive(Clone)]
struct PyDaumParams {
    inner: distortion::DaumParams,
}

#[pymethods]
impl PyDaumParams {
    #[staticmethod]
    #[pyo3(signature = (channels, ratio = 16, seed = 0))]
    fn seeded(channels: usize, ratio: usize, seed: u64) -> Self {
        Self {
            inner: distortion::DaumParams::seeded(channels, ratio, seed),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: distortion::DaumParams::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden
    }

    /// Flat parameter groups keyed by name.
    fn groups<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, values) in self.inner.groups() {
            d.set_item(name, values.clone())?;
        }
        Ok(d)
    }
}

#[pyfunction]
fn pixel_to_angles(u: f64, v: f64, height: usize, width: usize) -> PyResult<(f64, f64)> {
    let p = sphere::pixel_to_angles(u, v, &grid_for(height, width)?);
    Ok((p.theta, p.phi))
}

#[pyfunction]
fn angles_to_pixel(theta: f64, phi: f64, height: usize, width: usize) -> PyResult<(f64, f64)> {
    let p = SphericalPoint::new(theta, phi).map_err(err)?;
    Ok(sphere::angles_to_pixel(&p, &grid_for(height, width)?))
}

#[pyfunction]
fn angles_to_vector(theta: f64, phi: f64, depth: f64) -> PyResult<(f64, f64, f64)> {
    let p = SphericalPoint::new(theta, phi).map_err(err)?;
    let c = sphere::angles_to_vector(&p, depth).map_err(err)?;
    Ok((c.x, c.y, c.z))
}

/// Returns `(theta, phi, depth)`.
#[pyfunction]
fn vector_to_angles(x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
    let (p, d) = sphere::vector_to_angles(&Vector3::new(x, y, z)).map_err(err)?;
    Ok((p.theta, p.phi, d))
}

#[pyfunction]
fn latitude_weights(height: usize) -> Vec<f64> {
    distortion::latitude_weights(height)
}

/// Inverse-warps `source` into the target view; returns `(image, valid)`.
#[pyfunction]
fn warp_image<'py>(
    py: Python<'py>,
    source: PyReadonlyArray3<'py, f64>,
    depth: PyReadonlyArray2<'py, f64>,
    pose: &PyPose,
) -> PyResult<ImageAndMask<'py>> {
    let src = image_from(&source)?;
    let d = depth_from(&depth)?;
    let pose = pose.inner;
    let out = py
        .detach(|| erpdepth::reprojection::warp_image(&src, &d, &pose))
        .map_err(err)?;
    let grid = *out.image.grid();
    Ok((
        raster_to_py(py, out.image.raster()),
        bools_to_py(py, &grid, &out.valid_mask),
    ))
}

/// Per-pixel SSIM/L1 error, shape `(H, W)`.
#[pyfunction]
#[pyo3(signature = (pred, target, alpha = losses::DEFAULT_ALPHA))]
fn photometric_error<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray3<'py, f64>,
    target: PyReadonlyArray3<'py, f64>,
    alpha: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let (p, t) = (image_from(&pred)?, image_from(&target)?);
    let e = py
        .detach(|| losses::photometric_error(&p, &t, alpha))
        .map_err(err)?;
    Ok(
        Array2::from_shape_vec((e.height(), e.width()), e.into_data())
            .expect("error shape")
            .into_pyarray(py),
    )
}

#[pyfunction]
fn smoothness_loss(
    disparity: PyReadonlyArray2<'_, f64>,
    image: PyReadonlyArray3<'_, f64>,
) -> PyResult<f64> {
    let shape = disparity.shape();
    let disp = Raster::new(
        shape[0],
        shape[1],
        1,
        disparity.as_array().iter().copied().collect(),
    )
    .map_err(err)?;
    losses::smoothness_loss(&disp, &image_from(&image)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (sigma, min_depth = 0.1, max_depth = 100.0))]
fn sigmoid_to_depth(sigma: f64, min_depth: f64, max_depth: f64) -> PyResult<f64> {
    let m = DepthMapping::from_range(min_depth, max_depth).map_err(err)?;
    losses::sigmoid_to_depth(sigma, &m).map_err(err)
}

/// Forward pass of the upsampling block on a `(C, H, W)` feature map.
#[pyfunction]
fn daum_forward<'py>(
    py: Python<'py>,
    features: PyReadonlyArray3<'py, f64>,
    params: &PyDaumParams,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let s = features.shape();
    let f = FeatureMap::new(
        s[0],
        s[1],
        s[2],
        features.as_array().iter().copied().collect(),
    )
    .map_err(err)?;
    let out = distortion::daum_forward(&f, &params.inner).map_err(err)?;
    Ok(Array3::from_shape_vec(
        (out.channels(), out.height(), out.width()),
        out.data().to_vec(),
    )
    .expect("feature shape")
    .into_pyarray(py))
}

/// Depth metrics as a dict, including `n_valid` and `n_clamped`.
#[pyfunction]
#[pyo3(signature = (pred, gt, mask = None, min_depth = 0.1, max_depth = 80.0, median_scale = false))]
fn compute_metrics<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray2<'py, f64>,
    gt: PyReadonlyArray2<'py, f64>,
    mask: Option<PyReadonlyArray2<'py, bool>>,
    min_depth: f64,
    max_depth: f64,
    median_scale: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let (p, g) = (depth_from(&pred)?, depth_from(&gt)?);
    let mask = mask.as_ref().map(mask_from);
    let cfg = EvalConfig {
        min_depth,
        max_depth,
        scaling: if median_scale {
            Scaling::MedianRatio
        } else {
            Scaling::None
        },
    };
    let m = erpdepth::metrics::compute_metrics(&p, &g, mask.as_deref(), &cfg).map_err(err)?;
    let json = serde_json::to_string(&m).expect("metrics serialise");
    py.import("json")?.call_method1("loads", (json,))
}

/// Six faces in F, B, L, R, U, D order.
#[pyfunction]
fn erp_to_cube<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, f64>,
    face_size: usize,
) -> PyResult<Vec<Bound<'py, PyArray3<f64>>>> {
    let img = image_from(&image)?;
    let cube = py.detach(|| erp_to_cubemap(&img, face_size)).map_err(err)?;
    Ok(cube.faces().iter().map(|f| raster_to_py(py, f)).collect())
}

#[pyfunction]
fn cube_to_erp<'py>(
    py: Python<'py>,
    faces: Vec<PyReadonlyArray3<'py, f64>>,
    height: usize,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let rasters = faces
        .iter()
        .map(raster_from)
        .collect::<PyResult<Vec<_>>>()?;
    let cube = CubeMap::new(rasters).map_err(err)?;
    let grid = grid_for(height, 2 * height)?;
    let erp = py.detach(|| cubemap_to_erp(&cube, &grid)).map_err(err)?;
    Ok(raster_to_py(py, erp.raster()))
}

#[pyfunction]
fn psnr(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    erpdepth::cubemap::psnr(&image_from(&a)?, &image_from(&b)?).map_err(err)
}

/// Renders the textured room from the origin and from `relative`.
///
/// Returns a dict with `target`, `source`, `depth`, `source_depth` and `textured`.
#[pyfunction]
#[pyo3(signature = (height, relative, half_extents = (1.0, 1.0, 1.0)))]
fn render_pair<'py>(
    py: Python<'py>,
    height: usize,
    relative: &PyPose,
    half_extents: (f64, f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let grid = ErpGrid::with_height(height).map_err(err)?;
    let scene = BoxScene::textured_room([half_extents.0, half_extents.1, half_extents.2]);
    let rel = relative.inner;
    let (t, s) = py
        .detach(|| erpdepth::scene::render_pair(&scene, &erpdepth::Pose::identity(), &rel, &grid))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("target", raster_to_py(py, t.image.raster()))?;
    d.set_item("source", raster_to_py(py, s.image.raster()))?;
    d.set_item("depth", depth_to_py(py, &t.depth))?;
    d.set_item("source_depth", depth_to_py(py, &s.depth))?;
    d.set_item("textured", bools_to_py(py, &grid, &t.textured))?;
    Ok(d)
}

/// Refines depth (and optionally poses) against the photometric objective.
///
/// `config` is a JSON object with `RefineConfig` fields; missing fields take
/// their defaults. Returns `(report, depth)` where `report` is a dict.
#[pyfunction]
#[pyo3(signature = (target, sources, poses, gt_depth, init_depth, eval_mask = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn refine<'py>(
    py: Python<'py>,
    target: PyReadonlyArray3<'py, f64>,
    sources: Vec<PyReadonlyArray3<'py, f64>>,
    poses: Vec<PyPose>,
    gt_depth: PyReadonlyArray2<'py, f64>,
    init_depth: PyReadonlyArray2<'py, f64>,
    eval_mask: Option<PyReadonlyArray2<'py, bool>>,
    config: Option<&str>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyArray2<f64>>)> {
    let cfg: RefineConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RefineConfig::default(),
    };
    let poses: Vec<_> = poses.iter().map(|p| p.inner).collect();
    let problem = RefineProblem {
        target: image_from(&target)?,
        sources: sources.iter().map(image_from).collect::<PyResult<_>>()?,
        gt_poses: poses.clone(),
        gt_depth: depth_from(&gt_depth)?,
        eval_mask: eval_mask.as_ref().map(mask_from),
    };
    let init = depth_from(&init_depth)?;
    let report = py
        .detach(|| erpdepth::refine::refine(&problem, &init, &poses, &cfg))
        .map_err(err)?;
    let json = serde_json::to_string(&report).expect("report serialises");
    let dict = py.import("json")?.call_method1("loads", (json,))?;
    let depth = report.final_depth.as_ref().unwrap_or(&init);
    Ok((dict, depth_to_py(py, depth)))
}

#[pymodule]
fn pyerpdepth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ErpDepthError", m.py().get_type::<ErpDepthError>())?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyDaumParams>()?;
    m.add_function(wrap_pyfunction!(pixel_to_angles, m)?)?;
    m.add_function(wrap_pyfunction!(angles_to_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(angles_to_vector, m)?)?;
    m.add_function(wrap_pyfunction!(vector_to_angles, m)?)?;
    m.add_function(wrap_pyfunction!(latitude_weights, m)?)?;
    m.add_function(wrap_pyfunction!(warp_image, m)?)?;
    m.add_function(wrap_pyfunction!(photometric_error, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid_to_depth, m)?)?;
    m.add_function(wrap_pyfunction!(daum_forward, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(erp_to_cube, m)?)?;
    m.add_function(wrap_pyfunction!(cube_to_erp, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(render_pair, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    Ok(())
}
