//! Geometry and differentiable building blocks for self-supervised depth
//! estimation on equirectangular (ERP) 360° images.
//!
//! The crate is organised bottom-up:
//!
//! * [`sphere`] – pixel ↔ angle ↔ Cartesian conversions on an ERP grid.
//! * [`pose`] – rigid transforms and the axis-angle chart used by the optimiser.
//! * [`raster`] – image, depth and plain float rasters.
//! * [`reprojection`] – target → source reprojection and inverse warping.
//! * [`distortion`] – latitude weights and the distortion-aware upsampling block.
//! * [`losses`] – SSIM/L1 photometric error, min-reprojection, smoothness.
//! * [`cubemap`] – ERP ↔ cubemap resampling.
//! * [`metrics`] – masked depth error metrics.
//! * [`scene`] – analytic box-room renderer used as ground truth.
//! * [`refine`] – gradient descent on depth and pose against the photometric objective.
//! * [`io`] – PFM / PNG / JSON helpers shared by the CLI and the bindings.

pub mod cubemap;
pub mod distortion;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pose;
pub mod raster;
pub mod refine;
pub mod reprojection;
pub mod scene;
pub mod sphere;

pub use error::{Error, Result};
pub use pose::{Pose, PoseParams};
pub use raster::{DepthMap, ErpImage, Raster};
pub use sphere::{CartesianPoint, ErpGrid, SphericalPoint};
