//! ERP pixel grid, spherical angles and Cartesian rays.
//!
//! Conventions used throughout the crate:
//!
//! * `x` points right, `y` up, `z` forward.
//! * Latitude `theta` is positive upwards; row 0 of the image is the north pole.
//! * Longitude `phi` is zero at the image-column centre and grows to the right,
//!   normalised into `[-π, π)`.
//! * Pixel `(u, v)` samples the direction through its centre, so the continuous
//!   coordinate range of a row is `[-0.5, W - 0.5)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in 3-D, in meters (or unitless when on the unit sphere).
pub type CartesianPoint = Vector3<f64>;

/// Dimensions of a full 360°×180° equirectangular image (`width == 2 * height`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridDims", into = "GridDims")]
pub struct ErpGrid {
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDims {
    width: usize,
    height: usize,
}

impl TryFrom<GridDims> for ErpGrid {
    type Error = Error;

    fn try_from(d: GridDims) -> Result<Self> {
        ErpGrid::new(d.width, d.height)
    }
}

impl From<ErpGrid> for GridDims {
    fn from(g: ErpGrid) -> Self {
        GridDims {
            width: g.width,
            height: g.height,
        }
    }
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::config("ERP grid height must be positive"));
        }
        if width != 2 * height {
            return Err(Error::config(format!(
                "ERP grid must satisfy W = 2H, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn with_height(height: usize) -> Result<Self> {
        Self::new(2 * height, height)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    /// Pixels per radian along a row (`W / 2π`).
    #[inline]
    pub fn columns_per_radian(&self) -> f64 {
        self.width as f64 / TAU
    }

    /// Pixels per radian along a column (`H / π`).
    #[inline]
    pub fn rows_per_radian(&self) -> f64 {
        self.height as f64 / PI
    }
}

/// Latitude/longitude pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalPoint {
    /// Builds a point, wrapping `phi` into `[-π, π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::domain("spherical angles must be finite"));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
            return Err(Error::domain(format!(
                "latitude {theta} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            theta,
            phi: wrap_longitude(phi),
        })
    }

    /// Unit direction of this point.
    pub fn unit_vector(&self) -> CartesianPoint {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(ct * sp, st, ct * cp)
    }
}

/// Wraps a longitude into `[-π, π)`.
#[inline]
pub fn wrap_longitude(phi: f64) -> f64 {
    if (-PI..PI).contains(&phi) {
        return phi;
    }
    let w = (phi + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Angles sampled by the continuous pixel coordinate `(u, v)`.
#[inline]
pub fn pixel_to_angles(u: f64, v: f64, grid: &ErpGrid) -> SphericalPoint {
    let phi = ((u + 0.5) / grid.width as f64 - 0.5) * TAU;
    let theta = (0.5 - (v + 0.5) / grid.height as f64) * PI;
    SphericalPoint {
        theta,
        phi: wrap_longitude(phi),
    }
}

/// Continuous pixel coordinate of a direction; inverse of [`pixel_to_angles`]
/// for `u ∈ [-0.5, W - 0.5)`.
#[inline]
pub fn angles_to_pixel(p: &SphericalPoint, grid: &ErpGrid) -> (f64, f64) {
    let u = (p.phi / TAU + 0.5) * grid.width as f64 - 0.5;
    let v = (0.5 - p.theta / PI) * grid.height as f64 - 0.5;
    (u, v)
}

/// `d * (cosθ sinφ, sinθ, cosθ cosφ)`.
pub fn angles_to_vector(p: &SphericalPoint, d: f64) -> Result<CartesianPoint> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::domain(format!(
            "radial depth must be positive, got {d}"
        )));
    }
    Ok(p.unit_vector() * d)
}

/// Direction and length of a non-zero vector.
///
/// Uses the full-quadrant inverse tangent for longitude. At the poles
/// (`x = z = 0`) the longitude is reported as 0.
pub fn vector_to_angles(p: &CartesianPoint) -> Result<(SphericalPoint, f64)> {
    let r = p.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(
            "cannot take the direction of a zero or non-finite vector",
        ));
    }
    Ok((direction_of(p), r))
}

/// Direction of a vector known to be non-zero and finite.
#[inline]
pub(crate) fn direction_of(p: &CartesianPoint) -> SphericalPoint {
    let rho = p.x.hypot(p.z);
    // atan2 keeps full precision near the poles where asin(y/r) would not.
    let theta = p.y.atan2(rho);
    let phi = if p.x == 0.0 && p.z == 0.0 {
        0.0
    } else {
        wrap_longitude(p.x.atan2(p.z))
    };
    SphericalPoint { theta, phi }
}

/// Unit rays through every pixel centre, row-major.
pub fn pixel_rays(grid: &ErpGrid) -> Vec<CartesianPoint> {
    let mut rays = Vec::with_capacity(grid.len());
    for v in 0..grid.height {
        for u in 0..grid.width {
            rays.push(pixel_to_angles(u as f64, v as f64, grid).unit_vector());
        }
    }
    rays
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid512() -> ErpGrid {
        ErpGrid::new(1024, 512).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(ErpGrid::new(100, 40), Err(Error::Config(_))));
        assert!(matches!(ErpGrid::new(0, 0), Err(Error::Config(_))));
        assert!(ErpGrid::new(8, 4).is_ok());
    }

    #[test]
    fn image_centre_is_forward() {
        let g = grid512();
        let p = pixel_to_angles(511.5, 255.5, &g);
        assert_abs_diff_eq!(p.theta, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.phi, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn left_edge_is_minus_pi() {
        let g = grid512();
        let p = pixel_to_angles(-0.5, 255.5, &g);
        assert_abs_diff_eq!(p.theta, 0.0, epsilon = 1e-15);
        assert_eq!(p.phi, -PI);
    }

    #[test]
    fn quarter_point() {
        let g = grid512();
        let p = pixel_to_angles(255.5, 127.5, &g);
        assert_abs_diff_eq!(p.theta, PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.phi, -PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn angles_to_pixel_examples() {
        let g = grid512();
        let (u, v) = angles_to_pixel(
            &SphericalPoint {
                theta: 0.0,
                phi: 0.0,
            },
            &g,
        );
        assert_eq!((u, v), (511.5, 255.5));
        for phi in [-3.0, 0.0, 1.0] {
            let (_, v) = angles_to_pixel(
                &SphericalPoint {
                    theta: FRAC_PI_2,
                    phi,
                },
                &g,
            );
            assert_eq!(v, -0.5);
        }
    }

    #[test]
    fn angles_to_vector_axes() {
        let v = angles_to_vector(
            &SphericalPoint {
                theta: 0.0,
                phi: 0.0,
            },
            1.0,
        )
        .unwrap();
        assert_abs_diff_eq!(v, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let v = angles_to_vector(
            &SphericalPoint {
                theta: FRAC_PI_2,
                phi: 0.0,
            },
            1.0,
        )
        .unwrap();
        assert_abs_diff_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let v = angles_to_vector(
            &SphericalPoint {
                theta: 0.0,
                phi: FRAC_PI_2,
            },
            2.0,
        )
        .unwrap();
        assert_abs_diff_eq!(v, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert!(matches!(
            angles_to_vector(
                &SphericalPoint {
                    theta: 0.0,
                    phi: 0.0
                },
                0.0
            ),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn vector_to_angles_examples() {
        let (p, r) = vector_to_angles(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((p.theta, p.phi, r), (0.0, 0.0, 5.0));
        let (p, r) = vector_to_angles(&Vector3::new(1.0, 0.0, -1.0)).unwrap();
        assert_abs_diff_eq!(p.theta, 0.0);
        assert_abs_diff_eq!(p.phi, 3.0 * PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-15);
        assert!(vector_to_angles(&Vector3::zeros()).is_err());
    }

    #[test]
    fn pole_longitude_is_zero() {
        let (p, r) = vector_to_angles(&Vector3::new(0.0, -3.0, 0.0)).unwrap();
        assert_eq!(p.phi, 0.0);
        assert_eq!(p.theta, -FRAC_PI_2);
        assert_eq!(r, 3.0);
    }

    #[test]
    fn wrap_stays_half_open() {
        assert_eq!(wrap_longitude(PI), -PI);
        assert_eq!(wrap_longitude(-PI), -PI);
        assert!(wrap_longitude(-1e-300) < PI);
        assert_abs_diff_eq!(wrap_longitude(3.0 * PI + 0.25), -PI + 0.25, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn pixel_round_trip(u in -0.5f64..1023.49, v in -0.5f64..511.5) {
            let g = grid512();
            let (u2, v2) = angles_to_pixel(&pixel_to_angles(u, v, &g), &g);
            prop_assert!((u - u2).abs() < 1e-9);
            prop_assert!((v - v2).abs() < 1e-9);
        }

        #[test]
        fn longitude_is_periodic(u in -0.5f64..1023.0, v in 0.0f64..511.0, k in -5i32..5) {
            let g = grid512();
            let a = pixel_to_angles(u, v, &g);
            let b = pixel_to_angles(u + f64::from(k) * 1024.0, v, &g);
            let d = wrap_longitude(a.phi - b.phi).abs();
            prop_assert!(d < 1e-9 || (TAU - d) < 1e-9);
            prop_assert_eq!(a.theta, b.theta);
        }

        #[test]
        fn vector_round_trip(theta in (-FRAC_PI_2 + 1e-6)..(FRAC_PI_2 - 1e-6), phi in -PI..PI, d in 1e-3f64..1e3) {
            let p = SphericalPoint::new(theta, phi).unwrap();
            let v = angles_to_vector(&p, d).unwrap();
            prop_assert!((v.norm() - d).abs() <= 1e-9 * d);
            let (q, r) = vector_to_angles(&v).unwrap();
            prop_assert!((r - d).abs() <= 1e-9 * d);
            prop_assert!((q.theta - theta).abs() < 1e-9);
            let dphi = wrap_longitude(q.phi - phi).abs();
            prop_assert!(dphi < 1e-9 || TAU - dphi < 1e-9);
        }
    }
}
