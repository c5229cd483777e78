//! ERP ↔ cubemap resampling.
//!
//! Faces are 90° perspective views with focal length `N/2` for an `N × N`
//! face. Face-plane coordinates `(a, b) ∈ [-1, 1]²` run right and down
//! across each face; the layout is the usual horizontal cross seen from
//! inside the cube:
//!
//! ```text
//!            +----+
//!            | U  |
//!       +----+----+----+----+
//!       | L  | F  | R  | B  |
//!       +----+----+----+----+
//!            | D  |
//!            +----+
//! ```
//!
//! | face | direction for `(a, b)` |
//! |------|------------------------|
//! | F    | `( a, -b,  1)`         |
//! | B    | `(-a, -b, -1)`         |
//! | L    | `(-1, -b,  a)`         |
//! | R    | `( 1, -b, -a)`         |
//! | U    | `( a,  1,  b)`         |
//! | D    | `( a, -1, -b)`         |

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{ErpImage, Raster};
use crate::reprojection::{sample_bilinear, Stencil};
use crate::sphere::{angles_to_pixel, direction_of, ErpGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    Front,
    Back,
    Left,
    Right,
    Up,
    Down,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::Front,
        Face::Back,
        Face::Left,
        Face::Right,
        Face::Up,
        Face::Down,
    ];

    /// File-name suffix used by the CLI.
    pub fn suffix(self) -> &'static str {
        match self {
            Face::Front => "F",
            Face::Back => "B",
            Face::Left => "L",
            Face::Right => "R",
            Face::Up => "U",
            Face::Down => "D",
        }
    }

    /// Unnormalised ray through face-plane coordinates `(a, b)`.
    pub fn direction(self, a: f64, b: f64) -> Vector3<f64> {
        match self {
            Face::Front => Vector3::new(a, -b, 1.0),
            Face::Back => Vector3::new(-a, -b, -1.0),
            Face::Left => Vector3::new(-1.0, -b, a),
            Face::Right => Vector3::new(1.0, -b, -a),
            Face::Up => Vector3::new(a, 1.0, b),
            Face::Down => Vector3::new(a, -1.0, -b),
        }
    }

    /// Face hit by `d` under the dominant-axis rule; ties go to x, then y, then z.
    pub fn classify(d: &Vector3<f64>) -> Face {
        let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
        if ax >= ay && ax >= az {
            if d.x >= 0.0 {
                Face::Right
            } else {
                Face::Left
            }
        } else if ay >= az {
            if d.y >= 0.0 {
                Face::Up
            } else {
                Face::Down
            }
        } else if d.z >= 0.0 {
            Face::Front
        } else {
            Face::Back
        }
    }

    /// Face-plane coordinates of `d`, which must belong to this face.
    pub fn project(self, d: &Vector3<f64>) -> (f64, f64) {
        let (x, y, z) = (d.x, d.y, d.z);
        match self {
            Face::Front => (x / z, -y / z),
            Face::Back => (x / z, y / z),
            Face::Left => (-z / x, y / x),
            Face::Right => (-z / x, -y / x),
            Face::Up => (x / y, z / y),
            Face::Down => (-x / y, z / y),
        }
    }
}

/// Six equally sized square faces in the order of [`Face::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct CubeMap {
    face_size: usize,
    channels: usize,
    faces: Vec<Raster>,
}

impl CubeMap {
    pub fn new(faces: Vec<Raster>) -> Result<Self> {
        if faces.len() != 6 {
            return Err(Error::config(format!(
                "a cubemap needs 6 faces, got {}",
                faces.len()
            )));
        }
        let n = faces[0].width();
        let c = faces[0].channels();
        if n < 2
            || faces
                .iter()
                .any(|f| f.width() != n || f.height() != n || f.channels() != c)
        {
            return Err(Error::config(
                "cubemap faces must be square, equal and at least 2x2",
            ));
        }
        Ok(Self {
            face_size: n,
            channels: c,
            faces,
        })
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn face(&self, f: Face) -> &Raster {
        &self.faces[f as usize]
    }

    pub fn faces(&self) -> &[Raster] {
        &self.faces
    }
}

#[inline]
fn face_coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

pub fn erp_to_cubemap(img: &ErpImage, face_size: usize) -> Result<CubeMap> {
    if face_size < 2 {
        return Err(Error::config("face size must be at least 2"));
    }
    let grid = img.grid();
    let c = img.channels();
    let faces = Face::ALL
        .par_iter()
        .map(|&face| {
            let mut data = Vec::with_capacity(face_size * face_size * c);
            for j in 0..face_size {
                for i in 0..face_size {
                    let d = face.direction(face_coord(i, face_size), face_coord(j, face_size));
                    let (u, v) = angles_to_pixel(&direction_of(&d), grid);
                    data.extend(sample_bilinear(img, u, v).0);
                }
            }
            Raster::new(face_size, face_size, c, data)
        })
        .collect::<Result<Vec<_>>>()?;
    CubeMap::new(faces)
}

pub fn cubemap_to_erp(cube: &CubeMap, grid: &ErpGrid) -> Result<ErpImage> {
    let n = cube.face_size;
    let c = cube.channels;
    let w = grid.width();
    let mut out = vec![0.0; grid.len() * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let d = crate::sphere::pixel_to_angles(u as f64, v as f64, grid).unit_vector();
            let face = Face::classify(&d);
            let (a, b) = face.project(&d);
            let fi = ((a + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let fj = ((b + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let raster = cube.face(face);
            // fi is clamped to [0, n-1], so the column wrap only ever pairs
            // the last column with zero weight
            let s = Stencil::new(fi, fj, n, n);
            for ch in 0..c {
                row[u * c + ch] = s.sample(raster.data(), n, c, ch).clamp(0.0, 1.0);
            }
        }
    });
    ErpImage::new(*grid, c, out)
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images; `+∞` when identical.
pub fn psnr(a: &ErpImage, b: &ErpImage) -> Result<f64> {
    if a.grid() != b.grid() || a.channels() != b.channels() {
        return Err(Error::config("images differ in size or channel count"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{pixel_to_angles, SphericalPoint};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn classify_and_project_invert_direction() {
        let n = 7;
        for face in Face::ALL {
            for j in 0..n {
                for i in 0..n {
                    let (a, b) = (face_coord(i, n), face_coord(j, n));
                    let d = face.direction(a, b);
                    assert_eq!(Face::classify(&d), face, "{face:?} {a} {b}");
                    let (a2, b2) = face.project(&d);
                    assert!((a - a2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn edge_tie_break() {
        assert_eq!(Face::classify(&Vector3::new(1.0, 1.0, 1.0)), Face::Right);
        assert_eq!(Face::classify(&Vector3::new(-1.0, 1.0, 0.0)), Face::Left);
        assert_eq!(Face::classify(&Vector3::new(0.0, -1.0, 1.0)), Face::Down);
        assert_eq!(Face::classify(&Vector3::new(0.0, 0.0, -2.0)), Face::Back);
    }

    #[test]
    fn axis_directions_land_on_face_centres() {
        let fwd = SphericalPoint::new(0.0, 0.0).unwrap().unit_vector();
        assert_eq!(Face::classify(&fwd), Face::Front);
        assert_eq!(Face::Front.project(&fwd), (0.0, 0.0));
        let up = SphericalPoint::new(FRAC_PI_2, 0.0).unwrap().unit_vector();
        assert_eq!(Face::classify(&up), Face::Up);
        let (a, b) = Face::Up.project(&up);
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
    }

    #[test]
    fn constant_images_stay_constant() {
        let g = ErpGrid::with_height(16).unwrap();
        let img = ErpImage::constant(g, &[0.25, 0.5, 0.75]).unwrap();
        let cube = erp_to_cubemap(&img, 8).unwrap();
        for f in cube.faces() {
            for px in f.data().chunks(3) {
                assert!((px[0] - 0.25).abs() < 1e-15 && (px[2] - 0.75).abs() < 1e-15);
            }
        }
        let back = cubemap_to_erp(&cube, &g).unwrap();
        assert!(psnr(&img, &back).unwrap() > 200.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        let g = ErpGrid::with_height(4).unwrap();
        let img = ErpImage::constant(g, &[0.5]).unwrap();
        assert!(erp_to_cubemap(&img, 1).is_err());
        let face = Raster::filled(4, 4, 1, 0.5);
        assert!(CubeMap::new(vec![face.clone(); 5]).is_err());
        let mut faces = vec![face; 6];
        faces[2] = Raster::filled(3, 3, 1, 0.5);
        assert!(CubeMap::new(faces).is_err());
    }

    #[test]
    fn front_face_centre_samples_erp_centre() {
        let g = ErpGrid::with_height(32).unwrap();
        let img = ErpImage::from_fn(g, 1, |u, v, px| {
            let p = pixel_to_angles(u as f64, v as f64, &g);
            px[0] = 0.5 + 0.4 * p.theta.sin() * p.phi.cos();
        })
        .unwrap();
        let cube = erp_to_cubemap(&img, 2).unwrap();
        let (u, v) = angles_to_pixel(&direction_of(&Face::Front.direction(-0.5, -0.5)), &g);
        let (expected, _) = sample_bilinear(&img, u, v);
        assert_eq!(cube.face(Face::Front).get(0, 0, 0), expected[0]);
    }
}
