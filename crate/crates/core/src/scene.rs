//! Analytic ERP renderer for an axis-aligned box room.
//!
//! The camera sits inside a box centred at the origin. Every ray hits a wall,
//! so rendered depth is exact and dense. Walls carry procedural textures
//! evaluated at the hit point without any filtering.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::raster::{DepthMap, ErpImage};
use crate::sphere::{pixel_rays, ErpGrid};

fn one() -> u32 {
    1
}

/// Wall order used by [`BoxScene::walls`].
pub const WALL_NAMES: [&str; 6] = ["+x", "-x", "+y", "-y", "+z", "-z"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    /// Two-colour checkerboard with `frequency` squares per meter.
    Checker {
        frequency: f64,
        colors: [[f64; 3]; 2],
    },
    /// Sum of sinusoids along the wall axes, blending two colours. Octave
    /// `k` doubles the frequency and halves the amplitude of octave `k - 1`.
    Plaid {
        /// Cycles per meter along the two in-plane axes.
        frequency: [f64; 2],
        #[serde(default)]
        phase: [f64; 2],
        colors: [[f64; 3]; 2],
        #[serde(default = "one")]
        octaves: u32,
    },
    Flat {
        color: [f64; 3],
    },
}

impl Texture {
    pub fn is_flat(&self) -> bool {
        matches!(self, Texture::Flat { .. })
    }

    /// Colour at in-plane wall coordinates `(s, t)` in meters.
    pub fn eval(&self, s: f64, t: f64) -> [f64; 3] {
        let mix = |c: &[[f64; 3]; 2], m: f64| {
            [
                c[0][0] + (c[1][0] - c[0][0]) * m,
                c[0][1] + (c[1][1] - c[0][1]) * m,
                c[0][2] + (c[1][2] - c[0][2]) * m,
            ]
        };
        match self {
            Texture::Checker { frequency, colors } => {
                let k = (s * frequency).floor() as i64 + (t * frequency).floor() as i64;
                colors[k.rem_euclid(2) as usize]
            }
            Texture::Plaid {
                frequency,
                phase,
                colors,
                octaves,
            } => {
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in 0..*octaves {
                    let (f, amp) = (f64::from(1u32 << k), 0.5f64.powi(k as i32));
                    let kf = f64::from(k);
                    acc += amp
                        * ((TAU * f * frequency[0] * s + phase[0] + 1.7 * kf).sin()
                            + (TAU * f * frequency[1] * t + phase[1] + 2.9 * kf).sin());
                    norm += amp;
                }
                mix(colors, 0.5 + 0.25 * acc / norm)
            }
            Texture::Flat { color } => *color,
        }
    }

    fn validate(&self) -> Result<()> {
        let colors: Vec<[f64; 3]> = match self {
            Texture::Checker { frequency, colors } => {
                if !(*frequency > 0.0 && frequency.is_finite()) {
                    return Err(Error::config("checker frequency must be positive"));
                }
                colors.to_vec()
            }
            Texture::Plaid {
                frequency,
                phase,
                colors,
                octaves,
            } => {
                if frequency.iter().chain(phase).any(|f| !f.is_finite()) {
                    return Err(Error::config("plaid parameters must be finite"));
                }
                if !(1..=8).contains(octaves) {
                    return Err(Error::config("plaid octaves must lie in 1..=8"));
                }
                colors.to_vec()
            }
            Texture::Flat { color } => vec![*color],
        };
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config("texture colours must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Axis-aligned room `[-h, h]` on each axis with one texture per wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxScene {
    pub half_extents: [f64; 3],
    /// Textures for the walls in [`WALL_NAMES`] order.
    pub walls: [Texture; 6],
}

impl BoxScene {
    /// The same one-cycle-per-meter plaid on every wall. The texture is
    /// continuous across edges when the half extents are multiples of 0.5 m
    /// that differ by whole meters, e.g. a cube of half extent 1 m.
    pub fn textured_room(half_extents: [f64; 3]) -> Self {
        let plaid = Texture::Plaid {
            frequency: [1.0, 1.0],
            phase: [0.3, 0.3],
            colors: [[0.9, 0.3, 0.1], [0.1, 0.4, 0.9]],
            octaves: 1,
        };
        Self {
            half_extents,
            walls: std::array::from_fn(|_| plaid.clone()),
        }
    }

    /// Plaid walls with distinct colours and frequencies, summing `octaves`
    /// sinusoid pairs of doubling frequency.
    pub fn plaid_room(half_extents: [f64; 3], octaves: u32) -> Self {
        let plaid = |f0: f64, f1: f64, p: f64, a: [f64; 3], b: [f64; 3]| Texture::Plaid {
            frequency: [f0, f1],
            phase: [p, 0.5 * p + 0.3],
            colors: [a, b],
            octaves,
        };
        Self {
            half_extents,
            walls: [
                plaid(1.5, 1.0, 0.0, [0.9, 0.2, 0.1], [0.1, 0.5, 0.9]),
                plaid(1.0, 1.5, 0.7, [0.2, 0.8, 0.3], [0.8, 0.1, 0.6]),
                plaid(1.25, 1.25, 1.3, [0.95, 0.9, 0.3], [0.2, 0.2, 0.6]),
                plaid(1.25, 1.0, 2.1, [0.3, 0.3, 0.3], [0.9, 0.7, 0.5]),
                plaid(1.0, 1.25, 0.4, [0.1, 0.3, 0.8], [0.9, 0.8, 0.2]),
                plaid(1.5, 1.25, 1.9, [0.7, 0.1, 0.2], [0.2, 0.9, 0.8]),
            ],
        }
    }

    /// Checkerboard walls.
    pub fn checker_room(half_extents: [f64; 3], frequency: f64) -> Self {
        let c = |a: [f64; 3], b: [f64; 3]| Texture::Checker {
            frequency,
            colors: [a, b],
        };
        Self {
            half_extents,
            walls: [
                c([0.9, 0.1, 0.1], [0.1, 0.1, 0.9]),
                c([0.1, 0.9, 0.1], [0.9, 0.9, 0.1]),
                c([0.9, 0.9, 0.9], [0.1, 0.1, 0.1]),
                c([0.5, 0.2, 0.1], [0.1, 0.5, 0.5]),
                c([0.8, 0.3, 0.9], [0.2, 0.7, 0.2]),
                c([0.3, 0.3, 0.8], [0.9, 0.6, 0.2]),
            ],
        }
    }

    /// Textured room whose ceiling (`+y`) is a single flat colour.
    pub fn textureless_ceiling(half_extents: [f64; 3]) -> Self {
        let mut s = Self::textured_room(half_extents);
        s.walls[2] = Texture::Flat {
            color: [0.8, 0.85, 0.9],
        };
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .half_extents
            .iter()
            .any(|h| !(*h > 0.0 && h.is_finite()))
        {
            return Err(Error::config("box half extents must be positive"));
        }
        self.walls.iter().try_for_each(Texture::validate)
    }

    fn contains_strictly(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i].abs() < self.half_extents[i])
    }

    /// Nearest wall hit from `origin` along unit `dir`: `(distance, wall index)`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for axis in 0..3 {
            let d = dir[axis];
            if d == 0.0 {
                continue;
            }
            let (plane, wall) = if d > 0.0 {
                (self.half_extents[axis], 2 * axis)
            } else {
                (-self.half_extents[axis], 2 * axis + 1)
            };
            let s = (plane - origin[axis]) / d;
            if s < best.0 {
                best = (s, wall);
            }
        }
        best
    }

    fn shade(&self, hit: &Vector3<f64>, wall: usize) -> [f64; 3] {
        let (s, t) = match wall / 2 {
            0 => (hit.z, hit.y),
            1 => (hit.x, hit.z),
            _ => (hit.x, hit.y),
        };
        self.walls[wall].eval(s, t)
    }
}

/// One rendered view with exact depth.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ErpImage,
    pub depth: DepthMap,
    /// World → camera pose.
    pub pose: Pose,
    /// Pixels whose hit wall carries a non-flat texture.
    pub textured: Vec<bool>,
}

/// Renders the room from a camera with world→camera `pose`.
pub fn render_erp(scene: &BoxScene, pose: &Pose, grid: &ErpGrid) -> Result<RenderedView> {
    scene.validate()?;
    let cam_to_world = pose.inverse();
    let centre = *cam_to_world.translation();
    if !scene.contains_strictly(&centre) {
        return Err(Error::config(format!(
            "camera centre ({:.3}, {:.3}, {:.3}) is not strictly inside the box",
            centre.x, centre.y, centre.z
        )));
    }
    let rot = *cam_to_world.rotation();
    let rays = pixel_rays(grid);
    let w = grid.width();
    let mut color = vec![0.0; grid.len() * 3];
    let mut depth = vec![0.0; grid.len()];
    let mut textured = vec![false; grid.len()];
    color
        .par_chunks_mut(w * 3)
        .zip(depth.par_chunks_mut(w))
        .zip(textured.par_chunks_mut(w))
        .enumerate()
        .for_each(|(v, ((crow, drow), trow))| {
            for u in 0..w {
                let dir = rot * rays[v * w + u];
                let (s, wall) = scene.intersect(&centre, &dir);
                let hit = centre + dir * s;
                crow[u * 3..u * 3 + 3].copy_from_slice(&scene.shade(&hit, wall));
                drow[u] = s;
                trow[u] = !scene.walls[wall].is_flat();
            }
        });
    Ok(RenderedView {
        image: ErpImage::new(*grid, 3, color)?,
        depth: DepthMap::new(*grid, depth)?,
        pose: *pose,
        textured,
    })
}

/// Renders the target view and a source view displaced by `relative_pose`
/// (target frame → source frame).
pub fn render_pair(
    scene: &BoxScene,
    target_pose: &Pose,
    relative_pose: &Pose,
    grid: &ErpGrid,
) -> Result<(RenderedView, RenderedView)> {
    let target = render_erp(scene, target_pose, grid)?;
    let source = render_erp(scene, &relative_pose.compose(target_pose), grid)?;
    Ok((target, source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{angles_to_pixel, SphericalPoint};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cube_room() -> BoxScene {
        BoxScene::textured_room([1.0, 1.0, 1.0])
    }

    #[test]
    fn analytic_distances_at_centre() {
        let s = cube_room();
        let o = Vector3::zeros();
        let fwd = SphericalPoint::new(0.0, 0.0).unwrap().unit_vector();
        assert_abs_diff_eq!(s.intersect(&o, &fwd).0, 1.0, epsilon = 1e-15);
        let corner = SphericalPoint::new((1.0 / 2f64.sqrt()).atan(), std::f64::consts::FRAC_PI_4)
            .unwrap()
            .unit_vector();
        assert_abs_diff_eq!(s.intersect(&o, &corner).0, 3f64.sqrt(), epsilon = 1e-12);
        let up = SphericalPoint::new(FRAC_PI_2, 0.0).unwrap().unit_vector();
        assert_abs_diff_eq!(s.intersect(&o, &up).0, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn textured_room_is_continuous_across_edges() {
        for h in [[1.0; 3], [0.5, 1.5, 2.5]] {
            let s = BoxScene::textured_room(h);
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                let free = 3 - a - b;
                for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    for k in 0..7 {
                        let mut p = Vector3::zeros();
                        p[a] = sa * h[a];
                        p[b] = sb * h[b];
                        p[free] = h[free] * (k as f64 / 3.0 - 1.0);
                        let wa = 2 * a + usize::from(sa < 0.0);
                        let wb = 2 * b + usize::from(sb < 0.0);
                        let (ca, cb) = (s.shade(&p, wa), s.shade(&p, wb));
                        for c in 0..3 {
                            assert_abs_diff_eq!(ca[c], cb[c], epsilon = 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rendered_depth_lies_on_walls() {
        let s = BoxScene::textured_room([1.0, 1.2, 1.5]);
        let pose =
            Pose::from_axis_angle(Vector3::new(0.05, 0.3, 0.0), Vector3::new(0.2, -0.1, 0.3));
        let g = ErpGrid::with_height(32).unwrap();
        let view = render_erp(&s, &pose, &g).unwrap();
        let inv = pose.inverse();
        let rays = pixel_rays(&g);
        for (i, d) in view.depth.values().iter().enumerate() {
            assert!(view.depth.valid()[i]);
            let hit = inv.transform_point(&(rays[i] * *d));
            let on_face = (0..3).any(|k| (hit[k].abs() - s.half_extents[k]).abs() < 1e-9);
            let inside = (0..3).all(|k| hit[k].abs() <= s.half_extents[k] + 1e-9);
            assert!(on_face && inside, "{hit:?}");
        }
        // nearest wall distance from camera centre
        let c = inv.translation();
        let nearest = (0..3)
            .map(|k| s.half_extents[k] - c[k].abs())
            .fold(f64::INFINITY, f64::min);
        let min_depth = view
            .depth
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_depth >= nearest - 1e-12);
        assert!(min_depth < nearest + 0.1);
    }

    #[test]
    fn deterministic() {
        let g = ErpGrid::with_height(16).unwrap();
        let a = render_erp(&cube_room(), &Pose::yaw(0.3), &g).unwrap();
        let b = render_erp(&cube_room(), &Pose::yaw(0.3), &g).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.depth.values(), b.depth.values());
    }

    #[test]
    fn camera_outside_is_rejected() {
        let g = ErpGrid::with_height(8).unwrap();
        let pose = Pose::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        assert!(matches!(
            render_erp(&cube_room(), &pose, &g),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_pair_is_identical() {
        let g = ErpGrid::with_height(16).unwrap();
        let (t, s) = render_pair(&cube_room(), &Pose::identity(), &Pose::identity(), &g).unwrap();
        assert_eq!(t.image.data(), s.image.data());
    }

    #[test]
    fn yaw_pair_is_rolled() {
        let g = ErpGrid::with_height(32).unwrap();
        let k = 6;
        let rel = Pose::yaw(TAU * k as f64 / g.width() as f64);
        let (t, s) = render_pair(&cube_room(), &Pose::identity(), &rel, &g).unwrap();
        // the source sees at longitude φ what the target sees at φ - ψ
        let rolled = t.image.roll_columns(-k);
        let max_err = rolled
            .data()
            .iter()
            .zip(s.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "{max_err}");
    }

    #[test]
    fn textureless_ceiling_mask() {
        let g = ErpGrid::with_height(16).unwrap();
        let v = render_erp(
            &BoxScene::textureless_ceiling([1.0; 3]),
            &Pose::identity(),
            &g,
        )
        .unwrap();
        let (_, row) = angles_to_pixel(&SphericalPoint::new(1.5, 0.0).unwrap(), &g);
        assert!(!v.textured[g.index(3, row.round() as usize)]);
        assert!(v.textured[g.index(3, 8)]);
    }

    #[test]
    fn scene_json_round_trip() {
        let s = BoxScene::textureless_ceiling([1.0, 2.0, 3.0]);
        let j = serde_json::to_string(&s).unwrap();
        let back: BoxScene = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
    }
}
