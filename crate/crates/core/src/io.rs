//! File formats: PFM depth, 8/16-bit PNG images and pose JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::raster::{DepthMap, ErpImage, Raster};
use crate::sphere::ErpGrid;

/// Single-channel float raster as stored in a PFM file, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Writes a grayscale little-endian PFM (`Pf`, scale `-1.0`).
pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<()> {
    if img.data.len() != img.width * img.height {
        return Err(Error::config(
            "PFM data length does not match its dimensions",
        ));
    }
    let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
    write!(out, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    for row in img.data.chunks(img.width.max(1)).rev() {
        for v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a PFM file; colour (`PF`) files are reduced to their first channel.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::input(path, e))?;
    let bad = |msg: &str| Error::input(path, format!("invalid PFM: {msg}"));
    // header: three whitespace-separated lines
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(&format!("unknown magic {other:?}"))),
    };
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be nonzero"));
    }
    let n = width * height * channels;
    let body = bytes
        .get(pos..pos + 4 * n)
        .ok_or_else(|| bad("truncated data"))?;
    let little = scale < 0.0;
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for row in values.chunks(width * channels).rev() {
        data.extend(row.iter().step_by(channels));
    }
    Ok(PfmImage {
        width,
        height,
        data,
    })
}

/// Saves depth as PFM; invalid pixels are written as 0.
pub fn save_depth_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let g = depth.grid();
    let data = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(d, ok)| if *ok { *d as f32 } else { 0.0 })
        .collect();
    write_pfm(
        path,
        &PfmImage {
            width: g.width(),
            height: g.height(),
            data,
        },
    )
}

/// Loads an ERP depth map; non-finite and nonpositive values become invalid.
pub fn load_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let pfm = read_pfm(path)?;
    let grid = ErpGrid::new(pfm.width, pfm.height).map_err(|e| Error::input(path, e))?;
    DepthMap::new(grid, pfm.data.iter().map(|v| f64::from(*v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(Self::Eight),
            16 => Ok(Self::Sixteen),
            _ => Err(Error::config(format!("unsupported PNG bit depth {bits}"))),
        }
    }
}

/// Writes a 1- or 3-channel `[0, 1]` raster as PNG.
pub fn save_raster_png(path: impl AsRef<Path>, raster: &Raster, depth: BitDepth) -> Result<()> {
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let q8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let q16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let d = raster.data();
    let img: DynamicImage = match (raster.channels(), depth) {
        (1, BitDepth::Eight) => {
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, d.iter().map(|v| q8(*v)).collect())
                .map(DynamicImage::ImageLuma8)
        }
        (1, BitDepth::Sixteen) => {
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, d.iter().map(|v| q16(*v)).collect())
                .map(DynamicImage::ImageLuma16)
        }
        (3, BitDepth::Eight) => {
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, d.iter().map(|v| q8(*v)).collect())
                .map(DynamicImage::ImageRgb8)
        }
        (3, BitDepth::Sixteen) => {
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, d.iter().map(|v| q16(*v)).collect())
                .map(DynamicImage::ImageRgb16)
        }
        (c, _) => return Err(Error::config(format!("cannot write a {c}-channel PNG"))),
    }
    .ok_or_else(|| Error::config("raster buffer does not match its dimensions"))?;
    img.save(path.as_ref())
        .map_err(|e| Error::input(path.as_ref(), e))
}

/// Reads a PNG (or any supported format) into `[0, 1]`; grayscale images
/// keep one channel, everything else becomes RGB.
pub fn load_raster_png(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::input(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(img.color().channel_count(), 1 | 2);
    if gray {
        let buf = img.into_luma16();
        Raster::new(
            h,
            w,
            1,
            buf.into_raw()
                .iter()
                .map(|v| f64::from(*v) / 65535.0)
                .collect(),
        )
    } else {
        let buf = img.into_rgb16();
        Raster::new(
            h,
            w,
            3,
            buf.into_raw()
                .iter()
                .map(|v| f64::from(*v) / 65535.0)
                .collect(),
        )
    }
}

pub fn save_erp_png(path: impl AsRef<Path>, img: &ErpImage, depth: BitDepth) -> Result<()> {
    save_raster_png(path, img.raster(), depth)
}

pub fn load_erp_png(path: impl AsRef<Path>) -> Result<ErpImage> {
    let path = path.as_ref();
    let raster = load_raster_png(path)?;
    let grid = ErpGrid::new(raster.width(), raster.height()).map_err(|e| Error::input(path, e))?;
    ErpImage::from_raster(grid, raster)
}

/// Pose as stored on disk. `rotation` takes precedence over `axis_angle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_angle: Option<[f64; 3]>,
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation();
        let w = pose.axis_angle();
        let t = pose.translation();
        Self {
            rotation: Some(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))),
            axis_angle: Some([w.x, w.y, w.z]),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let t = Vector3::from(self.translation);
        match (self.rotation, self.axis_angle) {
            (Some(r), _) => Pose::new(Matrix3::from_fn(|i, j| r[i][j]), t),
            (None, Some(w)) => Ok(Pose::from_axis_angle(Vector3::from(w), t)),
            (None, None) => Err(Error::config("pose needs a rotation or an axis_angle")),
        }
    }
}

pub fn save_pose_json(path: impl AsRef<Path>, pose: &Pose) -> Result<()> {
    let text = serde_json::to_string_pretty(&PoseRecord::from_pose(pose))
        .map_err(|e| Error::config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_pose_json(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::input(path, e))?;
    let rec: PoseRecord = serde_json::from_str(&text).map_err(|e| Error::input(path, e))?;
    rec.to_pose().map_err(|e| Error::input(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(
            h in 1usize..6,
            seed in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL, 72),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.pfm");
            let w = 2 * h;
            let img = PfmImage { width: w, height: h, data: seed[..w * h].to_vec() };
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            prop_assert_eq!(back.width, w);
            let same = img.data.iter().zip(&back.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        write_pfm(
            &path,
            &PfmImage {
                width: 2,
                height: 2,
                data: vec![1.0, 2.0, 3.0, 4.0],
            },
        )
        .unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(
            &bytes[header.len()..header.len() + 4],
            &3.0f32.to_le_bytes()
        );
    }

    #[test]
    fn reads_big_endian_and_colour() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let mut bytes = b"PF\n1 2\n1.0\n".to_vec();
        for v in [5.0f32, 0.0, 0.0, 7.0, 0.0, 0.0] {
            bytes.extend(v.to_be_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!(img.data, vec![7.0, 5.0]);
    }

    #[test]
    fn truncated_pfm_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        fs::write(&path, b"Pf\n4 2\n-1.0\n\0\0").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Input { .. })));
        assert!(matches!(
            read_pfm(dir.path().join("missing.pfm")),
            Err(Error::Input { .. })
        ));
    }

    #[test]
    fn depth_pfm_marks_zero_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let g = ErpGrid::with_height(2).unwrap();
        let mut d = DepthMap::new(g, (1..=8).map(f64::from).collect()).unwrap();
        d.invalidate(1, 0);
        save_depth_pfm(&path, &d).unwrap();
        let back = load_depth_pfm(&path).unwrap();
        assert!(!back.valid()[1]);
        assert_eq!(back.values()[7], 8.0);
    }

    #[test]
    fn png_round_trip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let g = ErpGrid::with_height(4).unwrap();
        let img = ErpImage::from_fn(g, 3, |u, v, px| {
            px[0] = u as f64 / 7.0;
            px[1] = v as f64 / 3.0;
            px[2] = 0.5;
        })
        .unwrap();
        for (bits, tol) in [
            (BitDepth::Eight, 0.5 / 255.0),
            (BitDepth::Sixteen, 0.5 / 65535.0),
        ] {
            let path = dir.path().join(format!("{bits:?}.png"));
            save_erp_png(&path, &img, bits).unwrap();
            let back = load_erp_png(&path).unwrap();
            assert_eq!(back.channels(), 3);
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= tol + 1e-12);
            }
        }
        let gray = Raster::filled(3, 3, 1, 0.25);
        let path = dir.path().join("g.png");
        save_raster_png(&path, &gray, BitDepth::Sixteen).unwrap();
        assert_eq!(load_raster_png(&path).unwrap().channels(), 1);
        assert!(load_erp_png(&path).is_err());
    }

    #[test]
    fn pose_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = Pose::from_axis_angle(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        save_pose_json(&path, &p).unwrap();
        let back = load_pose_json(&path).unwrap();
        let (deg, m) = p.error_to(&back);
        assert!(deg < 1e-9 && m < 1e-12);
        let rec: PoseRecord =
            serde_json::from_str(r#"{"axis_angle": [0, 0.5, 0], "translation": [0, 0, 1]}"#)
                .unwrap();
        assert!((rec.to_pose().unwrap().axis_angle().y - 0.5).abs() < 1e-15);
        assert!(
            serde_json::from_str::<PoseRecord>(r#"{"translation": [0,0,0], "extra": 1}"#).is_err()
        );
    }
}
