//! Row-major float rasters.

use crate::error::{Error, Result};
use crate::sphere::ErpGrid;

/// Unconstrained `height × width × channels` float raster, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("raster needs at least one channel"));
        }
        if data.len() != height * width * channels {
            return Err(Error::config(format!(
                "raster data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Equirectangular image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    grid: ErpGrid,
    raster: Raster,
}

impl ErpImage {
    pub fn new(grid: ErpGrid, channels: usize, data: Vec<f64>) -> Result<Self> {
        let raster = Raster::new(grid.height(), grid.width(), channels, data)?;
        Self::from_raster(grid, raster)
    }

    pub fn from_raster(grid: ErpGrid, raster: Raster) -> Result<Self> {
        if raster.height != grid.height() || raster.width != grid.width() {
            return Err(Error::config("raster dimensions do not match the ERP grid"));
        }
        if let Some(bad) = raster.data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::domain(format!(
                "image intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self { grid, raster })
    }

    /// Builds an image from a per-pixel function returning `channels` values.
    pub fn from_fn(
        grid: ErpGrid,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let mut data = vec![0.0; grid.len() * channels];
        for v in 0..grid.height() {
            for u in 0..grid.width() {
                let i = grid.index(u, v) * channels;
                f(u, v, &mut data[i..i + channels]);
            }
        }
        Self::new(grid, channels, data)
    }

    pub fn constant(grid: ErpGrid, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, value.len(), |_, _, px| px.copy_from_slice(value))
    }

    #[inline]
    pub fn grid(&self) -> &ErpGrid {
        &self.grid
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.raster.channels
    }

    #[inline]
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.raster.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.raster.get(u, v, c)
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        self.raster.pixel(u, v)
    }

    /// Image shifted so that `out(u) = self(u + k mod W)`.
    pub fn roll_columns(&self, k: isize) -> ErpImage {
        let w = self.grid.width() as isize;
        let c = self.channels();
        let mut data = vec![0.0; self.raster.data.len()];
        for v in 0..self.grid.height() {
            for u in 0..self.grid.width() {
                let src = (u as isize + k).rem_euclid(w) as usize;
                let o = self.grid.index(u, v) * c;
                data[o..o + c].copy_from_slice(self.pixel(src, v));
            }
        }
        ErpImage {
            grid: self.grid,
            raster: Raster {
                data,
                ..self.raster.clone()
            },
        }
    }
}

/// Radial depth in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    grid: ErpGrid,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Entries that are finite and strictly positive are marked valid.
    pub fn new(grid: ErpGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config(format!(
                "depth map has {} values for a {}x{} grid",
                values.len(),
                grid.width(),
                grid.height()
            )));
        }
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self {
            grid,
            values,
            valid,
        })
    }

    /// Explicit mask; entries marked valid must be finite and positive.
    pub fn with_mask(grid: ErpGrid, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || valid.len() != grid.len() {
            return Err(Error::config(
                "depth map and mask sizes do not match the grid",
            ));
        }
        if values
            .iter()
            .zip(&valid)
            .any(|(d, ok)| *ok && !(d.is_finite() && *d > 0.0))
        {
            return Err(Error::domain(
                "valid depth entries must be finite and positive",
            ));
        }
        Ok(Self {
            grid,
            values,
            valid,
        })
    }

    pub fn constant(grid: ErpGrid, depth: f64) -> Result<Self> {
        Self::new(grid, vec![depth; grid.len()])
    }

    #[inline]
    pub fn grid(&self) -> &ErpGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.grid.index(u, v);
        self.valid[i].then_some(self.values[i])
    }

    pub fn scaled(&self, s: f64) -> DepthMap {
        DepthMap {
            grid: self.grid,
            values: self.values.iter().map(|d| d * s).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn invalidate(&mut self, u: usize, v: usize) {
        let i = self.grid.index(u, v);
        self.valid[i] = false;
    }
}
