//! Depth error metrics over a masked, range-capped evaluation set.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    #[default]
    None,
    /// Scale predictions by `median(gt) / median(pred)` over the evaluation set.
    MedianRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_depth: f64,
    pub min_depth: f64,
    pub scaling: Scaling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_depth: 80.0,
            min_depth: 0.1,
            scaling: Scaling::None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return Err(Error::config(format!(
                "evaluation range must satisfy 0 < min < max, got [{}, {}]",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    /// Predictions clamped into `[min_depth, max_depth]` after alignment.
    pub n_clamped: usize,
}

const COLUMNS: [&str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3"];

impl DepthMetrics {
    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// Two-line aligned table: error columns then accuracy columns.
    pub fn table(&self) -> String {
        let header: Vec<String> = COLUMNS.iter().map(|c| format!("{c:>10}")).collect();
        let row: Vec<String> = self.values().iter().map(|v| format!("{v:>10.4}")).collect();
        format!("{}\n{}", header.join(" "), row.join(" "))
    }
}

impl fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Lower median for odd counts, midpoint of the two central values otherwise.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn compute_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: Option<&[bool]>,
    cfg: &EvalConfig,
) -> Result<DepthMetrics> {
    cfg.validate()?;
    if pred.grid() != gt.grid() {
        return Err(Error::config("prediction and ground truth grids differ"));
    }
    if mask.is_some_and(|m| m.len() != gt.grid().len()) {
        return Err(Error::config("mask size does not match the depth grid"));
    }
    let selected: Vec<usize> = (0..gt.grid().len())
        .filter(|&i| {
            let g = gt.values()[i];
            mask.is_none_or(|m| m[i]) && gt.valid()[i] && g >= cfg.min_depth && g <= cfg.max_depth
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Evaluation(
            "no pixels left after masking and capping".into(),
        ));
    }
    let gts: Vec<f64> = selected.iter().map(|&i| gt.values()[i]).collect();
    let mut preds: Vec<f64> = selected
        .iter()
        .map(|&i| {
            if pred.valid()[i] {
                pred.values()[i]
            } else {
                f64::NAN
            }
        })
        .collect();
    if cfg.scaling == Scaling::MedianRatio {
        let finite: Vec<f64> = preds.iter().copied().filter(|p| p.is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::Evaluation("no valid predictions to align".into()));
        }
        let ratio = median(&gts) / median(&finite);
        preds.iter_mut().for_each(|p| *p *= ratio);
    }
    let mut n_clamped = 0;
    for p in &mut preds {
        let c = if p.is_nan() {
            cfg.min_depth
        } else {
            p.clamp(cfg.min_depth, cfg.max_depth)
        };
        if c != *p {
            n_clamped += 1;
            *p = c;
        }
    }
    Ok(metrics_from_pairs(&preds, &gts, n_clamped))
}

fn metrics_from_pairs(preds: &[f64], gts: &[f64], n_clamped: usize) -> DepthMetrics {
    let n = preds.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (&p, &g) in preds.iter().zip(gts) {
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        sq += d * d;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        for (k, hit) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *hit += 1;
            }
        }
    }
    DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
        n_valid: preds.len(),
        n_clamped,
    }
}

/// Reads an evaluation mask from an image; any nonzero pixel is included.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(Vec<bool>, usize, usize)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::input(path, e))?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    Ok((
        luma.pixels().map(|p| p.0[0] != 0).collect(),
        w as usize,
        h as usize,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::ErpGrid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_prediction() {
        let g = ErpGrid::with_height(4).unwrap();
        let d = DepthMap::new(g, (0..32).map(|i| 1.0 + i as f64).collect()).unwrap();
        let m = compute_metrics(&d, &d, None, &EvalConfig::default()).unwrap();
        assert_eq!(m.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.n_valid, 32);
    }

    #[test]
    fn constant_four_vs_eight() {
        let g = ErpGrid::with_height(4).unwrap();
        let gt = DepthMap::constant(g, 4.0).unwrap();
        let pred = DepthMap::constant(g, 8.0).unwrap();
        let m = compute_metrics(&pred, &gt, None, &EvalConfig::default()).unwrap();
        assert_abs_diff_eq!(m.abs_rel, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.sq_rel, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rmse, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rmse_log, 2f64.ln(), epsilon = 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_set_is_an_evaluation_error() {
        let g = ErpGrid::with_height(2).unwrap();
        let d = DepthMap::constant(g, 4.0).unwrap();
        let mask = vec![false; 8];
        assert!(matches!(
            compute_metrics(&d, &d, Some(&mask), &EvalConfig::default()),
            Err(Error::Evaluation(_))
        ));
        let far = DepthMap::constant(g, 120.0).unwrap();
        assert!(matches!(
            compute_metrics(&far, &far, None, &EvalConfig::default()),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn checkerboard_mask_on_uniform_depths() {
        let g = ErpGrid::with_height(4).unwrap();
        let gt = DepthMap::constant(g, 3.0).unwrap();
        let pred = DepthMap::constant(g, 3.6).unwrap();
        let mask: Vec<bool> = (0..32).map(|i| (i % 8 + i / 8) % 2 == 0).collect();
        let a = compute_metrics(&pred, &gt, None, &EvalConfig::default()).unwrap();
        let b = compute_metrics(&pred, &gt, Some(&mask), &EvalConfig::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        assert_eq!(b.n_valid, 16);
    }

    #[test]
    fn nonpositive_predictions_are_clamped_and_counted() {
        let g = ErpGrid::with_height(2).unwrap();
        let gt = DepthMap::constant(g, 2.0).unwrap();
        let mut vals = vec![2.0; 8];
        vals[0] = -1.0;
        vals[1] = 500.0;
        let pred = DepthMap::with_mask(
            g,
            vals,
            vec![false, true, true, true, true, true, true, true],
        )
        .unwrap();
        let m = compute_metrics(&pred, &gt, None, &EvalConfig::default()).unwrap();
        assert_eq!(m.n_clamped, 2);
        assert_eq!(m.n_valid, 8);
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rejects_bad_config() {
        let g = ErpGrid::with_height(2).unwrap();
        let d = DepthMap::constant(g, 2.0).unwrap();
        let cfg = EvalConfig {
            min_depth: 5.0,
            max_depth: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            compute_metrics(&d, &d, None, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn table_has_seven_columns() {
        let g = ErpGrid::with_height(2).unwrap();
        let d = DepthMap::constant(g, 2.0).unwrap();
        let t = compute_metrics(&d, &d, None, &EvalConfig::default())
            .unwrap()
            .table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split_whitespace().count(), 7);
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>()[4], "1.0000");
    }
}
