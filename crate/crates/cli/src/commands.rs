use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use erpdepth::cubemap::{cubemap_to_erp, erp_to_cubemap, psnr, CubeMap, Face};
use erpdepth::distortion::latitude_weights;
use erpdepth::io::{
    load_depth_pfm, load_erp_png, load_pose_json, load_raster_png, save_depth_pfm, save_erp_png,
    save_pose_json, save_raster_png, BitDepth,
};
use erpdepth::metrics::{compute_metrics, load_mask, EvalConfig, Scaling};
use erpdepth::refine::{refine as run_refine, RefineProblem, RefineReport};
use erpdepth::reprojection::warp_image;
use erpdepth::scene::{render_erp, render_pair, RenderedView};
use erpdepth::{DepthMap, ErpGrid, Error, Pose, Raster, Result};

use crate::config::{self, EvalMaskChoice, RefineExperiment, SynthConfig};
use crate::{CubemapCommand, MetricsArgs, WarpArgs};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::input(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::input(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn save_view(dir: &Path, name: &str, view: &RenderedView, bits: BitDepth) -> Result<()> {
    save_erp_png(dir.join(format!("{name}.png")), &view.image, bits)?;
    save_depth_pfm(dir.join(format!("{name}_depth.pfm")), &view.depth)?;
    save_pose_json(dir.join(format!("{name}_pose.json")), &view.pose)
}

pub fn synth(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: SynthConfig = config::load(config_path)?;
    let grid = cfg.grid.grid()?;
    let scene = cfg.scene.scene()?;
    let bits = cfg.bit_depth()?;
    if cfg.views.is_empty() && cfg.pair.is_none() {
        return Err(Error::input(
            config_path,
            "config requests neither views nor a pair",
        ));
    }
    ensure_dir(out)?;
    for view in &cfg.views {
        if view.name.is_empty() || view.name.contains(['/', '\\']) {
            return Err(Error::input(
                config_path,
                format!("invalid view name {:?}", view.name),
            ));
        }
        let pose = config::pose_or_identity(&view.pose)?;
        let rendered = render_erp(&scene, &pose, &grid)?;
        save_view(out, &view.name, &rendered, bits)?;
        println!("wrote view {}", view.name);
    }
    if let Some(pair) = &cfg.pair {
        let target_pose = config::pose_or_identity(&pair.target_pose)?;
        let relative = pair.relative_pose.to_pose()?;
        let (target, source) = render_pair(&scene, &target_pose, &relative, &grid)?;
        save_view(out, "target", &target, bits)?;
        save_view(out, "source", &source, bits)?;
        save_pose_json(out.join("relative_pose.json"), &relative)?;
        println!("wrote pair target/source");
    }
    Ok(())
}

pub fn warp(args: &WarpArgs) -> Result<()> {
    let bits = BitDepth::from_bits(args.bit_depth)?;
    let source = load_erp_png(&args.source)?;
    let depth = load_depth_pfm(&args.depth)?;
    let pose = load_pose_json(&args.pose)?;
    let result = warp_image(&source, &depth, &pose)?;
    save_erp_png(&args.out, &result.image, bits)?;
    let mask_path = args
        .mask_out
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, "_valid.png"));
    let grid = result.image.grid();
    let mask = result
        .valid_mask
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    let mask = Raster::new(grid.height(), grid.width(), 1, mask)?;
    save_raster_png(&mask_path, &mask, BitDepth::Eight)?;
    let n_valid = result.valid_mask.iter().filter(|&&m| m).count();
    println!("valid pixels: {n_valid}/{}", grid.len());
    Ok(())
}

pub fn weightmap(height: usize, width: usize, out: &Path) -> Result<()> {
    if width != 2 * height {
        return Err(Error::config(format!(
            "weight map requires W = 2H, got {width}x{height}"
        )));
    }
    let grid = ErpGrid::new(width, height)?;
    let rows = latitude_weights(grid.height());
    let data = rows
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w.clamp(0.0, 1.0), width))
        .collect();
    let raster = Raster::new(height, width, 1, data)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_raster_png(with_suffix(out, ".png"), &raster, BitDepth::Sixteen)?;
    let mut csv = String::from("row,weight\n");
    for (v, w) in rows.iter().enumerate() {
        writeln!(csv, "{v},{w:.17}").unwrap();
    }
    write_text(&with_suffix(out, ".csv"), &csv)
}

fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn cubemap(cmd: &CubemapCommand) -> Result<()> {
    match cmd {
        CubemapCommand::Split {
            input,
            face_size,
            out_dir,
            prefix,
        } => {
            let img = load_erp_png(input)?;
            let cube = erp_to_cubemap(&img, *face_size)?;
            ensure_dir(out_dir)?;
            for face in Face::ALL {
                let path = out_dir.join(format!("{prefix}_{}.png", face.suffix()));
                save_raster_png(path, cube.face(face), BitDepth::Sixteen)?;
            }
            Ok(())
        }
        CubemapCommand::Merge { faces, height, out } => {
            if faces.len() != 6 {
                return Err(Error::config(format!(
                    "merge needs 6 faces (F, B, L, R, U, D), got {}",
                    faces.len()
                )));
            }
            let rasters = faces
                .iter()
                .map(load_raster_png)
                .collect::<Result<Vec<_>>>()?;
            let cube = CubeMap::new(rasters)?;
            let grid = ErpGrid::new(2 * height, *height)?;
            let erp = cubemap_to_erp(&cube, &grid)?;
            save_erp_png(out, &erp, BitDepth::Sixteen)
        }
        CubemapCommand::Roundtrip {
            input,
            face_size,
            out,
        } => {
            let img = load_erp_png(input)?;
            let cube = erp_to_cubemap(&img, *face_size)?;
            let back = cubemap_to_erp(&cube, img.grid())?;
            if let Some(out) = out {
                save_erp_png(out, &back, BitDepth::Sixteen)?;
            }
            println!("psnr_db: {}", format_psnr(psnr(&img, &back)?));
            Ok(())
        }
    }
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let pred = load_depth_pfm(&args.pred)?;
    let gt = load_depth_pfm(&args.gt)?;
    let mask = match &args.mask {
        Some(path) => {
            let (m, w, h) = load_mask(path)?;
            if w != gt.grid().width() || h != gt.grid().height() {
                return Err(Error::input(
                    path,
                    format!(
                        "mask is {w}x{h}, depth is {}x{}",
                        gt.grid().width(),
                        gt.grid().height()
                    ),
                ));
            }
            Some(m)
        }
        None => None,
    };
    let cfg = EvalConfig {
        max_depth: args.max_depth,
        min_depth: args.min_depth,
        scaling: if args.median_scale {
            Scaling::MedianRatio
        } else {
            Scaling::None
        },
    };
    let m = compute_metrics(&pred, &gt, mask.as_deref(), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&m).unwrap());
    println!("{}", m.table());
    Ok(())
}

fn losses_csv(losses: &[f64]) -> String {
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(csv, "{i},{l:.17e}").unwrap();
    }
    csv
}

/// Relative depth error mapped to gray, saturating at 50 %.
fn error_image(pred: &DepthMap, gt: &DepthMap) -> Result<Raster> {
    let grid = gt.grid();
    let data = (0..grid.len())
        .map(|i| {
            if !(gt.valid()[i] && pred.valid()[i]) {
                return 0.0;
            }
            let g = gt.values()[i];
            ((pred.values()[i] - g).abs() / g / 0.5).min(1.0)
        })
        .collect();
    Raster::new(grid.height(), grid.width(), 1, data)
}

pub fn refine(config_path: &Path, out: &Path) -> Result<()> {
    let exp: RefineExperiment = config::load(config_path)?;
    exp.refine.validate()?;
    let grid = exp.grid.grid()?;
    let scene = exp.scene.scene()?;
    let target_pose = config::pose_or_identity(&exp.target_pose)?;
    if exp.relative_poses.is_empty() {
        return Err(Error::input(
            config_path,
            "at least one relative pose is required",
        ));
    }
    let gt_poses = exp
        .relative_poses
        .iter()
        .map(|r| r.to_pose())
        .collect::<Result<Vec<Pose>>>()?;
    let initial_poses = match &exp.initial_poses {
        Some(recs) => {
            if recs.len() != gt_poses.len() {
                return Err(Error::input(
                    config_path,
                    "initial_poses must match relative_poses in length",
                ));
            }
            recs.iter()
                .map(|r| r.to_pose())
                .collect::<Result<Vec<_>>>()?
        }
        None => gt_poses.clone(),
    };
    if !(exp.initial_depth.is_finite() && exp.initial_depth > 0.0) {
        return Err(Error::input(config_path, "initial_depth must be positive"));
    }
    let target = render_erp(&scene, &target_pose, &grid)?;
    let sources = gt_poses
        .iter()
        .map(|p| render_erp(&scene, &p.compose(&target_pose), &grid).map(|v| v.image))
        .collect::<Result<Vec<_>>>()?;
    let eval_mask = match exp.eval_mask {
        EvalMaskChoice::Textured => Some(target.textured.clone()),
        EvalMaskChoice::All => None,
    };
    let problem = RefineProblem {
        target: target.image,
        sources,
        gt_poses,
        gt_depth: target.depth,
        eval_mask,
    };
    let init = DepthMap::constant(grid, exp.initial_depth)?;
    ensure_dir(out)?;
    let report: RefineReport = match run_refine(&problem, &init, &initial_poses, &exp.refine) {
        Ok(r) => r,
        Err(e) => {
            if let Error::Divergence { trajectory, .. } = &e {
                write_text(&out.join("losses.csv"), &losses_csv(trajectory))?;
            }
            return Err(e);
        }
    };
    write_text(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    write_text(&out.join("losses.csv"), &losses_csv(&report.losses))?;
    if let Some(depth) = &report.final_depth {
        save_depth_pfm(out.join("depth.pfm"), depth)?;
        save_raster_png(
            out.join("depth_error.png"),
            &error_image(depth, &problem.gt_depth)?,
            BitDepth::Eight,
        )?;
    }
    println!("initial\n{}", report.initial_metrics.table());
    println!("final\n{}", report.final_metrics.table());
    Ok(())
}
