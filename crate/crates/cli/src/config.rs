//! JSON experiment configs. Every document carries `schema_version` and
//! rejects unknown fields.

use std::fs;
use std::path::Path;

use erpdepth::io::{BitDepth, PoseRecord};
use erpdepth::refine::RefineConfig;
use erpdepth::scene::{BoxScene, Texture};
use erpdepth::{ErpGrid, Error, Pose, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub height: usize,
    /// Defaults to `2 * height`.
    #[serde(default)]
    pub width: Option<usize>,
}

impl GridConfig {
    pub fn grid(&self) -> Result<ErpGrid> {
        ErpGrid::new(self.width.unwrap_or(2 * self.height), self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    #[default]
    TexturedRoom,
    CheckerRoom,
    TexturelessCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "unit_room")]
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub preset: ScenePreset,
    /// Explicit wall textures in `+x, -x, +y, -y, +z, -z` order; overrides the preset.
    #[serde(default)]
    pub walls: Option<[Texture; 6]>,
}

fn unit_room() -> [f64; 3] {
    [1.0; 3]
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            half_extents: unit_room(),
            preset: ScenePreset::default(),
            walls: None,
        }
    }
}

impl SceneConfig {
    pub fn scene(&self) -> Result<BoxScene> {
        let scene = match (&self.walls, self.preset) {
            (Some(walls), _) => BoxScene {
                half_extents: self.half_extents,
                walls: walls.clone(),
            },
            (None, ScenePreset::TexturedRoom) => BoxScene::textured_room(self.half_extents),
            (None, ScenePreset::CheckerRoom) => BoxScene::checker_room(self.half_extents, 4.0),
            (None, ScenePreset::TexturelessCeiling) => {
                BoxScene::textureless_ceiling(self.half_extents)
            }
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    pub name: String,
    /// World → camera pose; identity when absent.
    #[serde(default)]
    pub pose: Option<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    #[serde(default)]
    pub target_pose: Option<PoseRecord>,
    /// Target → source camera motion.
    pub relative_pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub schema_version: u32,
    pub grid: GridConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub views: Vec<ViewConfig>,
    #[serde(default)]
    pub pair: Option<PairConfig>,
    #[serde(default = "eight")]
    pub bit_depth: u8,
}

fn eight() -> u8 {
    8
}

impl SynthConfig {
    pub fn bit_depth(&self) -> Result<BitDepth> {
        BitDepth::from_bits(self.bit_depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMaskChoice {
    /// Pixels whose wall carries a non-flat texture.
    #[default]
    Textured,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineExperiment {
    pub schema_version: u32,
    pub grid: GridConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub target_pose: Option<PoseRecord>,
    /// Target → source motions, one per source view.
    #[serde(default = "default_motion")]
    pub relative_poses: Vec<PoseRecord>,
    /// Starting poses; the ground truth when absent.
    #[serde(default)]
    pub initial_poses: Option<Vec<PoseRecord>>,
    #[serde(default = "two_meters")]
    pub initial_depth: f64,
    #[serde(default)]
    pub eval_mask: EvalMaskChoice,
    #[serde(default)]
    pub refine: RefineConfig,
}

fn default_motion() -> Vec<PoseRecord> {
    vec![PoseRecord {
        rotation: None,
        axis_angle: Some([0.0; 3]),
        translation: [0.1, 0.0, 0.0],
    }]
}

fn two_meters() -> f64 {
    2.0
}

pub fn pose_or_identity(rec: &Option<PoseRecord>) -> Result<Pose> {
    rec.as_ref()
        .map_or(Ok(Pose::identity()), PoseRecord::to_pose)
}

/// Reads a config, reporting parse errors with their line and column.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::input(path, e))?;
    let cfg: T = serde_json::from_str(&text).map_err(|e| Error::input(path, e))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(Error::input(
            path,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version()
            ),
        ));
    }
    Ok(cfg)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

impl Versioned for SynthConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

impl Versioned for RefineExperiment {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}
