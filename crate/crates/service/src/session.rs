//! Authoring sessions as immutable snapshots advanced by patches.
//!
//! Applying a patch never mutates a snapshot; it builds the next one or
//! fails with the snapshot untouched. Replaying the same patches from the
//! same upload reproduces the same state.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use motionforge::compose::{compose, compose_frame, ComposeError};
use motionforge::formats::{decode_depth, decode_mask_png};
use motionforge::manifest::{dump_scene, write_json};
use motionforge::preview::{preview_from_channels, PreviewFrame};
use motionforge::scene::{build_partition, Category, Mask, PinholeParams, SceneDomain, UnitPartition};
use motionforge::script::{MotionScript, PoseKeyframe, ScriptError, StrengthCurve, DEFAULT_FRAME_COUNT};
use motionforge::tensor::ControlTensor;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    DimensionMismatch(String),
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("revision conflict: patch is based on {base}, session is at {current}")]
    Conflict { base: u64, current: u64 },
    #[error("{0}")]
    Invariant(String),
    #[error("script is incomplete for units {0:?}")]
    IncompleteScript(Vec<u32>),
    #[error("frames {from}..={to} outside 0..{frame_count}")]
    FrameOutOfRange { from: usize, to: usize, frame_count: usize },
    #[error("{0}")]
    Internal(String),
}

impl SessionError {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::BadRequest(_) => "BadRequest",
            SessionError::DimensionMismatch(_) => "DimensionMismatch",
            SessionError::NotFound(_) => "NotFound",
            SessionError::Conflict { .. } => "RevisionConflict",
            SessionError::Invariant(_) => "InvariantViolation",
            SessionError::IncompleteScript(_) => "IncompleteScript",
            SessionError::FrameOutOfRange { .. } => "FrameOutOfRange",
            SessionError::Internal(_) => "Internal",
        }
    }
}

fn default_frame_count() -> usize {
    DEFAULT_FRAME_COUNT
}

/// Upload that opens a session: intrinsics, a base64 `DPTH` file, and an
/// optional base64 first-frame image used for its size and as the
/// preview backdrop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub intrinsics: PinholeParams,
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default = "default_frame_count")]
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskInput {
    Png { png_base64: String },
    /// Half-open `[u0, v0, u1, v1]`.
    Rect { rect: [u32; 4] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PatchOp {
    AddUnit { category: Category, mask: MaskInput },
    RemoveUnit { unit: u32 },
    SetCategory { unit: u32, category: Category },
    /// An empty list clears the curve.
    SetDragKeyframes { unit: u32, keyframes: Vec<PoseKeyframe> },
    SetStrength { unit: u32, curve: Option<StrengthCurve> },
    SetCameraPath { keyframes: Vec<PoseKeyframe> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub base_revision: u64,
    pub op: PatchOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub revision: u64,
    pub unit_count: usize,
    pub changed_units: Vec<u32>,
    pub camera_changed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitView {
    pub id: u32,
    pub category: Category,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub revision: u64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub units: Vec<UnitView>,
    pub script: MotionScript,
    pub missing_units: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub id: String,
    pub revision: u64,
    pub scene: Arc<SceneDomain>,
    pub background: Option<Arc<RgbImage>>,
    masks: Vec<Mask>,
    categories: Vec<Category>,
    pub partition: UnitPartition,
    pub script: MotionScript,
}

fn decode_b64(what: &str, s: &str) -> Result<Vec<u8>, SessionError> {
    BASE64
        .decode(s.trim())
        .map_err(|e| SessionError::BadRequest(format!("{what} is not valid base64: {e}")))
}

fn script_error(e: ScriptError) -> SessionError {
    match e {
        ScriptError::MissingUnitScript(units) => SessionError::IncompleteScript(units),
        other => SessionError::Invariant(other.to_string()),
    }
}

fn compose_error(e: ComposeError) -> SessionError {
    match e {
        ComposeError::Script(s) => script_error(s),
        other => SessionError::Internal(other.to_string()),
    }
}

impl SessionState {
    /// Revision 0: everything borderland, identity script.
    pub fn create(id: String, req: &CreateSession) -> Result<Self, SessionError> {
        let depth = decode_depth(&decode_b64("depth", &req.depth)?)
            .map_err(|e| SessionError::BadRequest(format!("depth: {e}")))?;
        let background = match &req.image {
            Some(b64) => {
                let img = image::load_from_memory(&decode_b64("image", b64)?)
                    .map_err(|e| SessionError::BadRequest(format!("image: {e}")))?
                    .to_rgb8();
                if img.dimensions() != (depth.width, depth.height) {
                    return Err(SessionError::DimensionMismatch(format!(
                        "image is {}×{}, depth is {}×{}",
                        img.width(),
                        img.height(),
                        depth.width,
                        depth.height
                    )));
                }
                Some(Arc::new(img))
            }
            None => None,
        };
        if req.frame_count == 0 {
            return Err(SessionError::BadRequest("frame_count must be at least 1".into()));
        }
        let k = req
            .intrinsics
            .to_intrinsics(depth.width, depth.height)
            .map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let scene = SceneDomain::from_depth(k, depth.values).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let partition = UnitPartition::borderland_only(&scene);
        Ok(Self {
            id,
            revision: 0,
            scene: Arc::new(scene),
            background,
            masks: Vec::new(),
            categories: Vec::new(),
            partition,
            script: MotionScript::identity(req.frame_count),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.script.frame_count
    }

    fn check_unit(&self, unit: u32) -> Result<(), SessionError> {
        if unit == 0 || unit as usize >= self.partition.unit_count() {
            return Err(SessionError::Invariant(format!(
                "unit {unit} is not a foreground unit (have 1..{})",
                self.partition.unit_count()
            )));
        }
        Ok(())
    }

    /// The next snapshot, or an error with `self` unchanged.
    pub fn apply(&self, op: &PatchOp) -> Result<(SessionState, PatchSummary), SessionError> {
        let mut next = self.clone();
        let mut changed = Vec::new();
        let mut camera_changed = false;
        let mut note = None;
        let mut repartition = false;
        match op {
            PatchOp::AddUnit { category, mask } => {
                if *category == Category::Borderland {
                    return Err(SessionError::Invariant("a new unit must be drag or brush".into()));
                }
                let mask = match mask {
                    MaskInput::Png { png_base64 } => decode_mask_png(&decode_b64("mask", png_base64)?)
                        .map_err(|e| SessionError::BadRequest(format!("mask: {e}")))?,
                    MaskInput::Rect { rect: [u0, v0, u1, v1] } => {
                        let (w, h) = (self.scene.width(), self.scene.height());
                        if u1 > &w || v1 > &h || u0 >= u1 || v0 >= v1 {
                            return Err(SessionError::Invariant(format!(
                                "rectangle {:?} is empty or outside {w}×{h}",
                                [u0, v0, u1, v1]
                            )));
                        }
                        Mask::rect(w, h, *u0, *v0, *u1, *v1)
                    }
                };
                next.masks.push(mask);
                next.categories.push(*category);
                changed.push(next.masks.len() as u32);
                repartition = true;
            }
            PatchOp::RemoveUnit { unit } => {
                self.check_unit(*unit)?;
                let u = *unit;
                next.masks.remove(u as usize - 1);
                next.categories.remove(u as usize - 1);
                next.script.units = std::mem::take(&mut next.script.units)
                    .into_iter()
                    .filter(|(k, _)| *k != u)
                    .map(|(k, v)| (if k > u { k - 1 } else { k }, v))
                    .collect();
                changed.extend(u..self.partition.unit_count() as u32);
                repartition = true;
            }
            PatchOp::SetCategory { unit, category } => {
                self.check_unit(*unit)?;
                if *category == Category::Borderland {
                    return Err(SessionError::Invariant("only unit 0 is the borderland".into()));
                }
                next.categories[*unit as usize - 1] = *category;
                if *category == Category::Brush {
                    if let Some(entry) = next.script.units.get_mut(unit) {
                        if entry.rigid.take().is_some() {
                            note = Some(format!("unit {unit}: rigid curve dropped, brush-units take none"));
                        }
                    }
                }
                changed.push(*unit);
                repartition = true;
            }
            PatchOp::SetDragKeyframes { unit, keyframes } => {
                self.check_unit(*unit)?;
                if self.partition.category(*unit) != Some(Category::Drag) {
                    return Err(SessionError::Invariant(format!("unit {unit} is not a drag-unit")));
                }
                let entry = next.script.units.entry(*unit).or_default();
                entry.rigid = (!keyframes.is_empty()).then(|| keyframes.clone());
                changed.push(*unit);
            }
            PatchOp::SetStrength { unit, curve } => {
                self.check_unit(*unit)?;
                let entry = next.script.units.entry(*unit).or_default();
                entry.strength = curve.clone();
                changed.push(*unit);
            }
            PatchOp::SetCameraPath { keyframes } => {
                next.script.camera = keyframes.clone();
                camera_changed = true;
            }
        }
        next.script.units.retain(|_, u| u.rigid.is_some() || u.strength.is_some());
        if repartition {
            next.partition = build_partition(&self.scene, &next.masks, &next.categories)
                .map_err(|e| SessionError::Invariant(e.to_string()))?;
        }
        next.script.validate(&next.partition).map_err(script_error)?;
        next.revision = self.revision + 1;
        let summary = PatchSummary {
            revision: next.revision,
            unit_count: next.partition.unit_count(),
            changed_units: changed,
            camera_changed,
            note,
        };
        Ok((next, summary))
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            revision: self.revision,
            width: self.scene.width(),
            height: self.scene.height(),
            frame_count: self.frame_count(),
            units: (0..self.partition.unit_count() as u32)
                .map(|id| UnitView {
                    id,
                    category: self.partition.category(id).expect("unit exists"),
                    pixels: self.partition.pixel_count(id),
                })
                .collect(),
            script: self.script.clone(),
            missing_units: self.script.missing_units(&self.partition),
        }
    }

    fn check_range(&self, from: usize, to: usize) -> Result<(), SessionError> {
        let frame_count = self.frame_count();
        if from > to || to >= frame_count {
            return Err(SessionError::FrameOutOfRange { from, to, frame_count });
        }
        Ok(())
    }

    /// Preview points for frames `from..=to`, composing only those frames.
    /// Missing curves preview as static.
    pub fn preview(&self, from: usize, to: usize, stride: usize) -> Result<Vec<PreviewFrame>, SessionError> {
        self.check_range(from, to)?;
        let plan = self.script.resolve(&self.partition, false).map_err(script_error)?;
        let (w, h) = (self.scene.width() as usize, self.scene.height() as usize);
        (from..=to)
            .map(|t| {
                let channels = compose_frame(&self.scene, &self.partition, &plan, t).map_err(compose_error)?;
                Ok(preview_from_channels(w, h, &channels, t, stride))
            })
            .collect()
    }

    pub fn preview_png(&self, frame: usize) -> Result<Vec<u8>, SessionError> {
        let pv = self.preview(frame, frame, 1)?;
        Ok(pv[0].to_png(self.background.as_deref()))
    }

    /// Same bytes as composing the dumped scene and script from files.
    pub fn export(&self) -> Result<ControlTensor, SessionError> {
        compose(&self.scene, &self.partition, &self.script).map_err(compose_error)
    }

    /// Writes `scene.json` (with depth and masks) and `script.json` into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<(PathBuf, PathBuf), SessionError> {
        let internal = |e: motionforge::manifest::ManifestError| SessionError::Internal(e.to_string());
        let scene = dump_scene(&self.scene, &self.partition, dir).map_err(internal)?;
        let script = dir.join("script.json");
        write_json(&self.script, &script).map_err(internal)?;
        Ok((scene, script))
    }
}
