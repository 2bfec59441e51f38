//! User-authored motion: keyframed rigid curves for drag-units, strength
//! curves for brush- and drag-units, and a keyframed camera path.
//!
//! Curves are sampled per frame. Rigid keyframes are interpolated with
//! [`interpolate_rigid`], strengths linearly, and both hold their last
//! value after the final keyframe. Frame 0 is implicitly the identity /
//! zero and may only be restated with that value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{interpolate_rigid, RigidTransform};
use crate::scene::{Category, UnitPartition};

pub const DEFAULT_FRAME_COUNT: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptError {
    #[error("{target}: keyframe {frame} outside [0, {last}]")]
    KeyframeOutOfRange {
        target: String,
        frame: usize,
        last: usize,
    },
    #[error("script is missing curves for units {0:?}")]
    MissingUnitScript(Vec<u32>),
    #[error("script refers to unit {0}, which does not exist")]
    UnknownUnit(u32),
    #[error("invalid script: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseKeyframe {
    pub frame: usize,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthKeyframe {
    pub frame: usize,
    pub value: f64,
}

/// A constant strength (applied from frame 1 on) or a keyframed curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrengthCurve {
    Constant(f64),
    Keyframes(Vec<StrengthKeyframe>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigid: Option<Vec<PoseKeyframe>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<StrengthCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    #[serde(default = "default_frame_count")]
    pub frame_count: usize,
    #[serde(default)]
    pub camera: Vec<PoseKeyframe>,
    #[serde(default)]
    pub units: BTreeMap<u32, UnitScript>,
}

fn default_frame_count() -> usize {
    DEFAULT_FRAME_COUNT
}

impl Default for MotionScript {
    fn default() -> Self {
        Self::identity(DEFAULT_FRAME_COUNT)
    }
}

/// Per-frame samples of every curve in a script.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPlan {
    /// `E_λ`, length T.
    pub camera: Vec<RigidTransform>,
    /// `R⁽ᵖ⁾_λ` indexed `[unit][frame]`, borderland included.
    pub unit_rigid: Vec<Vec<RigidTransform>>,
    /// `m⁽ᵖ⁾_λ` indexed `[unit][frame]`.
    pub unit_strength: Vec<Vec<f64>>,
}

impl MotionPlan {
    pub fn frame_count(&self) -> usize {
        self.camera.len()
    }

    pub fn static_plan(frame_count: usize, unit_count: usize) -> Self {
        Self {
            camera: vec![RigidTransform::identity(); frame_count],
            unit_rigid: vec![vec![RigidTransform::identity(); frame_count]; unit_count],
            unit_strength: vec![vec![0.0; frame_count]; unit_count],
        }
    }
}

impl MotionScript {
    /// Static camera, no unit curves.
    pub fn identity(frame_count: usize) -> Self {
        Self {
            frame_count,
            camera: Vec::new(),
            units: BTreeMap::new(),
        }
    }

    /// Units whose required curves are absent: drag-units without a rigid
    /// curve and brush-units without a strength curve.
    pub fn missing_units(&self, partition: &UnitPartition) -> Vec<u32> {
        (1..partition.unit_count() as u32)
            .filter(|&p| {
                let entry = self.units.get(&p);
                match partition.category(p) {
                    Some(Category::Drag) => entry.and_then(|u| u.rigid.as_ref()).is_none(),
                    Some(Category::Brush) => entry.and_then(|u| u.strength.as_ref()).is_none(),
                    _ => false,
                }
            })
            .collect()
    }

    /// Checks the script against a partition without sampling it. Missing
    /// curves are not an error here; see [`MotionScript::missing_units`].
    pub fn validate(&self, partition: &UnitPartition) -> Result<(), ScriptError> {
        if self.frame_count == 0 {
            return Err(ScriptError::Invalid("frame_count must be at least 1".into()));
        }
        let last = self.frame_count - 1;
        check_pose_keys("camera", &self.camera, last)?;
        for (&p, unit) in &self.units {
            let category = partition.category(p).ok_or(ScriptError::UnknownUnit(p))?;
            let target = format!("unit {p}");
            match category {
                Category::Borderland => {
                    return Err(ScriptError::Invalid(
                        "the borderland takes neither a rigid nor a strength curve".into(),
                    ))
                }
                Category::Brush if unit.rigid.is_some() => {
                    return Err(ScriptError::Invalid(format!(
                        "{target} is a brush-unit and cannot take a rigid curve"
                    )))
                }
                _ => {}
            }
            if let Some(keys) = &unit.rigid {
                check_pose_keys(&target, keys, last)?;
            }
            if let Some(curve) = &unit.strength {
                check_strength(&target, curve, last)?;
            }
        }
        Ok(())
    }

    /// Samples every curve. With `strict`, missing required curves are an
    /// error; otherwise they default to identity / zero.
    pub fn resolve(&self, partition: &UnitPartition, strict: bool) -> Result<MotionPlan, ScriptError> {
        self.validate(partition)?;
        if strict {
            let missing = self.missing_units(partition);
            if !missing.is_empty() {
                return Err(ScriptError::MissingUnitScript(missing));
            }
        }
        let frames = self.frame_count;
        let mut plan = MotionPlan::static_plan(frames, partition.unit_count());
        plan.camera = sample_poses(&self.camera, frames);
        for (&p, unit) in &self.units {
            if let Some(keys) = &unit.rigid {
                plan.unit_rigid[p as usize] = sample_poses(keys, frames);
            }
            if let Some(curve) = &unit.strength {
                plan.unit_strength[p as usize] = sample_strength(curve, frames);
            }
        }
        Ok(plan)
    }
}

fn check_pose_keys(target: &str, keys: &[PoseKeyframe], last: usize) -> Result<(), ScriptError> {
    check_frames(target, keys.iter().map(|k| k.frame), last)?;
    if let Some(k) = keys.iter().find(|k| k.frame == 0) {
        if k.pose != RigidTransform::identity() {
            return Err(ScriptError::Invalid(format!(
                "{target}: the frame-0 pose must be the identity"
            )));
        }
    }
    Ok(())
}

fn check_strength(target: &str, curve: &StrengthCurve, last: usize) -> Result<(), ScriptError> {
    let bad = |v: f64| !(v.is_finite() && v >= 0.0);
    match curve {
        StrengthCurve::Constant(v) if bad(*v) => Err(ScriptError::Invalid(format!(
            "{target}: strength {v} must be finite and nonnegative"
        ))),
        StrengthCurve::Constant(_) => Ok(()),
        StrengthCurve::Keyframes(keys) => {
            check_frames(target, keys.iter().map(|k| k.frame), last)?;
            if let Some(k) = keys.iter().find(|k| bad(k.value)) {
                return Err(ScriptError::Invalid(format!(
                    "{target}: strength {} must be finite and nonnegative",
                    k.value
                )));
            }
            if keys.iter().any(|k| k.frame == 0 && k.value != 0.0) {
                return Err(ScriptError::Invalid(format!(
                    "{target}: the frame-0 strength must be zero"
                )));
            }
            Ok(())
        }
    }
}

fn check_frames(
    target: &str,
    frames: impl Iterator<Item = usize>,
    last: usize,
) -> Result<(), ScriptError> {
    let mut seen = std::collections::BTreeSet::new();
    for frame in frames {
        if frame > last {
            return Err(ScriptError::KeyframeOutOfRange {
                target: target.to_string(),
                frame,
                last,
            });
        }
        if !seen.insert(frame) {
            return Err(ScriptError::Invalid(format!(
                "{target}: duplicate keyframe at frame {frame}"
            )));
        }
    }
    Ok(())
}

fn sample_poses(keys: &[PoseKeyframe], frames: usize) -> Vec<RigidTransform> {
    let mut knots: Vec<(usize, RigidTransform)> = keys.iter().map(|k| (k.frame, k.pose)).collect();
    if !knots.iter().any(|k| k.0 == 0) {
        knots.push((0, RigidTransform::identity()));
    }
    knots.sort_by_key(|k| k.0);
    sample(&knots, frames, interpolate_rigid)
}

fn sample_strength(curve: &StrengthCurve, frames: usize) -> Vec<f64> {
    match curve {
        StrengthCurve::Constant(v) => (0..frames).map(|t| if t == 0 { 0.0 } else { *v }).collect(),
        StrengthCurve::Keyframes(keys) => {
            let mut knots: Vec<(usize, f64)> = keys.iter().map(|k| (k.frame, k.value)).collect();
            if !knots.iter().any(|k| k.0 == 0) {
                knots.push((0, 0.0));
            }
            knots.sort_by_key(|k| k.0);
            sample(&knots, frames, |a, b, s| a + (b - a) * s)
        }
    }
}

fn sample<T: Copy>(knots: &[(usize, T)], frames: usize, lerp: impl Fn(&T, &T, f64) -> T) -> Vec<T> {
    (0..frames)
        .map(|t| {
            let next = knots.iter().position(|k| k.0 >= t);
            match next {
                Some(i) if knots[i].0 == t => knots[i].1,
                Some(i) => {
                    let (f0, a) = knots[i - 1];
                    let (f1, b) = knots[i];
                    lerp(&a, &b, (t - f0) as f64 / (f1 - f0) as f64)
                }
                None => knots[knots.len() - 1].1,
            }
        })
        .collect()
}
