//! Builds the control tensor from a scene, its partition, and per-unit
//! motion.
//!
//! For frame `λ` and a valid pixel `x` of unit `p`:
//!
//! * channels 0–1: `Π(E_λ⁻¹ ∘ R⁽ᵖ⁾_λ ∘ x)` in absolute pixel coordinates,
//!   or [`SENTINEL`] if the point is behind the camera or out of view;
//! * channel 2: `m⁽ᵖ⁾_λ`;
//! * channel 3: `p`;
//! * channel 4: the category code of `p`.
//!
//! Pixels without depth belong to no unit; they get the sentinel
//! trajectory and zeros elsewhere.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, RigidTransform};
use crate::scene::{Category, SceneDomain, UnitPartition, UNLABELED};
use crate::script::{MotionPlan, MotionScript, ScriptError};
use crate::tensor::{ControlTensor, CATEGORY, CHANNELS, PARTITION, SENTINEL, STRENGTH, TRAJ_U, TRAJ_V};
use crate::trajectory::{UnitMotion, FIRST_EXTRINSIC_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("partition is {found:?}, scene is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("motion plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("frame {frame} out of range for {frame_count} frames")]
    FrameOutOfRange { frame: usize, frame_count: usize },
}

impl ComposeError {
    /// Units named by a `MissingUnitScript` error, if that is what this is.
    pub fn missing_units(&self) -> Option<&[u32]> {
        match self {
            ComposeError::Script(ScriptError::MissingUnitScript(u)) => Some(u),
            _ => None,
        }
    }
}

/// Composes the tensor for a user script; every required curve must be present.
pub fn compose(
    scene: &SceneDomain,
    partition: &UnitPartition,
    script: &MotionScript,
) -> Result<ControlTensor, ComposeError> {
    check_dims(scene, partition)?;
    let plan = script.resolve(partition, true)?;
    compose_plan(scene, partition, &plan)
}

/// Composes the tensor from decomposed unit motions and solved extrinsics.
/// `unit_motions[p]` is the motion of unit `p`, borderland first.
pub fn compose_from_pipeline(
    scene: &SceneDomain,
    partition: &UnitPartition,
    unit_motions: &[UnitMotion],
    extrinsics: &[RigidTransform],
) -> Result<ControlTensor, ComposeError> {
    check_dims(scene, partition)?;
    if unit_motions.len() != partition.unit_count() {
        return Err(ComposeError::PlanMismatch(format!(
            "{} unit motions for {} units",
            unit_motions.len(),
            partition.unit_count()
        )));
    }
    let frames = extrinsics.len();
    for (p, m) in unit_motions.iter().enumerate() {
        let expected = partition.category(p as u32).expect("unit exists");
        if m.category != expected {
            return Err(ComposeError::PlanMismatch(format!(
                "unit {p} decomposed as {} but partitioned as {expected}",
                m.category
            )));
        }
        if m.rigid.len() != frames || m.strength.len() != frames {
            return Err(ComposeError::PlanMismatch(format!(
                "unit {p} has {} frames, extrinsics have {frames}",
                m.rigid.len()
            )));
        }
    }
    let plan = MotionPlan {
        camera: extrinsics.to_vec(),
        unit_rigid: unit_motions
            .iter()
            .map(|m| match m.category {
                Category::Drag => m.rigid.clone(),
                _ => vec![RigidTransform::identity(); frames],
            })
            .collect(),
        unit_strength: unit_motions
            .iter()
            .map(|m| match m.category {
                Category::Borderland => vec![0.0; frames],
                _ => m.strength.clone(),
            })
            .collect(),
    };
    compose_plan(scene, partition, &plan)
}

/// Composes every frame of an already-sampled plan.
pub fn compose_plan(
    scene: &SceneDomain,
    partition: &UnitPartition,
    plan: &MotionPlan,
) -> Result<ControlTensor, ComposeError> {
    check_plan(partition, plan)?;
    let frames = (0..plan.frame_count())
        .into_par_iter()
        .map(|t| render_frame(scene, partition, plan, t))
        .collect();
    Ok(ControlTensor::from_frames(
        scene.width() as usize,
        scene.height() as usize,
        frames,
    ))
}

/// One frame's five channels (channel-major, `5·H·W` values), computed on
/// its own so previews need not build the whole tensor.
pub fn compose_frame(
    scene: &SceneDomain,
    partition: &UnitPartition,
    plan: &MotionPlan,
    frame: usize,
) -> Result<Vec<f32>, ComposeError> {
    check_dims(scene, partition)?;
    check_plan(partition, plan)?;
    if frame >= plan.frame_count() {
        return Err(ComposeError::FrameOutOfRange {
            frame,
            frame_count: plan.frame_count(),
        });
    }
    Ok(render_frame(scene, partition, plan, frame))
}

fn check_dims(scene: &SceneDomain, partition: &UnitPartition) -> Result<(), ComposeError> {
    let expected = (scene.width(), scene.height());
    let found = (partition.width(), partition.height());
    if expected != found {
        return Err(ComposeError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_plan(partition: &UnitPartition, plan: &MotionPlan) -> Result<(), ComposeError> {
    let frames = plan.frame_count();
    if frames == 0 {
        return Err(ComposeError::PlanMismatch("no frames".into()));
    }
    let units = partition.unit_count();
    if plan.unit_rigid.len() != units || plan.unit_strength.len() != units {
        return Err(ComposeError::PlanMismatch(format!(
            "plan covers {} units, partition has {units}",
            plan.unit_rigid.len()
        )));
    }
    if plan
        .unit_rigid
        .iter()
        .zip(&plan.unit_strength)
        .any(|(r, m)| r.len() != frames || m.len() != frames)
    {
        return Err(ComposeError::PlanMismatch("curve lengths differ".into()));
    }
    let dev = plan.camera[0].max_abs_diff(&RigidTransform::identity());
    if dev > FIRST_EXTRINSIC_TOLERANCE {
        return Err(ComposeError::PlanMismatch(format!(
            "camera at frame 0 deviates from identity by {dev:e}"
        )));
    }
    Ok(())
}

fn render_frame(
    scene: &SceneDomain,
    partition: &UnitPartition,
    plan: &MotionPlan,
    t: usize,
) -> Vec<f32> {
    let plane = scene.pixel_count();
    let camera_inv = plan.camera[t].inverse();
    let to_view: Vec<RigidTransform> = plan
        .unit_rigid
        .iter()
        .map(|curve| camera_inv.compose(&curve[t]))
        .collect();
    let k = scene.intrinsics();
    let mut out = vec![0.0f32; CHANNELS * plane];
    let (traj, rest) = out.split_at_mut(2 * plane);
    let (traj_u, traj_v) = traj.split_at_mut(plane);
    let (strength, rest) = rest.split_at_mut(plane);
    let (part, cat) = rest.split_at_mut(plane);
    debug_assert_eq!((TRAJ_U, TRAJ_V, STRENGTH, PARTITION, CATEGORY), (0, 1, 2, 3, 4));

    for (px, &label) in partition.labels().iter().enumerate() {
        if label == UNLABELED {
            traj_u[px] = SENTINEL;
            traj_v[px] = SENTINEL;
            continue;
        }
        let p = label as usize;
        let y = to_view[p].apply(&scene.points()[px]);
        match project(k, &y) {
            Ok(uv) if k.contains(uv) => {
                traj_u[px] = uv[0] as f32;
                traj_v[px] = uv[1] as f32;
            }
            _ => {
                traj_u[px] = SENTINEL;
                traj_v[px] = SENTINEL;
            }
        }
        strength[px] = plan.unit_strength[p][t] as f32;
        part[px] = label as f32;
        cat[px] = partition.categories()[p].code() as f32;
    }
    out
}
