//! Dense point trajectories and their per-unit decomposition into a rigid
//! term plus a residual, the motion-strength functional, and camera
//! extrinsics recovered from borderland tracks.
//!
//! Time is discrete: frames `0..T`, one frame per unit of time. A field is
//! stored frame-major, so sample `(t, i)` lives at `t * N + i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fit_rigid_pairs, GeometryError, Point3, RigidTransform, Vector3};
use crate::scene::Category;

/// Tolerance on `E_0 = I`.
pub const FIRST_EXTRINSIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("expected a {expected:?}-frame field, got {found:?}")]
    FrameMismatch {
        expected: CoordinateFrame,
        found: CoordinateFrame,
    },
    #[error("first extrinsic is not the identity (max deviation {0:e})")]
    NonIdentityFirstExtrinsic(f64),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("degenerate geometry at frame {frame}: {reason}")]
    DegenerateGeometry { frame: usize, reason: String },
    #[error("unit has no points")]
    EmptyUnit,
    #[error("point index {index} out of range for {count} tracked points")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid trajectory field: {0}")]
    InvalidField(String),
}

/// Which coordinate system the positions are expressed in: the first
/// frame's camera (`World`, the paper's D) or the camera at each frame (F).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateFrame {
    World,
    Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    frame: CoordinateFrame,
    frame_count: usize,
    point_count: usize,
    positions: Vec<Point3>,
    valid: Vec<bool>,
}

impl TrajectoryField {
    pub fn new(
        frame: CoordinateFrame,
        frame_count: usize,
        point_count: usize,
        positions: Vec<Point3>,
        valid: Vec<bool>,
    ) -> Result<Self, TrajectoryError> {
        if frame_count == 0 {
            return Err(TrajectoryError::InvalidField("zero frames".into()));
        }
        let n = frame_count * point_count;
        if positions.len() != n || valid.len() != n {
            return Err(TrajectoryError::LengthMismatch(format!(
                "{frame_count}×{point_count} samples, got {} positions and {} flags",
                positions.len(),
                valid.len()
            )));
        }
        if let Some(i) = valid[..point_count].iter().position(|v| !v) {
            return Err(TrajectoryError::InvalidField(format!(
                "point {i} is not valid at frame 0"
            )));
        }
        Ok(Self {
            frame,
            frame_count,
            point_count,
            positions,
            valid,
        })
    }

    /// Fully valid field from a generator `f(t, i)`.
    pub fn from_fn(
        frame: CoordinateFrame,
        frame_count: usize,
        point_count: usize,
        f: impl Fn(usize, usize) -> Point3,
    ) -> Self {
        let positions = (0..frame_count)
            .flat_map(|t| (0..point_count).map(move |i| (t, i)))
            .map(|(t, i)| f(t, i))
            .collect();
        Self {
            frame,
            frame_count,
            point_count,
            positions,
            valid: vec![true; frame_count * point_count],
        }
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn position(&self, t: usize, i: usize) -> &Point3 {
        &self.positions[t * self.point_count + i]
    }

    pub fn is_valid(&self, t: usize, i: usize) -> bool {
        self.valid[t * self.point_count + i]
    }

    pub fn frame_positions(&self, t: usize) -> &[Point3] {
        &self.positions[t * self.point_count..(t + 1) * self.point_count]
    }

    pub fn frame_validity(&self, t: usize) -> &[bool] {
        &self.valid[t * self.point_count..(t + 1) * self.point_count]
    }

    /// Ω: the positions at frame 0.
    pub fn initial_points(&self) -> &[Point3] {
        self.frame_positions(0)
    }

    pub fn set_valid(&mut self, t: usize, i: usize, valid: bool) {
        if t > 0 {
            self.valid[t * self.point_count + i] = valid;
        }
    }

    fn with_positions(&self, frame: CoordinateFrame, positions: Vec<Point3>) -> Self {
        Self {
            frame,
            frame_count: self.frame_count,
            point_count: self.point_count,
            positions,
            valid: self.valid.clone(),
        }
    }

    /// Applies `transforms[t]` to frame `t`; frame 0 is copied verbatim.
    fn map_frames(&self, transforms: &[RigidTransform], frame: CoordinateFrame) -> Self {
        let mut positions = self.positions.clone();
        positions
            .par_chunks_mut(self.point_count.max(1))
            .enumerate()
            .skip(1)
            .for_each(|(t, chunk)| {
                let g = &transforms[t];
                chunk.iter_mut().for_each(|p| *p = g.apply(p));
            });
        self.with_positions(frame, positions)
    }
}

fn check_extrinsics(
    field: &TrajectoryField,
    extrinsics: &[RigidTransform],
) -> Result<(), TrajectoryError> {
    if extrinsics.len() != field.frame_count {
        return Err(TrajectoryError::LengthMismatch(format!(
            "{} extrinsics for {} frames",
            extrinsics.len(),
            field.frame_count
        )));
    }
    let dev = extrinsics[0].max_abs_diff(&RigidTransform::identity());
    if dev > FIRST_EXTRINSIC_TOLERANCE {
        return Err(TrajectoryError::NonIdentityFirstExtrinsic(dev));
    }
    Ok(())
}

/// `D(λ, x) = E_λ ∘ F(λ, x)`.
pub fn to_world(
    camera_traj: &TrajectoryField,
    extrinsics: &[RigidTransform],
) -> Result<TrajectoryField, TrajectoryError> {
    if camera_traj.frame != CoordinateFrame::Camera {
        return Err(TrajectoryError::FrameMismatch {
            expected: CoordinateFrame::Camera,
            found: camera_traj.frame,
        });
    }
    check_extrinsics(camera_traj, extrinsics)?;
    Ok(camera_traj.map_frames(extrinsics, CoordinateFrame::World))
}

/// `F(λ, x) = E_λ⁻¹ ∘ D(λ, x)`.
pub fn to_camera(
    world_traj: &TrajectoryField,
    extrinsics: &[RigidTransform],
) -> Result<TrajectoryField, TrajectoryError> {
    if world_traj.frame != CoordinateFrame::World {
        return Err(TrajectoryError::FrameMismatch {
            expected: CoordinateFrame::World,
            found: world_traj.frame,
        });
    }
    check_extrinsics(world_traj, extrinsics)?;
    let inverses: Vec<_> = extrinsics.iter().map(|e| e.inverse()).collect();
    Ok(world_traj.map_frames(&inverses, CoordinateFrame::Camera))
}

/// Per-frame camera pose recovery from points assumed static in the world.
///
/// Each frame starts from a fit over every usable point, then runs
/// `rounds` passes that keep the `1 - trim_fraction` best-fitting points
/// (ranked over all usable points each pass) and refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicsSolver {
    pub rounds: usize,
    pub trim_fraction: f64,
}

impl Default for ExtrinsicsSolver {
    fn default() -> Self {
        Self {
            rounds: 3,
            trim_fraction: 0.1,
        }
    }
}

impl ExtrinsicsSolver {
    pub fn solve(
        &self,
        camera_traj: &TrajectoryField,
        static_indices: &[usize],
    ) -> Result<Vec<RigidTransform>, TrajectoryError> {
        if camera_traj.frame != CoordinateFrame::Camera {
            return Err(TrajectoryError::FrameMismatch {
                expected: CoordinateFrame::Camera,
                found: camera_traj.frame,
            });
        }
        check_indices(static_indices, camera_traj.point_count)?;
        let omega = camera_traj.initial_points();
        (0..camera_traj.frame_count)
            .into_par_iter()
            .map(|t| {
                if t == 0 {
                    return Ok(RigidTransform::identity());
                }
                let positions = camera_traj.frame_positions(t);
                let usable: Vec<usize> = static_indices
                    .iter()
                    .copied()
                    .filter(|&i| camera_traj.is_valid(t, i))
                    .collect();
                let q = self
                    .trimmed_fit(omega, positions, &usable)
                    .map_err(|e| degenerate(t, e))?;
                Ok(q.inverse())
            })
            .collect()
    }

    fn trimmed_fit(
        &self,
        source: &[Point3],
        target: &[Point3],
        usable: &[usize],
    ) -> Result<RigidTransform, GeometryError> {
        let fit = |idx: &[usize]| {
            fit_rigid_pairs(idx.iter().map(|&i| (source[i], target[i], 1.0)))
        };
        let mut q = fit(usable)?;
        let n = usable.len();
        let drop = ((self.trim_fraction * n as f64).ceil() as usize).min(n.saturating_sub(3));
        if drop == 0 {
            return Ok(q);
        }
        for _ in 0..self.rounds {
            let mut ranked: Vec<(f64, usize)> = usable
                .iter()
                .map(|&i| ((target[i] - q.apply(&source[i])).norm_squared(), i))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut kept: Vec<usize> = ranked[..n - drop].iter().map(|r| r.1).collect();
            kept.sort_unstable();
            q = fit(&kept)?;
        }
        Ok(q)
    }
}

/// Recovers `E_λ` from borderland tracks with the default trimming
/// (3 rounds, dropping the worst 10%).
pub fn solve_extrinsics(
    camera_traj: &TrajectoryField,
    borderland_indices: &[usize],
) -> Result<Vec<RigidTransform>, TrajectoryError> {
    ExtrinsicsSolver::default().solve(camera_traj, borderland_indices)
}

fn degenerate(frame: usize, e: GeometryError) -> TrajectoryError {
    TrajectoryError::DegenerateGeometry {
        frame,
        reason: e.to_string(),
    }
}

fn check_indices(indices: &[usize], count: usize) -> Result<(), TrajectoryError> {
    match indices.iter().find(|&&i| i >= count) {
        Some(&index) => Err(TrajectoryError::IndexOutOfRange { index, count }),
        None => Ok(()),
    }
}

/// Per-frame motion strength plus the frames that had nothing to average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionStrength {
    pub values: Vec<f64>,
    pub empty_frames: Vec<usize>,
}

/// Discrete motion strength of an offset field (`T×N`, frame-major).
///
/// `m_0 = 0`; for `t ≥ 1`, `m_t` is the mean of `‖r_t − r_{t−1}‖` over
/// points valid at both `t` and `t − 1`. A frame with no such point gets
/// `m_t = 0` and is listed in `empty_frames`.
pub fn motion_strength(residual: &[Vector3], valid: &[bool], point_count: usize) -> MotionStrength {
    assert_eq!(residual.len(), valid.len(), "residual and validity lengths differ");
    let frames = residual.len().checked_div(point_count).unwrap_or(0);
    let mut values = vec![0.0; frames.max(1)];
    let mut empty_frames = Vec::new();
    for t in 1..frames {
        let (prev, cur) = (&residual[(t - 1) * point_count..t * point_count], &residual[t * point_count..(t + 1) * point_count]);
        let (vp, vc) = (&valid[(t - 1) * point_count..t * point_count], &valid[t * point_count..(t + 1) * point_count]);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..point_count {
            if vp[i] && vc[i] {
                sum += (cur[i] - prev[i]).norm();
                count += 1;
            }
        }
        if count == 0 {
            log::warn!("motion strength: no valid point pairs at frame {t}");
            empty_frames.push(t);
        } else {
            values[t] = sum / count as f64;
        }
    }
    MotionStrength {
        values,
        empty_frames,
    }
}

/// One unit's motion split into `D(λ, x) = R_λ ∘ x + G(λ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMotion {
    pub category: Category,
    /// Tracked-point indices of the unit.
    pub point_indices: Vec<usize>,
    /// `R_λ`, one per frame; frame 0 is the identity.
    pub rigid: Vec<RigidTransform>,
    /// `m_λ`, one per frame; frame 0 is zero.
    pub strength: Vec<f64>,
    /// `G(λ, x)` for the unit's points, frame-major (`T × Nₚ`). Zero at
    /// invalid samples.
    pub residual: Vec<Vector3>,
    /// Sample validity, same layout as `residual`.
    pub valid: Vec<bool>,
    /// Frames where no point pair was available for the strength average.
    pub empty_strength_frames: Vec<usize>,
}

impl UnitMotion {
    pub fn frame_count(&self) -> usize {
        self.rigid.len()
    }

    pub fn point_count(&self) -> usize {
        self.point_indices.len()
    }

    /// `R_λ ∘ x + G(λ, x)` for the `j`-th point of the unit.
    pub fn reconstruct(&self, t: usize, j: usize, x: &Point3) -> Point3 {
        self.rigid[t].apply(x) + self.residual[t * self.point_count() + j]
    }

    /// Largest `‖R_λ ∘ x + G − D‖` over valid samples.
    pub fn max_reconstruction_error(&self, world: &TrajectoryField) -> f64 {
        let omega = world.initial_points();
        let mut worst: f64 = 0.0;
        for t in 0..self.frame_count() {
            for (j, &i) in self.point_indices.iter().enumerate() {
                if world.is_valid(t, i) {
                    let err = (self.reconstruct(t, j, &omega[i]) - world.position(t, i)).norm();
                    worst = worst.max(err);
                }
            }
        }
        worst
    }

    /// Mean `‖G‖` over valid samples at frames ≥ 1 (0 for a single frame).
    pub fn mean_residual_norm(&self) -> f64 {
        let n = self.point_count();
        let (sum, count) = self
            .residual
            .iter()
            .zip(&self.valid)
            .skip(n)
            .filter(|(_, v)| **v)
            .fold((0.0, 0usize), |(s, c), (r, _)| (s + r.norm(), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// `Σ‖G(λ, ·)‖²` at one frame.
    pub fn residual_energy(&self, t: usize) -> f64 {
        let n = self.point_count();
        self.residual[t * n..(t + 1) * n]
            .iter()
            .zip(&self.valid[t * n..(t + 1) * n])
            .filter(|(_, v)| **v)
            .map(|(r, _)| r.norm_squared())
            .sum()
    }
}

/// Splits a unit's world trajectory according to its category.
///
/// * borderland: `R ≡ I`, `m ≡ 0`, `G = D − x`;
/// * brush: `R ≡ I`, `G = D − x`, `m` from `G`;
/// * drag: `R_λ` is the least-squares rigid fit of `Ω → D(λ, ·)`, `G = D − R_λ ∘ x`, `m` from `G`.
pub fn decompose_unit(
    world_traj: &TrajectoryField,
    unit_indices: &[usize],
    category: Category,
) -> Result<UnitMotion, TrajectoryError> {
    if world_traj.frame != CoordinateFrame::World {
        return Err(TrajectoryError::FrameMismatch {
            expected: CoordinateFrame::World,
            found: world_traj.frame,
        });
    }
    if unit_indices.is_empty() {
        return Err(TrajectoryError::EmptyUnit);
    }
    check_indices(unit_indices, world_traj.point_count)?;
    let frames = world_traj.frame_count;
    let omega = world_traj.initial_points();

    let rigid: Vec<RigidTransform> = match category {
        Category::Borderland | Category::Brush => vec![RigidTransform::identity(); frames],
        Category::Drag => (0..frames)
            .into_par_iter()
            .map(|t| {
                if t == 0 {
                    return Ok(RigidTransform::identity());
                }
                let pairs = unit_indices
                    .iter()
                    .filter(|&&i| world_traj.is_valid(t, i))
                    .map(|&i| (omega[i], *world_traj.position(t, i), 1.0));
                fit_rigid_pairs(pairs).map_err(|e| degenerate(t, e))
            })
            .collect::<Result<_, _>>()?,
    };

    let n = unit_indices.len();
    let mut residual = Vec::with_capacity(frames * n);
    let mut valid = Vec::with_capacity(frames * n);
    for (t, r) in rigid.iter().enumerate() {
        for &i in unit_indices {
            let ok = world_traj.is_valid(t, i);
            valid.push(ok);
            residual.push(if ok {
                world_traj.position(t, i) - r.apply(&omega[i])
            } else {
                Vector3::zeros()
            });
        }
    }

    let (strength, empty) = match category {
        Category::Borderland => (vec![0.0; frames], Vec::new()),
        Category::Brush | Category::Drag => {
            let m = motion_strength(&residual, &valid, n);
            (m.values, m.empty_frames)
        }
    };

    Ok(UnitMotion {
        category,
        point_indices: unit_indices.to_vec(),
        rigid,
        strength,
        residual,
        valid,
        empty_strength_frames: empty,
    })
}
