//! Trajectory and brush metrics on dense 2D tracks: ObjMC, MSC, and
//! motion-region IoU.
//!
//! Conventions (fixed, and echoed in every report):
//! * ObjMC: mean pixel distance between generated and reference positions
//!   over samples valid in both.
//! * MSC: mean per-frame displacement `‖p_t − p_{t−1}‖` in pixels/frame,
//!   pooled over `t ≥ 1` and points valid at `t` and `t − 1` (inside the
//!   mask when one is given). No scale factor.
//! * IoU: moving set = start pixels whose largest displacement from their
//!   frame-0 position exceeds the threshold; IoU against the user mask,
//!   1.0 when both sets are empty.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics};
use crate::scene::{Mask, SceneDomain};
use crate::trajectory::TrajectoryField;

pub const DEFAULT_IOU_THRESHOLD_PX: f64 = 1.0;

pub const CONVENTIONS: &str = "objmc: mean L2 px over samples valid in both; \
msc: mean L2 px/frame over t>=1 and points valid at t and t-1, inside the mask if given, unscaled; \
iou: moving = start pixels with max_t |p_t - p_0| > threshold_px, 1.0 when moving and mask are both empty";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no valid samples")]
    NoValidSamples,
    #[error("mask is {found:?}, tracks cover {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
}

/// Dense 2D tracks, one per pixel of a `width × height` grid, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracks2d {
    width: u32,
    height: u32,
    frame_count: usize,
    positions: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl Tracks2d {
    pub fn new(
        width: u32,
        height: u32,
        frame_count: usize,
        positions: Vec<[f64; 2]>,
        valid: Vec<bool>,
    ) -> Result<Self, MetricsError> {
        let n = width as usize * height as usize * frame_count;
        if positions.len() != n || valid.len() != n {
            return Err(MetricsError::ShapeMismatch(format!(
                "{frame_count}×{width}×{height} grid needs {n} samples, got {} positions and {} flags",
                positions.len(),
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            frame_count,
            positions,
            valid,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        frame_count: usize,
        f: impl Fn(usize, u32, u32) -> [f64; 2],
    ) -> Self {
        let positions = (0..frame_count)
            .flat_map(|t| (0..height).flat_map(move |v| (0..width).map(move |u| (t, u, v))))
            .map(|(t, u, v)| f(t, u, v))
            .collect();
        let n = width as usize * height as usize * frame_count;
        Self {
            width,
            height,
            frame_count,
            positions,
            valid: vec![true; n],
        }
    }

    /// Reads the x/y components of a field as pixel coordinates. The field
    /// must have one point per grid pixel.
    pub fn from_field_xy(field: &TrajectoryField, width: u32, height: u32) -> Result<Self, MetricsError> {
        if field.point_count() != width as usize * height as usize {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} tracked points for a {width}×{height} grid",
                field.point_count()
            )));
        }
        let positions = field.positions().iter().map(|p| [p.x, p.y]).collect();
        Self::new(width, height, field.frame_count(), positions, field.validity().to_vec())
    }

    /// Projects a camera-frame field through the scene's intrinsics.
    /// Pixels without a track, and samples behind the camera, are invalid.
    pub fn from_camera_field(field: &TrajectoryField, scene: &SceneDomain) -> Result<Self, MetricsError> {
        if field.point_count() != scene.valid_count() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} tracked points for {} valid scene pixels",
                field.point_count(),
                scene.valid_count()
            )));
        }
        let k: &CameraIntrinsics = scene.intrinsics();
        let plane = scene.pixel_count();
        let frames = field.frame_count();
        let mut positions = vec![[0.0, 0.0]; plane * frames];
        let mut valid = vec![false; plane * frames];
        for t in 0..frames {
            for (i, &px) in scene.valid_pixels().iter().enumerate() {
                if !field.is_valid(t, i) {
                    continue;
                }
                if let Ok(uv) = project(k, field.position(t, i)) {
                    positions[t * plane + px] = uv;
                    valid[t * plane + px] = true;
                }
            }
        }
        Self::new(scene.width(), scene.height(), frames, positions, valid)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn plane(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn check_same_shape(&self, other: &Tracks2d) -> Result<(), MetricsError> {
        if (self.width, self.height, self.frame_count) != (other.width, other.height, other.frame_count) {
            return Err(MetricsError::ShapeMismatch(format!(
                "{}×{}×{} vs {}×{}×{}",
                self.frame_count, self.width, self.height, other.frame_count, other.width, other.height
            )));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &Mask) -> Result<(), MetricsError> {
        if mask.dims() != (self.width, self.height) {
            return Err(MetricsError::DimensionMismatch {
                expected: (self.width, self.height),
                found: mask.dims(),
            });
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Per-frame ObjMC; `None` for frames with no sample valid in both.
pub fn objmc_per_frame(generated: &Tracks2d, reference: &Tracks2d) -> Result<Vec<Option<f64>>, MetricsError> {
    generated.check_same_shape(reference)?;
    let plane = generated.plane();
    Ok((0..generated.frame_count)
        .map(|t| {
            let range = t * plane..(t + 1) * plane;
            let (sum, n) = range
                .filter(|&i| generated.valid[i] && reference.valid[i])
                .fold((0.0, 0usize), |(s, n), i| {
                    (s + dist(generated.positions[i], reference.positions[i]), n + 1)
                });
            (n > 0).then(|| sum / n as f64)
        })
        .collect())
}

/// Mean endpoint distance over every sample valid in both track sets.
pub fn objmc(generated: &Tracks2d, reference: &Tracks2d) -> Result<f64, MetricsError> {
    generated.check_same_shape(reference)?;
    let (sum, n) = (0..generated.positions.len())
        .filter(|&i| generated.valid[i] && reference.valid[i])
        .fold((0.0, 0usize), |(s, n), i| {
            (s + dist(generated.positions[i], reference.positions[i]), n + 1)
        });
    if n == 0 {
        return Err(MetricsError::NoValidSamples);
    }
    Ok(sum / n as f64)
}

fn msc_sums(tracks: &Tracks2d, mask: Option<&Mask>, t: usize) -> (f64, usize) {
    let plane = tracks.plane();
    (0..plane)
        .filter(|&px| mask.is_none_or(|m| m.as_slice()[px]))
        .filter(|&px| tracks.valid[t * plane + px] && tracks.valid[(t - 1) * plane + px])
        .fold((0.0, 0usize), |(s, n), px| {
            let d = dist(tracks.positions[t * plane + px], tracks.positions[(t - 1) * plane + px]);
            (s + d, n + 1)
        })
}

/// Per-frame MSC (frame 0 is always `None`).
pub fn msc_per_frame(tracks: &Tracks2d, mask: Option<&Mask>) -> Result<Vec<Option<f64>>, MetricsError> {
    if let Some(m) = mask {
        tracks.check_mask(m)?;
    }
    Ok((0..tracks.frame_count)
        .map(|t| {
            if t == 0 {
                return None;
            }
            let (s, n) = msc_sums(tracks, mask, t);
            (n > 0).then(|| s / n as f64)
        })
        .collect())
}

/// Mean per-frame displacement in pixels/frame.
pub fn msc(tracks: &Tracks2d, mask: Option<&Mask>) -> Result<f64, MetricsError> {
    if let Some(m) = mask {
        tracks.check_mask(m)?;
    }
    let (sum, n) = (1..tracks.frame_count)
        .map(|t| msc_sums(tracks, mask, t))
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    if n == 0 {
        return Err(MetricsError::NoValidSamples);
    }
    Ok(sum / n as f64)
}

/// Start pixels that move more than `threshold_px` away from where they began.
pub fn moving_set(tracks: &Tracks2d, threshold_px: f64) -> Mask {
    let plane = tracks.plane();
    Mask::from_fn(tracks.width, tracks.height, |u, v| {
        let px = (v * tracks.width + u) as usize;
        if !tracks.valid[px] {
            return false;
        }
        let start = tracks.positions[px];
        (1..tracks.frame_count)
            .map(|t| t * plane + px)
            .filter(|&i| tracks.valid[i])
            .any(|i| dist(tracks.positions[i], start) > threshold_px)
    })
}

pub fn motion_iou(tracks: &Tracks2d, user_mask: &Mask, threshold_px: f64) -> Result<f64, MetricsError> {
    tracks.check_mask(user_mask)?;
    let moving = moving_set(tracks, threshold_px);
    let inter = moving.intersection_count(user_mask);
    let union = moving.count() + user_mask.count() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub objmc: Option<f64>,
    pub msc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conventions: String,
    pub objmc: Option<f64>,
    pub msc: Option<f64>,
    pub iou: Option<f64>,
    pub iou_threshold_px: f64,
    pub per_frame: Vec<FrameRow>,
}

/// ObjMC needs a reference, IoU needs a mask; MSC is measured on the
/// generated tracks (inside the mask when given).
pub fn evaluate(
    generated: &Tracks2d,
    reference: Option<&Tracks2d>,
    mask: Option<&Mask>,
    threshold_px: f64,
) -> Result<EvalReport, MetricsError> {
    let objmc_value = reference.map(|r| objmc(generated, r)).transpose()?;
    let objmc_frames = match reference {
        Some(r) => objmc_per_frame(generated, r)?,
        None => vec![None; generated.frame_count],
    };
    let msc_value = match msc(generated, mask) {
        Ok(v) => Some(v),
        Err(MetricsError::NoValidSamples) => None,
        Err(e) => return Err(e),
    };
    let msc_frames = msc_per_frame(generated, mask)?;
    let iou = mask.map(|m| motion_iou(generated, m, threshold_px)).transpose()?;
    Ok(EvalReport {
        conventions: CONVENTIONS.to_string(),
        objmc: objmc_value,
        msc: msc_value,
        iou,
        iou_threshold_px: threshold_px,
        per_frame: objmc_frames
            .into_iter()
            .zip(msc_frames)
            .enumerate()
            .map(|(frame, (objmc, msc))| FrameRow { frame, objmc, msc })
            .collect(),
    })
}

impl EvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.per_frame {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
