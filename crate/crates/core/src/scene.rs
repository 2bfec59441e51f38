//! First-frame scene: the pixel grid, its backprojected points, and the
//! partition of those points into motion units.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{self, FormatError};
use crate::geometry::{backproject, CameraIntrinsics, GeometryError, Point3};

/// Label stored for pixels without a valid depth; they belong to no unit.
pub const UNLABELED: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("dimension mismatch: expected {expected:?}, found {found:?} ({what})")]
    DimensionMismatch {
        what: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: String, reason: String },
    #[error("scene has no pixel with a valid depth")]
    NoValidDepth,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("masks {first} and {second} overlap at pixel ({u}, {v})")]
    OverlappingMasks {
        first: usize,
        second: usize,
        u: u32,
        v: u32,
    },
    #[error("mask {0} covers no valid pixel")]
    EmptyMask(usize),
    #[error("{masks} masks but {categories} categories")]
    CategoryCountMismatch { masks: usize, categories: usize },
    #[error("mask {index} is {found:?}, scene is {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("unit {0} cannot be declared borderland; only index 0 is borderland")]
    BorderlandCategory(usize),
    #[error("no unit {0}")]
    UnknownUnit(u32),
}

/// How a unit is controlled. The numeric codes are the values written to the
/// category channel of the control tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Borderland,
    Drag,
    Brush,
}

impl Category {
    pub fn code(self) -> u8 {
        match self {
            Category::Borderland => 0,
            Category::Drag => 1,
            Category::Brush => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Category::Borderland),
            1 => Some(Category::Drag),
            2 => Some(Category::Brush),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Borderland => "borderland",
            Category::Drag => "drag",
            Category::Brush => "brush",
        })
    }
}

/// Row-major boolean mask over the pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|v| (0..width).map(move |u| (u, v)))
            .map(|(u, v)| f(u, v))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Axis-aligned rectangle `[u0, u1) × [v0, v1)`, clipped to the grid.
    pub fn rect(width: u32, height: u32, u0: u32, v0: u32, u1: u32, v1: u32) -> Self {
        Self::from_fn(width, height, |u, v| u >= u0 && u < u1 && v >= v0 && v < v1)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let i = (v * self.width + u) as usize;
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }
}

/// Pinhole parameters as they appear in a scene manifest; the image size
/// comes from the depth map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeParams {
    pub fn to_intrinsics(self, width: u32, height: u32) -> Result<CameraIntrinsics, GeometryError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, width, height)
    }
}

impl From<&CameraIntrinsics> for PinholeParams {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx(),
            fy: k.fy(),
            cx: k.cx(),
            cy: k.cy(),
        }
    }
}

/// The first frame lifted to 3D.
///
/// The source depth map is kept verbatim; working depths are that map
/// scaled so the median valid depth is 1.0, and `points` are backprojected
/// from the working depths. Tracked points are the valid pixels in
/// row-major order.
#[derive(Debug, Clone)]
pub struct SceneDomain {
    intrinsics: CameraIntrinsics,
    source_depth: Vec<f32>,
    depth_scale: f64,
    depth: Vec<f64>,
    points: Vec<Point3>,
    valid: Vec<bool>,
    valid_pixels: Vec<usize>,
    point_of_pixel: Vec<u32>,
}

impl SceneDomain {
    /// Builds a normalized scene from a raw depth map (row-major, in the
    /// units of the source). Non-finite or non-positive depths mark the
    /// pixel invalid.
    pub fn from_depth(intrinsics: CameraIntrinsics, depth: Vec<f32>) -> Result<Self, SceneError> {
        let mut valid_depths: Vec<f64> = depth
            .iter()
            .map(|d| *d as f64)
            .filter(|d| d.is_finite() && *d > 0.0)
            .collect();
        if valid_depths.is_empty() {
            return Err(SceneError::NoValidDepth);
        }
        valid_depths.sort_by(f64::total_cmp);
        let n = valid_depths.len();
        let median = if n % 2 == 1 {
            valid_depths[n / 2]
        } else {
            0.5 * (valid_depths[n / 2 - 1] + valid_depths[n / 2])
        };
        Self::with_scale(intrinsics, depth, 1.0 / median)
    }

    /// Builds a scene without normalization (scale 1).
    pub fn from_depth_unnormalized(
        intrinsics: CameraIntrinsics,
        depth: Vec<f32>,
    ) -> Result<Self, SceneError> {
        Self::with_scale(intrinsics, depth, 1.0)
    }

    fn with_scale(
        intrinsics: CameraIntrinsics,
        source_depth: Vec<f32>,
        depth_scale: f64,
    ) -> Result<Self, SceneError> {
        let (w, h) = (intrinsics.width(), intrinsics.height());
        if source_depth.len() != w as usize * h as usize {
            return Err(SceneError::DimensionMismatch {
                what: "depth samples vs intrinsics size".into(),
                expected: (w, h),
                found: (source_depth.len() as u32, 1),
            });
        }
        let n = source_depth.len();
        let mut depth = vec![f64::NAN; n];
        let mut points = vec![Point3::new(f64::NAN, f64::NAN, f64::NAN); n];
        let mut valid = vec![false; n];
        let mut valid_pixels = Vec::new();
        let mut point_of_pixel = vec![u32::MAX; n];
        for (i, raw) in source_depth.iter().enumerate() {
            let d = *raw as f64 * depth_scale;
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let (u, v) = (i as u32 % w, i as u32 / w);
            depth[i] = d;
            points[i] = backproject(&intrinsics, [u as f64, v as f64], d)?;
            valid[i] = true;
            point_of_pixel[i] = valid_pixels.len() as u32;
            valid_pixels.push(i);
        }
        if valid_pixels.is_empty() {
            return Err(SceneError::NoValidDepth);
        }
        Ok(Self {
            intrinsics,
            source_depth,
            depth_scale,
            depth,
            points,
            valid,
            valid_pixels,
            point_of_pixel,
        })
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width()
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height()
    }

    pub fn pixel_count(&self) -> usize {
        self.valid.len()
    }

    /// Factor applied to source depths (working = source × scale).
    pub fn depth_scale(&self) -> f64 {
        self.depth_scale
    }

    pub fn source_depth(&self) -> &[f32] {
        &self.source_depth
    }

    /// Working depth per pixel, NaN where invalid.
    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Backprojected point per pixel; NaN where invalid.
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Pixel index of each tracked point.
    pub fn valid_pixels(&self) -> &[usize] {
        &self.valid_pixels
    }

    pub fn valid_count(&self) -> usize {
        self.valid_pixels.len()
    }

    /// Tracked-point index of a pixel, if that pixel is valid.
    pub fn point_index(&self, pixel: usize) -> Option<usize> {
        match self.point_of_pixel[pixel] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }

    /// Ω in tracked-point order.
    pub fn tracked_points(&self) -> Vec<Point3> {
        self.valid_pixels.iter().map(|&i| self.points[i]).collect()
    }

    pub fn pixel_coords(&self, pixel: usize) -> (u32, u32) {
        let w = self.width();
        (pixel as u32 % w, pixel as u32 / w)
    }
}

/// Reads a scene from an image (used only for its size) and a depth file.
pub fn load_scene(
    image_path: Option<&Path>,
    depth_path: &Path,
    params: PinholeParams,
) -> Result<SceneDomain, SceneError> {
    let depth = formats::read_depth(depth_path).map_err(|e| unreadable(depth_path, e))?;
    if let Some(image_path) = image_path {
        let (iw, ih) = image::image_dimensions(image_path).map_err(|e| SceneError::UnreadableFile {
            path: image_path.display().to_string(),
            reason: e.to_string(),
        })?;
        if (iw, ih) != (depth.width, depth.height) {
            return Err(SceneError::DimensionMismatch {
                what: "depth vs image".into(),
                expected: (iw, ih),
                found: (depth.width, depth.height),
            });
        }
    }
    let intrinsics = params.to_intrinsics(depth.width, depth.height)?;
    SceneDomain::from_depth(intrinsics, depth.values)
}

fn unreadable(path: &Path, e: FormatError) -> SceneError {
    SceneError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Disjoint labeling of the valid pixels into units `0..=P`, where 0 is
/// the borderland. Invalid pixels carry [`UNLABELED`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPartition {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    categories: Vec<Category>,
    pixel_counts: Vec<usize>,
}

impl UnitPartition {
    /// Every valid pixel in the borderland.
    pub fn borderland_only(scene: &SceneDomain) -> Self {
        build_partition(scene, &[], &[]).expect("empty partition is always valid")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, unit: u32) -> Option<Category> {
        self.categories.get(unit as usize).copied()
    }

    /// P + 1, counting the borderland.
    pub fn unit_count(&self) -> usize {
        self.categories.len()
    }

    pub fn pixel_count(&self, unit: u32) -> usize {
        self.pixel_counts[unit as usize]
    }

    pub fn mask(&self, unit: u32) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|l| *l == unit).collect(),
        }
    }

    /// Masks and categories of units 1..=P, in label order.
    pub fn unit_masks(&self) -> (Vec<Mask>, Vec<Category>) {
        let masks = (1..self.unit_count() as u32).map(|p| self.mask(p)).collect();
        (masks, self.categories[1..].to_vec())
    }

    /// Tracked-point indices of a unit, in row-major pixel order.
    pub fn unit_point_indices(&self, scene: &SceneDomain, unit: u32) -> Vec<usize> {
        scene
            .valid_pixels()
            .iter()
            .enumerate()
            .filter(|(_, &px)| self.labels[px] == unit)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn with_category(&self, unit: u32, category: Category) -> Result<Self, PartitionError> {
        if unit == 0 || unit as usize >= self.unit_count() {
            return Err(if unit == 0 {
                PartitionError::BorderlandCategory(0)
            } else {
                PartitionError::UnknownUnit(unit)
            });
        }
        if category == Category::Borderland {
            return Err(PartitionError::BorderlandCategory(unit as usize));
        }
        let mut next = self.clone();
        next.categories[unit as usize] = category;
        Ok(next)
    }
}

/// Assigns label `i + 1` to the valid pixels of `masks[i]` and label 0 to
/// every other valid pixel.
pub fn build_partition(
    scene: &SceneDomain,
    masks: &[Mask],
    categories: &[Category],
) -> Result<UnitPartition, PartitionError> {
    if masks.len() != categories.len() {
        return Err(PartitionError::CategoryCountMismatch {
            masks: masks.len(),
            categories: categories.len(),
        });
    }
    let (w, h) = (scene.width(), scene.height());
    for (index, m) in masks.iter().enumerate() {
        if m.dims() != (w, h) {
            return Err(PartitionError::DimensionMismatch {
                index,
                expected: (w, h),
                found: m.dims(),
            });
        }
    }
    if let Some(i) = categories.iter().position(|c| *c == Category::Borderland) {
        return Err(PartitionError::BorderlandCategory(i + 1));
    }

    let mut owner: Vec<u32> = vec![0; scene.pixel_count()];
    for (index, m) in masks.iter().enumerate() {
        for px in m.pixels() {
            if owner[px] != 0 {
                return Err(PartitionError::OverlappingMasks {
                    first: owner[px] as usize - 1,
                    second: index,
                    u: px as u32 % w,
                    v: px as u32 / w,
                });
            }
            owner[px] = index as u32 + 1;
        }
    }

    let mut pixel_counts = vec![0usize; masks.len() + 1];
    let labels: Vec<u32> = owner
        .iter()
        .zip(scene.valid())
        .map(|(&o, &ok)| {
            if ok {
                pixel_counts[o as usize] += 1;
                o
            } else {
                UNLABELED
            }
        })
        .collect();
    if let Some(empty) = pixel_counts.iter().skip(1).position(|c| *c == 0) {
        return Err(PartitionError::EmptyMask(empty));
    }

    let mut cats = Vec::with_capacity(masks.len() + 1);
    cats.push(Category::Borderland);
    cats.extend_from_slice(categories);
    Ok(UnitPartition {
        width: w,
        height: h,
        labels,
        categories: cats,
        pixel_counts,
    })
}

/// Indices of the segments whose overlap with the dynamic mask is strictly
/// more than half of their own area. Everything else is left to the caller
/// to merge into the borderland.
pub fn select_units_from_segments(segments: &[Mask], dynamic_mask: &Mask) -> Vec<usize> {
    segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dims() == dynamic_mask.dims())
        .filter(|(_, s)| 2 * s.intersection_count(dynamic_mask) > s.count())
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(w: u32, h: u32, depth: f32) -> SceneDomain {
        let k = CameraIntrinsics::centered(100.0, w, h).unwrap();
        SceneDomain::from_depth(k, vec![depth; (w * h) as usize]).unwrap()
    }

    #[test]
    fn flat_depth_gives_flat_points() {
        let s = scene(8, 6, 1.0);
        assert!(s.points().iter().all(|p| p.z == 1.0));
        assert_eq!(s.depth_scale(), 1.0);
        assert_eq!(s.valid_count(), 48);
    }

    #[test]
    fn depth_is_normalized_to_unit_median() {
        let k = CameraIntrinsics::centered(100.0, 4, 1).unwrap();
        let s = SceneDomain::from_depth(k, vec![2.0, 4.0, 6.0, f32::NAN]).unwrap();
        assert_eq!(s.depth_scale(), 0.25);
        assert_eq!(s.depth()[1], 1.0);
        assert!(!s.valid()[3]);
        assert_eq!(s.valid_pixels(), &[0, 1, 2]);
        assert_eq!(s.point_index(3), None);
    }

    #[test]
    fn empty_partition_is_all_borderland() {
        let s = scene(5, 5, 1.0);
        let p = build_partition(&s, &[], &[]).unwrap();
        assert_eq!(p.unit_count(), 1);
        assert!(p.labels().iter().all(|l| *l == 0));
        assert_eq!(p.categories(), &[Category::Borderland]);
    }

    #[test]
    fn two_disjoint_masks() {
        let s = scene(6, 4, 1.0);
        let a = Mask::rect(6, 4, 0, 0, 2, 2);
        let b = Mask::rect(6, 4, 3, 1, 6, 4);
        let p = build_partition(&s, &[a.clone(), b.clone()], &[Category::Drag, Category::Brush])
            .unwrap();
        assert_eq!(p.unit_count(), 3);
        assert_eq!(p.category(1), Some(Category::Drag));
        assert_eq!(p.category(2), Some(Category::Brush));
        assert_eq!(p.mask(1), a);
        assert_eq!(p.mask(2), b);
        assert_eq!(p.pixel_count(0) + p.pixel_count(1) + p.pixel_count(2), 24);
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let s = scene(6, 4, 1.0);
        let a = Mask::rect(6, 4, 0, 0, 3, 3);
        let b = Mask::rect(6, 4, 2, 1, 5, 4);
        let err = build_partition(&s, &[a, b], &[Category::Drag, Category::Drag]).unwrap_err();
        assert_eq!(
            err,
            PartitionError::OverlappingMasks {
                first: 0,
                second: 1,
                u: 2,
                v: 1
            }
        );
    }

    #[test]
    fn empty_and_invalid_only_masks_are_rejected() {
        let s = scene(4, 4, 1.0);
        let err = build_partition(&s, &[Mask::new(4, 4)], &[Category::Brush]).unwrap_err();
        assert_eq!(err, PartitionError::EmptyMask(0));

        let k = CameraIntrinsics::centered(100.0, 2, 2).unwrap();
        let holes = SceneDomain::from_depth(k, vec![1.0, f32::NAN, 1.0, 1.0]).unwrap();
        let m = Mask::rect(2, 2, 1, 0, 2, 1);
        assert_eq!(
            build_partition(&holes, &[m], &[Category::Brush]).unwrap_err(),
            PartitionError::EmptyMask(0)
        );
        let p = build_partition(&holes, &[], &[]).unwrap();
        assert_eq!(p.labels()[1], UNLABELED);
        assert_eq!(p.pixel_count(0), 3);
    }

    #[test]
    fn borderland_category_is_reserved() {
        let s = scene(4, 4, 1.0);
        let m = Mask::rect(4, 4, 0, 0, 1, 1);
        assert!(matches!(
            build_partition(&s, &[m], &[Category::Borderland]),
            Err(PartitionError::BorderlandCategory(1))
        ));
    }

    #[test]
    fn segment_selection_is_strict_majority() {
        let (w, h) = (10, 10);
        let seg = Mask::rect(w, h, 0, 0, 10, 10); // 100 px
        let half = Mask::rect(w, h, 0, 0, 10, 5); // 50 px
        let mut fifty_one = half.clone();
        fifty_one.set(0, 5, true);
        let inside = Mask::rect(w, h, 2, 2, 4, 4);
        let segments = vec![seg.clone(), inside];
        assert_eq!(select_units_from_segments(&segments, &half), vec![1]);
        assert_eq!(select_units_from_segments(&segments, &fifty_one), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn partition_is_permutation_covariant(order in Just(vec![0usize, 1, 2]).prop_shuffle()) {
            let s = scene(9, 3, 1.0);
            let masks = [
                Mask::rect(9, 3, 0, 0, 3, 3),
                Mask::rect(9, 3, 3, 0, 5, 2),
                Mask::rect(9, 3, 6, 1, 9, 3),
            ];
            let cats = [Category::Drag, Category::Brush, Category::Drag];
            let base = build_partition(&s, &masks, &cats).unwrap();
            let pm: Vec<_> = order.iter().map(|&i| masks[i].clone()).collect();
            let pc: Vec<_> = order.iter().map(|&i| cats[i]).collect();
            let permuted = build_partition(&s, &pm, &pc).unwrap();
            for (new_label, &old) in order.iter().enumerate() {
                prop_assert_eq!(permuted.mask(new_label as u32 + 1), base.mask(old as u32 + 1));
                prop_assert_eq!(permuted.category(new_label as u32 + 1), base.category(old as u32 + 1));
            }
            prop_assert_eq!(permuted.mask(0), base.mask(0));
            let total: usize = (0..4).map(|p| permuted.pixel_count(p)).sum();
            prop_assert_eq!(total, s.valid_count());
        }
    }
}
