//! Point-cloud previews read back from the trajectory channels.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::compose::ComposeError;
use crate::scene::Category;
use crate::tensor::{ControlTensor, CATEGORY, CHANNELS, PARTITION, SENTINEL, TRAJ_U, TRAJ_V};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreviewPoint {
    pub unit: u32,
    pub category: Category,
    pub u: f32,
    pub v: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAnnotation {
    pub unit: u32,
    pub category: Category,
    pub color: [u8; 3],
    pub visible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewFrame {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    pub points: Vec<PreviewPoint>,
    pub units: Vec<UnitAnnotation>,
}

impl PreviewFrame {
    /// `[u_min, v_min, u_max, v_max]` over visible points.
    pub fn bounding_box(&self) -> Option<[f32; 4]> {
        self.points.iter().fold(None, |acc, p| {
            Some(match acc {
                None => [p.u, p.v, p.u, p.v],
                Some([a, b, c, d]) => [a.min(p.u), b.min(p.v), c.max(p.u), d.max(p.v)],
            })
        })
    }

    /// Draws each point as one pixel in its unit color, over `background`
    /// when given (it must match the frame size) or a dark canvas.
    pub fn rasterize(&self, background: Option<&RgbImage>) -> RgbImage {
        let mut img = match background {
            Some(bg) if bg.width() as usize == self.width && bg.height() as usize == self.height => {
                bg.clone()
            }
            _ => RgbImage::from_pixel(self.width as u32, self.height as u32, Rgb([24, 24, 24])),
        };
        for p in &self.points {
            let (u, v) = (p.u.round(), p.v.round());
            if u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height {
                img.put_pixel(u as u32, v as u32, Rgb(unit_color(p.unit)));
            }
        }
        img
    }

    pub fn to_png(&self, background: Option<&RgbImage>) -> Vec<u8> {
        crate::formats::encode_png(&image::DynamicImage::ImageRgb8(self.rasterize(background)))
    }
}

/// Deterministic color per unit id; the borderland is gray.
pub fn unit_color(unit: u32) -> [u8; 3] {
    if unit == 0 {
        return [150, 150, 150];
    }
    // golden-ratio hue walk
    let hue = (unit as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let s = |c: f64| (55.0 + 200.0 * c).round() as u8;
    [s(r), s(g), s(b)]
}

/// Points of frame `frame`, skipping sentinel samples.
pub fn render_preview(tensor: &ControlTensor, frame: usize) -> Result<PreviewFrame, ComposeError> {
    if frame >= tensor.frame_count() {
        return Err(ComposeError::FrameOutOfRange {
            frame,
            frame_count: tensor.frame_count(),
        });
    }
    Ok(preview_from_channels(
        tensor.width(),
        tensor.height(),
        tensor.frame(frame),
        frame,
        1,
    ))
}

/// Preview of one frame's channel block (`5·H·W`, channel-major). `stride`
/// keeps every `stride`-th pixel in both directions.
pub fn preview_from_channels(
    width: usize,
    height: usize,
    channels: &[f32],
    frame: usize,
    stride: usize,
) -> PreviewFrame {
    let plane = width * height;
    assert_eq!(channels.len(), CHANNELS * plane, "channel block size");
    let stride = stride.max(1);
    let ch = |c: usize| &channels[c * plane..(c + 1) * plane];
    let (us, vs, parts, cats) = (ch(TRAJ_U), ch(TRAJ_V), ch(PARTITION), ch(CATEGORY));

    let mut points = Vec::new();
    let mut units: Vec<UnitAnnotation> = Vec::new();
    for v in (0..height).step_by(stride) {
        for u in (0..width).step_by(stride) {
            let px = v * width + u;
            let unit = parts[px] as u32;
            let category = Category::from_code(cats[px] as u8).unwrap_or(Category::Borderland);
            if units.len() <= unit as usize {
                units.extend((units.len() as u32..=unit).map(|id| UnitAnnotation {
                    unit: id,
                    category: Category::Borderland,
                    color: unit_color(id),
                    visible: 0,
                }));
            }
            units[unit as usize].category = category;
            if us[px] == SENTINEL || vs[px] == SENTINEL {
                continue;
            }
            units[unit as usize].visible += 1;
            points.push(PreviewPoint {
                unit,
                category,
                u: us[px],
                v: vs[px],
            });
        }
    }
    PreviewFrame {
        frame,
        width,
        height,
        points,
        units,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::compose;
    use crate::geometry::{CameraIntrinsics, RigidTransform, Vector3};
    use crate::scene::{SceneDomain, UnitPartition};
    use crate::script::{MotionScript, PoseKeyframe};

    fn scene() -> SceneDomain {
        let k = CameraIntrinsics::new(30.0, 30.0, 8.0, 6.0, 16, 12).unwrap();
        SceneDomain::from_depth(k, vec![1.0; 16 * 12]).unwrap()
    }

    #[test]
    fn static_preview_is_pixel_grid() {
        let s = scene();
        let p = UnitPartition::borderland_only(&s);
        let t = compose(&s, &p, &MotionScript::identity(3)).unwrap();
        for f in 0..3 {
            let pv = render_preview(&t, f).unwrap();
            assert_eq!(pv.points.len(), 16 * 12);
            for (i, pt) in pv.points.iter().enumerate() {
                assert!((pt.u - (i % 16) as f32).abs() < 1e-6);
                assert!((pt.v - (i / 16) as f32).abs() < 1e-6);
            }
        }
        assert!(matches!(render_preview(&t, 3), Err(ComposeError::FrameOutOfRange { .. })));
    }

    #[test]
    fn dolly_in_grows_bounding_box() {
        // Depth only in the middle, so the zoomed content stays in view.
        let k = CameraIntrinsics::new(30.0, 30.0, 7.5, 5.5, 16, 12).unwrap();
        let depth = (0..16 * 12)
            .map(|i| {
                let (u, v) = (i % 16, i / 16);
                if (4..12).contains(&u) && (3..9).contains(&v) { 1.0 } else { f32::NAN }
            })
            .collect();
        let s = SceneDomain::from_depth(k, depth).unwrap();
        let p = UnitPartition::borderland_only(&s);
        let mut script = MotionScript::identity(24);
        script.camera.push(PoseKeyframe {
            frame: 23,
            pose: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.02 * 23.0)),
        });
        let t = compose(&s, &p, &script).unwrap();
        let first = render_preview(&t, 0).unwrap().bounding_box().unwrap();
        let last = render_preview(&t, 23).unwrap().bounding_box().unwrap();
        assert!(last[0] < first[0] && last[1] < first[1], "{last:?} vs {first:?}");
        assert!(last[2] > first[2] && last[3] > first[3], "{last:?} vs {first:?}");
    }

    #[test]
    fn colors_are_stable_and_distinct() {
        assert_eq!(unit_color(3), unit_color(3));
        assert_ne!(unit_color(1), unit_color(2));
        assert_eq!(unit_color(0), [150, 150, 150]);
    }
}
