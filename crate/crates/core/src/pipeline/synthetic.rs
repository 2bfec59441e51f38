//! Seeded synthetic scenes with known camera motion, per-unit rigid
//! motion, and analytic residuals.
//!
//! The background is a gently tilted surface; each unit is a
//! fronto-parallel card at its own constant depth. Residuals are
//! zero-mean ripples along the card normal, symmetric about the card
//! center, so the best rigid fit of a rippling unit is its true rigid
//! motion.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::formats::{self, DepthMap};
use crate::geometry::{CameraIntrinsics, Point3, RigidTransform, Vector3};
use crate::manifest::{write_json, ManifestError, SceneManifest};
use crate::scene::{Mask, PinholeParams, SceneDomain};
use crate::trajectory::{CoordinateFrame, TrajectoryField};

use super::PipelineError;

/// Motion of one unit, in normalized scene units per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionFamily {
    Static,
    Translate {
        velocity: [f64; 3],
    },
    /// Spin about the unit's centroid; `rate` is an axis-angle per frame.
    Rotate {
        rate: [f64; 3],
    },
    /// Spin about the centroid while advancing `pitch` per radian along the axis.
    Screw {
        rate: [f64; 3],
        pitch: f64,
    },
    /// Translation plus spin, with a ripple of the given amplitude and
    /// period (frames) on top.
    RigidRipple {
        velocity: [f64; 3],
        rate: [f64; 3],
        amplitude: f64,
        period: f64,
    },
}

impl MotionFamily {
    fn rate(&self) -> Vector3 {
        match self {
            MotionFamily::Rotate { rate }
            | MotionFamily::Screw { rate, .. }
            | MotionFamily::RigidRipple { rate, .. } => Vector3::from(*rate),
            _ => Vector3::zeros(),
        }
    }

    fn velocity(&self) -> Vector3 {
        match self {
            MotionFamily::Translate { velocity } | MotionFamily::RigidRipple { velocity, .. } => {
                Vector3::from(*velocity)
            }
            MotionFamily::Screw { rate, pitch } => Vector3::from(*rate) * *pitch,
            _ => Vector3::zeros(),
        }
    }

    /// Rigid pose at frame `t` for a unit centered at `c`.
    fn rigid(&self, c: &Point3, t: usize) -> RigidTransform {
        let (w, v) = (self.rate(), self.velocity());
        let lambda = t as f64;
        if w == Vector3::zeros() {
            return RigidTransform::from_translation(v * lambda);
        }
        let spin = RigidTransform::from_axis_angle(w * lambda, Vector3::zeros());
        let shift = c.coords + v * lambda - spin.apply_vector(&c.coords);
        RigidTransform::from_axis_angle(w * lambda, shift)
    }

    fn ripple(&self, t: usize) -> f64 {
        match self {
            MotionFamily::RigidRipple { amplitude, period, .. } => {
                amplitude * (2.0 * PI * t as f64 / period).sin()
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    Static,
    /// Yaw about a vertical axis through `(0, 0, pivot_depth)`.
    Orbit { degrees_per_frame: f64, pivot_depth: f64 },
    /// Forward motion along the optical axis.
    Dolly { step: f64 },
    /// Yaw about the camera center.
    Pan { degrees_per_frame: f64 },
    Truck { velocity: [f64; 3] },
}

impl CameraPath {
    /// Camera-to-world pose at frame `t`.
    pub fn extrinsic(&self, t: usize) -> RigidTransform {
        let lambda = t as f64;
        let yaw = |deg: f64| Vector3::new(0.0, (deg * lambda).to_radians(), 0.0);
        match *self {
            CameraPath::Static => RigidTransform::identity(),
            CameraPath::Orbit {
                degrees_per_frame,
                pivot_depth,
            } => {
                let spin = RigidTransform::from_axis_angle(yaw(degrees_per_frame), Vector3::zeros());
                let p = Vector3::new(0.0, 0.0, pivot_depth);
                RigidTransform::from_axis_angle(yaw(degrees_per_frame), p - spin.apply_vector(&p))
            }
            CameraPath::Dolly { step } => RigidTransform::from_translation(Vector3::new(0.0, 0.0, step * lambda)),
            CameraPath::Pan { degrees_per_frame } => {
                RigidTransform::from_axis_angle(yaw(degrees_per_frame), Vector3::zeros())
            }
            CameraPath::Truck { velocity } => RigidTransform::from_translation(Vector3::from(velocity) * lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    /// Half-open pixel rectangle `[u0, v0, u1, v1]`; laid out on a grid when absent.
    #[serde(default)]
    pub rect: Option<[u32; 4]>,
    /// Card depth in source units; drawn from the seed when absent.
    #[serde(default)]
    pub depth: Option<f32>,
    pub motion: MotionFamily,
}

/// Observation noise on the camera-frame tracks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Isotropic Gaussian standard deviation.
    pub sigma: f64,
    /// Fraction of borderland points replaced by drifting outliers.
    pub outlier_fraction: f64,
    /// Outlier drift per frame.
    pub outlier_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    /// Focal length in pixels; defaults to the width.
    pub focal: Option<f64>,
    pub background_depth: f32,
    /// Vertical strips the background is cut into as candidate segments.
    pub background_segments: u32,
    pub units: Vec<UnitSpec>,
    pub camera: CameraPath,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            frame_count: 24,
            focal: None,
            background_depth: 2.0,
            background_segments: 4,
            units: vec![
                UnitSpec {
                    rect: None,
                    depth: None,
                    motion: MotionFamily::Translate {
                        velocity: [0.01, 0.0, 0.0],
                    },
                },
                UnitSpec {
                    rect: None,
                    depth: None,
                    motion: MotionFamily::RigidRipple {
                        velocity: [0.0, -0.005, 0.0],
                        rate: [0.0, 0.0, 0.02],
                        amplitude: 0.02,
                        period: 12.0,
                    },
                },
            ],
            camera: CameraPath::Orbit {
                degrees_per_frame: 0.5,
                pivot_depth: 1.0,
            },
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

/// A generated scene and its ground truth, in normalized scene units.
///
/// `world_traj` is exactly `true_unit_rigids ∘ x + true_residuals` (the
/// identity for background points) and `camera_traj` is exactly
/// `true_extrinsics⁻¹ ∘ world_traj`. `observed_camera_traj` adds the
/// configured noise and equals `camera_traj` when there is none.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SyntheticConfig,
    pub seed: u64,
    pub scene: SceneDomain,
    pub unit_masks: Vec<Mask>,
    /// Tracked-point indices of each unit, row-major.
    pub unit_points: Vec<Vec<usize>>,
    pub background_points: Vec<usize>,
    pub true_extrinsics: Vec<RigidTransform>,
    pub true_unit_rigids: Vec<Vec<RigidTransform>>,
    /// Per unit, frame-major `T × n` residual offsets.
    pub true_residuals: Vec<Vec<Vector3>>,
    pub world_traj: TrajectoryField,
    pub camera_traj: TrajectoryField,
    pub observed_camera_traj: TrajectoryField,
    /// Unit rectangles first (in unit order), then background strips.
    pub segments: Vec<Mask>,
    pub outlier_points: Vec<usize>,
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::InvalidConfig(msg.into())
}

fn layout(config: &SyntheticConfig) -> Result<Vec<[u32; 4]>, PipelineError> {
    let n = config.units.len() as u32;
    let cols = (n as f64).sqrt().ceil() as u32;
    let rows = n.div_ceil(cols);
    let (cw, ch) = (config.width / cols, config.height / rows);
    let mut rects = Vec::new();
    for (k, spec) in config.units.iter().enumerate() {
        let r = match spec.rect {
            Some(r) => r,
            None => {
                let (c, r) = (k as u32 % cols, k as u32 / cols);
                [c * cw + cw / 4, r * ch + ch / 4, c * cw + cw - cw / 4, r * ch + ch - ch / 4]
            }
        };
        let [u0, v0, u1, v1] = r;
        if u1 > config.width || v1 > config.height || u1 < u0 + 2 || v1 < v0 + 2 {
            return Err(invalid(format!("unit {} rectangle {r:?} is outside the image or thinner than 2 px", k + 1)));
        }
        rects.push(r);
    }
    for (a, ra) in rects.iter().enumerate() {
        for (b, rb) in rects.iter().enumerate().skip(a + 1) {
            if ra[0] < rb[2] && rb[0] < ra[2] && ra[1] < rb[3] && rb[1] < ra[3] {
                return Err(invalid(format!("unit {} and unit {} overlap", a + 1, b + 1)));
            }
        }
    }
    Ok(rects)
}

/// Builds a synthetic scene. Same config, same bits.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticScene, PipelineError> {
    let (w, h, frames) = (config.width, config.height, config.frame_count);
    if frames < 2 {
        return Err(invalid("frame_count must be at least 2"));
    }
    if config.units.is_empty() {
        return Err(invalid("at least one unit is required"));
    }
    if (w as u64) * (h as u64) < 64 {
        return Err(invalid("width·height must be at least 64"));
    }
    if !(config.background_depth.is_finite() && config.background_depth > 0.0) {
        return Err(invalid("background_depth must be positive"));
    }
    let rects = layout(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let focal = config.focal.unwrap_or(w as f64);
    let k = CameraIntrinsics::new(focal, focal, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h)
        .map_err(|e| invalid(e.to_string()))?;

    let bg = config.background_depth;
    let (tilt_u, tilt_v): (f32, f32) = (rng.random_range(-0.1..0.1), rng.random_range(0.05..0.2));
    let mut depth: Vec<f32> = (0..w * h)
        .map(|i| {
            let (u, v) = ((i % w) as f32 / w as f32, (i / w) as f32 / h as f32);
            bg * (1.0 + tilt_u * (u - 0.5) + tilt_v * v + 0.03 * (7.0 * u).sin() * (5.0 * v).cos())
        })
        .collect();
    let mut owner = vec![usize::MAX; (w * h) as usize];
    let unit_masks: Vec<Mask> = rects.iter().map(|r| Mask::rect(w, h, r[0], r[1], r[2], r[3])).collect();
    for (j, (mask, spec)) in unit_masks.iter().zip(&config.units).enumerate() {
        let d = spec.depth.unwrap_or_else(|| bg * rng.random_range(0.45f32..0.6));
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid(format!("unit {} depth must be positive", j + 1)));
        }
        for px in mask.pixels() {
            depth[px] = d;
            owner[px] = j;
        }
    }
    let scene = SceneDomain::from_depth(k, depth).map_err(|e| invalid(e.to_string()))?;
    let x = scene.tracked_points();
    let n = x.len();

    let mut unit_points = vec![Vec::new(); rects.len()];
    let mut background_points = Vec::new();
    for (i, &px) in scene.valid_pixels().iter().enumerate() {
        match owner[px] {
            usize::MAX => background_points.push(i),
            j => unit_points[j].push(i),
        }
    }

    let true_extrinsics: Vec<RigidTransform> = (0..frames).map(|t| config.camera.extrinsic(t)).collect();
    let mut true_unit_rigids = Vec::new();
    let mut true_residuals = Vec::new();
    let mut world = x.repeat(frames);
    for (j, spec) in config.units.iter().enumerate() {
        let idx = &unit_points[j];
        let centroid = Point3::from(idx.iter().map(|&i| x[i].coords).sum::<Vector3>() / idx.len() as f64);
        let rigids: Vec<RigidTransform> = (0..frames)
            .map(|t| if t == 0 { RigidTransform::identity() } else { spec.motion.rigid(&centroid, t) })
            .collect();
        let shape = ripple_shape(&scene, &rects[j], idx);
        let mut residual = Vec::with_capacity(frames * idx.len());
        for (t, r) in rigids.iter().enumerate() {
            let a = spec.motion.ripple(t);
            for (k, &i) in idx.iter().enumerate() {
                let g = if a == 0.0 {
                    Vector3::zeros()
                } else {
                    r.apply_vector(&Vector3::new(0.0, 0.0, a * shape[k]))
                };
                residual.push(g);
                if t > 0 {
                    world[t * n + i] = r.apply(&x[i]) + g;
                }
            }
        }
        true_unit_rigids.push(rigids);
        true_residuals.push(residual);
    }
    let world_traj = TrajectoryField::new(CoordinateFrame::World, frames, n, world, vec![true; frames * n])
        .expect("well-formed field");

    let mut camera = world_traj.positions().to_vec();
    for t in 1..frames {
        let inv = true_extrinsics[t].inverse();
        for p in &mut camera[t * n..(t + 1) * n] {
            *p = inv.apply(p);
        }
    }
    let camera_traj = TrajectoryField::new(CoordinateFrame::Camera, frames, n, camera.clone(), vec![true; frames * n])
        .expect("well-formed field");

    let noise = config.noise;
    let mut outlier_points = Vec::new();
    if noise.sigma > 0.0 {
        let normal = Normal::new(0.0, noise.sigma).map_err(|e| invalid(e.to_string()))?;
        for p in &mut camera[n..] {
            *p += Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    if noise.outlier_fraction > 0.0 {
        if !(0.0..1.0).contains(&noise.outlier_fraction) {
            return Err(invalid("outlier_fraction must be in [0, 1)"));
        }
        let count = (noise.outlier_fraction * background_points.len() as f64).floor() as usize;
        let mut pool = background_points.clone();
        pool.shuffle(&mut rng);
        outlier_points = pool[..count].to_vec();
        outlier_points.sort_unstable();
        for &i in &outlier_points {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let speed = noise.outlier_magnitude * rng.random_range(1.0..2.0);
            for t in 1..frames {
                camera[t * n + i] += Vector3::from(dir) * speed * t as f64;
            }
        }
    }
    let observed_camera_traj = TrajectoryField::new(CoordinateFrame::Camera, frames, n, camera, vec![true; frames * n])
        .expect("well-formed field");

    let mut segments = unit_masks.clone();
    let strips = config.background_segments.max(1);
    for s in 0..strips {
        let (a, b) = (s * w / strips, (s + 1) * w / strips);
        let strip = Mask::from_fn(w, h, |u, v| u >= a && u < b && owner[(v * w + u) as usize] == usize::MAX);
        if strip.count() > 0 {
            segments.push(strip);
        }
    }

    Ok(SyntheticScene {
        config: config.clone(),
        seed: config.seed,
        scene,
        unit_masks,
        unit_points,
        background_points,
        true_extrinsics,
        true_unit_rigids,
        true_residuals,
        world_traj,
        camera_traj,
        observed_camera_traj,
        segments,
        outlier_points,
    })
}

/// Zero-mean ripple profile over a unit, even about the rectangle center.
fn ripple_shape(scene: &SceneDomain, rect: &[u32; 4], idx: &[usize]) -> Vec<f64> {
    let [u0, v0, u1, v1] = rect.map(|c| c as f64);
    let (uc, vc) = ((u0 + u1 - 1.0) / 2.0, (v0 + v1 - 1.0) / 2.0);
    let (lu, lv) = (u1 - u0, v1 - v0);
    let raw: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let (u, v) = scene.pixel_coords(scene.valid_pixels()[i]);
            (PI * (u as f64 - uc) / lu).cos() * (PI * (v as f64 - vc) / lv).cos()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|f| f - mean).collect()
}

/// Ground truth stored next to generated files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub seed: u64,
    pub depth_scale: f64,
    pub config: SyntheticConfig,
    pub extrinsics: Vec<RigidTransform>,
    pub unit_rigids: Vec<Vec<RigidTransform>>,
}

impl SyntheticScene {
    /// Writes `image.png`, `depth.dpth`, segment masks, `camera.trck`
    /// (observed tracks), `world.trck`, `truth.json`, and a `scene.json`
    /// manifest listing them. Track files are in source depth units; the
    /// truth file is in normalized units. Returns the manifest path.
    pub fn write_files(&self, dir: &Path) -> Result<PathBuf, ManifestError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ManifestError::Io { path, source }
        };
        let fmt = |path: &Path| {
            let path = path.display().to_string();
            move |source| ManifestError::Format { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let (w, h) = (self.scene.width(), self.scene.height());

        let image_path = dir.join("image.png");
        let img = image::RgbImage::from_fn(w, h, |u, v| {
            let d = self.scene.depth()[(v * w + u) as usize];
            let g = (255.0 / (1.0 + d)).round() as u8;
            match self.unit_masks.iter().position(|m| m.get(u, v)) {
                Some(j) => image::Rgb(crate::preview::unit_color(j as u32 + 1)),
                None => image::Rgb([g, g, g]),
            }
        });
        fs::write(&image_path, formats::encode_png(&image::DynamicImage::ImageRgb8(img))).map_err(io(&image_path))?;

        let depth_path = dir.join("depth.dpth");
        let map = DepthMap {
            width: w,
            height: h,
            values: self.scene.source_depth().to_vec(),
        };
        formats::write_depth(&map, &depth_path).map_err(fmt(&depth_path))?;

        let mut segments = Vec::new();
        for (k, m) in self.segments.iter().enumerate() {
            let name = format!("segment_{k:03}.png");
            let path = dir.join(&name);
            formats::write_mask(m, &path).map_err(fmt(&path))?;
            segments.push(PathBuf::from(name));
        }

        let to_source = |field: &TrajectoryField| {
            let s = 1.0 / self.scene.depth_scale();
            let positions = field.positions().iter().map(|p| p * s).collect();
            TrajectoryField::new(
                field.frame(),
                field.frame_count(),
                field.point_count(),
                positions,
                field.validity().to_vec(),
            )
            .expect("well-formed field")
        };
        for (name, field) in [("camera.trck", &self.observed_camera_traj), ("world.trck", &self.world_traj)] {
            let path = dir.join(name);
            formats::write_tracks(&to_source(field), &path).map_err(fmt(&path))?;
        }

        let truth = SyntheticTruth {
            seed: self.seed,
            depth_scale: self.scene.depth_scale(),
            config: self.config.clone(),
            extrinsics: self.true_extrinsics.clone(),
            unit_rigids: self.true_unit_rigids.clone(),
        };
        write_json(&truth, &dir.join("truth.json"))?;

        let manifest = SceneManifest {
            image: Some("image.png".into()),
            depth: "depth.dpth".into(),
            intrinsics: PinholeParams::from(self.scene.intrinsics()),
            units: Vec::new(),
            segments,
            tracks: Some("camera.trck".into()),
        };
        let path = dir.join("scene.json");
        manifest.write(&path)?;
        Ok(path)
    }
}
