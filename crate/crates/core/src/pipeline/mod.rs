//! Training-sample construction from a first frame, candidate segments,
//! and camera-frame tracks, plus the synthetic scene generator.
//!
//! A sample is built in stages:
//!
//! 1. a preliminary camera solve that trims half the points per round,
//!    so moving foreground does not bias it;
//! 2. the dynamic mask of the resulting world tracks;
//! 3. segments more than half covered by the dynamic mask become units;
//! 4. each unit is drag or brush by a fair coin;
//! 5. the final camera solve on the borderland, world tracks, per-unit
//!    decomposition, and composition.

pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::compose_from_pipeline;
use crate::geometry::RigidTransform;
use crate::manifest::{load_manifest, read_json, write_json, ManifestError};
use crate::scene::{build_partition, select_units_from_segments, Category, Mask, SceneDomain, UnitPartition};
use crate::tensor::{sidecar_path, write_tensor, ControlTensor, TensorManifest};
use crate::trajectory::{decompose_unit, solve_extrinsics, to_world, ExtrinsicsSolver, TrajectoryField, UnitMotion};

pub use synthetic::{
    generate_synthetic, CameraPath, MotionFamily, NoiseConfig, SyntheticConfig, SyntheticScene, SyntheticTruth, UnitSpec,
};

pub const DEFAULT_DYNAMIC_RATIO: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LoadScene,
    PreliminaryExtrinsics,
    DynamicMask,
    SelectUnits,
    BuildPartition,
    SolveExtrinsics,
    ToWorld,
    DecomposeUnit,
    Compose,
    WriteOutput,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::InvalidConfig(_) => None,
        }
    }

    /// True when the failure is a file that could not be read or written.
    pub fn is_io(&self) -> bool {
        match self {
            PipelineError::Stage { source, .. } => source
                .downcast_ref::<ManifestError>()
                .is_some_and(ManifestError::is_io)
                || source.downcast_ref::<std::io::Error>().is_some()
                || source
                    .downcast_ref::<crate::formats::FormatError>()
                    .is_some_and(|e| matches!(e, crate::formats::FormatError::Io(_))),
            PipelineError::InvalidConfig(_) => false,
        }
    }
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
struct StageMessage(String);

fn fail(stage: Stage, msg: impl Into<String>) -> PipelineError {
    at(stage)(StageMessage(msg.into()))
}

/// A pixel is dynamic iff its largest world-space displacement from its
/// first-frame position exceeds `threshold_ratio` times the median scene
/// depth. Pixels without depth are never dynamic.
///
/// # Panics
/// If the field does not hold one track per valid scene pixel.
pub fn dynamic_mask(scene: &SceneDomain, world_traj: &TrajectoryField, threshold_ratio: f64) -> Mask {
    assert_eq!(world_traj.point_count(), scene.valid_count(), "one track per valid pixel");
    let threshold = threshold_ratio * median_depth(scene);
    let x = world_traj.initial_points();
    let mut mask = Mask::new(scene.width(), scene.height());
    for (i, &px) in scene.valid_pixels().iter().enumerate() {
        let moved = (1..world_traj.frame_count())
            .filter(|&t| world_traj.is_valid(t, i))
            .any(|t| (world_traj.position(t, i) - x[i]).norm() > threshold);
        if moved {
            let (u, v) = scene.pixel_coords(px);
            mask.set(u, v, true);
        }
    }
    mask
}

fn median_depth(scene: &SceneDomain) -> f64 {
    let mut d: Vec<f64> = scene.valid_pixels().iter().map(|&px| scene.depth()[px]).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

/// One fair coin per unit: drag on heads, brush on tails.
pub fn assign_categories(count: usize, seed: u64) -> Vec<Category> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| if rng.random_bool(0.5) { Category::Drag } else { Category::Brush })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleOptions {
    pub dynamic_ratio: f64,
    pub preliminary_rounds: usize,
    pub preliminary_trim: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            dynamic_ratio: DEFAULT_DYNAMIC_RATIO,
            preliminary_rounds: 6,
            preliminary_trim: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceUnit {
    pub id: u32,
    pub category: Category,
    /// Index of the source segment; `None` for the borderland.
    pub segment: Option<usize>,
    pub pixels: usize,
    /// Mean `‖G‖` over valid samples.
    pub mean_fit_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub frame_count: usize,
    pub options: SampleOptions,
    pub selected_segments: Vec<usize>,
    pub units: Vec<ProvenanceUnit>,
    pub extrinsics: Vec<RigidTransform>,
    /// Per unit, borderland first.
    pub strengths: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub tensor: ControlTensor,
    pub provenance: Provenance,
    pub partition: UnitPartition,
    pub dynamic_mask: Mask,
    pub extrinsics: Vec<RigidTransform>,
    pub world_traj: TrajectoryField,
    pub motions: Vec<UnitMotion>,
}

pub fn build_training_sample(
    scene: &SceneDomain,
    segments: &[Mask],
    camera_traj: &TrajectoryField,
    seed: u64,
) -> Result<TrainingSample, PipelineError> {
    build_training_sample_with(scene, segments, camera_traj, seed, &SampleOptions::default())
}

pub fn build_training_sample_with(
    scene: &SceneDomain,
    segments: &[Mask],
    camera_traj: &TrajectoryField,
    seed: u64,
    options: &SampleOptions,
) -> Result<TrainingSample, PipelineError> {
    if camera_traj.point_count() != scene.valid_count() {
        return Err(fail(
            Stage::PreliminaryExtrinsics,
            format!(
                "{} tracks for {} pixels with valid depth",
                camera_traj.point_count(),
                scene.valid_count()
            ),
        ));
    }
    if let Some(m) = segments.iter().find(|m| m.dims() != (scene.width(), scene.height())) {
        return Err(fail(
            Stage::SelectUnits,
            format!("segment is {:?}, scene is {}×{}", m.dims(), scene.width(), scene.height()),
        ));
    }
    if !(options.dynamic_ratio > 0.0) {
        return Err(fail(Stage::DynamicMask, "threshold ratio must be positive"));
    }

    let all: Vec<usize> = (0..camera_traj.point_count()).collect();
    let prelim = ExtrinsicsSolver {
        rounds: options.preliminary_rounds,
        trim_fraction: options.preliminary_trim,
    }
    .solve(camera_traj, &all)
    .map_err(at(Stage::PreliminaryExtrinsics))?;
    let prelim_world = to_world(camera_traj, &prelim).map_err(at(Stage::PreliminaryExtrinsics))?;
    let dynamic = dynamic_mask(scene, &prelim_world, options.dynamic_ratio);

    let selected = select_units_from_segments(segments, &dynamic);
    let categories = assign_categories(selected.len(), seed);
    let masks: Vec<Mask> = selected.iter().map(|&s| segments[s].clone()).collect();
    let partition = build_partition(scene, &masks, &categories).map_err(at(Stage::BuildPartition))?;
    log::info!(
        "selected {} of {} segments: {:?}",
        selected.len(),
        segments.len(),
        selected
    );

    let borderland = partition.unit_point_indices(scene, 0);
    let extrinsics = solve_extrinsics(camera_traj, &borderland).map_err(at(Stage::SolveExtrinsics))?;
    let world = to_world(camera_traj, &extrinsics).map_err(at(Stage::ToWorld))?;

    let motions = (0..partition.unit_count() as u32)
        .into_par_iter()
        .map(|p| {
            let idx = partition.unit_point_indices(scene, p);
            let m = decompose_unit(&world, &idx, partition.category(p).expect("unit exists"))?;
            if !m.empty_strength_frames.is_empty() {
                log::warn!("unit {p}: no valid samples at frames {:?}", m.empty_strength_frames);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, crate::trajectory::TrajectoryError>>()
        .map_err(at(Stage::DecomposeUnit))?;

    let tensor = compose_from_pipeline(scene, &partition, &motions, &extrinsics).map_err(at(Stage::Compose))?;

    let provenance = Provenance {
        seed,
        frame_count: camera_traj.frame_count(),
        options: *options,
        selected_segments: selected.clone(),
        units: motions
            .iter()
            .enumerate()
            .map(|(p, m)| ProvenanceUnit {
                id: p as u32,
                category: m.category,
                segment: p.checked_sub(1).map(|k| selected[k]),
                pixels: partition.pixel_count(p as u32),
                mean_fit_residual: m.mean_residual_norm(),
            })
            .collect(),
        extrinsics: extrinsics.clone(),
        strengths: motions.iter().map(|m| m.strength.clone()).collect(),
    };

    Ok(TrainingSample {
        tensor,
        provenance,
        partition,
        dynamic_mask: dynamic,
        extrinsics,
        world_traj: world,
        motions,
    })
}

/// Builds a sample from a scene manifest that lists segments and tracks.
pub fn sample_from_manifest(path: &Path, seed: u64, options: &SampleOptions) -> Result<TrainingSample, PipelineError> {
    let loaded = load_manifest(path).map_err(at(Stage::LoadScene))?;
    let tracks = loaded
        .tracks
        .ok_or_else(|| fail(Stage::LoadScene, format!("{} lists no tracks", path.display())))?;
    build_training_sample_with(&loaded.scene, &loaded.segments, &tracks, seed, options)
}

/// Writes `<stem>.ctrl`, its sidecar, and `<stem>.provenance.json` into `dir`.
pub fn write_sample(sample: &TrainingSample, dir: &Path, stem: &str) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir).map_err(at(Stage::WriteOutput))?;
    let tensor_path = dir.join(format!("{stem}.ctrl"));
    write_tensor(&sample.tensor, &tensor_path).map_err(at(Stage::WriteOutput))?;
    TensorManifest::new(&sample.tensor, &sample.partition)
        .write(&sidecar_path(&tensor_path))
        .map_err(at(Stage::WriteOutput))?;
    write_json(&sample.provenance, &dir.join(format!("{stem}.provenance.json"))).map_err(at(Stage::WriteOutput))?;
    Ok(tensor_path)
}

/// Scene manifests to process and where the samples go. Paths are
/// relative to the batch file. Scene `k` uses seed `seed + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub scenes: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub options: SampleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub scene: PathBuf,
    pub seed: u64,
    pub tensor: Option<PathBuf>,
    pub error: Option<String>,
}

/// Runs every scene of a batch file in parallel. Failures are reported per
/// entry; the batch itself fails only if the batch file is unreadable.
pub fn run_batch(batch_path: &Path) -> Result<Vec<BatchEntry>, PipelineError> {
    let batch: BatchManifest = read_json(batch_path).map_err(at(Stage::LoadScene))?;
    let base = batch_path.parent().unwrap_or(Path::new("."));
    let out = base.join(&batch.output_dir);
    Ok(batch
        .scenes
        .par_iter()
        .enumerate()
        .map(|(k, scene)| {
            let seed = batch.seed.wrapping_add(k as u64);
            let result = sample_from_manifest(&base.join(scene), seed, &batch.options)
                .and_then(|s| write_sample(&s, &out, &format!("sample_{k:04}")));
            match result {
                Ok(path) => BatchEntry {
                    scene: scene.clone(),
                    seed,
                    tensor: Some(path),
                    error: None,
                },
                Err(e) => {
                    log::error!("{}: {e}", scene.display());
                    BatchEntry {
                        scene: scene.clone(),
                        seed,
                        tensor: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::STRENGTH;

    fn one_unit(motion: MotionFamily, camera: CameraPath) -> SyntheticScene {
        generate_synthetic(&SyntheticConfig {
            units: vec![UnitSpec {
                rect: Some([8, 8, 24, 20]),
                depth: Some(1.0),
                motion,
            }],
            camera,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dynamic_mask_examples() {
        let s = one_unit(MotionFamily::Static, CameraPath::Static);
        assert_eq!(dynamic_mask(&s.scene, &s.world_traj, 0.02).count(), 0);
        let s = one_unit(MotionFamily::Translate { velocity: [0.1, 0.0, 0.0] }, CameraPath::Static);
        let m = dynamic_mask(&s.scene, &s.world_traj, 0.02);
        assert_eq!(m, s.unit_masks[0]);
        assert_eq!(dynamic_mask(&s.scene, &s.world_traj, 1e9).count(), 0);
    }

    #[test]
    fn coin_is_seeded() {
        assert_eq!(assign_categories(50, 3), assign_categories(50, 3));
        assert_ne!(assign_categories(50, 3), assign_categories(50, 4));
    }

    #[test]
    fn static_camera_gives_identity_extrinsics() {
        let s = one_unit(MotionFamily::Translate { velocity: [0.02, 0.0, 0.0] }, CameraPath::Static);
        let sample = build_training_sample(&s.scene, &s.segments, &s.camera_traj, 1).unwrap();
        for e in &sample.provenance.extrinsics {
            assert!(e.is_identity(1e-9));
        }
        assert_eq!(sample.provenance.selected_segments, vec![0]);
        assert_eq!(sample.provenance.units.len(), 2);
        assert_eq!(sample.provenance.units[1].segment, Some(0));
    }

    #[test]
    fn rigid_drag_unit_has_zero_strength() {
        let s = one_unit(
            MotionFamily::Screw {
                rate: [0.0, 0.02, 0.01],
                pitch: 0.5,
            },
            CameraPath::Pan { degrees_per_frame: 0.3 },
        );
        let seed = (0..).find(|&k| assign_categories(1, k)[0] == Category::Drag).unwrap();
        let sample = build_training_sample(&s.scene, &s.segments, &s.camera_traj, seed).unwrap();
        assert_eq!(sample.partition.category(1), Some(Category::Drag));
        for t in 0..sample.tensor.frame_count() {
            assert!(sample.tensor.channel(t, STRENGTH).iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn stage_is_named_in_errors() {
        let s = one_unit(MotionFamily::Static, CameraPath::Static);
        let bad = vec![Mask::new(3, 3)];
        let err = build_training_sample(&s.scene, &bad, &s.camera_traj, 0).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::SelectUnits));
        assert!(err.to_string().starts_with("select_units"));
    }

    #[test]
    fn batch_writes_every_scene() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenes = Vec::new();
        for k in 0..2u64 {
            let cfg = SyntheticConfig {
                seed: k,
                frame_count: 6,
                ..SyntheticConfig::default()
            };
            let sub = dir.path().join(format!("scene{k}"));
            generate_synthetic(&cfg).unwrap().write_files(&sub).unwrap();
            scenes.push(PathBuf::from(format!("scene{k}/scene.json")));
        }
        scenes.push("missing/scene.json".into());
        let batch = BatchManifest {
            scenes,
            output_dir: "out".into(),
            seed: 10,
            options: SampleOptions::default(),
        };
        let path = dir.path().join("batch.json");
        write_json(&batch, &path).unwrap();
        let entries = run_batch(&path).unwrap();
        assert!(entries[0].tensor.is_some() && entries[1].tensor.is_some());
        assert!(entries[2].error.as_deref().unwrap().starts_with("load_scene"));
        assert!(dir.path().join("out/sample_0001.provenance.json").exists());
        assert!(dir.path().join("out/sample_0000.ctrl.json").exists());
    }
}
