//! Scene manifests: a JSON document naming the first-frame image, depth
//! map, intrinsics, unit masks with categories, and optionally candidate
//! segments and camera-frame tracks. Paths are relative to the manifest.
//!
//! ```json
//! {
//!   "image": "frame0.png",
//!   "depth": "depth.dpth",
//!   "intrinsics": { "fx": 500.0, "fy": 500.0, "cx": 352.0, "cy": 224.0 },
//!   "units": [ { "mask": "car.png", "category": "drag" } ],
//!   "segments": [ "seg_000.png" ],
//!   "tracks": "camera.trck"
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{self, DepthMap, FormatError};
use crate::scene::{build_partition, load_scene, Category, Mask, PartitionError, PinholeParams, SceneDomain, SceneError, UnitPartition};
use crate::trajectory::{CoordinateFrame, TrajectoryField};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("tracks in {path}: {reason}")]
    Tracks { path: String, reason: String },
}

impl ManifestError {
    /// True when the failure is an unreadable or unwritable file rather
    /// than invalid content.
    pub fn is_io(&self) -> bool {
        match self {
            ManifestError::Io { .. } => true,
            ManifestError::Format { source, .. } => matches!(source, FormatError::Io(_)),
            ManifestError::Scene(SceneError::UnreadableFile { .. }) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEntry {
    pub mask: PathBuf,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub depth: PathBuf,
    pub intrinsics: PinholeParams,
    #[serde(default)]
    pub units: Vec<UnitEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<PathBuf>,
}

/// Everything a manifest points at, loaded and validated.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub manifest: SceneManifest,
    pub scene: SceneDomain,
    pub partition: UnitPartition,
    pub segments: Vec<Mask>,
    /// Camera-frame tracks rescaled to the scene's normalized depth.
    pub tracks: Option<TrajectoryField>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ManifestError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ManifestError> {
    let json = serde_json::to_vec_pretty(value).expect("serializable");
    fs::write(path, json).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl SceneManifest {
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        write_json(self, path)
    }

    /// Loads the scene and its partition; segments and tracks are loaded
    /// when listed.
    pub fn load(&self, base_dir: &Path) -> Result<LoadedScene, ManifestError> {
        let resolve = |p: &Path| base_dir.join(p);
        let image = self.image.as_deref().map(resolve);
        let scene = load_scene(image.as_deref(), &resolve(&self.depth), self.intrinsics)?;
        let read_mask = |p: &Path| {
            let path = resolve(p);
            formats::read_mask(&path).map_err(|source| ManifestError::Format {
                path: path.display().to_string(),
                source,
            })
        };
        let masks = self
            .units
            .iter()
            .map(|u| read_mask(&u.mask))
            .collect::<Result<Vec<_>, _>>()?;
        let categories: Vec<Category> = self.units.iter().map(|u| u.category).collect();
        let partition = build_partition(&scene, &masks, &categories)?;
        let segments = self
            .segments
            .iter()
            .map(|p| read_mask(p))
            .collect::<Result<Vec<_>, _>>()?;
        let tracks = match &self.tracks {
            Some(p) => {
                let path = resolve(p);
                let field = formats::read_tracks(&path).map_err(|source| ManifestError::Format {
                    path: path.display().to_string(),
                    source,
                })?;
                Some(normalize_tracks(&scene, field).map_err(|reason| ManifestError::Tracks {
                    path: path.display().to_string(),
                    reason,
                })?)
            }
            None => None,
        };
        Ok(LoadedScene {
            manifest: self.clone(),
            scene,
            partition,
            segments,
            tracks,
        })
    }
}

/// Reads and loads a manifest, resolving paths against its directory.
pub fn load_manifest(path: &Path) -> Result<LoadedScene, ManifestError> {
    let manifest = SceneManifest::read(path)?;
    manifest.load(path.parent().unwrap_or(Path::new(".")))
}

/// Brings tracks measured in source depth units into the scene's
/// normalized units. Tracks must be camera-frame, one per valid pixel.
pub fn normalize_tracks(scene: &SceneDomain, field: TrajectoryField) -> Result<TrajectoryField, String> {
    if field.frame() != CoordinateFrame::Camera {
        return Err("expected camera-frame tracks".into());
    }
    if field.point_count() != scene.valid_count() {
        return Err(format!(
            "{} tracks for {} pixels with valid depth",
            field.point_count(),
            scene.valid_count()
        ));
    }
    let s = scene.depth_scale();
    let positions = field.positions().iter().map(|p| p * s).collect();
    TrajectoryField::new(
        CoordinateFrame::Camera,
        field.frame_count(),
        field.point_count(),
        positions,
        field.validity().to_vec(),
    )
    .map_err(|e| e.to_string())
}

/// Writes a scene and partition as a manifest plus depth and mask files in
/// `dir`. Reloading the manifest reproduces the same scene and partition.
pub fn dump_scene(
    scene: &SceneDomain,
    partition: &UnitPartition,
    dir: &Path,
) -> Result<PathBuf, ManifestError> {
    fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let fmt_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ManifestError::Format { path, source }
    };
    let depth_path = dir.join("depth.dpth");
    let map = DepthMap {
        width: scene.width(),
        height: scene.height(),
        values: scene.source_depth().to_vec(),
    };
    formats::write_depth(&map, &depth_path).map_err(fmt_err(&depth_path))?;
    let mut units = Vec::new();
    for id in 1..partition.unit_count() as u32 {
        let name = format!("unit_{id:03}.png");
        let path = dir.join(&name);
        formats::write_mask(&partition.mask(id), &path).map_err(fmt_err(&path))?;
        units.push(UnitEntry {
            mask: name.into(),
            category: partition.category(id).expect("unit exists"),
        });
    }
    let manifest = SceneManifest {
        image: None,
        depth: "depth.dpth".into(),
        intrinsics: PinholeParams::from(scene.intrinsics()),
        units,
        segments: Vec::new(),
        tracks: None,
    };
    let path = dir.join("scene.json");
    manifest.write(&path)?;
    Ok(path)
}
