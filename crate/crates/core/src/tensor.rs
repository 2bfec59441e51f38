//! The `(T, 5, H, W)` control tensor and its `CTRL` file format.
//!
//! File layout (little-endian): `"CTRL"`, `u32` version = 1, `u32` T,
//! `u32` C = 5, `u32` H, `u32` W, then `T·C·H·W` `f32` values in
//! `(T, C, H, W)` order. A JSON sidecar describes the units and how many
//! samples carry the out-of-view sentinel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formats::{checked_len, f32s_from_le, FormatError, Reader, FORMAT_VERSION};
use crate::scene::{Category, UnitPartition, UNLABELED};

pub const TENSOR_MAGIC: &[u8; 4] = b"CTRL";
pub const CHANNELS: usize = 5;
pub const TRAJ_U: usize = 0;
pub const TRAJ_V: usize = 1;
pub const STRENGTH: usize = 2;
pub const PARTITION: usize = 3;
pub const CATEGORY: usize = 4;
/// Trajectory value written for samples behind the camera, outside the
/// frame, or without depth.
pub const SENTINEL: f32 = -1.0;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTensor {
    frame_count: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ControlTensor {
    pub fn from_frames(width: usize, height: usize, frames: Vec<Vec<f32>>) -> Self {
        let frame_len = CHANNELS * width * height;
        assert!(frames.iter().all(|f| f.len() == frame_len), "frame size mismatch");
        Self {
            frame_count: frames.len(),
            height,
            width,
            data: frames.concat(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frame_count, CHANNELS, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn frame_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    /// All five channels of one frame, channel-major.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn channel(&self, t: usize, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.frame(t)[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, t: usize, c: usize, v: usize, u: usize) -> f32 {
        self.channel(t, c)[v * self.width + u]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [
            FORMAT_VERSION,
            self.frame_count as u32,
            CHANNELS as u32,
            self.height as u32,
            self.width as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(TENSOR_MAGIC)?;
        let t = r.u32()?;
        let c = r.u32()?;
        let h = r.u32()?;
        let w = r.u32()?;
        if c as usize != CHANNELS {
            return Err(FormatError::CorruptHeader(format!(
                "expected {CHANNELS} channels, found {c}"
            )));
        }
        let len = checked_len(&[t, c, h, w], 4)?;
        let data = f32s_from_le(r.payload(len)?);
        Ok(Self {
            frame_count: t as usize,
            height: h as usize,
            width: w as usize,
            data,
        })
    }
}

pub fn write_tensor(tensor: &ControlTensor, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, tensor.to_bytes())?)
}

pub fn read_tensor(path: &Path) -> Result<ControlTensor, FormatError> {
    ControlTensor::from_bytes(&fs::read(path)?)
}

/// `t.ctrl` → `t.ctrl.json`.
pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    let mut s = tensor_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub id: u32,
    pub category: Category,
    pub pixels: usize,
}

/// JSON sidecar of a control tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format: String,
    pub version: u32,
    pub shape: [usize; 4],
    pub channels: Vec<String>,
    pub sentinel: f32,
    pub units: Vec<UnitSummary>,
    /// Pixels without depth; they carry the sentinel in every frame.
    pub invalid_pixels: usize,
    /// Per frame, valid pixels whose projection left the view.
    pub out_of_view: Vec<usize>,
}

impl TensorManifest {
    pub fn new(tensor: &ControlTensor, partition: &UnitPartition) -> Self {
        let labels = partition.labels();
        let out_of_view = (0..tensor.frame_count())
            .map(|t| {
                tensor
                    .channel(t, TRAJ_U)
                    .iter()
                    .zip(labels)
                    .filter(|(u, l)| **l != UNLABELED && **u == SENTINEL)
                    .count()
            })
            .collect();
        Self {
            format: "CTRL".into(),
            version: FORMAT_VERSION,
            shape: tensor.shape(),
            channels: ["traj_u", "traj_v", "strength", "partition", "category"]
                .map(String::from)
                .to_vec(),
            sentinel: SENTINEL,
            units: (0..partition.unit_count() as u32)
                .map(|id| UnitSummary {
                    id,
                    category: partition.category(id).expect("unit exists"),
                    pixels: partition.pixel_count(id),
                })
                .collect(),
            invalid_pixels: labels.iter().filter(|l| **l == UNLABELED).count(),
            out_of_view,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| FormatError::Invalid(e.to_string()))?;
        Ok(fs::write(path, json)?)
    }
}
