//! Binary depth (`DPTH`) and track (`TRCK`) files, and 8-bit mask images.
//!
//! All integers and floats are little-endian. Headers start with a 4-byte
//! magic followed by a `u32` version (currently 1).

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::Point3;
use crate::scene::Mask;
use crate::trajectory::{CoordinateFrame, TrajectoryField};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const TRACK_MAGIC: &[u8; 4] = b"TRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("image error: {0}")]
    Image(String),
    #[error("invalid content: {0}")]
    Invalid(String),
}

/// Little cursor over a byte slice for header parsing.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take_header(4)?;
        if found != magic {
            return Err(FormatError::CorruptHeader(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(found)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::CorruptHeader(format!(
                "unsupported version {version}"
            )));
        }
        Ok(())
    }

    fn take_header(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(FormatError::CorruptHeader(format!(
                "header needs {end} bytes, file has {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take_header(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take_header(1)?[0])
    }

    /// The exact remaining payload, which must be `len` bytes long.
    pub(crate) fn payload(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(FormatError::TruncatedPayload {
                expected: len,
                found: rest.len(),
            });
        }
        if rest.len() > len {
            return Err(FormatError::TrailingBytes(rest.len() - len));
        }
        self.pos = self.bytes.len();
        Ok(rest)
    }
}

pub(crate) fn checked_len(dims: &[u32], elem: usize) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(elem, |acc, d| acc.checked_mul(*d as usize))
        .ok_or_else(|| FormatError::CorruptHeader(format!("dimensions {dims:?} overflow")))
}

pub(crate) fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Row-major depths.
    pub values: Vec<f32>,
}

pub fn encode_depth(map: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.values.len() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    out.extend_from_slice(&map.width.to_le_bytes());
    for v in &map.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(DEPTH_MAGIC)?;
    let height = r.u32()?;
    let width = r.u32()?;
    let len = checked_len(&[height, width], 4)?;
    let values = f32s_from_le(r.payload(len)?);
    Ok(DepthMap {
        width,
        height,
        values,
    })
}

pub fn read_depth(path: &Path) -> Result<DepthMap, FormatError> {
    decode_depth(&fs::read(path)?)
}

pub fn write_depth(map: &DepthMap, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_depth(map))?)
}

pub fn encode_tracks(field: &TrajectoryField) -> Vec<u8> {
    let (t, n) = (field.frame_count(), field.point_count());
    let mut out = Vec::with_capacity(17 + t * n * 13);
    out.extend_from_slice(TRACK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(match field.frame() {
        CoordinateFrame::Camera => 0,
        CoordinateFrame::World => 1,
    });
    for p in field.positions() {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out.extend(field.validity().iter().map(|v| *v as u8));
    out
}

pub fn decode_tracks(bytes: &[u8]) -> Result<TrajectoryField, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(TRACK_MAGIC)?;
    let t = r.u32()?;
    let n = r.u32()?;
    let frame = match r.u8()? {
        0 => CoordinateFrame::Camera,
        1 => CoordinateFrame::World,
        other => {
            return Err(FormatError::CorruptHeader(format!(
                "frame flag must be 0 or 1, found {other}"
            )))
        }
    };
    let samples = checked_len(&[t, n], 1)?;
    let payload = r.payload(samples * 13)?;
    let (pos_bytes, valid_bytes) = payload.split_at(samples * 12);
    let coords = f32s_from_le(pos_bytes);
    let positions = coords
        .chunks_exact(3)
        .map(|c| Point3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let valid = valid_bytes.iter().map(|b| *b != 0).collect();
    TrajectoryField::new(frame, t as usize, n as usize, positions, valid)
        .map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn read_tracks(path: &Path) -> Result<TrajectoryField, FormatError> {
    decode_tracks(&fs::read(path)?)
}

pub fn write_tracks(field: &TrajectoryField, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_tracks(field))?)
}

/// Reads an 8-bit mask image; any nonzero luma is inside.
pub fn read_mask(path: &Path) -> Result<Mask, FormatError> {
    let img = image::open(path).map_err(|e| FormatError::Image(format!("{}: {e}", path.display())))?;
    Ok(mask_from_luma(&img.to_luma8()))
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, FormatError> {
    let img = image::load_from_memory(bytes).map_err(|e| FormatError::Image(e.to_string()))?;
    Ok(mask_from_luma(&img.to_luma8()))
}

fn mask_from_luma(img: &image::GrayImage) -> Mask {
    let data = img.as_raw().iter().map(|v| *v != 0).collect();
    Mask::from_vec(img.width(), img.height(), data).expect("luma buffer matches its size")
}

pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let raw = mask.as_slice().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width(), mask.height(), raw)
        .expect("mask buffer matches its size");
    encode_png(&image::DynamicImage::ImageLuma8(img))
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_mask_png(mask))?)
}

pub(crate) fn encode_png(img: &image::DynamicImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("png encoding into memory");
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_header_layout() {
        let map = DepthMap {
            width: 3,
            height: 2,
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0, f32::NAN],
        };
        let bytes = encode_depth(&map);
        assert_eq!(&bytes[..4], b"DPTH");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(encode_depth(&back), bytes);
    }

    #[test]
    fn depth_errors() {
        let map = DepthMap {
            width: 2,
            height: 2,
            values: vec![1.0; 4],
        };
        let bytes = encode_depth(&map);
        assert!(matches!(
            decode_depth(&bytes[..bytes.len() - 1]),
            Err(FormatError::TruncatedPayload { .. })
        ));
        assert!(matches!(decode_depth(&bytes[..10]), Err(FormatError::CorruptHeader(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_depth(&wrong), Err(FormatError::CorruptHeader(_))));
    }

    #[test]
    fn tracks_round_trip() {
        let positions = vec![
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.5, 2.0),
            Point3::new(0.25, 0.0, 1.0),
            Point3::new(1.0, 0.5, 2.5),
        ];
        let field = TrajectoryField::new(
            CoordinateFrame::World,
            2,
            2,
            positions,
            vec![true, true, false, true],
        )
        .unwrap();
        let bytes = encode_tracks(&field);
        assert_eq!(&bytes[..4], b"TRCK");
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes.len(), 17 + 4 * 12 + 4);
        let back = decode_tracks(&bytes).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn mask_png_round_trip() {
        let m = Mask::rect(7, 5, 1, 1, 4, 3);
        let back = decode_mask_png(&encode_mask_png(&m)).unwrap();
        assert_eq!(back, m);
    }
}
