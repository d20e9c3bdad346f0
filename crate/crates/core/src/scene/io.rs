//! Packed binary point and label files.
//!
//! ```text
//! .bin    per point: x:f32 y:f32 z:f32 intensity:f32   (16 bytes, little-endian)
//! .label  per point: u32 = instance_id << 16 | semantic_id (little-endian)
//! .desc   u32 n, u32 d, then n·d f32 descriptors (little-endian)
//! ```

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = [f64; 3]> + '_ {
        self.points.iter().map(Point::position)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Label {
    pub semantic_id: u16,
    pub instance_id: u16,
}

impl Label {
    pub fn new(semantic_id: u16, instance_id: u16) -> Self {
        Label {
            semantic_id,
            instance_id,
        }
    }

    pub fn from_word(w: u32) -> Self {
        Label {
            semantic_id: (w & 0xFFFF) as u16,
            instance_id: (w >> 16) as u16,
        }
    }

    pub fn to_word(self) -> u32 {
        (self.instance_id as u32) << 16 | self.semantic_id as u32
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelArray {
    pub labels: Vec<Label>,
}

impl LabelArray {
    pub fn new(labels: Vec<Label>) -> Self {
        LabelArray { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn semantic(&self) -> Vec<u16> {
        self.labels.iter().map(|l| l.semantic_id).collect()
    }

    pub fn instance(&self) -> Vec<u16> {
        self.labels.iter().map(|l| l.instance_id).collect()
    }
}

pub fn read_point_bin(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Malformed(format!(
            "point file length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(Error::Malformed(format!("point {i} has a non-finite value")));
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

pub fn write_point_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_label_bin(bytes: &[u8]) -> Result<LabelArray> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Malformed(format!(
            "label file length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|w| Label::from_word(u32::from_le_bytes(w.try_into().unwrap())))
        .collect();
    Ok(LabelArray { labels })
}

pub fn write_label_bin(labels: &LabelArray) -> Vec<u8> {
    labels
        .labels
        .iter()
        .flat_map(|l| l.to_word().to_le_bytes())
        .collect()
}

/// Per-point descriptors: `u32 n`, `u32 d`, then `n·d` f32 values, row-major.
pub fn read_descriptor_bin(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 8 {
        return Err(Error::Malformed("descriptor file shorter than its header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(0), word(1));
    let expected = n.checked_mul(d).and_then(|v| v.checked_mul(4)).and_then(|v| v.checked_add(8));
    if expected != Some(bytes.len()) {
        return Err(Error::Malformed(format!(
            "descriptor file of {} bytes does not hold {n}x{d} values",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Malformed("descriptor file has a non-finite value".into()));
    }
    Ok(Matrix::from_vec(n, d, data))
}

/// Inverse of [`read_descriptor_bin`]; values are rounded to f32.
pub fn write_descriptor_bin(descriptors: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * descriptors.len());
    out.extend_from_slice(&(descriptors.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(descriptors.cols() as u32).to_le_bytes());
    for &v in descriptors.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}
