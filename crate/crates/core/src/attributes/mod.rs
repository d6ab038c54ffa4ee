//! Per-face attribute encoding for the lightweight adapter variant.
//!
//! Each face contributes its 40 attribute values over its box footprint
//! (channels 0..40) and its four keypoints as single cells in channel 40.

mod face;
mod toy;

use ndarray::{s, Array3};

pub use face::{
    detect_faces, read_face_records, write_face_records, BBox, DetectionOutcome, FaceDetector,
    FaceRecord, Keypoints, IDENTITY_DIM, NUM_ATTRIBUTES,
};
pub use toy::{is_marker, ToyFaceDetector, ToyFaceEncoder};

use crate::error::{Error, Result};

pub const ATTRIBUTE_CHANNELS: usize = NUM_ATTRIBUTES + 1;
pub const KEYPOINT_CHANNEL: usize = NUM_ATTRIBUTES;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMap {
    data: Array3<f64>,
}

impl AttributeMap {
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }
}

/// Half-open range of map cells covered by `[lo, hi)` in pixel units.
fn cell_span(lo: f64, hi: f64, pixels: usize, cells: usize) -> (usize, usize) {
    let scale = cells as f64 / pixels as f64;
    let start = ((lo * scale).floor().max(0.0) as usize).min(cells);
    let end = ((hi * scale).ceil().max(0.0) as usize).min(cells);
    (start, end.max((start + 1).min(cells)))
}

fn cell_index(p: f64, pixels: usize, cells: usize) -> Option<usize> {
    if !(p >= 0.0 && p < pixels as f64) {
        return None;
    }
    Some(((p * cells as f64 / pixels as f64).floor() as usize).min(cells - 1))
}

/// Rasterizes faces into a `41 x h x w` map.
///
/// `image_size` and `map_size` are `(height, width)`. Where boxes overlap,
/// the later face in `faces` wins.
pub fn encode_attribute_map(
    faces: &[FaceRecord],
    image_size: (usize, usize),
    map_size: (usize, usize),
) -> Result<AttributeMap> {
    let (ih, iw) = image_size;
    let (mh, mw) = map_size;
    if ih == 0 || iw == 0 || mh == 0 || mw == 0 {
        return Err(Error::domain("image and map sizes must be positive"));
    }
    let mut data = Array3::zeros((ATTRIBUTE_CHANNELS, mh, mw));
    for (i, face) in faces.iter().enumerate() {
        face.validate(iw, ih).map_err(|e| Error::InvalidRecord {
            record: format!("face {i}"),
            message: e.to_string(),
        })?;
        let (x0, x1) = cell_span(face.bbox.x0, face.bbox.x1, iw, mw);
        let (y0, y1) = cell_span(face.bbox.y0, face.bbox.y1, ih, mh);
        for (j, value) in face.attributes.iter().enumerate() {
            data.slice_mut(s![j, y0..y1, x0..x1]).fill(*value);
        }
        for [px, py] in face.keypoints.points() {
            if let (Some(cx), Some(cy)) = (cell_index(px, iw, mw), cell_index(py, ih, mh)) {
                data[[KEYPOINT_CHANNEL, cy, cx]] = 1.0;
            }
        }
    }
    Ok(AttributeMap { data })
}
