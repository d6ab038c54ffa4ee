use std::io::{BufRead, Write};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const NUM_ATTRIBUTES: usize = 40;
pub const IDENTITY_DIM: usize = 512;

/// Pixel-space box, `x0 < x1` and `y0 < y1`; `x1`/`y1` are exclusive edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x1 <= width as f64
            && self.y1 <= height as f64
            && self.x0 < self.x1
            && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoints {
    pub left_eye: [f64; 2],
    pub right_eye: [f64; 2],
    pub nose: [f64; 2],
    pub mouth: [f64; 2],
}

impl Keypoints {
    pub fn points(&self) -> [[f64; 2]; 4] {
        [self.left_eye, self.right_eye, self.nose, self.mouth]
    }

    /// Fixed layout relative to a face box.
    pub fn canonical(bbox: &BBox) -> Self {
        let at = |fx: f64, fy: f64| [bbox.x0 + fx * bbox.width(), bbox.y0 + fy * bbox.height()];
        Self {
            left_eye: at(0.3, 0.35),
            right_eye: at(0.7, 0.35),
            nose: at(0.5, 0.55),
            mouth: at(0.5, 0.8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub bbox: BBox,
    pub keypoints: Keypoints,
    pub attributes: Vec<f64>,
    pub identity_embedding: Vec<f64>,
}

impl FaceRecord {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let bad = |m: String| Error::InvalidRecord {
            record: "face".into(),
            message: m,
        };
        if !self.bbox.within(width, height) {
            return Err(bad(format!(
                "bbox {:?} not inside a {width}x{height} image",
                self.bbox
            )));
        }
        if self.attributes.len() != NUM_ATTRIBUTES {
            return Err(bad(format!(
                "expected {NUM_ATTRIBUTES} attributes, got {}",
                self.attributes.len()
            )));
        }
        if self.attributes.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(bad("attribute values must lie in [0, 1]".into()));
        }
        if self.identity_embedding.len() != IDENTITY_DIM {
            return Err(bad(format!(
                "identity embedding must have {IDENTITY_DIM} entries, got {}",
                self.identity_embedding.len()
            )));
        }
        let norm = self
            .identity_embedding
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(bad("identity embedding norm must be finite and non-zero".into()));
        }
        Ok(())
    }
}

/// Finds faces and fills in keypoints, attributes and identity embeddings.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &Image) -> Result<Vec<FaceRecord>>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionOutcome {
    /// Valid records, largest box first.
    pub faces: Vec<FaceRecord>,
    pub warnings: Vec<String>,
}

/// Runs the detector, drops records that fail validation and sorts by box
/// area, largest first. A failing detector yields no faces and a warning.
pub fn detect_faces(image: &Image, detector: &dyn FaceDetector) -> DetectionOutcome {
    let mut outcome = DetectionOutcome::default();
    let raw = match detector.detect(image) {
        Ok(faces) => faces,
        Err(e) => {
            outcome.warnings.push(format!("face detector failed: {e}"));
            return outcome;
        }
    };
    for (i, face) in raw.into_iter().enumerate() {
        match face.validate(image.width(), image.height()) {
            Ok(()) => outcome.faces.push(face),
            Err(e) => outcome.warnings.push(format!("dropped face {i}: {e}")),
        }
    }
    outcome.faces.sort_by(|a, b| {
        b.bbox
            .area()
            .total_cmp(&a.bbox.area())
            .then(a.bbox.y0.total_cmp(&b.bbox.y0))
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
    });
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FaceLine {
    image_id: String,
    bbox: [f64; 4],
    keypoints: Keypoints,
    attributes: Vec<f64>,
    /// Base64 of little-endian `f32`.
    identity_embedding: String,
}

/// One JSON object per face, with the identity embedding as base64 `f32`.
pub fn write_face_records<W: Write>(
    mut writer: W,
    image_id: &str,
    faces: &[FaceRecord],
) -> Result<()> {
    let engine = base64::engine::general_purpose::STANDARD;
    for face in faces {
        let mut raw = Vec::with_capacity(face.identity_embedding.len() * 4);
        for v in &face.identity_embedding {
            raw.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let line = FaceLine {
            image_id: image_id.to_owned(),
            bbox: [face.bbox.x0, face.bbox.y0, face.bbox.x1, face.bbox.y1],
            keypoints: face.keypoints,
            attributes: face.attributes.clone(),
            identity_embedding: engine.encode(raw),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_face_records<R: BufRead>(reader: R) -> Result<Vec<(String, FaceRecord)>> {
    let engine = base64::engine::general_purpose::STANDARD;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::InvalidRecord {
            record: format!("line {}", n + 1),
            message: m,
        };
        let parsed: FaceLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let raw = engine
            .decode(parsed.identity_embedding.as_bytes())
            .map_err(|e| bad(e.to_string()))?;
        if raw.len() % 4 != 0 {
            return Err(bad("embedding byte length not a multiple of 4".into()));
        }
        let embedding = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let [x0, y0, x1, y1] = parsed.bbox;
        out.push((
            parsed.image_id,
            FaceRecord {
                bbox: BBox::new(x0, y0, x1, y1),
                keypoints: parsed.keypoints,
                attributes: parsed.attributes,
                identity_embedding: embedding,
            },
        ));
    }
    Ok(out)
}
