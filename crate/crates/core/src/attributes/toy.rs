//! Fixture face detector and identity encoder.
//!
//! Faces are connected regions of "marker" pixels (strong red, weak green and
//! blue). Attributes and the identity embedding are deterministic functions
//! of the face crop.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::face::{BBox, FaceDetector, FaceRecord, Keypoints, IDENTITY_DIM, NUM_ATTRIBUTES};
use crate::error::Result;
use crate::image::Image;
use crate::seed;

const MIN_FACE_PIXELS: usize = 16;
const GRID: usize = 8;

pub fn is_marker(r: f64, g: f64, b: f64) -> bool {
    r > 200.0 && g < 60.0 && b < 60.0
}

/// Mean RGB over a `grid x grid` partition of the box, scaled to `[0, 1]`.
/// Channel-major: all red cells first.
fn pooled_crop(image: &Image, bbox: &BBox, grid: usize) -> Vec<f64> {
    let data = image.data();
    let x0 = bbox.x0.floor().max(0.0) as usize;
    let y0 = bbox.y0.floor().max(0.0) as usize;
    let x1 = (bbox.x1.ceil() as usize).min(image.width()).max(x0 + 1);
    let y1 = (bbox.y1.ceil() as usize).min(image.height()).max(y0 + 1);
    let (w, h) = (x1 - x0, y1 - y0);
    let edges = |len: usize, i: usize| {
        let start = (i * len / grid).min(len - 1);
        let end = ((i + 1) * len / grid).max(start + 1);
        (start, end)
    };
    let mut out = vec![0.0; 3 * grid * grid];
    for gy in 0..grid {
        let (sy, ey) = edges(h, gy);
        for gx in 0..grid {
            let (sx, ex) = edges(w, gx);
            let count = ((ey - sy) * (ex - sx)) as f64;
            for c in 0..3 {
                let mut sum = 0.0;
                for y in sy..ey {
                    for x in sx..ex {
                        sum += data[[c, y0 + y, x0 + x]];
                    }
                }
                out[c * grid * grid + gy * grid + gx] = (sum / count / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Seeded random projection of an 8x8 pooled crop to 512 dimensions.
#[derive(Debug, Clone)]
pub struct ToyFaceEncoder {
    projection: Array2<f64>,
}

impl ToyFaceEncoder {
    pub fn new(seed: u64) -> Self {
        let inputs = 3 * GRID * GRID + 1;
        let mut rng = seed::tagged_rng(seed, "toy-face-encoder");
        let scale = 1.0 / (inputs as f64).sqrt();
        let projection = Array2::from_shape_fn((IDENTITY_DIM, inputs), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Self { projection }
    }

    pub fn embed_region(&self, image: &Image, bbox: &BBox) -> Vec<f64> {
        let mut features: Vec<f64> = pooled_crop(image, bbox, GRID)
            .into_iter()
            .map(|v| v - 0.5)
            .collect();
        features.push(1.0);
        let features = ndarray::Array1::from(features);
        self.projection.dot(&features).to_vec()
    }
}

/// Connected-component detector over marker pixels.
#[derive(Debug, Clone)]
pub struct ToyFaceDetector {
    encoder: ToyFaceEncoder,
}

impl ToyFaceDetector {
    pub fn new(seed: u64) -> Self {
        Self {
            encoder: ToyFaceEncoder::new(seed),
        }
    }

    pub fn encoder(&self) -> &ToyFaceEncoder {
        &self.encoder
    }

    fn components(image: &Image) -> Vec<BBox> {
        let (h, w) = (image.height(), image.width());
        let data = image.data();
        let mask: Vec<bool> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                is_marker(data[[0, y, x]], data[[1, y, x]], data[[2, y, x]])
            })
            .collect();
        let mut seen = vec![false; h * w];
        let mut boxes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if !mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let (mut minx, mut miny, mut maxx, mut maxy) = (w, h, 0, 0);
            let mut count = 0;
            while let Some(i) = queue.pop_front() {
                let (y, x) = (i / w, i % w);
                count += 1;
                minx = minx.min(x);
                maxx = maxx.max(x);
                miny = miny.min(y);
                maxy = maxy.max(y);
                let mut visit = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if count >= MIN_FACE_PIXELS {
                boxes.push(BBox::new(
                    minx as f64,
                    miny as f64,
                    (maxx + 1) as f64,
                    (maxy + 1) as f64,
                ));
            }
        }
        boxes
    }
}

impl FaceDetector for ToyFaceDetector {
    fn detect(&self, image: &Image) -> Result<Vec<FaceRecord>> {
        Ok(Self::components(image)
            .into_iter()
            .map(|bbox| {
                let attributes = pooled_crop(image, &bbox, 4)
                    .into_iter()
                    .take(NUM_ATTRIBUTES)
                    .collect();
                FaceRecord {
                    keypoints: Keypoints::canonical(&bbox),
                    attributes,
                    identity_embedding: self.encoder.embed_region(image, &bbox),
                    bbox,
                }
            })
            .collect())
    }
}
