//! Fixture extractors. They exercise the plumbing; they do not approximate
//! real depth, normal, segmentation, pose or edge networks.

use std::sync::Arc;

use ndarray::{s, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Captioner, ControlExtractor, TextEncoder};
use crate::error::Result;
use crate::guidance::{ControlKind, Polarity, PromptEmbedding};
use crate::image::Image;
use crate::seed;

pub const TOY_CAPTION: &str = "a photo of a person";

struct Depth;
struct Normal;
struct Segmentation;
struct Pose;
struct Lineart;

impl ControlExtractor for Depth {
    fn kind(&self) -> ControlKind {
        ControlKind::Depth
    }

    fn extract(&self, image: &Image) -> Result<Array3<f64>> {
        let gray = image.grayscale().mapv(|v| v / 255.0);
        Ok(gray.insert_axis(ndarray::Axis(0)))
    }
}

impl ControlExtractor for Normal {
    fn kind(&self) -> ControlKind {
        ControlKind::Normal
    }

    fn extract(&self, image: &Image) -> Result<Array3<f64>> {
        let mut out = Array3::zeros((3, image.height(), image.width()));
        out.slice_mut(s![0, .., ..]).fill(0.5);
        out.slice_mut(s![1, .., ..]).fill(0.5);
        out.slice_mut(s![2, .., ..]).fill(1.0);
        Ok(out)
    }
}

impl ControlExtractor for Segmentation {
    fn kind(&self) -> ControlKind {
        ControlKind::Segmentation
    }

    fn extract(&self, image: &Image) -> Result<Array3<f64>> {
        let bands = image
            .grayscale()
            .mapv(|v| (v / 32.0).floor().clamp(0.0, 7.0) / 7.0);
        Ok(bands.insert_axis(ndarray::Axis(0)))
    }
}

impl ControlExtractor for Pose {
    fn kind(&self) -> ControlKind {
        ControlKind::Pose
    }

    fn extract(&self, image: &Image) -> Result<Array3<f64>> {
        Ok(Array3::zeros((1, image.height(), image.width())))
    }
}

impl ControlExtractor for Lineart {
    fn kind(&self) -> ControlKind {
        ControlKind::Lineart
    }

    /// Forward-difference gradient magnitude of the luma, scaled by 1/255.
    fn extract(&self, image: &Image) -> Result<Array3<f64>> {
        let gray = image.grayscale();
        let (h, w) = gray.dim();
        let mut out = Array3::zeros((1, h, w));
        for y in 0..h {
            for x in 0..w {
                let g = gray[[y, x]];
                let dx = if x + 1 < w { gray[[y, x + 1]] - g } else { 0.0 };
                let dy = if y + 1 < h { gray[[y + 1, x]] - g } else { 0.0 };
                out[[0, y, x]] = (dx * dx + dy * dy).sqrt() / 255.0;
            }
        }
        Ok(out)
    }
}

/// Depth, normal, segmentation, pose and lineart fixtures.
pub fn toy_extractors() -> Vec<Arc<dyn ControlExtractor>> {
    vec![
        Arc::new(Depth),
        Arc::new(Normal),
        Arc::new(Segmentation),
        Arc::new(Pose),
        Arc::new(Lineart),
    ]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyCaptioner;

impl Captioner for ToyCaptioner {
    fn caption(&self, _image: &Image) -> Result<String> {
        Ok(TOY_CAPTION.to_owned())
    }
}

/// Hash-seeded word embeddings behind a fixed start token.
#[derive(Debug, Clone, Copy)]
pub struct ToyTextEncoder {
    seed: u64,
    dim: usize,
}

impl ToyTextEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: Self::DEFAULT_DIM,
        }
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        Self { seed, dim: dim.max(1) }
    }

    fn token(&self, word: &[u8]) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive_seed_bytes(self.seed, word));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str, polarity: Polarity) -> Result<PromptEmbedding> {
        let mut tokens = vec![self.token(b"\0<start>")];
        tokens.extend(
            text.split_whitespace()
                .map(|w| self.token(w.to_lowercase().as_bytes())),
        );
        PromptEmbedding::new(tokens, polarity)
    }
}
