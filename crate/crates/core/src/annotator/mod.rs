//! Spatial controls, the identity control and prompt embeddings.

mod cache;
mod toy;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use cache::{AnnotationCache, CacheEntryMeta};
pub use toy::{toy_extractors, ToyCaptioner, ToyTextEncoder, TOY_CAPTION};

use crate::diffusion::LatentTensor;
use crate::error::{Error, Result};
use crate::guidance::{ControlKind, ControlSettings, ControlSignal, Polarity, PromptEmbedding};
use crate::image::Image;

/// Produces one kind of spatial control map at image resolution.
pub trait ControlExtractor: Send + Sync {
    fn kind(&self) -> ControlKind;

    /// Recorded in cache sidecars; bump when the output changes.
    fn version(&self) -> String {
        "1".to_owned()
    }

    fn extract(&self, image: &Image) -> Result<Array3<f64>>;

    fn shareable(&self) -> bool {
        true
    }
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &Image) -> Result<String>;
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Always yields at least one token, even for empty text.
    fn encode(&self, text: &str, polarity: Polarity) -> Result<PromptEmbedding>;
}

/// Per-kind weight and cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlTable(BTreeMap<ControlKind, ControlSettings>);

impl Default for ControlTable {
    fn default() -> Self {
        Self(
            ControlKind::SPATIAL
                .iter()
                .map(|k| (*k, k.default_settings()))
                .collect(),
        )
    }
}

impl ControlTable {
    pub fn settings(&self, kind: ControlKind) -> ControlSettings {
        self.0
            .get(&kind)
            .copied()
            .unwrap_or_else(|| kind.default_settings())
    }

    pub fn set(&mut self, kind: ControlKind, settings: ControlSettings) {
        self.0.insert(kind, settings);
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, s) in &self.0 {
            s.validate()
                .map_err(|e| Error::Config(format!("controls.{kind}: {e}")))?;
        }
        Ok(())
    }
}

/// Runs every registered extractor and attaches the configured weight and
/// cutoff. Output order is depth, normal, segmentation, pose, lineart.
pub fn extract_controls(
    image: &Image,
    registry: &[Arc<dyn ControlExtractor>],
    table: &ControlTable,
) -> Result<Vec<ControlSignal>> {
    extract_controls_cached(image, registry, table, None)
}

pub fn extract_controls_cached(
    image: &Image,
    registry: &[Arc<dyn ControlExtractor>],
    table: &ControlTable,
    cache: Option<&AnnotationCache>,
) -> Result<Vec<ControlSignal>> {
    let mut by_kind: BTreeMap<ControlKind, &Arc<dyn ControlExtractor>> = BTreeMap::new();
    for extractor in registry {
        let kind = extractor.kind();
        if !ControlKind::SPATIAL.contains(&kind) {
            return Err(Error::Config(format!(
                "extractor registered for non-spatial kind `{kind}`"
            )));
        }
        if by_kind.insert(kind, extractor).is_some() {
            return Err(Error::Config(format!("duplicate extractor for `{kind}`")));
        }
    }

    let hash = cache.map(|_| image.content_hash());
    let mut signals = Vec::with_capacity(by_kind.len());
    for kind in ControlKind::SPATIAL {
        let Some(extractor) = by_kind.get(&kind) else {
            continue;
        };
        let version = extractor.version();
        let cached = match (cache, &hash) {
            (Some(c), Some(h)) => c.get(h, kind, &version)?,
            _ => None,
        };
        let tensor = match cached {
            Some(t) => t,
            None => {
                let t = extractor
                    .extract(image)
                    .map_err(|e| Error::adapter(format!("{kind} extractor"), e.to_string()))?;
                if let (Some(c), Some(h)) = (cache, &hash) {
                    c.put(h, kind, &version, &t)?;
                }
                t
            }
        };
        if tensor.shape()[1] != image.height() || tensor.shape()[2] != image.width() {
            return Err(Error::contract(format!(
                "{kind} extractor returned {:?} for a {}x{} image",
                tensor.shape(),
                image.width(),
                image.height()
            )));
        }
        signals.push(ControlSignal::new(kind, tensor, table.settings(kind))?);
    }
    Ok(signals)
}

/// Wraps the encoded original as the identity control (weight 1, never cut off).
pub fn identity_control(latent: &LatentTensor) -> ControlSignal {
    ControlSignal::new(
        ControlKind::IdentityLatent,
        latent.data().clone(),
        ControlKind::IdentityLatent.default_settings(),
    )
    .expect("identity defaults are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionResult {
    pub text: String,
    pub embedding: PromptEmbedding,
    pub warning: Option<String>,
}

/// Captions the image and embeds the caption as the positive prompt. A
/// failing captioner degrades to the empty caption with a warning.
pub fn extract_caption(
    image: &Image,
    captioner: &dyn Captioner,
    encoder: &dyn TextEncoder,
) -> Result<CaptionResult> {
    let (text, warning) = match captioner.caption(image) {
        Ok(text) => (text, None),
        Err(e) => (String::new(), Some(format!("captioner failed, using empty caption: {e}"))),
    };
    let embedding = encoder.encode(&text, Polarity::Positive)?;
    if embedding.is_empty() {
        return Err(Error::contract("text encoder returned no tokens"));
    }
    Ok(CaptionResult {
        text,
        embedding,
        warning,
    })
}
