//! Base and light anonymization flows, batching and run manifests.

mod batch;
mod config;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use batch::{
    list_inputs, run_batch, BatchOutcome, ImageTiming, InputItem, RecordStatus, RunManifest,
    RunSummary, MANIFEST_FILE, TIMINGS_FILE,
};
pub use config::{
    ConfigFile, FailurePolicy, PipelineConfig, Variant, BASE_A_S_PRESETS, CONFIG_SCHEMA_VERSION,
    CONFIG_TEMPLATE,
};

use crate::annotator::{
    extract_caption, extract_controls_cached, identity_control, toy_extractors, AnnotationCache,
    Captioner, ControlExtractor, TextEncoder, ToyCaptioner, ToyTextEncoder,
};
use crate::attributes::{
    detect_faces, encode_attribute_map, FaceDetector, ToyFaceDetector, IDENTITY_DIM,
};
use crate::diffusion::{
    img2img_init, karras_sigma_schedule, sample, Autoencoder, Denoiser, LatentTensor,
    SampleRequest, SamplingTrace, ToyAutoencoder, ToyDenoiser,
};
use crate::error::{Error, Result};
use crate::guidance::{ControlKind, ControlSignal, GuidanceWeights, Polarity, PromptEmbedding};
use crate::identity_pool::{assemble_conditioning_with, find_swap_with_policy, IdentityPool, SwapResult};
use crate::image::{letterbox, unletterbox, Image};
use crate::seed;

/// Identities in the pool generated when no pool file is configured.
pub const SYNTHETIC_POOL_SIZE: usize = 1000;

/// Model and annotator implementations used by a run.
#[derive(Clone)]
pub struct Adapters {
    pub denoiser: Arc<dyn Denoiser>,
    pub autoencoder: Arc<dyn Autoencoder>,
    pub extractors: Vec<Arc<dyn ControlExtractor>>,
    pub captioner: Arc<dyn Captioner>,
    pub text_encoder: Arc<dyn TextEncoder>,
    pub face_detector: Arc<dyn FaceDetector>,
    pub pool: Option<Arc<IdentityPool>>,
    pub cache: Option<AnnotationCache>,
}

impl Adapters {
    /// Deterministic stand-ins for every model, with a synthetic pool.
    pub fn toy(seed: u64) -> Self {
        Self {
            denoiser: Arc::new(ToyDenoiser::new(seed)),
            autoencoder: Arc::new(ToyAutoencoder::new()),
            extractors: toy_extractors(),
            captioner: Arc::new(ToyCaptioner),
            text_encoder: Arc::new(ToyTextEncoder::new(seed)),
            face_detector: Arc::new(ToyFaceDetector::new(seed)),
            pool: Some(Arc::new(
                IdentityPool::synthetic(SYNTHETIC_POOL_SIZE, IDENTITY_DIM, seed)
                    .expect("synthetic pool parameters are valid"),
            )),
            cache: None,
        }
    }

    pub fn with_pool(mut self, pool: IdentityPool) -> Self {
        self.pool = Some(Arc::new(pool));
        self
    }

    pub fn with_cache(mut self, cache: AnnotationCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// True when every component may serve concurrent images.
    pub fn shareable(&self) -> bool {
        self.denoiser.shareable()
            && self.autoencoder.shareable()
            && self.extractors.iter().all(|e| e.shareable())
    }
}

/// Per-image entry of a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config_hash: String,
    pub variant: Variant,
    pub a_s: f64,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_map_shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub swaps: Vec<SwapResult>,
}

impl ManifestRecord {
    pub fn new(input: impl Into<String>, config: &PipelineConfig, config_hash: &str) -> Self {
        Self {
            input: input.into(),
            input_hash: None,
            output: None,
            seed: None,
            config_hash: config_hash.to_owned(),
            variant: config.variant,
            a_s: config.a_s,
            status: RecordStatus::Ok,
            error: None,
            warnings: Vec::new(),
            latent_shape: None,
            attribute_map_shape: None,
            swaps: Vec::new(),
        }
    }
}

/// Result of anonymizing one image.
#[derive(Debug, Clone)]
pub struct Anonymized {
    pub image: Image,
    pub record: ManifestRecord,
    pub trace: SamplingTrace,
}

/// Seed for one image: independent of batch order, dependent on content.
pub fn image_seed(run_seed: u64, input_hash: &str) -> u64 {
    seed::derive_seed_bytes(run_seed, input_hash.as_bytes())
}

fn check_variant(config: &PipelineConfig, want: Variant) -> Result<()> {
    config.validate()?;
    if config.variant != want {
        return Err(Error::Config(format!(
            "config variant is {}, expected {}",
            config.variant.as_str(),
            want.as_str()
        )));
    }
    Ok(())
}

/// Letterboxed working image and its latent.
fn prepare(image: &Image, config: &PipelineConfig, adapters: &Adapters) -> Result<(Image, crate::image::Letterbox, LatentTensor)> {
    let (boxed, placement) = letterbox(image, config.resolution);
    let latent = adapters.autoencoder.encode(&boxed)?;
    let side = config.latent_side();
    if latent.height() != side || latent.width() != side {
        return Err(Error::contract(format!(
            "latent is {}x{}, expected {side}x{side} for resolution {}",
            latent.height(),
            latent.width(),
            config.resolution
        )));
    }
    Ok((boxed, placement, latent))
}

struct Conditioning {
    controls: Vec<ControlSignal>,
    positive: PromptEmbedding,
    negative: PromptEmbedding,
}

fn generate(
    image: &Image,
    placement: &crate::image::Letterbox,
    latent: &LatentTensor,
    cond: Conditioning,
    config: &PipelineConfig,
    adapters: &Adapters,
    image_seed: u64,
) -> Result<(Image, SamplingTrace)> {
    let schedule = karras_sigma_schedule(config.steps, config.sigma_min, config.sigma_max, config.rho)?;
    let (x_start, start_step) = img2img_init(
        latent,
        config.noise_strength,
        &schedule,
        seed::derive_seed(image_seed, "img2img"),
    )?;
    let weights = GuidanceWeights::new(config.a_s, config.omega)?;
    let mut controls = cond.controls;
    controls.push(identity_control(latent));
    let stepper = config.stepper.build();
    let request = SampleRequest {
        x_start: &x_start,
        start_step,
        schedule: &schedule,
        controls: &controls,
        positive: &cond.positive,
        negative: &cond.negative,
        weights,
        seed: seed::derive_seed(image_seed, "stepper"),
    };
    let (out, trace) = sample(adapters.denoiser.as_ref(), stepper.as_ref(), &request)?;
    let decoded = adapters.autoencoder.decode(&out)?;
    if decoded.width() != image.width() || decoded.height() != image.height() {
        return Err(Error::contract("decoder changed the working resolution"));
    }
    Ok((unletterbox(&decoded, placement)?, trace))
}

/// Spatial controls, caption and identity control guide a noised encoding of
/// the image.
pub fn anonymize_base(
    image: &Image,
    config: &PipelineConfig,
    adapters: &Adapters,
    image_seed: u64,
) -> Result<Anonymized> {
    check_variant(config, Variant::Base)?;
    let config_hash = config.config_hash();
    let mut record = ManifestRecord::new("", config, &config_hash);
    record.seed = Some(image_seed);
    let (boxed, placement, latent) = prepare(image, config, adapters)?;
    record.latent_shape = Some(shape3(latent.shape()));

    let controls = extract_controls_cached(
        &boxed,
        &adapters.extractors,
        &config.controls,
        adapters.cache.as_ref(),
    )?;
    let caption = extract_caption(&boxed, adapters.captioner.as_ref(), adapters.text_encoder.as_ref())?;
    record.warnings.extend(caption.warning);
    let negative = adapters
        .text_encoder
        .encode(&config.negative_prompt, Polarity::Negative)?;

    let cond = Conditioning {
        controls,
        positive: caption.embedding,
        negative,
    };
    let (image, trace) = generate(&boxed, &placement, &latent, cond, config, adapters, image_seed)?;
    Ok(Anonymized { image, record, trace })
}

/// Per-face attribute map plus an image prompt of original and swapped
/// identities. No caption is used.
pub fn anonymize_light(
    image: &Image,
    config: &PipelineConfig,
    adapters: &Adapters,
    image_seed: u64,
) -> Result<Anonymized> {
    check_variant(config, Variant::Light)?;
    let pool = adapters
        .pool
        .as_deref()
        .ok_or_else(|| Error::Config("light variant needs an identity pool".into()))?;
    let config_hash = config.config_hash();
    let mut record = ManifestRecord::new("", config, &config_hash);
    record.seed = Some(image_seed);
    let (boxed, placement, latent) = prepare(image, config, adapters)?;
    record.latent_shape = Some(shape3(latent.shape()));

    let detection = detect_faces(&boxed, adapters.face_detector.as_ref());
    record.warnings.extend(detection.warnings);
    if detection.faces.is_empty() {
        record.warnings.push("no faces detected; identity swap skipped".into());
    }
    let side = config.latent_side();
    let map = encode_attribute_map(
        &detection.faces,
        (boxed.height(), boxed.width()),
        (side, side),
    )?;
    record.attribute_map_shape = Some(shape3(map.shape()));

    let mut tokens = Vec::new();
    for (i, face) in detection.faces.iter().enumerate() {
        let swap = find_swap_with_policy(
            &format!("face{i}"),
            &face.identity_embedding,
            pool,
            config.min_swap_distance,
            config.swap_fallback,
        )?;
        if swap.fallback {
            record.warnings.push(format!(
                "face{i}: no identity at distance >= {}; used farthest ({:.3})",
                config.min_swap_distance, swap.distance
            ));
        }
        let swapped = pool
            .embedding(&swap.chosen_id)
            .expect("chosen id is in the pool")
            .to_vec();
        tokens.extend(assemble_conditioning_with(
            &face.identity_embedding,
            &swapped,
            config.image_prompt_mode,
        ));
        record.swaps.push(swap);
    }
    if tokens.is_empty() {
        tokens.push(vec![0.0; pool.dim()]);
    }
    let positive = PromptEmbedding::new(tokens, Polarity::Positive)?;
    let negative = PromptEmbedding::new(vec![vec![0.0; pool.dim()]], Polarity::Negative)?;
    let attributes = ControlSignal::new(
        ControlKind::FaceAttributes,
        map.into_array(),
        config.controls.settings(ControlKind::FaceAttributes),
    )?;

    let cond = Conditioning {
        controls: vec![attributes],
        positive,
        negative,
    };
    let (image, trace) = generate(&boxed, &placement, &latent, cond, config, adapters, image_seed)?;
    Ok(Anonymized { image, record, trace })
}

/// Dispatches on `config.variant`.
pub fn anonymize(
    image: &Image,
    config: &PipelineConfig,
    adapters: &Adapters,
    image_seed: u64,
) -> Result<Anonymized> {
    match config.variant {
        Variant::Base => anonymize_base(image, config, adapters, image_seed),
        Variant::Light => anonymize_light(image, config, adapters, image_seed),
    }
}

fn shape3(shape: &[usize]) -> [usize; 3] {
    [shape[0], shape[1], shape[2]]
}
